"""Two-view model wiring: encoders, readouts and the fusion Transformer."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from .encoders import AGGREGATORS, EncoderConfig, GraphPlan, encode_plan, merge_plans, prepare, readout_prob
from .mcm import MaskPlan, assemble_tokens, fuse_many, loss_stage2, mcm_l1, prob_l1, split_refined

FUSION_VARIANTS = ("full", "linear")


@dataclass
class ModelConfig:
    aggregator: str = "dg2"
    aig_aggregator: str = "dg2"
    dim: int = 128
    rounds: int = 1
    pin_encoding: bool = True
    enc_heads: int = 4
    blocks: int = 4
    heads: int = 8
    fusion_variant: str = "full"

    def __post_init__(self):
        for agg in (self.aggregator, self.aig_aggregator):
            if agg not in AGGREGATORS:
                raise ValueError(f"aggregator must be one of {AGGREGATORS}, got {agg!r}")
        if self.fusion_variant not in FUSION_VARIANTS:
            raise ValueError(f"fusion_variant must be one of {FUSION_VARIANTS}")

    def encoder(self, view: str) -> EncoderConfig:
        agg = self.aggregator if view == "pm" else self.aig_aggregator
        return EncoderConfig(agg, self.dim, self.rounds, self.pin_encoding, self.enc_heads)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in names})


@dataclass
class Item:
    """A circuit pair ready for encoding."""
    name: str
    pm_plan: GraphPlan
    aig_plan: GraphPlan
    labels_pm: np.ndarray
    labels_aig: np.ndarray
    pm: object = None
    aig: object = None


def make_item(name, pm, aig, labels_pm, labels_aig, lib) -> Item:
    lp = labels_pm.prob if hasattr(labels_pm, "prob") else np.asarray(labels_pm)
    la = labels_aig.prob if hasattr(labels_aig, "prob") else np.asarray(labels_aig)
    return Item(name, prepare(pm, lib), prepare(aig), np.asarray(lp), np.asarray(la), pm, aig)


def _encode_view(store, mcfg: ModelConfig, plans, view: str, seeds):
    # A frozen encoder needs no autograd graph; values are identical either way.
    prefix = f"{view}.enc"
    if store.is_frozen(prefix + "."):
        with torch.no_grad():
            return encode_plan(store, merge_plans(plans), mcfg.encoder(view), prefix, seeds)
    return encode_plan(store, merge_plans(plans), mcfg.encoder(view), prefix, seeds)


def encode_items(store, mcfg: ModelConfig, items: list[Item], seeds: list[int]):
    """Encode both views of ``items`` as merged batches; returns per-item embeddings."""
    pm = _encode_view(store, mcfg, [it.pm_plan for it in items], "pm", seeds)
    aig = _encode_view(store, mcfg, [it.aig_plan for it in items], "aig", seeds)
    out, op, oa = [], 0, 0
    for it in items:
        out.append((pm.slice(op, it.pm_plan.n), aig.slice(oa, it.aig_plan.n)))
        op += it.pm_plan.n
        oa += it.aig_plan.n
    return out


def _segment_l1(pred: torch.Tensor, labels: list[np.ndarray]) -> torch.Tensor:
    """Sum over circuits of each circuit's mean |pred - label|."""
    y = torch.from_numpy(np.concatenate(labels)).to(pred.dtype)
    w = torch.from_numpy(np.concatenate([np.full(len(l), 1.0 / len(l)) for l in labels])).to(pred.dtype)
    return ((pred - y).abs() * w).sum()


def stage1_loss(store, mcfg: ModelConfig, items: list[Item], seeds: list[int], scale: float = 1.0):
    """L_prob^P + L_prob^A summed over circuits, times ``scale``."""
    pm = encode_plan(store, merge_plans([it.pm_plan for it in items]), mcfg.encoder("pm"), "pm.enc", seeds)
    aig = encode_plan(store, merge_plans([it.aig_plan for it in items]), mcfg.encoder("aig"), "aig.enc", seeds)
    lp = _segment_l1(readout_prob(store, pm.hf, "pm.readout"), [it.labels_pm for it in items])
    la = _segment_l1(readout_prob(store, aig.hf, "aig.readout"), [it.labels_aig for it in items])
    return scale * (lp + la)


def stage1_predict(store, mcfg: ModelConfig, items: list[Item], seeds: list[int]):
    """Per-item ``(pm_prob, aig_prob)`` numpy arrays."""
    with torch.no_grad():
        out = []
        for (pm, aig) in encode_items(store, mcfg, items, seeds):
            out.append((readout_prob(store, pm.hf, "pm.readout").numpy(),
                        readout_prob(store, aig.hf, "aig.readout").numpy()))
    return out


def refine(store, mcfg: ModelConfig, embs, plans: list[MaskPlan]):
    """Assemble and fuse token sequences for several circuits."""
    seqs = [assemble_tokens(aig, pm, plan, store) for (pm, aig), plan in zip(embs, plans)]
    return fuse_many(seqs, store, mcfg.blocks, mcfg.heads, mcfg.fusion_variant)


def stage2_loss(store, mcfg: ModelConfig, items: list[Item], seeds: list[int], plans: list[MaskPlan],
                weights: dict, scale: float = 1.0, targets=None):
    """``targets`` optionally replaces the (stop-gradient) masked-view embeddings with constants."""
    embs = encode_items(store, mcfg, items, seeds)
    refined = refine(store, mcfg, embs, plans)
    total = 0.0
    for k, (it, (pm, aig), r, plan) in enumerate(zip(items, embs, refined, plans)):
        target = targets[k] if targets is not None else (pm if plan.view == "pm" else aig).detach()
        total = total + loss_stage2(r, target, {"pm": it.labels_pm, "aig": it.labels_aig}, plan, store, weights)
    return scale * total


def stage2_outputs(store, mcfg: ModelConfig, items: list[Item], seeds: list[int], plans: list[MaskPlan]):
    """Per item: refined prob of both views, refined hf of the masked view, target hf."""
    with torch.no_grad():
        embs = encode_items(store, mcfg, items, seeds)
        refined = refine(store, mcfg, embs, plans)
        out = []
        for (pm, aig), r, plan in zip(embs, refined, plans):
            parts = split_refined(r, mcfg.dim)
            out.append({
                "pm_prob": readout_prob(store, parts["pm"][1], "pm.readout").numpy(),
                "aig_prob": readout_prob(store, parts["aig"][1], "aig.readout").numpy(),
                "refined_hf": parts[plan.view][1].numpy(),
                "target_hf": (pm if plan.view == "pm" else aig).hf.numpy(),
            })
    return out


__all__ = ["ModelConfig", "Item", "make_item", "encode_items", "stage1_loss", "stage1_predict", "refine",
           "stage2_loss", "stage2_outputs", "prob_l1", "mcm_l1"]
