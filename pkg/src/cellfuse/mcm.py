"""Mask Circuit Modeling: mask plans, token assembly, fusion, losses and metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DataError
from .netlist.cones import khop_fanin
from .nn.layers import transformer_block

AIG_VIEW, PM_VIEW = 0, 1
VIEWS = ("aig", "pm")
MASK_TOKEN = "mcm.mask_token"


def n_selected(theta: float, n_nodes: int) -> int:
    """``max(1, round(theta * n))`` with halves rounded up."""
    return max(1, int(math.floor(theta * n_nodes + 0.5)))


@dataclass(frozen=True)
class MaskPlan:
    selected: tuple
    masked: frozenset
    theta: float
    k: int
    view: str = "pm"

    @property
    def masked_ids(self) -> np.ndarray:
        return np.array(sorted(self.masked), dtype=np.int64)

    @classmethod
    def empty(cls, view: str = "pm") -> "MaskPlan":
        return cls((), frozenset(), 0.0, 0, view)

    @classmethod
    def from_nodes(cls, nodes, view: str = "pm") -> "MaskPlan":
        nodes = frozenset(int(i) for i in nodes)
        return cls(tuple(sorted(nodes)), nodes, 0.0, 0, view)


def plan_masks(circuit, theta: float, k: int, seed: int, view: str = "pm") -> MaskPlan:
    if len(circuit) == 0:
        raise DataError("cannot plan masks on an empty graph")
    if not 0 < theta <= 1:
        raise ValueError("theta must be in (0, 1]")
    if k < 1:
        raise ValueError("k must be >= 1")
    count = min(n_selected(theta, len(circuit)), len(circuit))
    rng = np.random.default_rng(seed)
    selected = sorted(int(i) for i in rng.choice(len(circuit), size=count, replace=False))
    masked = set()
    for p in selected:
        masked |= khop_fanin(circuit, p, k).members
    return MaskPlan(tuple(selected), frozenset(masked), float(theta), int(k), view)


@dataclass
class TokenSequence:
    """AIG tokens first, then PM tokens; each token is hs || hf."""
    tokens: torch.Tensor
    view_tags: np.ndarray
    node_ids: np.ndarray
    masked: np.ndarray
    n_aig: int
    n_pm: int

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def view(self, name: str) -> torch.Tensor:
        return self.tokens[:self.n_aig] if name == "aig" else self.tokens[self.n_aig:]

    def with_tokens(self, tokens: torch.Tensor) -> "TokenSequence":
        return TokenSequence(tokens, self.view_tags, self.node_ids, self.masked, self.n_aig, self.n_pm)


def mask_token(store, dim: int) -> torch.Tensor:
    return store.param(MASK_TOKEN, (dim,), "normal")


def assemble_tokens(aig_emb, pm_emb, plan: MaskPlan | None, store) -> TokenSequence:
    """Concatenate both views; masked nodes of ``plan.view`` get hf := hm."""
    plan = plan or MaskPlan.empty()
    n_a, n_p = len(aig_emb), len(pm_emb)
    size = n_p if plan.view == "pm" else n_a
    if plan.masked and max(plan.masked) >= size:
        raise DataError("mask plan refers to nodes outside the masked view")
    d = pm_emb.hf.shape[1]
    hf_a, hf_p = aig_emb.hf, pm_emb.hf
    masked = np.zeros(n_a + n_p, dtype=bool)
    if plan.masked:
        ids = torch.from_numpy(plan.masked_ids)
        hm = mask_token(store, d).expand(len(ids), d)
        if plan.view == "pm":
            hf_p = hf_p.index_copy(0, ids, hm)
            masked[n_a + plan.masked_ids] = True
        else:
            hf_a = hf_a.index_copy(0, ids, hm)
            masked[plan.masked_ids] = True
    tokens = torch.cat([torch.cat([aig_emb.hs, hf_a], 1), torch.cat([pm_emb.hs, hf_p], 1)], 0)
    tags = np.concatenate([np.full(n_a, AIG_VIEW), np.full(n_p, PM_VIEW)]).astype(np.int8)
    ids = np.concatenate([np.arange(n_a), np.arange(n_p)])
    return TokenSequence(tokens, tags, ids, masked, n_a, n_p)


def fuse_tensor(store, x: torch.Tensor, blocks: int = 4, heads: int = 8, variant: str = "full",
                key_mask=None, prefix: str = "mcm.fuse") -> torch.Tensor:
    if x.shape[-1] % heads:
        raise ValueError(f"token width {x.shape[-1]} is not divisible by {heads} heads")
    for b in range(blocks):
        x = transformer_block(store, f"{prefix}.{b}", x, heads, variant, key_mask=key_mask)
    return x


def fuse(tokens: TokenSequence, store, blocks: int = 4, heads: int = 8, variant: str = "full",
         prefix: str = "mcm.fuse") -> TokenSequence:
    return tokens.with_tokens(fuse_tensor(store, tokens.tokens, blocks, heads, variant, prefix=prefix))


def fuse_many(seqs: list[TokenSequence], store, blocks: int = 4, heads: int = 8, variant: str = "full",
              prefix: str = "mcm.fuse") -> list[TokenSequence]:
    """Fuse several circuits at once; padding keys are masked so circuits never interact."""
    if len(seqs) == 1:
        return [fuse(seqs[0], store, blocks, heads, variant, prefix)]
    t_max = max(len(s) for s in seqs)
    d = seqs[0].tokens.shape[1]
    x = torch.stack([torch.cat([s.tokens, s.tokens.new_zeros(t_max - len(s), d)]) for s in seqs])
    key_mask = torch.zeros(len(seqs), t_max, dtype=torch.bool)
    for b, s in enumerate(seqs):
        key_mask[b, :len(s)] = True
    y = fuse_tensor(store, x, blocks, heads, variant, key_mask, prefix)
    return [s.with_tokens(y[b, :len(s)]) for b, s in enumerate(seqs)]


def _labels(labels, n: int) -> torch.Tensor:
    arr = labels.prob if hasattr(labels, "prob") else np.asarray(labels, dtype=np.float64)
    if len(arr) != n:
        raise DataError(f"expected {n} labels, got {len(arr)}")
    return torch.as_tensor(np.asarray(arr), dtype=torch.float64)


def prob_l1(pred: torch.Tensor, labels) -> torch.Tensor:
    y = _labels(labels, pred.shape[0]).to(pred.dtype)
    return (pred - y).abs().mean()


def loss_stage1(pm_emb, aig_emb, labels_pm, labels_aig, store) -> torch.Tensor:
    from .encoders import readout_prob
    return (prob_l1(readout_prob(store, pm_emb.hf, "pm.readout"), labels_pm)
            + prob_l1(readout_prob(store, aig_emb.hf, "aig.readout"), labels_aig))


def split_refined(refined: TokenSequence, dim: int):
    """Refined (hs', hf') per view as ``{"aig": (hs, hf), "pm": (hs, hf)}``."""
    a, p = refined.view("aig"), refined.view("pm")
    return {"aig": (a[:, :dim], a[:, dim:]), "pm": (p[:, :dim], p[:, dim:])}


def mcm_l1(refined: TokenSequence, target_emb, plan: MaskPlan) -> torch.Tensor:
    """Mean L1 between refined and target full embeddings (hs || hf) of masked nodes."""
    if not plan.masked:
        return refined.tokens.new_zeros(())
    ids = torch.from_numpy(plan.masked_ids)
    return (refined.view(plan.view)[ids] - target_emb.H.detach()[ids]).abs().mean()


def loss_stage2(refined: TokenSequence, target_emb, labels: dict, plan: MaskPlan, store,
                weights: dict | None = None) -> torch.Tensor:
    """``w_prob * (L_prob^P + L_prob^A)`` on post-fusion hf' plus ``w_mcm * L_mcm``.

    ``target_emb`` is the unmasked encoder output of the masked view; labels
    is ``{"pm": ..., "aig": ...}``.
    """
    from .encoders import readout_prob
    w = {"w_prob": 1.0, "w_mcm": 1.0, **(weights or {})}
    if plan.masked and len(target_emb) != (refined.n_pm if plan.view == "pm" else refined.n_aig):
        raise DataError("target embedding does not match the masked view")
    dim = refined.tokens.shape[1] // 2
    parts = split_refined(refined, dim)
    l_prob = sum(prob_l1(readout_prob(store, parts[v][1], f"{v}.readout"), labels[v]) for v in VIEWS)
    loss = w["w_prob"] * l_prob
    if w["w_mcm"]:
        loss = loss + w["w_mcm"] * mcm_l1(refined, target_emb, plan)
    return loss


def _as_map(x) -> dict:
    if isinstance(x, dict):
        return x
    if hasattr(x, "prob"):
        x = x.prob
    return dict(enumerate(np.asarray(x, dtype=np.float64).tolist()))


def metric_pe(pred, truth) -> float:
    """Mean absolute logic-1 probability error over all nodes."""
    p, t = _as_map(pred), _as_map(truth)
    if set(p) != set(t):
        raise DataError("prediction and truth cover different nodes")
    if not p:
        raise DataError("PE over an empty node set")
    keys = sorted(t)
    return float(np.mean([abs(float(p[k]) - float(t[k])) for k in keys]))


def metric_re(refined_hf, target_hf, plan) -> float:
    """Mean absolute hf difference over the masked nodes (per-element mean per node)."""
    ids = plan.masked_ids if isinstance(plan, MaskPlan) else np.array(sorted(set(plan)), dtype=np.int64)
    if len(ids) == 0:
        raise DataError("RE needs a non-empty mask set")
    r = refined_hf.detach().numpy() if torch.is_tensor(refined_hf) else np.asarray(refined_hf)
    t = target_hf.detach().numpy() if torch.is_tensor(target_hf) else np.asarray(target_hf)
    per_node = np.abs(r[ids].astype(np.float64) - t[ids].astype(np.float64)).mean(axis=1)
    return float(per_node.mean())
