"""Functional-ECO finetuning and candidate-signal ranking.

During finetuning the golden netlist keeps its structure: the region that
``remove_cone`` would delete (the patch root included) is masked, so its
tokens carry the mask token in the hf slot and their true hs.  At ranking
time the real structure is unknown, so the target is removed with
``remove_cone`` and stands as a single placeholder PI with hf = hm.
"""
from __future__ import annotations

import csv
import io
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError, NetlistError
from .fileio import atomic_write_text
from .mcm import MaskPlan, assemble_tokens, fuse_many
from .model import Item, encode_items
from .netlist import PI, PmNetlist, full_fanin_cone, induced, pm_to_aig, remove_cone
from .nn import adam_step
from .nn.layers import mlp_forward
from .encoders import prepare

log = logging.getLogger("cellfuse.eco")
HEAD = "eco.drv"
RELATIONS = ("fanin", "fanout")


def reachable(circuit, p: int, direction: str = "fanin") -> set:
    """Nodes reachable from ``p`` by reverse (fanin) or forward (fanout) edges, excluding ``p``."""
    nbrs = circuit.fanins if direction == "fanin" else circuit.fanouts
    seen = {p}
    queue = deque([p])
    while queue:
        for j in nbrs[queue.popleft()]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    seen.discard(p)
    return seen


def removed_region(net: PmNetlist, cone) -> set:
    """Golden ids that ``remove_cone`` deletes (the root always counts)."""
    kept = set(remove_cone(net, cone).names)
    return {i for i in cone.members if net.names[i] not in kept or i == cone.root}


@dataclass
class EcoSample:
    golden_pm: PmNetlist
    golden_aig: object
    p: int
    cone: object
    removed: frozenset
    driven_labels: dict
    name: str = "eco"
    relation: str = "fanin"

    @property
    def candidates(self) -> list[int]:
        return sorted(self.driven_labels)

    @property
    def survivors(self) -> list[int]:
        return [i for i in self.candidates if i not in self.removed]


def make_eco_sample(pm: PmNetlist, seed: int, lib, relation: str = "fanin", name: str | None = None,
                    p=None) -> EcoSample:
    """Random patch root ``p`` among cells; labels mark the driving relation to ``p``.

    Every non-root node carries a label: 1 iff it lies in the fan-in (or,
    with ``relation="fanout"``, the fan-out) of ``p`` in the golden netlist.
    """
    if relation not in RELATIONS:
        raise ValueError(f"relation must be one of {RELATIONS}")
    if not pm.gates:
        raise NetlistError("netlist has no cells to patch")
    if p is None:
        p = int(np.random.default_rng(seed).choice(np.array(pm.gates)))
    p = pm.node_id(p)
    cone = full_fanin_cone(pm, p)
    support = reachable(pm, p, relation)
    labels = {i: int(i in support) for i in range(len(pm)) if i != p}
    return EcoSample(pm, pm_to_aig(pm, lib), p, cone, frozenset(removed_region(pm, cone)), labels,
                     name or f"eco_{seed}", relation)


@dataclass
class _EcoItem:
    item: Item
    p: int
    masked: np.ndarray
    cand: np.ndarray
    y: np.ndarray


def _eco_item(s: EcoSample, lib) -> _EcoItem:
    it = Item(s.name, prepare(s.golden_pm, lib), prepare(s.golden_aig), np.zeros(len(s.golden_pm)),
              np.zeros(len(s.golden_aig)), s.golden_pm, s.golden_aig)
    cand = np.array(s.candidates, dtype=np.int64)
    y = np.array([s.driven_labels[i] for i in cand], dtype=np.float32)
    return _EcoItem(it, s.p, np.array(sorted(s.removed), dtype=np.int64), cand, y)


def driven_logits(store, H: torch.Tensor, p: int, cand) -> torch.Tensor:
    hp = H[p].unsqueeze(0).expand(len(cand), -1)
    return mlp_forward(store, HEAD, torch.cat([H[cand], hp], dim=1), [128, 64, 1], "gelu")[:, 0]


def _forward(store, mcfg, eitems: list[_EcoItem], seeds):
    embs = encode_items(store, mcfg, [e.item for e in eitems], seeds)
    plans = [MaskPlan.from_nodes(e.masked.tolist(), "pm") for e in eitems]
    seqs = [assemble_tokens(aig, pm, plan, store) for (pm, aig), plan in zip(embs, plans)]
    return fused_all(store, mcfg, seqs)


def fused_all(store, mcfg, seqs):
    return fuse_many(seqs, store, mcfg.blocks, mcfg.heads, mcfg.fusion_variant)


def golden_targets(store, mcfg, eitems: list[_EcoItem], seeds) -> list[torch.Tensor]:
    """Unmasked fused PM tokens of the removed region under the current parameters."""
    with torch.no_grad():
        embs = encode_items(store, mcfg, [e.item for e in eitems], seeds)
        seqs = [assemble_tokens(aig, pm, None, store) for pm, aig in embs]
        fused = fused_all(store, mcfg, seqs)
    return [f.view("pm")[torch.from_numpy(e.masked)].clone() for e, f in zip(eitems, fused)]


def eco_loss(store, mcfg, eitems, seeds, golden, scale: float = 1.0, w_rec: float = 1.0, w_drv: float = 1.0):
    """``golden[k]`` holds constant reconstruction targets for ``eitems[k]``'s removed region."""
    fused = _forward(store, mcfg, eitems, seeds)
    total = 0.0
    for e, f, g in zip(eitems, fused, golden):
        ids = torch.from_numpy(e.masked)
        l_rec = (f.view("pm")[ids] - g).abs().mean()
        logits = driven_logits(store, f.view("pm"), e.p, torch.from_numpy(e.cand))
        l_drv = F.binary_cross_entropy_with_logits(logits, torch.from_numpy(e.y).to(logits.dtype))
        total = total + w_rec * l_rec + w_drv * l_drv
    return scale * total


def bce(prob: float, label: int) -> float:
    prob = min(max(prob, 1e-12), 1 - 1e-12)
    return -(label * np.log(prob) + (1 - label) * np.log(1 - prob))


@dataclass
class EcoResult:
    store: object
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def eco_finetune(samples: list[EcoSample], store, cfg, lib, threads: int = 1) -> EcoResult:
    """Minimise L_rec + L_drv; ``store`` (a pretrained ParamStore) is updated in place."""
    from .pipeline.train import batch_gradients, pass_seed
    from .pipeline.dataset import derive_seed
    if not samples:
        raise DataError("no ECO samples")
    if any(not s.removed for s in samples):
        raise DataError("ECO sample with an empty cone")
    store.frozen_prefixes = ()
    store.m, store.v, store.t = {}, {}, {}
    mcfg = cfg.model()
    eitems = [_eco_item(s, lib) for s in samples]
    # Reconstruction targets come from the pretrained model and stay fixed;
    # a target that moves with the weights being trained does not converge.
    golden = golden_targets(store, mcfg, eitems, [derive_seed(cfg.seed, "eco_golden", e.item.name) for e in eitems])
    history = []
    n_steps = max(1, -(-len(eitems) // cfg.batch))
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "eco_order", epoch)).permutation(len(eitems))
        epoch_loss = 0.0
        for step in range(n_steps):
            batch = [int(i) for i in order[step * cfg.batch:(step + 1) * cfg.batch]]
            slots = [(i, k) for k, i in enumerate(batch)]
            chunks = [slots[i:i + cfg.micro_batch] for i in range(0, len(slots), cfg.micro_batch)]

            def loss_of(chunk, epoch=epoch, step=step, scale=1.0 / len(batch)):
                seeds = [pass_seed(cfg.seed, epoch, step, k) for _, k in chunk]
                return eco_loss(store, mcfg, [eitems[i] for i, _ in chunk], seeds, [golden[i] for i, _ in chunk], scale)

            value, grads = batch_gradients(store, loss_of, chunks, threads)
            adam_step(store, grads, lr=cfg.lr_at(epoch * n_steps + step, cfg.epochs * n_steps))
            epoch_loss += value
        rec = {"epoch": epoch, "loss": epoch_loss / n_steps}
        history.append(rec)
        log.info("eco epoch", extra={"fields": rec})
    meta = {"stage": "eco", "config": cfg.to_dict(), "model": mcfg.to_dict(), "relation": samples[0].relation}
    return EcoResult(store, history, meta)


def eco_predict(store, cfg, sample: EcoSample, lib, seed: int = 0) -> dict:
    """Finetune-mode driven probabilities ``{golden node id: prob}`` for every candidate."""
    from .pipeline.dataset import derive_seed
    e = _eco_item(sample, lib)
    with torch.no_grad():
        fused = _forward(store, cfg.model(), [e], [derive_seed(seed, "eco_eval", sample.name)])
        probs = torch.sigmoid(driven_logits(store, fused[0].view("pm"), e.p, torch.from_numpy(e.cand))).numpy()
    return {int(i): float(q) for i, q in zip(e.cand, probs)}


def recall_at_support(probs: dict, labels: dict, among=None) -> float | None:
    """Recall of label-1 nodes within the top-|support| ranked nodes (ties by id)."""
    keys = sorted(probs if among is None else among)
    support = [i for i in keys if labels[i] == 1]
    if not support:
        return None
    ranked = sorted(keys, key=lambda i: (-probs[i], i))[:len(support)]
    return len(set(ranked) & set(support)) / len(support)


def deployment_netlist(original: PmNetlist, target: str) -> PmNetlist:
    """Remove ``target``'s cone (if present) and make sure a placeholder PI named ``target`` exists."""
    if target in original.index:
        net = remove_cone(original, full_fanin_cone(original, target))
    else:
        net = original
    if target in net.index:
        return net
    names = list(net.names) + [target]
    kinds = list(net.kinds) + [PI]
    fanins = list(net.fanins) + [()]
    return PmNetlist(names, kinds, fanins, list(net.outputs), list(net.output_names))


def eco_rank(original_pm: PmNetlist, golden_aig, target: str, store, cfg, lib, top_k: int = 1000,
             seed: int = 0) -> list[tuple[str, float]]:
    """Rank every non-target node of the patched-out netlist; sorted by probability, then name."""
    from .pipeline.dataset import derive_seed
    if not isinstance(target, str) or not target:
        raise DataError("target must be a signal name")
    if top_k < 1:
        raise DataError("top_k must be >= 1")
    declared = set(golden_aig.names) | set(golden_aig.output_names)
    if target not in original_pm.index and target not in declared:
        raise DataError(f"unknown target {target!r}: not a node of the netlist nor a golden signal")
    net = deployment_netlist(original_pm, target)
    p = net.index[target]
    it = Item("rank", prepare(net, lib), prepare(golden_aig), np.zeros(len(net)), np.zeros(len(golden_aig)))
    mcfg = cfg.model()
    with torch.no_grad():
        (pm, aig), = encode_items(store, mcfg, [it], [derive_seed(seed, "eco_rank")])
        seq = assemble_tokens(aig, pm, MaskPlan.from_nodes([p], "pm"), store)
        fused = fuse_many([seq], store, mcfg.blocks, mcfg.heads, mcfg.fusion_variant)[0]
        cand = [i for i in range(len(net)) if i != p]
        if not cand:
            return []
        probs = torch.sigmoid(driven_logits(store, fused.view("pm"), p, torch.tensor(cand))).numpy()
    rows = sorted(((net.names[i], float(q)) for i, q in zip(cand, probs)), key=lambda r: (-r[1], r[0]))
    return rows[:top_k]


def format_candidates(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_id", "probability"])
    for name, prob in rows:
        w.writerow([name, f"{prob:.17g}"])
    return buf.getvalue()


def write_candidates(path, rows) -> None:
    atomic_write_text(path, format_candidates(rows))
