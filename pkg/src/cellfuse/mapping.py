"""Cell-type prediction over AIG cones for technology-mapping assistance."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .encoders import encode_plan, merge_plans, prepare
from .errors import DataError
from .fileio import atomic_write_text
from .netlist import cone_subcircuit, pm_to_aig
from .nn import adam_step
from .nn.layers import mlp_forward

log = logging.getLogger("cellfuse.map")
HEAD = "map.head"
POOLINGS = ("mean", "root", "max")


@dataclass
class MapSample:
    cone_aig: object
    label: int
    cell: str
    root: str


@dataclass
class MapSampleSet:
    samples: list
    skipped: int = 0


def make_map_samples(pm, lib, n_samples: int, max_nodes: int, seed: int) -> MapSampleSet:
    """Sample cells without replacement; each cone becomes an AIG labelled by the cell type."""
    if not pm.gates:
        raise DataError("no eligible cells: the netlist has no cells")
    classes = list(lib.names)
    rng = np.random.default_rng(seed)
    picks = rng.permutation(np.array(pm.gates))[:n_samples]
    out, skipped = [], 0
    for root in picks:
        root = int(root)
        aig = pm_to_aig(cone_subcircuit(pm, root), lib)
        if len(aig) > max_nodes:
            skipped += 1
            log.info("skipped cone", extra={"fields": {"root": pm.names[root], "aig_nodes": len(aig)}})
            continue
        out.append(MapSample(aig, classes.index(pm.kinds[root]), pm.kinds[root], pm.names[root]))
    if not out:
        raise DataError("no eligible cells: every cone exceeds max_nodes")
    return MapSampleSet(out, skipped)


def _pool(hf: torch.Tensor, sizes, roots, pooling: str) -> torch.Tensor:
    rows, start = [], 0
    for n, r in zip(sizes, roots):
        seg = hf[start:start + n]
        if pooling == "mean":
            rows.append(seg.mean(0))
        elif pooling == "max":
            rows.append(seg.amax(0))
        else:
            rows.append(seg[r])
        start += n
    return torch.stack(rows)


def map_logits(store, mcfg, aigs, seeds, n_classes: int, pooling: str = "mean", plans=None) -> torch.Tensor:
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}")
    plans = plans or [prepare(a) for a in aigs]
    emb = encode_plan(store, merge_plans(plans), mcfg.encoder("aig"), "aig.enc", seeds)
    roots = [a.outputs[0] for a in aigs]
    pooled = _pool(emb.hf, [p.n for p in plans], roots, pooling)
    return mlp_forward(store, HEAD, pooled, [128, n_classes], "gelu")


@dataclass
class MapResult:
    store: object
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def map_finetune(samples: list[MapSample], store, cfg, classes, pooling: str = "mean", threads: int = 1) -> MapResult:
    from .pipeline.dataset import derive_seed
    from .pipeline.train import batch_gradients, pass_seed
    n_classes = len(classes)
    if not samples:
        raise DataError("no mapping samples")
    for s in samples:
        if not 0 <= s.label < n_classes:
            raise DataError(f"label {s.label} out of range for {n_classes} classes")
    store.frozen_prefixes = ()
    store.m, store.v, store.t = {}, {}, {}
    mcfg = cfg.model()
    plans = [prepare(s.cone_aig) for s in samples]
    history = []
    n_steps = max(1, -(-len(samples) // cfg.batch))
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "map_order", epoch)).permutation(len(samples))
        total, correct = 0.0, 0
        for step in range(n_steps):
            idx = order[step * cfg.batch:(step + 1) * cfg.batch]
            slots = [(int(i), k) for k, i in enumerate(idx)]
            chunks = [slots[i:i + cfg.micro_batch] for i in range(0, len(slots), cfg.micro_batch)]
            hits = []

            def loss_of(chunk, epoch=epoch, step=step, scale=1.0 / len(idx)):
                ids = [i for i, _ in chunk]
                logits = map_logits(store, mcfg, [samples[i].cone_aig for i in ids],
                                    [pass_seed(cfg.seed, epoch, step, k) for _, k in chunk], n_classes, pooling,
                                    [plans[i] for i in ids])
                y = torch.tensor([samples[i].label for i in ids])
                hits.append(int((logits.argmax(1) == y).sum()))
                return scale * F.cross_entropy(logits, y, reduction="sum")

            value, grads = batch_gradients(store, loss_of, chunks, threads)
            adam_step(store, grads, lr=cfg.lr_at(epoch * n_steps + step, cfg.epochs * n_steps))
            total += value
            correct += sum(hits)
        rec = {"epoch": epoch, "loss": total / n_steps, "train_top1": correct / len(samples)}
        history.append(rec)
        log.info("map epoch", extra={"fields": rec})
    meta = {"stage": "map", "classes": list(classes), "pooling": pooling, "config": cfg.to_dict(),
            "model": mcfg.to_dict()}
    return MapResult(store, history, meta)


def map_predict(aig, roots, store, cfg, classes, pooling: str = "mean", max_nodes: int | None = 4096,
                seed: int = 0) -> list[dict]:
    """Per-root class distribution over ``classes`` plus the argmax cell."""
    from .pipeline.dataset import derive_seed
    mcfg = cfg.model()
    out = []
    with torch.no_grad():
        for root in roots:
            rid = aig.node_id(root)
            cone = cone_subcircuit(aig, rid, max_nodes)
            logits = map_logits(store, mcfg, [cone], [derive_seed(seed, "map", aig.names[rid])], len(classes), pooling)
            probs = torch.softmax(logits.double(), dim=1)[0].numpy()
            best = int(np.argmax(probs))
            out.append({"root": aig.names[rid], "argmax_cell": classes[best],
                        "probs": {c: float(p) for c, p in zip(classes, probs)}})
    return out


def map_accuracy(samples, store, cfg, classes, pooling: str = "mean", seed: int = 0) -> float:
    from .pipeline.dataset import derive_seed
    mcfg = cfg.model()
    hits = 0
    with torch.no_grad():
        for k in range(0, len(samples), cfg.micro_batch):
            part = samples[k:k + cfg.micro_batch]
            logits = map_logits(store, mcfg, [s.cone_aig for s in part],
                                [derive_seed(seed, "map_eval", k + j) for j in range(len(part))], len(classes), pooling)
            hits += int((logits.argmax(1) == torch.tensor([s.label for s in part])).sum())
    return hits / len(samples)


def write_predictions(path, preds) -> None:
    atomic_write_text(path, json.dumps(preds, indent=1, sort_keys=True) + "\n")
