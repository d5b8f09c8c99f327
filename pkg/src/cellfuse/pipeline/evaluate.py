"""PE / RE evaluation of stage-1 and stage-2 checkpoints."""
from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..mcm import MaskPlan, metric_pe, plan_masks
from ..model import stage1_predict, stage2_outputs
from .dataset import derive_seed

REPORT_KEYS = ("pe", "re", "n_nodes", "n_masked", "theta", "k")


def _chunks(seq, size):
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def evaluate_items(items, store, cfg, stage: int, with_re: bool = True, seed: int | None = None) -> dict:
    """Pooled node-level PE of both views; RE over fresh seeded mask plans (stage 2)."""
    if not items:
        raise DataError("cannot evaluate an empty split")
    seed = cfg.seed if seed is None else seed
    mcfg = cfg.model()
    view, other = cfg.refine_view, ("aig" if cfg.refine_view == "pm" else "pm")
    err = {"pm": [], "aig": []}
    re_parts, n_masked = [], 0
    for c, chunk in enumerate(_chunks(list(enumerate(items)), cfg.micro_batch)):
        its = [it for _, it in chunk]
        seeds = [derive_seed(seed, "eval", i) for i, _ in chunk]
        if stage == 1:
            preds = stage1_predict(store, mcfg, its, seeds)
            for it, (pp, pa) in zip(its, preds):
                err["pm"].append(np.abs(pp - it.labels_pm))
                err["aig"].append(np.abs(pa - it.labels_aig))
            continue
        outs = stage2_outputs(store, mcfg, its, seeds, [MaskPlan.empty(view)] * len(its))
        for it, o in zip(its, outs):
            err["pm"].append(np.abs(o["pm_prob"] - it.labels_pm))
            err["aig"].append(np.abs(o["aig_prob"] - it.labels_aig))
        if with_re:
            plans = [plan_masks(it.pm if view == "pm" else it.aig, cfg.theta, cfg.k,
                                derive_seed(seed, "eval_mask", i), view) for i, it in chunk]
            for o, plan in zip(stage2_outputs(store, mcfg, its, seeds, plans), plans):
                ids = plan.masked_ids
                re_parts.append(np.abs(o["refined_hf"][ids].astype(np.float64) - o["target_hf"][ids]).mean(axis=1))
                n_masked += len(ids)
    pe = {v: float(np.concatenate(err[v]).mean()) for v in err}
    n_nodes = int(sum(len(e) for e in err[view]))
    return {
        "pe": pe[view],
        "pe_other": pe[other],
        "re": float(np.concatenate(re_parts).mean()) if re_parts else None,
        "n_nodes": n_nodes,
        "n_masked": n_masked,
        "theta": float(cfg.theta),
        "k": int(cfg.k),
    }


def evaluate(samples, store, cfg, lib, stage: int, seed: int | None = None) -> dict:
    """Metrics report with exactly the ``REPORT_KEYS``."""
    from .train import items_of
    rep = evaluate_items(items_of(samples, lib), store, cfg, stage, with_re=(stage == 2), seed=seed)
    return {k: rep[k] for k in REPORT_KEYS}


def pe_of_predictions(items, preds) -> float:
    """Convenience: pooled PE given per-item prob arrays (for sanity checks)."""
    pe = [metric_pe(dict(enumerate(p)), dict(enumerate(it.labels_pm))) * len(p) for it, p in zip(items, preds)]
    return float(sum(pe) / sum(len(p) for p in preds))
