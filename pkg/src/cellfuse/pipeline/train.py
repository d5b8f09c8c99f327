"""Two-stage pretraining loops with deterministic gradient accumulation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import CheckpointError, NumericalError
from ..mcm import plan_masks
from ..model import Item, ModelConfig, encode_items, make_item, stage1_loss, stage2_loss
from ..nn import ParamStore, adam_step, add_grads, load_checkpoint, save_checkpoint
from .dataset import derive_seed

log = logging.getLogger("cellfuse.train")

MODEL_KEYS = ("aggregator", "aig_aggregator", "dim", "rounds", "pin_encoding", "enc_heads")


def items_of(samples, lib) -> list[Item]:
    return [make_item(s.name, s.pm, s.aig, s.labels_pm, s.labels_aig, lib) for s in samples]


def pass_seed(seed: int, epoch: int, step: int, slot: int) -> int:
    return derive_seed(seed, "pass", epoch, step, slot)


def mask_seed(seed: int, epoch: int, step: int, slot: int) -> int:
    return derive_seed(seed, "mask", epoch, step, slot)


def batch_gradients(store, loss_of, chunks, threads: int = 1):
    """Sum per-chunk gradients in chunk order; ``loss_of(chunk)`` builds a scalar loss.

    Work is split the same way regardless of ``threads``, so the result is
    bit-identical for any worker count.
    """
    def run(chunk):
        loss = loss_of(chunk)
        value = float(loss.detach())
        if not math.isfinite(value):
            names = [getattr(x[0], "name", "?") for x in chunk]
            raise NumericalError(f"non-finite loss ({value}) on circuits {names}")
        return value, store.grads_of(loss)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    total, grads = 0.0, {}
    for value, g in results:
        total += value
        grads = add_grads(grads, g)
    return total, grads


@dataclass
class TrainResult:
    store: ParamStore
    best_state: dict
    best_epoch: int
    best_metric: float
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def _meta(cfg, stage: int, epoch: int, extra=None) -> dict:
    m = {"stage": stage, "epoch": epoch, "config": cfg.to_dict(), "model": cfg.model().to_dict()}
    m.update(extra or {})
    return m


def check_compatible(meta: dict, cfg) -> None:
    saved = meta.get("model", {})
    want = cfg.model().to_dict()
    bad = [k for k in MODEL_KEYS if k in saved and saved[k] != want[k]]
    if bad:
        raise CheckpointError(f"checkpoint/config mismatch on {bad}: "
                              f"checkpoint {[saved[k] for k in bad]} vs config {[want[k] for k in bad]}")


def _steps(n_train: int, batch: int) -> int:
    return max(1, -(-n_train // batch))


def train_loop(items: list[Item], val_items: list[Item], cfg, store: ParamStore, stage: int,
               start_epoch: int = 0, threads: int = 1, evaluate_fn=None, on_epoch=None) -> TrainResult:
    """Shared loop: shuffled batches, fixed micro-batch chunks, one Adam step per batch."""
    mcfg: ModelConfig = cfg.model()
    history = []
    best_metric, best_epoch, best_state = math.inf, -1, store.state_dict()

    def chunks_for(batch_items, epoch, step):
        slots = [(it, slot) for slot, it in enumerate(batch_items)]
        return [slots[i:i + cfg.micro_batch] for i in range(0, len(slots), cfg.micro_batch)]

    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "order", epoch)).permutation(len(items))
        epoch_loss = 0.0
        for step in range(_steps(len(items), cfg.batch)):
            batch_items = [items[i] for i in order[step * cfg.batch:(step + 1) * cfg.batch]]
            scale = 1.0 / len(batch_items)

            def loss_of(chunk, epoch=epoch, step=step, scale=scale):
                its = [it for it, _ in chunk]
                seeds = [pass_seed(cfg.seed, epoch, step, slot) for _, slot in chunk]
                if stage == 1:
                    return stage1_loss(store, mcfg, its, seeds, scale)
                view = cfg.refine_view
                plans = [plan_masks(it.pm if view == "pm" else it.aig, cfg.theta, cfg.k,
                                    mask_seed(cfg.seed, epoch, step, slot), view) for it, slot in chunk]
                return stage2_loss(store, mcfg, its, seeds, plans, cfg.weights, scale)

            value, grads = batch_gradients(store, loss_of, chunks_for(batch_items, epoch, step), threads)
            n_steps = _steps(len(items), cfg.batch)
            adam_step(store, grads, lr=cfg.lr_at(epoch * n_steps + step, cfg.epochs * n_steps))
            epoch_loss += value
        record = {"epoch": epoch, "loss": epoch_loss / _steps(len(items), cfg.batch)}
        if evaluate_fn is not None:
            record.update(evaluate_fn(store, epoch))
        history.append(record)
        log.info("epoch", extra={"fields": record})
        metric = record.get("select", record["loss"])
        if metric < best_metric:
            best_metric, best_epoch, best_state = metric, epoch, store.state_dict()
        if on_epoch is not None:
            on_epoch(store, epoch, record)
    return TrainResult(store, best_state, best_epoch, best_metric, history)


def _selector(items, val_items, cfg, stage: int, eval_every: int):
    """Per-epoch metrics; ``select`` is the refined view's PE on val (train if val is empty)."""
    from .evaluate import evaluate_items

    def fn(store, epoch):
        out = {}
        if eval_every and (epoch + 1) % eval_every == 0:
            pool = val_items or items
            rep = evaluate_items(pool, store, cfg, stage, with_re=False)
            out.update({"val_pe": rep["pe"], "val_pe_other": rep["pe_other"], "select": rep["pe"]})
            if not val_items:
                out["select_on"] = "train"
        return out
    return fn


def train_stage1(samples, cfg, lib, val_samples=(), threads: int = 1, resume: str | None = None,
                 eval_every: int = 1, store: ParamStore | None = None) -> TrainResult:
    items, val_items = items_of(samples, lib), items_of(val_samples, lib)
    start = 0
    if resume:
        store, meta = load_checkpoint(resume)
        check_compatible(meta, cfg)
        start = int(meta.get("last_epoch", meta.get("epoch", -1))) + 1
    store = store or ParamStore(cfg.seed)
    res = train_loop(items, val_items, cfg, store, 1, start, threads, _selector(items, val_items, cfg, 1, eval_every))
    res.meta = _meta(cfg, 1, res.best_epoch, {"last_epoch": cfg.epochs - 1})
    return res


def freeze_prefixes(refine_view: str) -> tuple[str, ...]:
    return ("aig.",) if refine_view == "pm" else ("pm.",)


def train_stage2(samples, stage1_ckpt, cfg, lib, val_samples=(), threads: int = 1, eval_every: int = 1,
                 resume: str | None = None) -> TrainResult:
    if resume:
        store, meta = load_checkpoint(resume)
        start = int(meta.get("last_epoch", -1)) + 1
    else:
        store, meta = load_checkpoint(stage1_ckpt) if isinstance(stage1_ckpt, str) or hasattr(stage1_ckpt, "__fspath__") \
            else (stage1_ckpt.clone(), {})
        start = 0
        # Adam moments from stage 1 are not carried over.
        store.m, store.v, store.t = {}, {}, {}
    check_compatible(meta, cfg)
    if meta.get("stage", 1) != 1 and not resume:
        raise CheckpointError("stage 2 must start from a stage-1 checkpoint")
    store.frozen_prefixes = freeze_prefixes(cfg.refine_view)
    items, val_items = items_of(samples, lib), items_of(val_samples, lib)
    res = train_loop(items, val_items, cfg, store, 2, start, threads, _selector(items, val_items, cfg, 2, eval_every))
    res.meta = _meta(cfg, 2, res.best_epoch, {"last_epoch": cfg.epochs - 1, "frozen": list(store.frozen_prefixes)})
    return res


def save_result(res: TrainResult, path, best: bool = True) -> None:
    """Write the best (default) or last parameters, with optimizer state of the last step."""
    store = res.store
    if best:
        store = store.clone()
        store.load_dict(res.best_state)
    save_checkpoint(path, store, res.meta)


def stage2_grad_check(sample, cfg, lib, sample_params: int = 200, eps: float = 1e-6, tol: float = 1e-3,
                      seed: int = 0, store: ParamStore | None = None):
    """Finite-difference check of the full stage-2 loss on one circuit (float64).

    The reconstruction target is a stop-gradient quantity during training, so
    it is held at its value under the unperturbed parameters; otherwise the
    numeric route would differentiate through it and the autograd route not.
    """
    from ..nn import grad_check
    item = items_of([sample], lib)[0]
    view = cfg.refine_view
    plan = plan_masks(item.pm if view == "pm" else item.aig, cfg.theta, cfg.k, derive_seed(seed, "gc_mask"), view)
    mcfg = cfg.model()
    pseed = derive_seed(seed, "gc_pass")

    fixed = {}

    def loss_fn(st):
        dtype = next(iter(st.params.values())).dtype if st.params else None
        if dtype not in fixed:
            with torch.no_grad():
                pm, aig = encode_items(st, mcfg, [item], [pseed])[0]
            fixed[dtype] = [(pm if plan.view == "pm" else aig).detach()]
        return stage2_loss(st, mcfg, [item], [pseed], [plan], cfg.weights, targets=fixed[dtype])

    store = store or ParamStore(cfg.seed)
    loss_fn(store)  # materialise every parameter
    return grad_check(store, loss_fn, sample_params, eps, tol, seed)
