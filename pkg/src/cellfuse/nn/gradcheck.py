"""Central finite-difference check of autograd gradients in float64."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    tol: float
    worst: tuple | None = None
    entries: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_err < self.tol

    def summary(self) -> dict:
        return {"max_rel_err": self.max_rel_err, "n_checked": self.n_checked, "tol": self.tol,
                "passed": self.passed, "worst": list(self.worst) if self.worst else None}


def rel_err(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(store, loss_fn, sample_params: int = 200, eps: float = 1e-5, tol: float = 1e-3,
               seed: int = 0, grad_hook=None, floor: float = 1e-5) -> GradCheckReport:
    """Compare autograd against central differences on sampled coordinates.

    ``loss_fn(store)`` must be a deterministic scalar function of the
    parameters.  The store is copied to float64 first; the caller's store is
    not touched.  Coordinates are drawn by picking a parameter uniformly,
    then a coordinate within it, among parameters that receive a gradient.
    ``grad_hook(grads)`` may alter the analytic gradients (negative controls).
    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    coordinates whose true gradient is zero from reporting rounding noise.
    """
    work = store.clone(torch.float64)
    loss = loss_fn(work)
    names = work.names()
    grads = work.grads_of(loss, names)
    if grad_hook is not None:
        grads = grad_hook(grads)
    names = [n for n in names if n in grads]
    if not names:
        return GradCheckReport(float("inf"), 0, tol)
    rng = np.random.default_rng(seed)
    entries = []
    with torch.no_grad():
        for _ in range(sample_params):
            name = names[rng.integers(len(names))]
            p = work.params[name]
            flat = p.view(-1)
            j = int(rng.integers(flat.numel()))
            orig = flat[j].item()
            flat[j] = orig + eps
            up = float(loss_fn(work))
            flat[j] = orig - eps
            down = float(loss_fn(work))
            flat[j] = orig
            num = (up - down) / (2 * eps)
            ana = float(grads[name].reshape(-1)[j])
            entries.append((name, j, ana, num, rel_err(ana, num, floor)))
    worst = max(entries, key=lambda e: e[4])
    return GradCheckReport(worst[4], len(entries), tol, worst, entries)
