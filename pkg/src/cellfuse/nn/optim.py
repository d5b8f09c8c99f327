"""Adam with bias correction; moments live in the ParamStore."""
from __future__ import annotations

import torch

from ..errors import NumericalError


def check_finite(grads: dict, what: str = "gradient") -> None:
    for name in sorted(grads):
        if not torch.isfinite(grads[name]).all():
            raise NumericalError(f"non-finite {what} for parameter {name!r}")


def adam_step(store, grads: dict, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One Adam update for every trainable parameter present in ``grads``.

    Parameters without a gradient this step keep their values and moments.
    """
    check_finite(grads)
    b1, b2 = betas
    with torch.no_grad():
        for name in sorted(grads):
            if store.is_frozen(name):
                continue
            p, g = store.params[name], grads[name].to(store.dtype)
            if name not in store.m:
                store.m[name] = torch.zeros_like(p)
                store.v[name] = torch.zeros_like(p)
                store.t[name] = 0
            store.t[name] += 1
            t = store.t[name]
            store.m[name].mul_(b1).add_(g, alpha=1 - b1)
            store.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = store.m[name] / (1 - b1 ** t)
            v_hat = store.v[name] / (1 - b2 ** t)
            if lr:
                p.sub_(lr * m_hat / (v_hat.sqrt() + eps))
    for name in sorted(grads):
        if not torch.isfinite(store.params[name]).all():
            raise NumericalError(f"parameter {name!r} became non-finite after the update")


def add_grads(total: dict, part: dict) -> dict:
    """Accumulate ``part`` into ``total`` (new dict; insertion order irrelevant)."""
    out = dict(total)
    for name, g in part.items():
        out[name] = g if name not in out else out[name] + g
    return out
