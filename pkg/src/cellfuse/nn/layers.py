"""Dense layers, attention and Transformer blocks over a ParamStore.

Every function takes the store and a name prefix; parameters are created
on first call with the shapes implied by the inputs.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F

ACTIVATIONS = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "gelu": F.gelu,
    "silu": F.silu,
    "identity": lambda x: x,
}


def linear(store, name: str, x: torch.Tensor, d_out: int, bias: bool = True) -> torch.Tensor:
    d_in = x.shape[-1]
    w = store.param(f"{name}.w", (d_in, d_out), "uniform", fan_in=d_in)
    y = x @ w
    if bias:
        y = y + store.param(f"{name}.b", (d_out,), "zeros")
    return y


def mlp_forward(store, name_prefix: str, x: torch.Tensor, layers, activation: str = "gelu") -> torch.Tensor:
    """Affine/activation stack; ``layers`` lists output widths, the last one affine only."""
    act = ACTIVATIONS[activation]
    layers = list(layers)
    if not layers:
        raise ValueError("mlp needs at least one layer")
    for k, d in enumerate(layers):
        x = linear(store, f"{name_prefix}.{k}", x, d)
        if k < len(layers) - 1:
            x = act(x)
    return x


def layer_norm(store, name: str, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    d = x.shape[-1]
    g = store.param(f"{name}.g", (d,), "ones")
    b = store.param(f"{name}.b", (d,), "zeros")
    mu = x.mean(-1, keepdim=True)
    var = ((x - mu) ** 2).mean(-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * g + b


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    scores = scores - scores.amax(-1, keepdim=True)
    e = torch.exp(scores)
    return e / e.sum(-1, keepdim=True)


def _split(x: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, t, d = x.shape
    return x.reshape(*lead, t, heads, d // heads).transpose(-3, -2)


def _merge(x: torch.Tensor) -> torch.Tensor:
    *lead, h, t, dh = x.shape
    return x.transpose(-3, -2).reshape(*lead, t, h * dh)


def multihead_attention(store, prefix: str, queries, keys, values, heads: int, d_model: int | None = None,
                        key_mask=None, return_weights: bool = False):
    """Scaled dot-product attention over batched ``[..., t, d]`` inputs.

    ``key_mask[..., m]`` marks valid keys; every query row needs at least one.
    """
    d_model = d_model or queries.shape[-1]
    if d_model % heads:
        raise ValueError(f"model width {d_model} is not divisible by {heads} heads")
    if keys.shape[:-1] != values.shape[:-1]:
        raise ValueError("keys and values must have the same leading shape")
    q = _split(linear(store, f"{prefix}.q", queries, d_model), heads)
    k = _split(linear(store, f"{prefix}.k", keys, d_model), heads)
    v = _split(linear(store, f"{prefix}.v", values, d_model), heads)
    scores = q @ k.transpose(-1, -2) / math.sqrt(d_model // heads)
    mask = None if key_mask is None else key_mask.unsqueeze(-2).unsqueeze(-3)
    w = masked_softmax(scores, mask)
    out = linear(store, f"{prefix}.o", _merge(w @ v), d_model)
    return (out, w) if return_weights else out


def attention_forward(store, prefix: str, queries, keys, values, heads: int, return_weights: bool = False):
    """Multi-head attention for unbatched ``[q, d]`` / ``[m, d]`` inputs."""
    if queries.dim() != 2 or keys.dim() != 2 or values.dim() != 2:
        raise ValueError("attention_forward expects 2-D inputs")
    if keys.shape[0] != values.shape[0]:
        raise ValueError("keys and values must have the same length")
    if queries.shape[1] != keys.shape[1]:
        raise ValueError("query and key widths differ")
    return multihead_attention(store, prefix, queries, keys, values, heads, return_weights=return_weights)


def elu_feature(x: torch.Tensor) -> torch.Tensor:
    return F.elu(x) + 1.0


def linear_attention(store, prefix: str, x: torch.Tensor, heads: int, key_mask=None) -> torch.Tensor:
    """Kernelized self-attention with the ``elu(x) + 1`` feature map."""
    d = x.shape[-1]
    if d % heads:
        raise ValueError(f"model width {d} is not divisible by {heads} heads")
    q = elu_feature(_split(linear(store, f"{prefix}.q", x, d), heads))
    k = elu_feature(_split(linear(store, f"{prefix}.k", x, d), heads))
    v = _split(linear(store, f"{prefix}.v", x, d), heads)
    if key_mask is not None:
        k = k * key_mask.unsqueeze(-2).unsqueeze(-1).to(k.dtype)
    kv = k.transpose(-1, -2) @ v                     # [..., h, dh, dh]
    z = q @ k.sum(-2, keepdim=True).transpose(-1, -2)  # [..., h, t, 1]
    out = (q @ kv) / (z + 1e-6)
    return linear(store, f"{prefix}.o", _merge(out), d)


def transformer_block(store, prefix: str, tokens: torch.Tensor, heads: int = 8, variant: str = "full",
                      key_mask=None, ff_mult: int = 4) -> torch.Tensor:
    """Pre-norm block: ``x + attn(ln(x))`` then ``x + ff(ln(x))``."""
    d = tokens.shape[-1]
    h = layer_norm(store, f"{prefix}.ln1", tokens)
    if variant == "full":
        a = multihead_attention(store, f"{prefix}.attn", h, h, h, heads, key_mask=key_mask)
    elif variant == "linear":
        a = linear_attention(store, f"{prefix}.attn", h, heads, key_mask=key_mask)
    else:
        raise ValueError(f"unknown attention variant {variant!r}")
    x = tokens + a
    h = layer_norm(store, f"{prefix}.ln2", x)
    return x + mlp_forward(store, f"{prefix}.ff", h, [ff_mult * d, d], "gelu")
