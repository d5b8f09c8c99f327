"""Level-ordered DAG encoders producing structural (hs) and functional (hf) embeddings.

Nodes are processed one topological level at a time; every node of a level
is handled in one batched step.  Several circuits can be encoded together as
a disjoint union (``merge_plans``), which changes nothing numerically per
circuit except float summation order inside batched kernels.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NetlistError
from .library import encode_feature
from .netlist.graph import AIG_KINDS, PI, Aig, Circuit
from .nn.layers import linear, mlp_forward, multihead_attention

AGGREGATORS = ("conv_sum", "attention", "dg2")
EMB_DIM = 128
MAX_PINS = 6


@dataclass
class EncoderConfig:
    aggregator: str = "dg2"
    dim: int = EMB_DIM
    rounds: int = 1
    pin_encoding: bool = True
    heads: int = 4

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")


@dataclass
class Level:
    ids: np.ndarray       # [n_l] node ids
    fanin: np.ndarray     # [n_l, A] padded fanin ids
    mask: np.ndarray      # [n_l, A] valid pins
    use_pin: np.ndarray   # [n_l] asymmetric cell -> add pin vectors


@dataclass
class GraphPlan:
    """Static per-circuit tensors reused across forward passes."""
    n: int
    feats: np.ndarray
    pi_ids: np.ndarray
    pi_names: list
    levels: list
    offsets: list = field(default_factory=lambda: [0])
    sizes: list = field(default_factory=list)
    pi_counts: list = field(default_factory=list)


def _feature_table(lib) -> dict:
    cache = getattr(lib, "_feature_cache", None)
    if cache is None:
        cache = {name: encode_feature(lib, name).astype(np.float32) for name in lib.names}
        object.__setattr__(lib, "_feature_cache", cache)
    return cache


def prepare(circuit: Circuit, lib=None) -> GraphPlan:
    n = len(circuit)
    if isinstance(circuit, Aig):
        feats = np.zeros((n, len(AIG_KINDS)), dtype=np.float32)
        for i, kind in enumerate(circuit.kinds):
            feats[i, AIG_KINDS.index(kind)] = 1.0
        symmetric = lambda kind: True
    else:
        if lib is None:
            raise ValueError("a cell library is required to encode a PM netlist")
        table = _feature_table(lib)
        feats = np.zeros((n, lib.feature_dim), dtype=np.float32)
        for i, kind in enumerate(circuit.kinds):
            if kind == PI:
                continue
            if kind not in table:
                raise NetlistError(f"node {circuit.names[i]!r}: unknown cell {kind!r}")
            feats[i] = table[kind]
        symmetric = lambda kind: lib[kind].is_symmetric
    levels = []
    for group in circuit.level_groups()[1:]:
        width = max(len(circuit.fanins[i]) for i in group)
        fanin = np.zeros((len(group), width), dtype=np.int64)
        mask = np.zeros((len(group), width), dtype=bool)
        use_pin = np.zeros(len(group), dtype=bool)
        for r, i in enumerate(group):
            fin = circuit.fanins[i]
            fanin[r, :len(fin)] = fin
            mask[r, :len(fin)] = True
            use_pin[r] = len(fin) > 1 and not symmetric(circuit.kinds[i])
        levels.append(Level(np.asarray(group, dtype=np.int64), fanin, mask, use_pin))
    pi_ids = np.asarray(circuit.pis, dtype=np.int64)
    return GraphPlan(n, feats, pi_ids, list(circuit.pi_names), levels, [0], [n], [len(pi_ids)])


def merge_plans(plans: list[GraphPlan]) -> GraphPlan:
    """Disjoint union; node ids of circuit ``c`` are shifted by ``offsets[c]``."""
    if len(plans) == 1:
        return plans[0]
    offsets = np.cumsum([0] + [p.n for p in plans])[:-1].tolist()
    depth = max(len(p.levels) for p in plans)
    levels = []
    for d in range(depth):
        parts = [(p.levels[d], off) for p, off in zip(plans, offsets) if d < len(p.levels)]
        width = max(lv.fanin.shape[1] for lv, _ in parts)
        ids, fanin, mask, use_pin = [], [], [], []
        for lv, off in parts:
            pad = width - lv.fanin.shape[1]
            ids.append(lv.ids + off)
            fanin.append(np.pad(lv.fanin + off, ((0, 0), (0, pad)), constant_values=off))
            mask.append(np.pad(lv.mask, ((0, 0), (0, pad))))
            use_pin.append(lv.use_pin)
        levels.append(Level(np.concatenate(ids), np.concatenate(fanin), np.concatenate(mask),
                            np.concatenate(use_pin)))
    return GraphPlan(
        n=sum(p.n for p in plans),
        feats=np.concatenate([p.feats for p in plans]),
        pi_ids=np.concatenate([p.pi_ids + off for p, off in zip(plans, offsets)]),
        pi_names=[name for p in plans for name in p.pi_names],
        levels=levels, offsets=offsets, sizes=[p.n for p in plans],
        pi_counts=[c for p in plans for c in p.pi_counts])


def pi_structural_init(names, pass_seed: int, dim: int = EMB_DIM) -> np.ndarray:
    """Random PI structural embeddings keyed by (pass seed, PI name).

    Both views of one circuit share PI names, so they share PI identities.
    """
    out = np.empty((len(names), dim), dtype=np.float32)
    for r, name in enumerate(names):
        out[r] = np.random.default_rng([int(pass_seed), zlib.crc32(name.encode("utf-8"))]).standard_normal(dim)
    return out


@dataclass
class Embedding:
    hs: torch.Tensor
    hf: torch.Tensor

    def __len__(self) -> int:
        return self.hs.shape[0]

    @property
    def H(self) -> torch.Tensor:
        return torch.cat([self.hs, self.hf], dim=-1)

    def detach(self) -> "Embedding":
        return Embedding(self.hs.detach(), self.hf.detach())

    def slice(self, start: int, size: int) -> "Embedding":
        return Embedding(self.hs[start:start + size], self.hf[start:start + size])

    def as_dict(self) -> dict:
        return {i: (self.hs[i].detach().numpy(), self.hf[i].detach().numpy()) for i in range(len(self))}


def _pi_init(plan: GraphPlan, pass_seed, d: int) -> np.ndarray:
    if np.isscalar(pass_seed):
        return pi_structural_init(plan.pi_names, int(pass_seed), d)
    seeds = list(pass_seed)
    if len(seeds) != len(plan.pi_counts):
        raise ValueError("need one pass seed per merged circuit")
    parts, start = [], 0
    for seed, count in zip(seeds, plan.pi_counts):
        parts.append(pi_structural_init(plan.pi_names[start:start + count], int(seed), d))
        start += count
    return np.concatenate(parts) if parts else np.zeros((0, d), dtype=np.float32)


def encode_plan(store, plan: GraphPlan, cfg: EncoderConfig, prefix: str, pass_seed) -> Embedding:
    """Encode a (possibly merged) plan; ``pass_seed`` is an int or one seed per circuit."""
    d = cfg.dim
    dtype = store.dtype
    x_all = torch.from_numpy(plan.feats).to(dtype)
    pi_ids = torch.from_numpy(plan.pi_ids)
    hs = torch.zeros(plan.n, d, dtype=dtype)
    hs = hs.index_copy(0, pi_ids, torch.from_numpy(_pi_init(plan, pass_seed, d)).to(dtype))
    pi_hf = store.param(f"{prefix}.pi_hf", (d,), "normal")
    hf_base = torch.zeros(plan.n, d, dtype=dtype).index_copy(0, pi_ids, pi_hf.expand(len(plan.pi_ids), d))
    pin_vec = store.param(f"{prefix}.pin", (MAX_PINS, 2 * d), "normal") if cfg.pin_encoding and \
        cfg.aggregator != "conv_sum" else None
    tensors = [(torch.from_numpy(lv.ids), torch.from_numpy(lv.fanin),
                torch.from_numpy(lv.mask), torch.from_numpy(lv.use_pin)) for lv in plan.levels]

    # Level outputs are written into the buffers in place: an out-of-place copy
    # per level costs O(n) each and makes deep graphs quadratic.
    hf_prev = torch.zeros(plan.n, d, dtype=dtype)
    for r in range(cfg.rounds):
        hf = hf_base.clone()
        for ids, fanin, mask, use_pin in tensors:
            x = x_all[ids]
            m = mask.to(dtype).unsqueeze(-1)
            if r == 0:
                deg = m.sum(1)
                mean_hs = (hs[fanin] * m).sum(1) / deg
                hs_i = torch.tanh(linear(store, f"{prefix}.hs_self", x, d) + linear(store, f"{prefix}.hs_msg", mean_hs, d))
                hs.index_copy_(0, ids, hs_i)
            else:
                hs_i = hs[ids]
            kv = torch.cat([hs[fanin], hf[fanin]], dim=-1)
            if cfg.aggregator == "conv_sum":
                msg = (linear(store, f"{prefix}.conv", kv, d) * m).sum(1)
            else:
                if pin_vec is not None:
                    width = fanin.shape[1]
                    kv = kv + pin_vec[:width].unsqueeze(0) * use_pin.to(dtype).view(-1, 1, 1)
                q = torch.cat([x, hs_i, hf_prev[ids]], dim=-1).unsqueeze(1)
                msg = multihead_attention(store, f"{prefix}.attn", q, kv, kv, cfg.heads, d_model=d,
                                          key_mask=mask)[:, 0]
            upd = torch.tanh(mlp_forward(store, f"{prefix}.update", torch.cat([msg, x], dim=-1), [d, d]))
            if cfg.aggregator == "dg2":
                z = torch.sigmoid(linear(store, f"{prefix}.gate", torch.cat([x, msg], dim=-1), d))
                upd = z * upd + (1 - z) * torch.tanh(linear(store, f"{prefix}.skip", msg, d))
            hf.index_copy_(0, ids, upd)
        hf_prev = hf
    return Embedding(hs, hf)


def encode(store, circuit: Circuit, cfg: EncoderConfig, lib=None, pass_seed: int = 0,
           prefix: str | None = None, plan: GraphPlan | None = None) -> Embedding:
    if prefix is None:
        prefix = "aig.enc" if isinstance(circuit, Aig) else "pm.enc"
    return encode_plan(store, plan or prepare(circuit, lib), cfg, prefix, pass_seed)


def encode_pm(net, lib, store, cfg: EncoderConfig, pass_seed: int = 0) -> Embedding:
    return encode(store, net, cfg, lib, pass_seed, "pm.enc")


def encode_aig(aig, store, cfg: EncoderConfig, pass_seed: int = 0) -> Embedding:
    if not isinstance(aig, Aig):
        raise NetlistError("encode_aig expects an Aig")
    return encode(store, aig, cfg, None, pass_seed, "aig.enc")


def readout_prob(store, hf: torch.Tensor, prefix: str = "pm.readout") -> torch.Tensor:
    """3-layer MLP on hf squashed by a sigmoid; one probability per row."""
    return torch.sigmoid(mlp_forward(store, prefix, hf, [64, 64, 1], "gelu")[..., 0])


def dump_embeddings(path, emb: Embedding, meta: dict | None = None) -> None:
    from .nn.checkpoint import write_container
    tensors = {}
    hs, hf = emb.hs.detach().numpy(), emb.hf.detach().numpy()
    for i in range(len(emb)):
        tensors[f"hs/{i}"] = hs[i]
        tensors[f"hf/{i}"] = hf[i]
    write_container(path, tensors, dict(meta or {}, kind="embeddings", n_nodes=len(emb)))
