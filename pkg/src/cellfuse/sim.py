"""Bit-parallel logic simulation of PM netlists and AIGs.

Patterns are packed 64 per ``uint64`` word.  Random patterns come from
numpy's PCG64 bit generator: ``PCG64(seed).random_raw(n_pi * n_words)``
reshaped row-major to ``(n_pi, n_words)``, so PI ``k`` owns words
``k*n_words .. (k+1)*n_words - 1`` and bit ``j`` of word ``w`` is pattern
``64*w + j``.  This stream is part of the labels file contract.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SimulationError
from .library import eval_cell
from .netlist.graph import AND, NOT, PI, Aig, Circuit

DEFAULT_PATTERNS = 15_000
MAX_EXHAUSTIVE_PIS = 20
_ONES = np.uint64(0xFFFF_FFFF_FFFF_FFFF)


def _tt_words(tt: str, ins: list[np.ndarray], like: np.ndarray) -> np.ndarray:
    if tt == "0" * len(tt):
        return np.zeros_like(like)
    if tt == "1" * len(tt):
        return np.full_like(like, _ONES)
    half = len(tt) // 2
    f0, f1 = tt[:half], tt[half:]
    if f0 == f1:
        return _tt_words(f0, ins[1:], like)
    s = ins[0]
    if len(ins) == 1:
        return s.copy() if f1 == "1" else ~s
    return (s & _tt_words(f1, ins[1:], like)) | (~s & _tt_words(f0, ins[1:], like))


def simulate_words(circuit: Circuit, lib, pi_words: np.ndarray) -> np.ndarray:
    """Propagate packed PI values; returns one ``uint64`` row per node."""
    pi_words = np.asarray(pi_words, dtype=np.uint64)
    if pi_words.shape[0] != len(circuit.pis):
        raise SimulationError(f"expected {len(circuit.pis)} PI rows, got {pi_words.shape[0]}")
    vals = np.empty((len(circuit), pi_words.shape[1]), dtype=np.uint64)
    vals[list(circuit.pis)] = pi_words
    is_aig = isinstance(circuit, Aig)
    for i, kind in enumerate(circuit.kinds):
        if kind == PI:
            continue
        fin = circuit.fanins[i]
        if is_aig:
            vals[i] = vals[fin[0]] & vals[fin[1]] if kind == AND else ~vals[fin[0]]
        else:
            vals[i] = _tt_words(lib[kind].tt, [vals[j] for j in fin], vals[fin[0]])
    return vals


def _count_ones(vals: np.ndarray, n_patterns: int) -> np.ndarray:
    full, rem = divmod(n_patterns, 64)
    counts = np.bitwise_count(vals[:, :full]).sum(axis=1, dtype=np.int64)
    if rem:
        tail = vals[:, full] & np.uint64((1 << rem) - 1)
        counts += np.bitwise_count(tail).astype(np.int64)
    return counts


def random_pi_words(n_pis: int, n_patterns: int, seed: int) -> np.ndarray:
    n_words = -(-n_patterns // 64)
    raw = np.random.PCG64(seed).random_raw(n_pis * n_words)
    return np.asarray(raw, dtype=np.uint64).reshape(n_pis, n_words)


def exhaustive_pi_words(n_pis: int) -> np.ndarray:
    """Pattern ``t`` assigns PI ``i`` the bit ``(t >> i) & 1``."""
    t = np.arange(1 << n_pis, dtype=np.uint64)
    rows = []
    for i in range(n_pis):
        bits = ((t >> np.uint64(i)) & np.uint64(1)).astype(np.uint8)
        packed = np.packbits(bits, bitorder="little")
        packed = np.pad(packed, (0, -len(packed) % 8))
        rows.append(packed.view("<u8").astype(np.uint64))
    if not rows:
        return np.zeros((0, 1), dtype=np.uint64)
    return np.stack(rows)


@dataclass
class SimResult:
    prob: np.ndarray
    patterns_used: int
    seed: int | None = None
    counts: np.ndarray = field(default=None, repr=False)

    def __getitem__(self, node: int) -> float:
        return float(self.prob[node])

    def as_dict(self) -> dict[int, float]:
        return {i: float(p) for i, p in enumerate(self.prob)}

    def to_json(self) -> str:
        """Labels file text; floats carry 17 significant digits."""
        probs = ",".join(f'"{i}":{float(p):.17g}' for i, p in enumerate(self.prob))
        seed = "null" if self.seed is None else str(int(self.seed))
        return f'{{"n_patterns":{self.patterns_used},"seed":{seed},"prob":{{{probs}}}}}\n'

    @classmethod
    def from_json(cls, text: str) -> "SimResult":
        doc = json.loads(text)
        try:
            probs = doc["prob"]
            prob = np.array([probs[str(i)] for i in range(len(probs))], dtype=np.float64)
            return cls(prob, int(doc["n_patterns"]), doc.get("seed"))
        except (KeyError, TypeError, ValueError) as exc:
            raise SimulationError(f"malformed labels document: {exc}") from None

    def save(self, path) -> None:
        from .fileio import atomic_write_text
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "SimResult":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def simulate_random(circuit: Circuit, lib=None, n_patterns: int = DEFAULT_PATTERNS, seed: int = 0,
                    threads: int = 1, block_words: int = 64) -> SimResult:
    if n_patterns < 1:
        raise SimulationError("n_patterns must be >= 1")
    words = random_pi_words(len(circuit.pis), n_patterns, seed)
    n_words = words.shape[1]
    if threads <= 1 or n_words <= block_words:
        counts = _count_ones(simulate_words(circuit, lib, words), n_patterns)
    else:
        blocks = [(s, min(s + block_words, n_words)) for s in range(0, n_words, block_words)]

        def run(block):
            s, e = block
            used = min(n_patterns - 64 * s, 64 * (e - s))
            return _count_ones(simulate_words(circuit, lib, words[:, s:e]), used)

        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = sum(pool.map(run, blocks))
    return SimResult(counts / n_patterns, n_patterns, seed, counts)


def simulate_random_scalar(circuit: Circuit, lib=None, n_patterns: int = DEFAULT_PATTERNS,
                           seed: int = 0) -> SimResult:
    """One-pattern-at-a-time reference path over the same pattern stream."""
    words = random_pi_words(len(circuit.pis), n_patterns, seed)
    bits = np.unpackbits(words.astype("<u8").view(np.uint8), axis=1, bitorder="little")[:, :n_patterns]
    counts = np.zeros(len(circuit), dtype=np.int64)
    is_aig = isinstance(circuit, Aig)
    pi_pos = {node: k for k, node in enumerate(circuit.pis)}
    for t in range(n_patterns):
        val = [0] * len(circuit)
        for i, kind in enumerate(circuit.kinds):
            fin = circuit.fanins[i]
            if kind == PI:
                val[i] = int(bits[pi_pos[i], t])
            elif is_aig:
                val[i] = val[fin[0]] & val[fin[1]] if kind == AND else 1 - val[fin[0]]
            else:
                val[i] = eval_cell(lib[kind], [val[j] for j in fin])
        counts += val
    return SimResult(counts / n_patterns, n_patterns, seed, counts)


def simulate_exhaustive(circuit: Circuit, lib=None) -> SimResult:
    n = len(circuit.pis)
    if n > MAX_EXHAUSTIVE_PIS:
        raise SimulationError(f"PI count too large for exhaustive simulation ({n} > {MAX_EXHAUSTIVE_PIS})")
    total = 1 << n
    counts = _count_ones(simulate_words(circuit, lib, exhaustive_pi_words(n)), total)
    return SimResult(counts / total, total, None, counts)


@dataclass
class EquivalenceResult:
    equivalent: bool
    mode: str
    patterns_checked: int
    counterexample: dict[str, int] | None = None
    failing_output: str | None = None

    def __bool__(self) -> bool:
        return self.equivalent

    def summary(self) -> dict:
        return {"equivalent": self.equivalent, "mode": self.mode, "patterns": self.patterns_checked,
                "counterexample": self.counterexample, "failing_output": self.failing_output}


def check_equivalence(a: Circuit, b: Circuit, lib=None, mode: str = "exhaustive",
                      n_patterns: int = 100_000, seed: int = 0) -> EquivalenceResult:
    """Compare two circuits output-by-output, matching PIs and POs by name.

    ``mode="exhaustive"`` is exact; ``mode="random"`` can only report that no
    mismatch was found among ``n_patterns`` patterns.
    """
    if set(a.pi_names) != set(b.pi_names):
        raise SimulationError(
            f"PI name sets differ: only in first {sorted(set(a.pi_names) - set(b.pi_names))}, "
            f"only in second {sorted(set(b.pi_names) - set(a.pi_names))}")
    if set(a.output_names) != set(b.output_names) or len(set(a.output_names)) != len(a.output_names):
        raise SimulationError("output name sets differ or contain duplicates")
    n = len(a.pis)
    if mode == "exhaustive":
        if n > MAX_EXHAUSTIVE_PIS:
            raise SimulationError(f"PI count too large for exhaustive check ({n} > {MAX_EXHAUSTIVE_PIS})")
        total = 1 << n
        words_a = exhaustive_pi_words(n)
    elif mode == "random":
        total = n_patterns
        words_a = random_pi_words(n, n_patterns, seed)
    else:
        raise ValueError(f"unknown equivalence mode {mode!r}")
    row_of = {name: k for k, name in enumerate(a.pi_names)}
    words_b = words_a[[row_of[name] for name in b.pi_names]]
    va = simulate_words(a, lib, words_a)
    vb = simulate_words(b, lib, words_b)
    out_b = dict(zip(b.output_names, b.outputs))
    first = None
    for name, oa in zip(a.output_names, a.outputs):
        diff = va[oa] ^ vb[out_b[name]]
        bits = np.unpackbits(diff.astype("<u8").view(np.uint8), bitorder="little")[:total]
        hits = np.flatnonzero(bits)
        if hits.size and (first is None or hits[0] < first[0]):
            first = (int(hits[0]), name)
    if first is None:
        return EquivalenceResult(True, mode, total)
    t, name = first
    w, j = divmod(t, 64)
    cex = {pi: int((int(words_a[k, w]) >> j) & 1) for k, pi in enumerate(a.pi_names)}
    return EquivalenceResult(False, mode, total, cex, name)
