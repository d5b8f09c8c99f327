"""Immutable DAG containers for post-mapping netlists and AIGs."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from ..errors import NetlistError

PI = "PI"
AND = "AND"
NOT = "NOT"
AIG_KINDS = (PI, AND, NOT)


class Circuit:
    """A combinational DAG with dense node ids in topological order.

    ``kinds[i]`` is ``"PI"`` for primary inputs; otherwise a cell name (PM
    netlists) or ``"AND"``/``"NOT"`` (AIGs).  Every fanin id is smaller than
    the id of the node it feeds.
    """

    def __init__(self, names: Sequence[str], kinds: Sequence[str], fanins: Sequence[Sequence[int]],
                 outputs: Sequence[int], output_names: Sequence[str] | None = None):
        n = len(names)
        if len(kinds) != n or len(fanins) != n:
            raise NetlistError("names, kinds and fanins must have equal length")
        self.names: tuple[str, ...] = tuple(names)
        self.kinds: tuple[str, ...] = tuple(kinds)
        self.fanins: tuple[tuple[int, ...], ...] = tuple(tuple(int(j) for j in f) for f in fanins)
        self.outputs: tuple[int, ...] = tuple(int(o) for o in outputs)
        if output_names is None:
            output_names = [self.names[o] for o in self.outputs]
        self.output_names: tuple[str, ...] = tuple(output_names)
        if len(self.output_names) != len(self.outputs):
            raise NetlistError("outputs and output_names must have equal length")
        if len(set(self.names)) != n:
            dup = next(x for x in self.names if self.names.count(x) > 1)
            raise NetlistError(f"duplicate node name {dup!r}")
        levels = []
        for i, (kind, fin) in enumerate(zip(self.kinds, self.fanins)):
            if kind == PI:
                if fin:
                    raise NetlistError(f"PI {self.names[i]!r} must not have fanins")
                levels.append(0)
                continue
            if not fin:
                raise NetlistError(f"node {self.names[i]!r} ({kind}) has no fanins")
            for j in fin:
                if not 0 <= j < i:
                    raise NetlistError(f"node {self.names[i]!r}: fanin {j} violates topological order")
            levels.append(1 + max(levels[j] for j in fin))
        for o in self.outputs:
            if not 0 <= o < n:
                raise NetlistError(f"output id {o} out of range")
        self.levels: tuple[int, ...] = tuple(levels)

    def __len__(self) -> int:
        return len(self.names)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(nodes={len(self)}, pis={len(self.pis)}, outputs={len(self.outputs)})"

    @cached_property
    def pis(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.kinds) if k == PI)

    @cached_property
    def pi_names(self) -> tuple[str, ...]:
        return tuple(self.names[i] for i in self.pis)

    @cached_property
    def gates(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.kinds) if k != PI)

    @cached_property
    def fanouts(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in self.names]
        for i, fin in enumerate(self.fanins):
            for j in fin:
                out[j].append(i)
        return tuple(tuple(x) for x in out)

    @cached_property
    def index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    @property
    def depth(self) -> int:
        return max(self.levels, default=0)

    def node_id(self, node) -> int:
        """Resolve a node given by id, by name, or by primary-output name."""
        if isinstance(node, (int, np.integer)):
            if not 0 <= int(node) < len(self):
                raise NetlistError(f"unknown node id {node}")
            return int(node)
        if node in self.index:
            return self.index[node]
        if node in self.output_names:
            return self.outputs[self.output_names.index(node)]
        raise NetlistError(f"unknown node {node!r}")

    def level_groups(self) -> list[np.ndarray]:
        """Node ids grouped by level, ascending; ids ascend within a group."""
        lv = np.asarray(self.levels, dtype=np.int64)
        order = np.argsort(lv, kind="stable")
        bounds = np.searchsorted(lv[order], np.arange(self.depth + 2))
        return [order[bounds[d]:bounds[d + 1]] for d in range(self.depth + 1)]

    def signature(self) -> tuple:
        """Name-based structural fingerprint, independent of node numbering."""
        nodes = sorted((self.names[i], self.kinds[i], tuple(self.names[j] for j in self.fanins[i]))
                       for i in range(len(self)))
        return tuple(nodes), tuple(sorted(zip(self.output_names, (self.names[o] for o in self.outputs))))


class PmNetlist(Circuit):
    """Post-mapping netlist: every non-PI kind is a library cell name."""

    def check_library(self, lib) -> "PmNetlist":
        for i in self.gates:
            cell = lib.get(self.kinds[i])
            if cell is None:
                raise NetlistError(f"node {self.names[i]!r}: unknown cell {self.kinds[i]!r}")
            if cell.arity != len(self.fanins[i]):
                raise NetlistError(
                    f"node {self.names[i]!r}: arity mismatch for {cell.name} "
                    f"(expected {cell.arity}, got {len(self.fanins[i])})")
        return self


class Aig(Circuit):
    """And-Inverter Graph with explicit NOT nodes."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        for i, (kind, fin) in enumerate(zip(self.kinds, self.fanins)):
            if kind not in AIG_KINDS:
                raise NetlistError(f"AIG node {self.names[i]!r}: invalid kind {kind!r}")
            if kind == AND and len(fin) != 2:
                raise NetlistError(f"AND node {self.names[i]!r} must have exactly 2 fanins")
            if kind == NOT and len(fin) != 1:
                raise NetlistError(f"NOT node {self.names[i]!r} must have exactly 1 fanin")


@dataclass(frozen=True)
class ConeSpec:
    root: int
    members: frozenset
    boundary_inputs: frozenset


def build_ordered(cls, names: Sequence[str], kinds: Sequence[str], fanin_names: Sequence[Sequence[str]],
                  output_signals: Iterable[str], **kw):
    """Build ``cls`` from definitions in arbitrary order.

    Nodes are renumbered by (level, definition index), which is topological.
    Raises on undefined signals and combinational cycles.
    """
    index = {}
    for i, name in enumerate(names):
        if name in index:
            raise NetlistError(f"signal {name!r} has multiple drivers")
        index[name] = i
    n = len(names)
    fin_idx = []
    for i, fin in enumerate(fanin_names):
        row = []
        for f in fin:
            if f not in index:
                raise NetlistError(f"node {names[i]!r}: undefined signal {f!r}")
            row.append(index[f])
        fin_idx.append(row)
    # Kahn's algorithm, levels assigned on the fly.
    indeg = [len(set(f)) for f in fin_idx]
    users: list[list[int]] = [[] for _ in range(n)]
    for i, fin in enumerate(fin_idx):
        for j in set(fin):
            users[j].append(i)
    level = [0] * n
    ready = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while ready:
        nxt = []
        for j in ready:
            seen += 1
            for i in users[j]:
                level[i] = max(level[i], level[j] + 1)
                indeg[i] -= 1
                if indeg[i] == 0:
                    nxt.append(i)
        ready = nxt
    if seen != n:
        stuck = next(names[i] for i in range(n) if indeg[i] > 0)
        raise NetlistError(f"cycle detected through signal {stuck!r}")
    order = sorted(range(n), key=lambda i: (level[i], i))
    new_id = {old: new for new, old in enumerate(order)}
    outs = []
    for o in output_signals:
        if o not in index:
            raise NetlistError(f"output {o!r} is not driven")
        outs.append(new_id[index[o]])
    return cls([names[i] for i in order], [kinds[i] for i in order],
               [[new_id[j] for j in fin_idx[i]] for i in order], outs, **kw)


def induced(circuit: Circuit, keep: Iterable[int], outputs: Sequence[int] = (),
            as_pi: Iterable[int] = (), output_names: Sequence[str] | None = None):
    """Sub-circuit over ``keep``; ids in ``as_pi`` become primary inputs.

    Every fanin of a kept non-PI node must itself be kept.
    """
    keep = sorted(set(keep))
    as_pi = set(as_pi)
    new_id = {old: new for new, old in enumerate(keep)}
    kinds, fanins = [], []
    for old in keep:
        if old in as_pi or circuit.kinds[old] == PI:
            kinds.append(PI)
            fanins.append(())
        else:
            try:
                fanins.append(tuple(new_id[j] for j in circuit.fanins[old]))
            except KeyError:
                raise NetlistError(f"node {circuit.names[old]!r} has a fanin outside the kept set") from None
            kinds.append(circuit.kinds[old])
    if output_names is None:
        output_names = [circuit.names[o] for o in outputs]
    return type(circuit)([circuit.names[i] for i in keep], kinds, fanins,
                         [new_id[o] for o in outputs], output_names)
