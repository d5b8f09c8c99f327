"""PM netlist to AIG conversion.

Each cell's truth table is expanded by Shannon decomposition over its
pins (first pin first).  AND nodes are hashed on their sorted fanin literal
pair as they are created, which merges structurally identical logic across
cells, and complemented literals are lowered to shared NOT nodes.
Constants are only folded where they come from a cell's own truth table;
``x AND NOT x`` is kept as a real node, so no constant propagation happens.
"""
from __future__ import annotations

from ..errors import NetlistError
from .graph import AND, NOT, PI, Aig, PmNetlist

FALSE, TRUE = 0, 1


class LiteralAig:
    """AIGER-style literal builder: ``lit = 2 * var + complemented``."""

    def __init__(self):
        self.nvars = 1  # var 0 is the constant
        self.ands: dict[int, tuple[int, int]] = {}
        self._hash: dict[tuple[int, int], int] = {}
        self.pi_vars: list[int] = []

    def new_pi(self) -> int:
        v = self.nvars
        self.nvars += 1
        self.pi_vars.append(v)
        return 2 * v

    def and_(self, a: int, b: int) -> int:
        if a > b:
            a, b = b, a
        if a == FALSE:
            return FALSE
        if a == TRUE or a == b:
            return b
        key = (a, b)
        lit = self._hash.get(key)
        if lit is None:
            v = self.nvars
            self.nvars += 1
            self.ands[v] = key
            lit = 2 * v
            self._hash[key] = lit
        return lit

    def or_(self, a: int, b: int) -> int:
        return self.and_(a ^ 1, b ^ 1) ^ 1

    def mux(self, s: int, t: int, e: int) -> int:
        """``s ? t : e``"""
        if t == e:
            return t
        if t == TRUE:
            return self.or_(s, e)
        if t == FALSE:
            return self.and_(s ^ 1, e)
        if e == FALSE:
            return self.and_(s, t)
        if e == TRUE:
            return self.or_(s ^ 1, t)
        return self.or_(self.and_(s, t), self.and_(s ^ 1, e))

    def truth_table(self, tt: str, pins: list[int], memo: dict | None = None) -> int:
        """Literal computing ``tt`` over ``pins`` (pins[0] is the MSB)."""
        if memo is None:
            memo = {}
        key = (tt, tuple(pins))
        if key in memo:
            return memo[key]
        if tt == "0" * len(tt):
            lit = FALSE
        elif tt == "1" * len(tt):
            lit = TRUE
        else:
            half = len(tt) // 2
            f0, f1 = tt[:half], tt[half:]
            if f0 == f1:
                lit = self.truth_table(f0, pins[1:], memo)
            else:
                lit = self.mux(pins[0], self.truth_table(f1, pins[1:], memo),
                               self.truth_table(f0, pins[1:], memo))
        memo[key] = lit
        return lit


def pm_to_aig_mapped(net: PmNetlist, lib) -> tuple[Aig, list[int]]:
    """Convert ``net`` and return ``(aig, node_map)``.

    ``node_map[i]`` is the AIG node computing PM node ``i``.
    """
    b = LiteralAig()
    lits = [0] * len(net)
    memo: dict = {}
    for i, kind in enumerate(net.kinds):
        if kind == PI:
            lits[i] = b.new_pi()
            continue
        cell = lib[kind]
        lits[i] = b.truth_table(cell.tt, [lits[j] for j in net.fanins[i]], memo)
        if lits[i] < 2:
            raise NetlistError(f"node {net.names[i]!r} ({kind}) has a constant truth table")

    # Lower literals to explicit nodes in a topological order.
    taken = set(net.names)
    label = {}
    for i in net.gates:
        label.setdefault(lits[i], net.names[i])

    def fresh(base):
        name, k = base, 1
        while name in taken:
            name, k = f"{base}_{k}", k + 1
        taken.add(name)
        return name

    names, kinds, fanins = [], [], []
    node_of: dict[int, int] = {}

    def emit(lit: int) -> int:
        if lit in node_of:
            return node_of[lit]
        if lit & 1:
            src = emit(lit ^ 1)
            name = label.get(lit) or fresh(f"{names[src]}_n")
            names.append(name)
            kinds.append(NOT)
            fanins.append((src,))
        else:
            a, c = b.ands[lit >> 1]
            fa, fc = emit(a), emit(c)
            name = label.get(lit) or fresh(f"_a{lit >> 1}")
            names.append(name)
            kinds.append(AND)
            fanins.append((fa, fc))
        node_of[lit] = len(names) - 1
        return node_of[lit]

    for i in net.pis:
        names.append(net.names[i])
        kinds.append(PI)
        fanins.append(())
        node_of[lits[i]] = len(names) - 1
    for i in net.gates:
        emit(lits[i])
    aig = Aig(names, kinds, fanins, [node_of[lits[o]] for o in net.outputs], list(net.output_names))
    return aig, [node_of[lits[i]] for i in range(len(net))]


def pm_to_aig(net: PmNetlist, lib) -> Aig:
    return pm_to_aig_mapped(net, lib)[0]
