"""ASCII AIGER ("aag") reader and writer.

Complemented literals become explicit NOT nodes on read and are folded
back into literals on write.  Latches and constant literals are rejected.
"""
from __future__ import annotations

from pathlib import Path

from ..errors import NetlistError
from .graph import AND, NOT, PI, Aig, build_ordered


def _ints(line: str, lineno: int, count: int, source: str) -> list[int]:
    parts = line.split()
    if len(parts) != count:
        raise NetlistError(f"{source}:{lineno}: expected {count} integer(s), got {line!r}")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise NetlistError(f"{source}:{lineno}: expected integers, got {line!r}") from None
    if any(v < 0 for v in vals):
        raise NetlistError(f"{source}:{lineno}: negative literal")
    return vals


def parse_aiger_text(text: str, source: str = "<string>") -> Aig:
    lines = text.splitlines()
    if not lines:
        raise NetlistError(f"{source}: empty file")
    head = lines[0].split()
    if head and head[0] == "aig":
        raise NetlistError(f"{source}: binary AIGER ('aig') is not supported; convert to ASCII 'aag' first")
    if len(head) < 6 or head[0] != "aag":
        raise NetlistError(f"{source}:1: malformed header {lines[0]!r}, expected 'aag M I L O A'")
    try:
        M, I, L, O, A = (int(x) for x in head[1:6])
    except ValueError:
        raise NetlistError(f"{source}:1: malformed header {lines[0]!r}") from None
    if len(head) > 6 and any(int(x) for x in head[6:]):
        raise NetlistError(f"{source}:1: AIGER 1.9 sections (B C J F) are not supported")
    if L > 0:
        raise NetlistError(f"{source}:1: latches present (L={L}); sequential not supported")
    if M < I + A:
        raise NetlistError(f"{source}:1: header M={M} smaller than I+A={I + A}")
    if len(lines) < 1 + I + O + A:
        raise NetlistError(f"{source}: truncated file, header announces {I + O + A} body lines")

    pos = 1
    inputs = []
    for k in range(I):
        (lit,) = _ints(lines[pos], pos + 1, 1, source)
        if lit < 2 or lit & 1:
            raise NetlistError(f"{source}:{pos + 1}: input literal must be a positive even number")
        inputs.append(lit >> 1)
        pos += 1
    out_lits = []
    for k in range(O):
        (lit,) = _ints(lines[pos], pos + 1, 1, source)
        out_lits.append((lit, pos + 1))
        pos += 1
    ands = []
    for k in range(A):
        lhs, r0, r1 = _ints(lines[pos], pos + 1, 3, source)
        if lhs < 2 or lhs & 1:
            raise NetlistError(f"{source}:{pos + 1}: AND lhs must be a positive even literal")
        ands.append((lhs >> 1, r0, r1, pos + 1))
        pos += 1

    sym_in, sym_out = {}, {}
    for lineno in range(pos, len(lines)):
        line = lines[lineno]
        if line == "c":
            break
        if not line.strip():
            continue
        tag, _, name = line.partition(" ")
        if len(tag) >= 2 and tag[0] in "io" and tag[1:].isdigit() and name:
            (sym_in if tag[0] == "i" else sym_out)[int(tag[1:])] = name
        elif tag and tag[0] == "l":
            raise NetlistError(f"{source}:{lineno + 1}: latch symbol in a combinational file")
        else:
            raise NetlistError(f"{source}:{lineno + 1}: malformed symbol line {line!r}")

    defined: dict[int, int] = {}
    for v in inputs:
        if v in defined:
            raise NetlistError(f"{source}: variable {v} defined twice")
        defined[v] = 0
    for v, _, _, lineno in ands:
        if v in defined:
            raise NetlistError(f"{source}:{lineno}: variable {v} defined twice")
        defined[v] = lineno

    taken = set(sym_in.values())
    if len(taken) != len(sym_in):
        raise NetlistError(f"{source}: duplicate input names in symbol table")

    def fresh(base: str) -> str:
        name, k = base, 1
        while name in taken:
            name, k = f"{base}_{k}", k + 1
        taken.add(name)
        return name

    var_name = {}
    names, kinds, fanins = [], [], []
    for k, v in enumerate(inputs):
        var_name[v] = sym_in.get(k) or fresh(f"i{k}")
        names.append(var_name[v])
        kinds.append(PI)
        fanins.append(())
    for v, _, _, _ in ands:
        var_name[v] = fresh(f"_g{v}")
    neg_name = {}

    def ref(lit: int, lineno: int) -> str:
        if lit < 2:
            raise NetlistError(f"{source}:{lineno}: constant literal {lit} is not supported")
        v = lit >> 1
        if v not in defined:
            raise NetlistError(f"{source}:{lineno}: undefined literal {lit}")
        if not lit & 1:
            return var_name[v]
        if v not in neg_name:
            neg_name[v] = fresh(f"{var_name[v]}_n")
            names.append(neg_name[v])
            kinds.append(NOT)
            fanins.append((var_name[v],))
        return neg_name[v]

    for v, r0, r1, lineno in ands:
        a, b = ref(r0, lineno), ref(r1, lineno)
        names.append(var_name[v])
        kinds.append(AND)
        fanins.append((a, b))
    outputs = [ref(lit, lineno) for lit, lineno in out_lits]
    out_names = [sym_out.get(k, f"o{k}") for k in range(O)]
    try:
        return build_ordered(Aig, names, kinds, fanins, outputs, output_names=out_names)
    except NetlistError as exc:
        raise NetlistError(f"{source}: {exc}") from None


def parse_aiger(path) -> Aig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise NetlistError(f"{path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise NetlistError(f"{path}: not a text file; binary AIGER ('aig') is not supported") from None
    return parse_aiger_text(text, source=str(path))


def format_aiger(aig: Aig) -> str:
    lit = [0] * len(aig)
    var = 0
    for i in aig.pis:
        var += 1
        lit[i] = 2 * var
    and_lines = []
    for i, kind in enumerate(aig.kinds):
        if kind == NOT:
            lit[i] = lit[aig.fanins[i][0]] ^ 1
        elif kind == AND:
            var += 1
            lit[i] = 2 * var
            a, b = aig.fanins[i]
            and_lines.append(f"{lit[i]} {lit[a]} {lit[b]}")
    n_in = len(aig.pis)
    lines = [f"aag {var} {n_in} 0 {len(aig.outputs)} {len(and_lines)}"]
    lines += [str(lit[i]) for i in aig.pis]
    lines += [str(lit[o]) for o in aig.outputs]
    lines += and_lines
    lines += [f"i{k} {aig.names[i]}" for k, i in enumerate(aig.pis)]
    lines += [f"o{k} {name}" for k, name in enumerate(aig.output_names)]
    return "\n".join(lines) + "\n"
