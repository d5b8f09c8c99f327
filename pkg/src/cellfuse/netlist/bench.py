"""Reader and writer for the bench-like cell netlist format.

::

    # comment
    INPUT(a)
    INPUT(b)
    OUTPUT(y)
    y = cell(and2_1, a, b)
"""
from __future__ import annotations

import re
from pathlib import Path

from ..errors import NetlistError
from .graph import PI, PmNetlist, build_ordered

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_PORT_RE = re.compile(rf"^(INPUT|OUTPUT)\s*\(\s*({_IDENT})\s*\)$")
_CELL_RE = re.compile(rf"^({_IDENT})\s*=\s*cell\s*\(\s*({_IDENT})\s*((?:,\s*{_IDENT}\s*)*)\)$")
_IDENT_RE = re.compile(rf"^{_IDENT}$")


def parse_netlist_text(text: str, lib, source: str = "<string>") -> PmNetlist:
    names, kinds, fanins, outputs = [], [], [], []
    defined: dict[str, int] = {}
    out_seen: set[str] = set()
    uses = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _PORT_RE.match(line)
        if m:
            kw, name = m.groups()
            if kw == "INPUT":
                if name in defined:
                    raise NetlistError(f"{source}:{lineno}: signal {name!r} has multiple drivers")
                defined[name] = lineno
                names.append(name)
                kinds.append(PI)
                fanins.append(())
            else:
                if name in out_seen:
                    raise NetlistError(f"{source}:{lineno}: duplicate OUTPUT({name})")
                out_seen.add(name)
                outputs.append(name)
                uses.append((lineno, name))
            continue
        m = _CELL_RE.match(line)
        if not m:
            raise NetlistError(f"{source}:{lineno}: syntax error: {raw.strip()!r}")
        name, cell_name, rest = m.groups()
        args = [a.strip() for a in rest.split(",") if a.strip()]
        if name in defined:
            raise NetlistError(f"{source}:{lineno}: signal {name!r} has multiple drivers")
        cell = lib.get(cell_name)
        if cell is None:
            raise NetlistError(f"{source}:{lineno}: unknown cell {cell_name!r}")
        if len(args) != cell.arity:
            raise NetlistError(
                f"{source}:{lineno}: arity mismatch for {cell_name} (expected {cell.arity}, got {len(args)})")
        defined[name] = lineno
        names.append(name)
        kinds.append(cell_name)
        fanins.append(tuple(args))
        uses.extend((lineno, a) for a in args)
    for lineno, sig in uses:
        if sig not in defined:
            raise NetlistError(f"{source}:{lineno}: undefined signal {sig!r}")
    try:
        net = build_ordered(PmNetlist, names, kinds, fanins, outputs)
    except NetlistError as exc:
        raise NetlistError(f"{source}: {exc}") from None
    return net.check_library(lib)


def parse_netlist(path, lib) -> PmNetlist:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise NetlistError(f"{path}: {exc.strerror}") from None
    return parse_netlist_text(text, lib, source=str(path))


def format_netlist(net: PmNetlist) -> str:
    for name in net.names:
        if not _IDENT_RE.match(name):
            raise NetlistError(f"signal name {name!r} is not a valid identifier")
    lines = [f"INPUT({net.names[i]})" for i in net.pis]
    lines += [f"OUTPUT({net.names[o]})" for o in net.outputs]
    for i in net.gates:
        args = ", ".join(net.names[j] for j in net.fanins[i])
        lines.append(f"{net.names[i]} = cell({net.kinds[i]}, {args})")
    return "\n".join(lines) + "\n"
