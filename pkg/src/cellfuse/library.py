"""Standard-cell libraries: loading, validation and truth-table features.

A library file is JSON of the form::

    {"cells": [{"name": "xor2_1", "inputs": ["A", "B"], "output": "X", "tt": "0110"}, ...]}

Truth tables are indexed with the first listed input pin as the most
significant bit, so ``tt[0]`` is the all-zeros row.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import LibraryError

MAX_ARITY = 6
DEFAULT_FEATURE_DIM = 64
_CELL_KEYS = {"name", "inputs", "output", "tt"}


@dataclass(frozen=True)
class CellDef:
    name: str
    inputs: tuple[str, ...]
    output: str
    tt: str

    def __post_init__(self):
        n = len(self.inputs)
        if n == 0:
            raise LibraryError(f"cell {self.name!r}: zero-arity (constant) cells are not supported")
        if n > MAX_ARITY:
            raise LibraryError(f"cell {self.name!r}: arity exceeds {MAX_ARITY} ({n} inputs)")
        if len(set(self.inputs)) != n:
            raise LibraryError(f"cell {self.name!r}: duplicate input pin names")
        if len(self.tt) != 1 << n:
            raise LibraryError(
                f"cell {self.name!r}: tt length must be 2^inputs (got {len(self.tt)}, expected {1 << n})")
        if set(self.tt) - {"0", "1"}:
            raise LibraryError(f"cell {self.name!r}: tt may only contain '0' and '1'")
        if len(set(self.tt)) == 1:
            raise LibraryError(f"cell {self.name!r}: constant truth table is not supported")

    @property
    def arity(self) -> int:
        return len(self.inputs)

    @cached_property
    def bits(self) -> np.ndarray:
        return np.frombuffer(self.tt.encode(), dtype=np.uint8) - ord("0")

    @cached_property
    def is_symmetric(self) -> bool:
        """True if the function is invariant under every permutation of its inputs."""
        n = self.arity
        # Permutations are generated by adjacent swaps; checking those suffices.
        for i in range(n - 1):
            for row in range(1 << n):
                a = (row >> (n - 1 - i)) & 1
                b = (row >> (n - 2 - i)) & 1
                if a != b:
                    swapped = row ^ (1 << (n - 1 - i)) ^ (1 << (n - 2 - i))
                    if self.tt[row] != self.tt[swapped]:
                        return False
        return True


def eval_cell(cell: CellDef, input_bits: Sequence[int]) -> int:
    """Evaluate ``cell`` on one input assignment (first pin is the MSB)."""
    if len(input_bits) != cell.arity:
        raise LibraryError(
            f"cell {cell.name!r}: arity mismatch, expected {cell.arity} inputs, got {len(input_bits)}")
    row = 0
    for bit in input_bits:
        row = (row << 1) | (1 if bit else 0)
    return int(cell.tt[row])


@dataclass(frozen=True, eq=False)
class CellLibrary(Mapping[str, CellDef]):
    cells: dict[str, CellDef]
    feature_dim: int = DEFAULT_FEATURE_DIM
    _order: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise LibraryError("feature_dim must be positive")
        for cell in self.cells.values():
            if self.feature_dim % len(cell.tt):
                raise LibraryError(
                    f"cell {cell.name!r}: feature_dim {self.feature_dim} is not a multiple of tt length {len(cell.tt)}")
        ordered = tuple(sorted(self.cells))
        object.__setattr__(self, "cells", {n: self.cells[n] for n in ordered})
        object.__setattr__(self, "_order", ordered)

    def __getitem__(self, name: str) -> CellDef:
        try:
            return self.cells[name]
        except KeyError:
            raise LibraryError(f"unknown cell {name!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._order)

    def __len__(self) -> int:
        return len(self._order)

    def __contains__(self, name) -> bool:
        return name in self.cells

    def get(self, name, default=None):
        return self.cells.get(name, default)

    @property
    def names(self) -> tuple[str, ...]:
        """Cell names in sorted order; the class index used by the mapping head."""
        return self._order

    def index(self, name: str) -> int:
        self[name]
        return self._order.index(name)

    def to_json(self) -> dict:
        return {"cells": [{"name": c.name, "inputs": list(c.inputs), "output": c.output, "tt": c.tt}
                          for c in self.cells.values()]}


def encode_feature(lib: CellLibrary, cell_name: str) -> np.ndarray:
    """Repeat the cell's truth table until it fills ``lib.feature_dim`` bits."""
    bits = lib[cell_name].bits
    return np.tile(bits, lib.feature_dim // len(bits))


def library_from_dict(doc, feature_dim: int = DEFAULT_FEATURE_DIM, source: str = "<dict>") -> CellLibrary:
    if not isinstance(doc, dict) or "cells" not in doc:
        raise LibraryError(f"{source}: top-level object must have a 'cells' list")
    extra = set(doc) - {"cells"}
    if extra:
        raise LibraryError(f"{source}: unknown top-level keys {sorted(extra)}")
    if not isinstance(doc["cells"], list):
        raise LibraryError(f"{source}: 'cells' must be a list")
    cells: dict[str, CellDef] = {}
    for i, entry in enumerate(doc["cells"]):
        where = f"{source}: cells[{i}]"
        if not isinstance(entry, dict):
            raise LibraryError(f"{where}: expected an object")
        if entry.get("sequential") or entry.get("clock"):
            raise LibraryError(f"{where}: sequential cell {entry.get('name')!r} is not supported")
        missing = _CELL_KEYS - set(entry)
        if missing:
            raise LibraryError(f"{where}: missing key(s) {sorted(missing)}")
        unknown = set(entry) - _CELL_KEYS
        if unknown:
            raise LibraryError(f"{where}: unknown key(s) {sorted(unknown)}")
        name, inputs, output, tt = entry["name"], entry["inputs"], entry["output"], entry["tt"]
        if not isinstance(name, str) or not name:
            raise LibraryError(f"{where}.name: expected a non-empty string")
        if not isinstance(inputs, list) or not all(isinstance(p, str) for p in inputs):
            raise LibraryError(f"{where}.inputs: expected a list of pin names")
        if not isinstance(output, str) or not isinstance(tt, str):
            raise LibraryError(f"{where}: 'output' and 'tt' must be strings")
        if name in cells:
            raise LibraryError(f"{where}: duplicate cell name {name!r}")
        try:
            cells[name] = CellDef(name, tuple(inputs), output, tt)
        except LibraryError as exc:
            raise LibraryError(f"{where}: {exc}") from None
    return CellLibrary(cells, feature_dim)


def load_library(path, feature_dim: int = DEFAULT_FEATURE_DIM) -> CellLibrary:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LibraryError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LibraryError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return library_from_dict(doc, feature_dim, source=str(path))


def default_library_path(name: str = "toy") -> Path:
    """Path of a library bundled with the package (``toy`` or ``alt``)."""
    return Path(__file__).parent / "data" / f"{name}_lib.json"


def truth_table(fn, arity: int) -> str:
    """Tabulate a Python predicate into a tt string (first argument is the MSB)."""
    return "".join(str(int(bool(fn(*bits)))) for bits in itertools.product((0, 1), repeat=arity))
