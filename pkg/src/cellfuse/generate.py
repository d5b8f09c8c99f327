"""Random combinational netlists for toy datasets and tests."""
from __future__ import annotations

import numpy as np

from .netlist.graph import PI, PmNetlist


def random_netlist(lib, n_pis: int, n_cells: int, seed: int, cells=None, locality: float = 0.7,
                   window: int = 6, prefix: str = "") -> PmNetlist:
    """Grow a netlist cell by cell.

    Fanins are distinct and drawn from the last ``window`` nodes with
    probability ``locality`` (this builds depth), otherwise uniformly.
    Every cell without fanout becomes a primary output.
    """
    rng = np.random.default_rng(seed)
    names = [f"{prefix}pi{i}" for i in range(n_pis)]
    kinds = [PI] * n_pis
    fanins: list[tuple[int, ...]] = [()] * n_pis
    pool = sorted(cells) if cells is not None else list(lib.names)
    pool = [c for c in pool if lib[c].arity <= len(names)]
    for k in range(n_cells):
        cell = lib[pool[rng.integers(len(pool))]]
        n = len(names)
        chosen: list[int] = []
        while len(chosen) < cell.arity:
            if rng.random() < locality:
                j = int(rng.integers(max(0, n - window), n))
            else:
                j = int(rng.integers(n))
            if j not in chosen:
                chosen.append(j)
        names.append(f"{prefix}n{k}")
        kinds.append(cell.name)
        fanins.append(tuple(chosen))
    used = {j for f in fanins for j in f}
    outputs = [i for i in range(n_pis, len(names)) if i not in used]
    return PmNetlist(names, kinds, fanins, outputs).check_library(lib)


def chain_netlist(lib, length: int, cell: str = "buf_1") -> PmNetlist:
    """A PI followed by ``length - 1`` single-input cells in series."""
    names = [f"c{i}" for i in range(length)]
    kinds = [PI] + [cell] * (length - 1)
    fanins = [()] + [(i,) for i in range(length - 1)]
    return PmNetlist(names, kinds, fanins, [length - 1]).check_library(lib)
