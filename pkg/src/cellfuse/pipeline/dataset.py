"""Sample extraction, labeling and the on-disk dataset manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import CellfuseError, DataError
from ..fileio import atomic_write_text
from ..generate import random_netlist
from ..netlist import (extract_subcircuit, format_aiger, format_netlist, parse_aiger, parse_aiger_text,
                       parse_netlist, parse_netlist_text, pm_to_aig)
from ..sim import SimResult, check_equivalence, simulate_random

log = logging.getLogger("cellfuse.dataset")

EXHAUSTIVE_PI_LIMIT = 16
RANDOM_CHECK_PATTERNS = 100_000
MANIFEST = "manifest.json"


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from arbitrary printable parts."""
    return zlib.crc32(":".join(str(p) for p in parts).encode("utf-8"))


def split_of(name: str, val_fraction: float = 0.2) -> str:
    h = int(hashlib.sha256(name.encode("utf-8")).hexdigest()[:8], 16)
    return "val" if h % 1000 < int(round(val_fraction * 1000)) else "train"


@dataclass
class Sample:
    name: str
    pm: object
    aig: object
    labels_pm: SimResult
    labels_aig: SimResult
    meta: dict = field(default_factory=dict)

    @property
    def split(self) -> str:
        return self.meta.get("split", "train")


def make_sample(name: str, source: str, net, lib, max_nodes: int, n_patterns: int, seed: int,
                index: int = 0) -> tuple[Sample | None, str | None]:
    """Extract, convert, verify and label one sample; returns (sample, rejection reason)."""
    sub = extract_subcircuit(net, max_nodes, derive_seed(seed, source, index, "extract"))
    # Keep the exact file texts so a reload reproduces these node ids.
    pm_text = format_netlist(sub)
    sub = parse_netlist_text(pm_text, lib)
    aig_text = format_aiger(pm_to_aig(sub, lib))
    aig = parse_aiger_text(aig_text)
    if len(aig) > max_nodes:
        return None, f"AIG has {len(aig)} nodes > max_nodes {max_nodes}"
    if len(sub.pis) <= EXHAUSTIVE_PI_LIMIT:
        eq = check_equivalence(sub, aig, lib, "exhaustive")
    else:
        eq = check_equivalence(sub, aig, lib, "random", RANDOM_CHECK_PATTERNS, derive_seed(seed, source, index, "eq"))
    if not eq:
        return None, f"equivalence failed at output {eq.failing_output}"
    lp = simulate_random(sub, lib, n_patterns, derive_seed(seed, source, index, "sim_pm"))
    la = simulate_random(aig, None, n_patterns, derive_seed(seed, source, index, "sim_aig"))
    meta = {"source": source, "split": split_of(source), "equivalence": eq.mode,
            "n_pm": len(sub), "n_aig": len(aig)}
    sample = Sample(name, sub, aig, lp, la, meta)
    sample.texts = (pm_text, aig_text)
    return sample, None


def generate_sources(lib, n: int, seed: int, min_pis: int = 3, max_pis: int = 8,
                     min_cells: int = 8, max_cells: int = 24) -> list[tuple[str, object]]:
    """Toy source circuits ``toy_0000 ...`` drawn from ``lib``."""
    import numpy as np
    rng = np.random.default_rng(derive_seed(seed, "generate"))
    out = []
    for i in range(n):
        n_pis = int(rng.integers(min_pis, max_pis + 1))
        n_cells = int(rng.integers(min_cells, max_cells + 1))
        out.append((f"toy_{i:04d}", random_netlist(lib, n_pis, n_cells, derive_seed(seed, "toy", i))))
    return out


def build_dataset(netlists, lib, cfg, out_dir, samples_per_source: int = 1, sources=None) -> dict:
    """Write samples plus ``manifest.json`` under ``out_dir``.

    ``netlists`` are file paths; ``sources`` optionally adds in-memory
    ``(name, PmNetlist)`` pairs.  Unparsable inputs are logged and skipped.
    """
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    items = []
    skipped = []
    for path in netlists or ():
        path = Path(path)
        try:
            items.append((path.stem, parse_netlist(path, lib)))
        except CellfuseError as exc:
            log.warning("skipped input", extra={"fields": {"path": str(path), "error": str(exc)}})
            skipped.append({"path": str(path), "error": str(exc)})
    items.extend(sources or ())
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise DataError("source circuit names must be unique")

    entries, rejections = [], []
    for source, net in items:
        for j in range(samples_per_source):
            name = f"{source}_{j:03d}"
            try:
                sample, reason = make_sample(name, source, net, lib, cfg.max_nodes, cfg.n_patterns, cfg.seed, j)
            except CellfuseError as exc:
                sample, reason = None, str(exc)
            if sample is None:
                log.warning("rejected sample", extra={"fields": {"sample": name, "reason": reason}})
                rejections.append({"sample": name, "reason": reason})
                continue
            rel = {"pm": f"samples/{name}.bench", "aig": f"samples/{name}.aag",
                   "labels_pm": f"samples/{name}.pm.labels.json", "labels_aig": f"samples/{name}.aig.labels.json"}
            atomic_write_text(out_dir / rel["pm"], sample.texts[0])
            atomic_write_text(out_dir / rel["aig"], sample.texts[1])
            sample.labels_pm.save(out_dir / rel["labels_pm"])
            sample.labels_aig.save(out_dir / rel["labels_aig"])
            entries.append({"name": name, **sample.meta, **rel})
    if not entries:
        raise DataError("no samples survived dataset generation")
    manifest = {
        "format_version": 1,
        "generator_seed": cfg.seed,
        "max_nodes": cfg.max_nodes,
        "n_patterns": cfg.n_patterns,
        "library": sorted(lib.names),
        "samples": entries,
        "splits": {s: sum(e["split"] == s for e in entries) for s in ("train", "val")},
        "rejected": len(rejections),
        "rejections": rejections,
        "skipped_inputs": skipped,
    }
    atomic_write_text(out_dir / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_dataset(root, lib, split: str | None = None) -> list[Sample]:
    root = Path(root)
    path = root / MANIFEST if root.is_dir() else root
    base = path.parent
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    out = []
    for e in manifest.get("samples", []):
        if split and e.get("split") != split:
            continue
        pm = parse_netlist(base / e["pm"], lib)
        aig = parse_aiger(base / e["aig"])
        lp = SimResult.load(base / e["labels_pm"])
        la = SimResult.load(base / e["labels_aig"])
        if len(lp.prob) != len(pm) or len(la.prob) != len(aig):
            raise DataError(f"{e['name']}: label count does not match the circuit")
        out.append(Sample(e["name"], pm, aig, lp, la, {k: v for k, v in e.items() if k not in ("name",)}))
    return out


def samples_in_memory(sources, lib, cfg, samples_per_source: int = 1) -> list[Sample]:
    """Same pipeline as ``build_dataset`` without touching disk (tests, ablations)."""
    out = []
    for source, net in sources:
        for j in range(samples_per_source):
            sample, _ = make_sample(f"{source}_{j:03d}", source, net, lib, cfg.max_nodes, cfg.n_patterns, cfg.seed, j)
            if sample is not None:
                out.append(sample)
    return out
