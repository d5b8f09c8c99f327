"""Binary container: JSON manifest plus one little-endian float32 blob.

Layout: ``b"CFCK"``, uint32 container version, uint64 manifest length,
UTF-8 manifest, then the blob.  Manifest entries are
``{name, shape, dtype: "f32", offset, length}`` with offsets and lengths in
bytes, relative to the start of the blob.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError
from ..fileio import atomic_write_bytes
from .params import ParamStore

MAGIC = b"CFCK"
CONTAINER_VERSION = 1
FORMAT_VERSION = 1


def _pack(arrays: dict[str, np.ndarray], blob: bytearray) -> list[dict]:
    entries = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype="<f4"))
        data = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32",
                        "offset": len(blob), "length": len(data)})
        blob += data
    return entries


def _unpack(entries: list[dict], blob: memoryview) -> dict[str, np.ndarray]:
    out = {}
    for e in entries:
        try:
            if e["dtype"] != "f32":
                raise CheckpointError(f"unsupported dtype {e['dtype']!r} for {e['name']!r}")
            start, length = int(e["offset"]), int(e["length"])
            shape = tuple(int(s) for s in e["shape"])
        except (KeyError, TypeError, ValueError):
            raise CheckpointError(f"malformed manifest entry {e!r}") from None
        if start < 0 or start + length > len(blob) or length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"entry {e['name']!r} does not fit the blob")
        out[e["name"]] = np.frombuffer(blob[start:start + length], dtype="<f4").reshape(shape).copy()
    return out


def write_container(path, tensors: dict[str, np.ndarray], meta: dict | None = None,
                    optimizer: dict | None = None) -> None:
    """``optimizer`` is ``{"m": arrays, "v": arrays, "step": {name: int}}``."""
    blob = bytearray()
    manifest = {"format_version": FORMAT_VERSION, "params": _pack(tensors, blob), "meta": meta or {}}
    if optimizer is not None:
        manifest["optimizer"] = {"m": _pack(optimizer["m"], blob), "v": _pack(optimizer["v"], blob),
                                 "step": {k: int(optimizer["step"][k]) for k in sorted(optimizer["step"])}}
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    data = MAGIC + struct.pack("<IQ", CONTAINER_VERSION, len(head)) + head + bytes(blob)
    atomic_write_bytes(path, data)


def read_container(path) -> tuple[dict[str, np.ndarray], dict, dict | None]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    if raw[:4] != MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path}: not a checkpoint container")
    version, n = struct.unpack("<IQ", raw[4:16])
    if version != CONTAINER_VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    try:
        manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {manifest.get('format_version')}")
    blob = memoryview(raw)[16 + n:]
    tensors = _unpack(manifest.get("params", []), blob)
    opt = None
    if "optimizer" in manifest:
        o = manifest["optimizer"]
        opt = {"m": _unpack(o["m"], blob), "v": _unpack(o["v"], blob), "step": dict(o["step"])}
    return tensors, manifest.get("meta", {}), opt


def save_checkpoint(path, store: ParamStore, meta: dict | None = None, with_optimizer: bool = True) -> None:
    opt = None
    if with_optimizer:
        opt = {"m": {k: v.detach().numpy() for k, v in store.m.items()},
               "v": {k: v.detach().numpy() for k, v in store.v.items()},
               "step": dict(store.t)}
    meta = dict(meta or {})
    meta.setdefault("store_seed", store.seed)
    write_container(path, store.state_dict(), meta, opt)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    tensors, meta, opt = read_container(path)
    store = ParamStore(int(meta.get("store_seed", 0)))
    store.load_dict(tensors)
    if opt:
        store.m = {k: torch.tensor(v) for k, v in opt["m"].items()}
        store.v = {k: torch.tensor(v) for k, v in opt["v"].items()}
        store.t = {k: int(s) for k, s in opt["step"].items()}
    return store, meta
