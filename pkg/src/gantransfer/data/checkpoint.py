"""Binary named-tensor archive (``GDLC``) for parameters and optimizer state.

Layout, all integers little-endian::

    magic      4 bytes   b"GDLC"
    version    uint32    currently 1
    count      uint64    number of entries
    entry*     name_len uint32, name (UTF-8), dtype code uint8, rank uint8,
               dims uint64 x rank, payload (row-major, little-endian)

dtype codes: 1 float32, 2 float64, 3 int64, 4 uint8.  uint8 entries carry
opaque bytes such as the JSON model description.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import CorruptArchive

MAGIC = b"GDLC"
VERSION = 1
META_KEY = "meta/json"

DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}


def _code_for(arr: np.ndarray) -> int:
    for code, dt in DTYPE_CODES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return code
    raise TypeError(f"dtype {arr.dtype} cannot be archived")


def encode(arrays: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _code_for(arr)
        if arr.ndim > 255:
            raise ValueError(f"{name}: rank {arr.ndim} too large")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> Dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if n < 0 or pos + n > len(view):
            raise CorruptArchive(f"truncated archive: need {n} bytes at offset {pos}, have {len(view) - pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CorruptArchive("bad magic; not a GDLC archive")
    version, count = struct.unpack("<IQ", take(12))
    if version != VERSION:
        raise CorruptArchive(f"unsupported archive version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptArchive(f"entry name at offset {pos} is not UTF-8") from None
        code, rank = struct.unpack("<BB", take(2))
        if code not in DTYPE_CODES:
            raise CorruptArchive(f"{name}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        dt = DTYPE_CODES[code]
        # python ints do not overflow, so the full product is safe to form
        nbytes = dt.itemsize * math.prod(dims)
        if nbytes > len(view) - pos:
            raise CorruptArchive(f"{name}: dims {dims} exceed the remaining payload")
        if name in out:
            raise CorruptArchive(f"duplicate entry {name!r}")
        data = np.frombuffer(take(nbytes), dtype=dt).reshape(dims)
        out[name] = data.astype(dt.newbyteorder("="))
    if pos != len(view):
        raise CorruptArchive(f"{len(view) - pos} trailing bytes after last entry")
    return out


def save_checkpoint(arrays: Dict[str, np.ndarray], path) -> Path:
    """Write ``arrays`` atomically to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode(arrays)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def unpack_json(arr: np.ndarray):
    try:
        return json.loads(bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptArchive(f"unreadable metadata entry: {exc}") from None


def save_model(path, model, optimizer=None) -> Path:
    """Persist a model's parameters, batch-norm buffers and (optionally) optimizer state."""
    arrays = {META_KEY: pack_json({"model": model.meta, "frozen": bool(model.frozen),
                                   "optimizer": optimizer.hyper() if optimizer is not None else None})}
    arrays.update(model.state_arrays())
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    return save_checkpoint(arrays, path)


def load_model(path) -> Tuple["object", Optional["object"]]:
    """Rebuild a model (and optimizer, if one was saved) from an archive."""
    from ..models import freeze_backbone, rebuild
    from ..training.optim import Optimizer

    arrays = load_checkpoint(path)
    if META_KEY not in arrays:
        raise CorruptArchive("archive has no model description")
    meta = unpack_json(arrays.pop(META_KEY))
    try:
        model = rebuild(meta["model"])
        model.load_state_arrays({k: v for k, v in arrays.items() if k.startswith(("param/", "buffer/"))})
        if meta.get("frozen"):
            freeze_backbone(model, True)
    except (KeyError, ValueError) as exc:
        raise CorruptArchive(f"archive does not match its model description: {exc}") from None
    opt = None
    if meta.get("optimizer"):
        opt = Optimizer.from_hyper(meta["optimizer"])
        opt.load_state_arrays({k: v for k, v in arrays.items() if k.startswith("optim/")})
    return model, opt
