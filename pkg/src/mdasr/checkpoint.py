"""Versioned checkpoint container.

Layout: the magic string ``MDASR1``, a little-endian uint32 header length,
a JSON header (version, config, vocab, seed, creation metadata, parameter
manifest), then the named parameter blobs as float32 little-endian
row-major bytes in manifest order. Round-trips are bit-exact.
"""

from __future__ import annotations

import datetime
import json
from pathlib import Path

import numpy as np

MAGIC = b"MDASR1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], header_extra: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = [{"name": n, "shape": list(a.shape)} for n, a in params.items()]
    header = {
        "version": VERSION,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "params": manifest,
        **header_extra,
    }
    hdr = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(len(hdr)).astype("<u4").tobytes())
        f.write(hdr)
        for item in manifest:
            arr = np.ascontiguousarray(params[item["name"]], dtype="<f4")
            f.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(
                f"bad checkpoint magic {magic!r} in {path}; expected {MAGIC.decode()!r}"
            )
        (hdr_len,) = np.frombuffer(f.read(4), dtype="<u4")
        header = json.loads(f.read(int(hdr_len)).decode("utf-8"))
        if header.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        params: dict[str, np.ndarray] = {}
        for item in header["params"]:
            shape = tuple(item["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(4 * n)
            if len(buf) != 4 * n:
                raise CheckpointError(f"truncated blob for parameter {item['name']!r}")
            params[item["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return header, params
