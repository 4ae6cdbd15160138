"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic b"DWRCKPT1"
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header: {"params": [{"name", "shape", "dtype",
              "offset", "nbytes"}, ...], "meta": {...}} with sorted keys
    ...       raw little-endian array bytes, concatenated in header order

Parameters keep the order they were saved in. Writing the same parameters
and metadata twice produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"DWRCKPT1"


def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in params.items():
        arr = np.asarray(arr)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str.lstrip("<>=|"),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"params": entries, "meta": dict(meta or {})}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    header = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
    base = 16 + hlen
    params = {}
    for e in header["params"]:
        start = base + e["offset"]
        arr = np.frombuffer(buf, dtype="<" + e["dtype"], count=int(np.prod(e["shape"], dtype=int)), offset=start)
        params[e["name"]] = arr.reshape(e["shape"]).copy()
    return params, header["meta"]
