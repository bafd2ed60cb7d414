"""Checkpoint container: one JSON header line, then raw little-endian float32.

Layout::

    {"format": "emsdistill-ckpt/1", "config": {...}, "extra": {...},
     "payload_offset": N, "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}   <spaces>\\n
    <payload bytes, tensors concatenated in header order>

``offset`` is relative to ``payload_offset``, which is the absolute byte
position of the payload. The header is space-padded to a 64-byte boundary
so the offset can be declared before the header length is known. Keys are
sorted and no timestamps are written, so equal content gives equal bytes.
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

from ..errors import DataError

FORMAT = "emsdistill-ckpt/1"
_ALIGN = 64


def encode(tensors: Mapping[str, np.ndarray], config: dict | None = None, extra: dict | None = None) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        blob = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {"format": FORMAT, "config": config or {}, "extra": extra or {}, "tensors": entries,
              "payload_offset": 0}
    # payload_offset is fixed-point iterated: its own digits change the header size
    while True:
        text = json.dumps(header, sort_keys=True, separators=(",", ":"))
        size = len(text.encode()) + 1
        padded = -(-size // _ALIGN) * _ALIGN
        if header["payload_offset"] == padded:
            break
        header["payload_offset"] = padded
    line = text.encode() + b" " * (padded - size) + b"\n"
    return line + b"".join(blobs)


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], config: dict | None = None,
         extra: dict | None = None) -> None:
    data = encode(tensors, config, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray], dict]:
    nl = data.find(b"\n")
    if nl < 0:
        raise DataError("checkpoint header is not newline-terminated")
    try:
        header = json.loads(data[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint header: {exc}") from None
    if header.get("format") != FORMAT:
        raise DataError(f"unknown checkpoint format {header.get('format')!r}")
    base = header["payload_offset"]
    tensors = {}
    for ent in header["tensors"]:
        start = base + ent["offset"]
        stop = start + ent["nbytes"]
        if stop > len(data):
            raise DataError(f"checkpoint truncated inside tensor {ent['name']!r}")
        arr = np.frombuffer(data[start:stop], dtype="<f4").reshape(ent["shape"])
        tensors[ent["name"]] = arr.astype(np.float32)
    return header["config"], tensors, header["extra"]


def load(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return decode(fh.read())
