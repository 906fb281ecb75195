"""Binary tensor container for encoder parameters.

Layout::

    magic    8 bytes   b"NATLMCK1"
    hlen     u64 LE    length of the JSON header
    header   hlen bytes UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape", "offset"}]}
    data     float64 little-endian tensors, concatenated in manifest order

``meta`` carries seeds, configs and vocabularies. Keys are written sorted
so identical inputs give identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NATLMCK1"


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    manifest = []
    offset = 0
    for name, arr in tensors.items():
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        offset += int(np.size(arr)) * 8
    header = json.dumps({"meta": meta, "tensors": manifest}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    try:
        header = json.loads(raw[16:16 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    base = 16 + hlen
    tensors = {}
    for item in header["tensors"]:
        count = int(np.prod(item["shape"], dtype=np.int64))
        start = base + item["offset"]
        if start + count * 8 > len(raw):
            raise CheckpointError(f"{path}: tensor {item['name']} runs past end of file")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=start)
        tensors[item["name"]] = arr.reshape(item["shape"]).astype(np.float64)
    return tensors, header["meta"]
