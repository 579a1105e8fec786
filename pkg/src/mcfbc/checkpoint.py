"""Binary checkpoint container.

Layout: ``b"FBC1"``, a 4-byte little-endian header length, a UTF-8 JSON
header, then the raw little-endian tensor payloads in header order. The
header lists ``{"name", "shape", "dtype"}`` for every tensor next to any
caller metadata.
"""
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FBC1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    layout = []
    payloads = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        layout.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str})
        payloads.append(np.ascontiguousarray(le).tobytes())
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = layout
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for p in payloads:
            fh.write(p)
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(tensors, header)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an FBC1 checkpoint")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    offset = 8 + n
    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        size = count * dtype.itemsize
        if offset + size > len(data):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(dtype.newbyteorder("="))
        offset += size
    return tensors, header
