"""Binary container of named float64 tensors, used for checkpoints and trajectory dumps.

Layout (all integers little-endian)::

    magic          8 bytes   b"UDDPMTR\\0"
    version        uint32
    header_len     uint32
    header         header_len bytes of UTF-8 JSON
    n_records      uint32
    n_records x:
        name_len   uint32
        name       name_len bytes UTF-8
        rank       uint32
        extents    rank x uint64
        values     prod(extents) x float64, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractViolation

MAGIC = b"UDDPMTR\x00"
FORMAT_VERSION = 1


def write_records(path, header: dict, records: dict[str, np.ndarray]) -> None:
    header = {"format_version": FORMAT_VERSION, **header}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(records)))
        for name, arr in records.items():
            arr = np.asarray(arr, dtype="<f8")  # keeps 0-d arrays 0-d
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes(order="C"))
    tmp.replace(path)


def read_records(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ContractViolation(f"{path}: not a tensor-record file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise ContractViolation(f"{path}: unsupported format version {version}")
    off = 16
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    records: dict[str, np.ndarray] = {}
    for _ in range(n):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", data, off)
        off += 8 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
        records[name] = arr
    return header, records
