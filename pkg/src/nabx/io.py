"""Binary containers for datasets, chains and checkpoints, and CSV tables.

Every container is::

    magic    8 bytes   b"NABXDS01" | b"NABXCH01" | b"NABXCK01" | b"NABXTH01"
    hlen     uint64 little endian, length of the header in bytes
    header   UTF-8 JSON, keys sorted, no whitespace
    payload  float64 little endian arrays, in the order listed in header["arrays"]

``header["arrays"]`` is a list of ``{"name": str, "shape": [int, ...]}``.
Byte layouts are spelled out in FORMATS.md.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import struct

import numpy as np

from .model import Dataset

__all__ = [
    "FormatError",
    "MAGIC_DATASET",
    "MAGIC_CHAIN",
    "MAGIC_CHECKPOINT",
    "MAGIC_THETA",
    "dumps_header",
    "write_container",
    "read_container",
    "write_dataset",
    "read_dataset",
    "write_csv",
    "read_csv",
    "sha256_file",
]

MAGIC_DATASET = b"NABXDS01"
MAGIC_CHAIN = b"NABXCH01"
MAGIC_CHECKPOINT = b"NABXCK01"
MAGIC_THETA = b"NABXTH01"
_MAGICS = {MAGIC_DATASET, MAGIC_CHAIN, MAGIC_CHECKPOINT, MAGIC_THETA}


class FormatError(OSError):
    """A file is not a well-formed nabx container of the expected kind."""


def dumps_header(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _atomic_write(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_container(path, magic: bytes, header: dict, arrays: dict):
    """Write ``header`` plus named float64 arrays; returns the byte count."""
    if magic not in _MAGICS:
        raise ValueError("unknown magic")
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    hb = dumps_header(header).encode("utf-8")
    buf = _io.BytesIO()
    buf.write(magic)
    buf.write(struct.pack("<Q", len(hb)))
    buf.write(hb)
    for v in arrays.values():
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    data = buf.getvalue()
    _atomic_write(path, data)
    return len(data)


def read_container(path, expect: bytes | None = None):
    """Return ``(magic, header, arrays)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:8]
    if magic not in _MAGICS or (expect is not None and magic != expect):
        raise FormatError(f"{path}: unexpected file type {magic!r}")
    try:
        (hlen,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
        off = 16 + hlen
        arrays = {}
        for spec in header.get("arrays", []):
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(float)
            arrays[spec["name"]] = arr
            off += 8 * n
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt container ({exc})") from None
    if off != len(data):
        raise FormatError(f"{path}: payload size mismatch")
    return magic, header, arrays


def write_dataset(path, ds: Dataset, extra: dict | None = None):
    """Records ``(alpha, beta, Y row-major)`` of ``2 + m^2`` float64 each."""
    header = {
        "format": "nabx-dataset",
        "m": ds.m,
        "N": ds.N,
        "seed": ds.seed,
        "noise_scale": ds.noise_scale,
        "truth": ds.truth,
        "record": ["alpha", "beta", f"Y[{ds.m}x{ds.m}] row-major"],
    }
    header.update(extra or {})
    records = np.concatenate([ds.alpha[:, None], ds.beta[:, None], ds.Y.reshape(ds.N, -1)], axis=1)
    return write_container(path, MAGIC_DATASET, header, {"records": records})


def read_dataset(path):
    _, header, arrays = read_container(path, MAGIC_DATASET)
    rec = arrays["records"]
    m = int(header["m"])
    ds = Dataset(rec[:, 0], rec[:, 1], rec[:, 2:].reshape(-1, m, m), m, header["seed"], header["noise_scale"], header["truth"])
    return ds, header


def write_csv(path, columns: dict, float_fmt: str = "{:.17g}"):
    """Write equal-length columns; floats use round-trip precision."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    n = len(cols[0]) if cols else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            row = []
            for c in cols:
                v = c[i]
                if isinstance(v, (np.floating, float)):
                    row.append(float_fmt.format(float(v)))
                elif isinstance(v, (np.integer, int)):
                    row.append(str(int(v)))
                else:
                    row.append(str(v))
            w.writerow(row)


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    out = {k: [] for k in names}
    for r in rows[1:]:
        for k, v in zip(names, r):
            out[k].append(v)
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
