"""Binary container shared by all saved surrogates.

Layout (all integers little-endian)::

    magic          8 bytes   b"PRUQSURR"
    version        uint32    FORMAT_VERSION
    header_len     uint64    length of the JSON header in bytes
    header         UTF-8 JSON object
    payload        concatenated little-endian float64 arrays

The header holds ``kind`` (``"GP"``, ``"MOGP"`` or ``"DGP"``), a free-form
``meta`` object, ``payload_crc32`` and an ``arrays`` directory mapping each
array name to ``{"shape": [...], "offset": int, "nbytes": int}`` relative
to the start of the payload. Floats are stored raw so that a load
reproduces the saved values bit for bit.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptFile, VersionMismatch

MAGIC = b"PRUQSURR"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def write_surrogate(path, kind: str, arrays: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    directory = {}
    chunks = []
    offset = 0
    for name, value in arrays.items():
        a = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
        raw = a.tobytes()
        directory[name] = {"shape": list(a.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "kind": kind,
        "meta": meta or {},
        "arrays": directory,
        "payload_crc32": zlib.crc32(payload),
        "payload_len": len(payload),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    return path


def read_surrogate(path, expected_kind: str | None = None):
    """Return ``(kind, arrays, meta)``; raises ``CorruptFile``/``VersionMismatch``."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CorruptFile(f"{path}: file too short")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptFile(f"{path}: bad magic bytes")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable header") from exc
    payload = data[start + hlen :]
    if len(payload) != header.get("payload_len") or zlib.crc32(payload) != header.get("payload_crc32"):
        raise CorruptFile(f"{path}: payload truncated or checksum mismatch")
    kind = header["kind"]
    if expected_kind is not None and kind != expected_kind:
        raise CorruptFile(f"{path}: holds a {kind} surrogate, expected {expected_kind}")
    arrays = {}
    for name, entry in header["arrays"].items():
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(float)
    return kind, arrays, header["meta"]


def load_any(path):
    """Load whichever surrogate kind is stored at ``path``."""
    from . import dgp, gp, mogp

    kind, _, _ = read_surrogate(path)
    loader = {"GP": gp.load, "MOGP": mogp.load, "DGP": dgp.load}[kind]
    return loader(path)
