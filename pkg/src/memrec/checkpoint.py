"""Binary container for parameter checkpoints.

Layout: 8-byte magic, u32 format version, u32 header length, a UTF-8 JSON
header, then the raw payloads back to back. The header is serialized
deterministically (sorted keys, fixed separators) and records, in order, each
array's name/dtype/shape and each byte-string list's name/count/total size,
so identical state always produces identical file bytes.

Arrays are stored little-endian. Token lists (vocabularies) are stored as a
u32 length prefix per entry followed by the raw bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"MRECBIN\x00"
FORMAT_VERSION = 1


def _le(dtype: np.dtype) -> np.dtype:
    dt = np.dtype(dtype)
    return dt.newbyteorder("<") if dt.byteorder == ">" else dt


def save_blobs(
    path,
    kind: str,
    meta: dict,
    arrays: dict[str, np.ndarray],
    token_lists: dict[str, list[bytes]] | None = None,
) -> None:
    token_lists = token_lists or {}
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": [
            {
                "name": name,
                "dtype": _le(arr.dtype).str,
                "shape": list(arr.shape),
            }
            for name, arr in arrays.items()
        ],
        "token_lists": [
            {
                "name": name,
                "count": len(toks),
                "nbytes": sum(4 + len(t) for t in toks),
            }
            for name, toks in token_lists.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype=_le(arr.dtype)).tobytes())
        for toks in token_lists.values():
            for t in toks:
                fh.write(struct.pack("<I", len(t)))
                fh.write(t)


def load_blobs(path):
    """Read a checkpoint; returns (kind, meta, arrays, token_lists)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a recognized checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    off = len(MAGIC) + 8
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header") from exc
    off += hlen
    arrays: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        n = int(np.prod(spec["shape"], dtype=np.int64)) if spec["shape"] else 1
        nbytes = n * dt.itemsize
        if off + nbytes > len(raw):
            raise DataError(f"{path}: truncated checkpoint payload")
        arrays[spec["name"]] = (
            np.frombuffer(raw, dtype=dt, count=n, offset=off)
            .reshape(spec["shape"])
            .copy()
        )
        off += nbytes
    token_lists: dict[str, list[bytes]] = {}
    for spec in header["token_lists"]:
        toks = []
        for _ in range(spec["count"]):
            if off + 4 > len(raw):
                raise DataError(f"{path}: truncated checkpoint payload")
            (tlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            if off + tlen > len(raw):
                raise DataError(f"{path}: truncated checkpoint payload")
            toks.append(raw[off : off + tlen])
            off += tlen
        token_lists[spec["name"]] = toks
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes after checkpoint payload")
    return header["kind"], header["meta"], arrays, token_lists
