"""Tensor container and JSON-lines persistence.

Container layout: one UTF-8 JSON header line terminated by ``\\n`` with keys
``version`` (1), ``dtype`` ("f32"), ``shape`` and ``meta``, followed by the
row-major little-endian float32 payload.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import IngestionError

CONTAINER_VERSION = 1
_DTYPE = np.dtype("<f4")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def encode_container(array, meta=None) -> bytes:
    array = np.ascontiguousarray(np.asarray(array), dtype=_DTYPE)
    header = {
        "version": CONTAINER_VERSION,
        "dtype": "f32",
        "shape": list(array.shape),
        "meta": _jsonable(meta or {}),
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    return line.encode("utf-8") + array.tobytes(order="C")


def decode_container(blob: bytes, path=None, allow_nonfinite=False):
    """Parse container bytes into ``(array, meta)``."""
    newline = blob.find(b"\n")
    if newline < 0:
        raise IngestionError("missing header terminator", offset=len(blob), path=path)
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IngestionError(f"malformed header: {exc}", offset=0, path=path) from None
    if not isinstance(header, dict):
        raise IngestionError("header is not a JSON object", offset=0, path=path)
    if header.get("version") != CONTAINER_VERSION:
        raise IngestionError(f"unsupported version {header.get('version')!r}", offset=0, path=path)
    if header.get("dtype") != "f32":
        raise IngestionError(f"unsupported dtype {header.get('dtype')!r}", offset=0, path=path)
    shape = header.get("shape")
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise IngestionError(f"invalid shape {shape!r}", offset=0, path=path)
    meta = header.get("meta", {})
    if not isinstance(meta, dict):
        raise IngestionError("meta is not a JSON object", offset=0, path=path)

    start = newline + 1
    payload = blob[start:]
    expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
    if len(payload) != expected:
        raise IngestionError(
            f"shape mismatch: header {shape} needs {expected} payload bytes, found {len(payload)}",
            offset=start + min(len(payload), expected),
            path=path,
        )
    array = np.frombuffer(payload, dtype=_DTYPE).reshape(shape).copy()
    if not allow_nonfinite:
        bad = np.flatnonzero(~np.isfinite(array.ravel()))
        if bad.size:
            raise IngestionError(
                "non-finite value in payload",
                offset=start + int(bad[0]) * _DTYPE.itemsize,
                path=path,
            )
    return array, meta


def write_container(path, array, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_container(array, meta))
    os.replace(tmp, path)
    return path


def read_container(path, allow_nonfinite=False):
    path = Path(path)
    if not path.is_file():
        raise IngestionError("no such container file", path=path)
    return decode_container(path.read_bytes(), path=path, allow_nonfinite=allow_nonfinite)


def write_jsonl(path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
    return path


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise IngestionError("no such record file", path=path)
    out = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.strip()
            if line:
                try:
                    rec = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise IngestionError(f"malformed record: {exc}", offset=offset, path=path) from None
                out.append(rec)
            offset += len(raw)
    return out


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise IngestionError("no such file", path=path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestionError(f"malformed JSON: {exc.msg}", offset=exc.pos, path=path) from None


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
