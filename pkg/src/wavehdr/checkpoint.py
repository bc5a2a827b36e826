"""Binary checkpoints with a JSON architecture file alongside.

Checkpoint layout (little-endian)::

    b"FHCK"  uint32 version  uint32 count
    count x record:
        uint16 name_len, name (utf-8), uint8 dtype (0 = float32, 1 = float64),
        uint8 ndim, ndim x uint32 extents, raw values in C order
    32-byte sha256 of everything above

``<name>.ckpt`` is accompanied by ``<name>.json`` holding the model config.
Both are written to a temporary file first and renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError
from .model import ModelConfig, validate_params

MAGIC = b"FHCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def atomic_write(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_params(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise ConfigError(f"parameter {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_params(blob: bytes, origin: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(blob) < 44 or blob[:4] != MAGIC:
        raise DataError(f"{origin}: not a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataError(f"{origin}: checksum mismatch (truncated or corrupted)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise DataError(f"{origin}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape)) * dt.itemsize
            out[name] = np.frombuffer(body[pos:pos + size], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
            pos += size
    except (struct.error, KeyError, ValueError) as exc:
        raise DataError(f"{origin}: malformed record ({exc})") from exc
    if pos != len(body):
        raise DataError(f"{origin}: trailing bytes after {count} records")
    return out


def params_digest(params: Mapping[str, np.ndarray]) -> str:
    return hashlib.sha256(encode_params(params)).hexdigest()


def config_path(ckpt: str | Path) -> Path:
    return Path(ckpt).with_suffix(".json")


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], cfg: ModelConfig) -> Path:
    validate_params(params, cfg)
    path = Path(path)
    atomic_write(config_path(path), cfg.dumps().encode("utf-8"))
    atomic_write(path, encode_params(params))
    return path


def load_checkpoint(path: str | Path, cfg: ModelConfig | None = None) -> tuple[dict[str, np.ndarray], ModelConfig]:
    """Read parameters and the stored config; ``cfg``, if given, must agree."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    params = decode_params(blob, str(path))
    cpath = config_path(path)
    if cpath.exists():
        try:
            stored = ModelConfig.from_dict(json.loads(cpath.read_text()))
        except ValueError as exc:
            raise DataError(f"{cpath}: malformed config ({exc})") from exc
        if cfg is not None and cfg != stored:
            raise ConfigError(f"{path}: checkpoint config differs from the requested config")
        cfg = stored
    elif cfg is None:
        raise DataError(f"{path}: missing architecture file {cpath.name}")
    validate_params(params, cfg)
    return params, cfg
