"""File formats: CSV matrices, JSONL chains, packed topology bitmaps, manifests."""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .core import ContractError

BITMAP_MAGIC = b"SDYN"
_HEADER = struct.Struct("<4sIII")  # magic, n_rows, n_cols, count -> 16 bytes


def write_matrix_csv(path, M, header: list | None = None):
    """Comma-separated rows at 17 significant digits so values round-trip exactly."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="\n") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in M:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def read_matrix_csv(path, skip_header: bool = False) -> np.ndarray:
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1 if skip_header else 0)
    except ValueError as exc:
        raise ContractError(f"{path}: not a numeric CSV matrix ({exc})")
    return M


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False, default=_plain)


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def write_jsonl(path, records):
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(canonical_json(rec) + "\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_bitmap(path, samples, shape: tuple[int, int]):
    """Thinned topologies, one packed bit row per sample after a 16-byte header."""
    n_rows, n_cols = shape
    samples = list(samples)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BITMAP_MAGIC, n_rows, n_cols, len(samples)))
        for S in samples:
            S = np.asarray(S)
            if S.shape != (n_rows, n_cols):
                raise ContractError(f"sample of shape {S.shape} in a {shape} bitmap")
            fh.write(np.packbits(S.ravel().astype(bool)).tobytes())


def read_bitmap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContractError(f"{path}: truncated bitmap header")
    magic, n_rows, n_cols, count = _HEADER.unpack_from(raw)
    if magic != BITMAP_MAGIC:
        raise ContractError(f"{path}: bad bitmap magic {magic!r}")
    size = n_rows * n_cols
    stride = (size + 7) // 8
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    if body.size != stride * count:
        raise ContractError(f"{path}: expected {count} samples of {stride} bytes, found {body.size} bytes")
    bits = np.unpackbits(body.reshape(count, stride), axis=1, count=size)
    return bits.reshape(count, n_rows, n_cols).astype(np.int8)


def save_trajectory(path, X):
    np.save(path, np.asarray(X, dtype=float), allow_pickle=False)


def load_trajectory(path) -> np.ndarray:
    return np.load(path, allow_pickle=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, config: dict, seed, outputs: list, version: str):
    """Provenance record: config echo, seed, code version and output digests.

    Nothing time-dependent goes in, so identical runs write identical manifests.
    """
    out_dir = Path(path).parent
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": config_hash(config),
        "seed": seed,
        "version": version,
        "outputs": {str(Path(p).relative_to(out_dir)): file_digest(p) for p in sorted(map(str, outputs))},
    }
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2, default=_plain) + "\n")
    return manifest
