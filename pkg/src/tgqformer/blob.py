"""TGQT tensor blob files and checkpoint manifests.

Blob layout: magic ``TGQT``, u8 version (1), u32 rank, ``rank`` u32 dims,
then a little-endian float32 payload in row-major order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"TGQT"
VERSION = 1


def encode_blob(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    header = MAGIC + struct.pack("<BI", VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_blob(raw: bytes) -> np.ndarray:
    if raw[:4] != MAGIC:
        raise ContractError("not a TGQT blob (bad magic)")
    version, rank = struct.unpack_from("<BI", raw, 4)
    if version != VERSION:
        raise ContractError(f"unsupported TGQT version {version}")
    off = 9
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    payload = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
    if off + 4 * count != len(raw):
        raise ContractError(f"TGQT payload size mismatch: expected {count} floats")
    return payload.astype(np.float64).reshape(dims)


def write_blob(path, array: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_blob(array))


def read_blob(path) -> np.ndarray:
    return decode_blob(Path(path).read_bytes())


def save_checkpoint(directory, params: dict[str, np.ndarray], meta: dict) -> Path:
    """Write one blob per parameter plus ``manifest.json`` mapping name -> file."""
    directory = Path(directory)
    (directory / "blobs").mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(params):
        fname = f"blobs/{name}.tgqt"
        write_blob(directory / fname, params[name])
        entries[name] = fname
    manifest = {"format": "tgqt-checkpoint", "version": VERSION, "meta": meta, "params": entries}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    params = {name: read_blob(directory / fname) for name, fname in manifest["params"].items()}
    return params, manifest["meta"]
