"""Robustness harness: corrupt the test pool per severity, embed, evaluate."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..encoders import EncodedItem, SyntheticEncoder
from ..errors import ConfigurationError, ContractError
from ..retrieval import DEFAULT_KS, EvalPool, HitReport, evaluate
from .pixels import SEVERITIES, corrupt, severity
from .tokens import token_corrupt


def corrupt_pool(encoded: dict[str, EncodedItem], spec, encoder, *, mode: str = "pixel",
                 records=None, images=None, protect=None) -> dict[str, EncodedItem]:
    """One deterministic corrupted view of every pool item."""
    ids = sorted(encoded)
    if spec.severity == "clean":
        return dict(encoded)
    if mode == "token":
        return {i: token_corrupt(encoded[i], spec, encoder, None if protect is None else protect.get(i))
                for i in ids}
    if mode != "pixel":
        raise ConfigurationError(f"unknown corruption mode {mode!r}")
    if images is None or records is None:
        raise ContractError("pixel corruption needs the pool's images and records")
    donors = [images[i] for i in ids]
    out = {}
    for n, iid in enumerate(ids):
        img = corrupt(images[iid], spec, iid, donors, self_index=n)
        out[iid] = encoded[iid] if img is images[iid] else encoder.encode_item(records[iid], img)
    return out


def robustness_sweep(embed_fn, encoded: dict[str, EncodedItem], pairs, encoder: SyntheticEncoder,
                     severities=tuple(SEVERITIES), seed: int = 42, ks=DEFAULT_KS, **kw) -> dict[str, HitReport]:
    """H@K per severity; ``embed_fn(encoded_subset) -> (ids, matrix)``."""
    grid = {}
    for name in severities:
        if name not in SEVERITIES:
            raise ConfigurationError(f"unknown severity {name!r}; valid: {', '.join(SEVERITIES)}")
        view = corrupt_pool(encoded, severity(name, seed), encoder, **kw)
        ids, emb = embed_fn(view)
        grid[name] = evaluate(EvalPool(emb, ids), pairs, ks)
    return grid


def write_grid(path, grid: dict[str, HitReport]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["severity", "K", "hit_rate"])
        for name, rep in grid.items():
            for k, v in rep.rows():
                w.writerow([name, k, f"{v:.6f}"])


def grid_matrix(grid: dict[str, HitReport]) -> np.ndarray:
    return np.array([[v for _, v in rep.rows()] for rep in grid.values()])
