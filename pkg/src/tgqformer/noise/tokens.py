"""Token-block analog of the pixel corruptions for the synthetic encoder.

Overlays overwrite a contiguous run of visual tokens (one corner cell for a
badge, two cells along the top edge for a banner, a whole grid row for a bar)
with vectors from a shared promo family.  Background replacement re-draws the
tokens of white cells.  Decisions come from the same per-item plan as the
pixel path.
"""
from __future__ import annotations

import numpy as np

from ..encoders import EncodedItem, SyntheticEncoder
from ..errors import ContractError
from ..rng import stream, token_vector
from ..tensor import Tensor
from .pixels import CorruptionSpec, Overlay, plan_corruption

PROMO_NORM = 1.5
BACKGROUND_NOISE = 0.6


def overlay_cells(ov: Overlay, grid: int, size: int) -> list[int]:
    """Raster indices of the token cells an overlay covers."""
    if ov.kind == "bar":
        row = 0 if ov.corner == "top" else grid - 1
        return [row * grid + c for c in range(grid)]
    r = min(int(ov.anchor[1] / size * grid), grid - 1)
    c = min(int(ov.anchor[0] / size * grid), grid - 1)
    if ov.kind == "badge":
        return [r * grid + c]
    c2 = c + 1 if ov.corner.endswith("left") else c - 1
    cols = sorted({c, min(max(c2, 0), grid - 1)})
    return [r * grid + k for k in cols]


def _orthogonal(vecs: np.ndarray, protect: np.ndarray | None) -> np.ndarray:
    if protect is None or len(protect) == 0:
        return vecs
    q, _ = np.linalg.qr(np.asarray(protect, dtype=np.float64).T)
    return vecs - (vecs @ q) @ q.T


def promo_vectors(ov: Overlay, n: int, d_v: int, seed: int, protect=None) -> np.ndarray:
    base = token_vector(f"promo/{ov.text}", d_v, seed)
    rows = np.stack([base + 0.3 * token_vector(f"promo/{ov.kind}/{j}", d_v, seed) for j in range(n)])
    rows = _orthogonal(rows, protect)
    return PROMO_NORM * rows / np.linalg.norm(rows, axis=1, keepdims=True)


def token_corrupt(encoded: EncodedItem, spec: CorruptionSpec, encoder: SyntheticEncoder,
                  protect: np.ndarray | None = None) -> EncodedItem:
    """Corrupt the visual tokens of one synthetic item.

    ``protect`` holds vectors (rows) the injected tokens are made orthogonal to,
    normally the planted concept vectors of the item's product.
    """
    if not encoded.synthetic:
        raise ContractError("token corruption is only defined for synthetic-encoder items")
    cfg = encoder.cfg
    plan = plan_corruption(spec, encoded.item_id, (cfg.image_size, cfg.image_size), 1)
    if plan.identity:
        return encoded
    tokens = encoded.H_img.data.copy()
    if plan.background:
        white = np.linalg.norm(tokens - encoder.white_token, axis=1) < 1e-6 * cfg.scale
        if white.any():
            rng = stream(spec.seed, "background-tokens", encoded.item_id)
            noise = _orthogonal(rng.standard_normal((int(white.sum()), cfg.d_v)), protect)
            noise *= cfg.scale * BACKGROUND_NOISE / np.linalg.norm(noise, axis=1, keepdims=True)
            tokens[white] = encoder.white_token + noise
    for ov in plan.overlays:
        cells = overlay_cells(ov, cfg.grid, cfg.image_size)
        tokens[cells] = cfg.scale * promo_vectors(ov, len(cells), cfg.d_v, cfg.seed, protect)
    return EncodedItem(encoded.item_id, Tensor(tokens), Tensor(tokens.mean(axis=0)),
                       encoded.H_txt, encoded.f_title_global, synthetic=True)
