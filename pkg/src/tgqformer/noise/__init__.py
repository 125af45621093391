"""Corruption toolkit: pixel operators, token analogs and the robustness sweep."""
from .pixels import (
    SEVERITIES, VOCAB, CorruptionPlan, CorruptionSpec, Overlay, OverlayVocab, apply_overlays,
    center_crop, corrupt, draw_overlay, foreground_mask, plan_corruption, replace_background,
    sample_overlay, severity,
)
from .sweep import corrupt_pool, robustness_sweep, write_grid
from .tokens import overlay_cells, promo_vectors, token_corrupt

__all__ = [
    "SEVERITIES", "VOCAB", "CorruptionPlan", "CorruptionSpec", "Overlay", "OverlayVocab",
    "apply_overlays", "center_crop", "corrupt", "corrupt_pool", "draw_overlay", "foreground_mask",
    "overlay_cells", "plan_corruption", "promo_vectors", "replace_background", "robustness_sweep",
    "sample_overlay", "severity", "token_corrupt", "write_grid",
]
