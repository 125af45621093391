"""Pixel-level poster corruptions: cropping, background swap and promo overlays."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..image import draw_text, fill_polygon, fill_rect, gaussian_blur, resize_bilinear, star_points, text_width
from ..rng import stream

BACKGROUND_MIN = 240
OVERLAY_TYPES = ("badge", "banner", "bar")
CORNERS = ("top-left", "top-right", "bottom-left", "bottom-right")
# saturated poster colours; text is always white on top
PALETTE = ((214, 32, 40), (236, 112, 20), (200, 20, 120), (30, 60, 200), (20, 20, 20))


@dataclass(frozen=True)
class CorruptionSpec:
    severity: str
    p_bg: float
    p_overlay: float
    n_overlays: int
    seed: int = 42

    def with_seed(self, seed: int) -> "CorruptionSpec":
        return CorruptionSpec(self.severity, self.p_bg, self.p_overlay, self.n_overlays, seed)


SEVERITIES = {
    "clean": CorruptionSpec("clean", 0.0, 0.0, 0),
    "light": CorruptionSpec("light", 0.0, 0.4, 1),
    "medium": CorruptionSpec("medium", 0.5, 0.7, 3),
    "heavy": CorruptionSpec("heavy", 0.8, 0.9, 5),
}
MAX_OVERLAYS = max(s.n_overlays for s in SEVERITIES.values())


def severity(name: str, seed: int = 42) -> CorruptionSpec:
    try:
        return SEVERITIES[name].with_seed(seed)
    except KeyError:
        raise ConfigurationError(
            f"unknown severity {name!r}; valid: {', '.join(SEVERITIES)}") from None


@dataclass(frozen=True)
class OverlayVocab:
    badge: tuple[str, ...] = ("HOT", "SALE", "50%", "NEW", "No.1", "TOP", "9.9", "Best")
    banner_bar: tuple[str, ...] = ("Free Shipping", "Flash Sale", "New Arrival", "Limited Offer")


VOCAB = OverlayVocab()


# ------------------------------------------------------------------ operators


def center_crop(img: np.ndarray, r: float) -> np.ndarray:
    if not 0.0 < r <= 1.0:
        raise ConfigurationError(f"crop ratio must lie in (0, 1], got {r}")
    h, w = img.shape[:2]
    s = int(math.floor(r * min(w, h)))
    if s < 1:
        raise ConfigurationError(f"crop ratio {r} leaves an empty image")
    x0, y0 = (w - s) // 2, (h - s) // 2
    return img[y0:y0 + s, x0:x0 + s].copy()


def foreground_mask(img: np.ndarray) -> np.ndarray:
    """True where a pixel is foreground; near-white (min channel >= 240) is background."""
    return img.min(axis=2) < BACKGROUND_MIN


@dataclass(frozen=True)
class DonorCrop:
    index: int
    u_x: float
    u_y: float
    u_size: float


def _donor_crop(donor: np.ndarray, crop: DonorCrop) -> np.ndarray:
    dh, dw = donor.shape[:2]
    side = max(1, int(round((0.5 + 0.5 * crop.u_size) * min(dw, dh))))
    x0 = int(math.floor(crop.u_x * (dw - side + 1)))
    y0 = int(math.floor(crop.u_y * (dh - side + 1)))
    return donor[y0:y0 + side, x0:x0 + side]


def replace_background(img: np.ndarray, donor_pool, blur_radius: float = 2.0, rng=None,
                       crop: DonorCrop | None = None) -> np.ndarray:
    """Composite the foreground over a blurred, resized crop of a donor image."""
    if len(donor_pool) == 0:
        raise ConfigurationError("background replacement needs a non-empty donor pool")
    if crop is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        crop = DonorCrop(int(rng.integers(len(donor_pool))), rng.random(), rng.random(), rng.random())
    h, w = img.shape[:2]
    patch = _donor_crop(donor_pool[crop.index], crop)
    bg = gaussian_blur(resize_bilinear(patch, w, h), blur_radius)
    fg = foreground_mask(img)
    out = bg.copy()
    out[fg] = img[fg]
    return out


@dataclass(frozen=True)
class Overlay:
    kind: str
    corner: str
    anchor: tuple[float, float]
    size: float
    text: str
    color: tuple[int, int, int]
    rotation: float = 0.0


def _margin_box(corner: str, w: int, h: int) -> tuple[float, float, float, float]:
    mx, my = 0.1 * w, 0.1 * h
    x0 = 0.0 if corner.endswith("left") else w - mx
    y0 = 0.0 if corner.startswith("top") else h - my
    return x0, y0, x0 + mx, y0 + my


def sample_overlay(rng: np.random.Generator, w: int, h: int, vocab: OverlayVocab = VOCAB) -> Overlay:
    """Draw one overlay; always consumes the same number of random values."""
    u = rng.random(8)
    kind = OVERLAY_TYPES[min(int(u[0] * 3), 2)]
    m = min(w, h)
    color = PALETTE[min(int(u[5] * len(PALETTE)), len(PALETTE) - 1)]
    if kind == "badge":
        corner = CORNERS[min(int(u[1] * 4), 3)]
        size = (0.15 + 0.05 * u[2]) * m
        text = vocab.badge[min(int(u[6] * len(vocab.badge)), len(vocab.badge) - 1)]
    elif kind == "banner":
        corner = ("top-left", "top-right")[int(u[1] >= 0.5)]
        size = (0.35 + 0.10 * u[2]) * m
        text = vocab.banner_bar[min(int(u[6] * len(vocab.banner_bar)), len(vocab.banner_bar) - 1)]
    else:
        corner = ("top", "bottom")[int(u[1] >= 0.5)]
        size = (0.15 + 0.05 * u[2]) * h
        text = vocab.banner_bar[min(int(u[6] * len(vocab.banner_bar)), len(vocab.banner_bar) - 1)]
    if kind == "bar":
        anchor = (0.0, 0.0 if corner == "top" else h - size)
    else:
        x0, y0, x1, y1 = _margin_box(corner, w, h)
        anchor = (x0 + (x1 - x0) * u[3], y0 + (y1 - y0) * u[4])
    rotation = float(u[7] * 2 * math.pi / 8) if kind == "badge" else 0.0
    return Overlay(kind, corner, (float(anchor[0]), float(anchor[1])), float(size), text, color, rotation)


def _text_scale(text: str, room: float) -> int:
    return max(1, min(4, int(room // max(text_width(text), 1))))


def draw_overlay(img: np.ndarray, ov: Overlay) -> None:
    h, w = img.shape[:2]
    ax, ay = ov.anchor
    if ov.kind == "badge":
        fill_polygon(img, star_points(ax, ay, ov.size, rotation=ov.rotation), ov.color)
        scale = _text_scale(ov.text, 1.2 * ov.size)
        tw, th = text_width(ov.text, scale), 7 * scale
        draw_text(img, ov.text, int(round(ax - tw / 2)), int(round(ay - th / 2)), scale=scale)
    elif ov.kind == "banner":
        dx = ov.size if ov.corner.endswith("left") else -ov.size
        fill_polygon(img, [(ax, ay), (ax + dx, ay), (ax, ay + ov.size)], ov.color)
        scale = _text_scale(ov.text, 0.5 * ov.size)
        tx = ax + 0.1 * ov.size if dx > 0 else ax - 0.1 * ov.size - text_width(ov.text, scale)
        draw_text(img, ov.text, int(round(tx)), int(round(ay + 0.1 * ov.size)), scale=scale)
    else:
        fill_rect(img, 0, ay, w, ay + ov.size, ov.color)
        scale = max(1, min(_text_scale(ov.text, 0.9 * w), int(ov.size // 9) or 1))
        tw, th = text_width(ov.text, scale), 7 * scale
        draw_text(img, ov.text, int(round((w - tw) / 2)), int(round(ay + (ov.size - th) / 2)), scale=scale)


def apply_overlays(img: np.ndarray, n: int, vocab: OverlayVocab = VOCAB, rng=None) -> np.ndarray:
    if n < 1:
        raise ConfigurationError(f"overlay count must be >= 1, got {n}")
    rng = rng if rng is not None else np.random.default_rng(0)
    out = img.copy()
    h, w = img.shape[:2]
    for _ in range(n):
        draw_overlay(out, sample_overlay(rng, w, h, vocab))
    return out


# ------------------------------------------------------------------ per-item plan


@dataclass
class CorruptionPlan:
    background: bool
    donor: DonorCrop | None
    overlays: list[Overlay] = field(default_factory=list)

    @property
    def identity(self) -> bool:
        return not self.background and not self.overlays


def plan_corruption(spec: CorruptionSpec, item_id: str, size: tuple[int, int], n_donors: int,
                    vocab: OverlayVocab = VOCAB) -> CorruptionPlan:
    """All random choices for one item, drawn from a stream keyed by (seed, item_id).

    The number of draws does not depend on the severity, so a heavier severity
    applied with the same seed corrupts a superset of a lighter one.
    """
    w, h = size
    rng = stream(spec.seed, "corrupt", item_id)
    u_bg, u_ov, u_count = rng.random(3)
    donor = DonorCrop(int(rng.integers(max(n_donors, 1))), *rng.random(3))
    drawn = [sample_overlay(rng, w, h, vocab) for _ in range(MAX_OVERLAYS)]
    background = bool(u_bg < spec.p_bg)
    overlays = []
    if spec.n_overlays > 0 and u_ov < spec.p_overlay:
        count = 1 + min(int(u_count * spec.n_overlays), spec.n_overlays - 1)
        overlays = drawn[:count]
    return CorruptionPlan(background, donor if background else None, overlays)


def corrupt(img: np.ndarray, spec: CorruptionSpec, item_id: str, donor_pool=(),
            vocab: OverlayVocab = VOCAB, self_index: int | None = None) -> np.ndarray:
    """Background replacement first, then overlays; the clean spec returns the input bytes.

    ``self_index`` marks the item's own position in ``donor_pool`` so it is
    never its own donor.
    """
    h, w = img.shape[:2]
    n_donors = len(donor_pool) - (self_index is not None)
    plan = plan_corruption(spec, item_id, (w, h), n_donors, vocab)
    if plan.identity:
        return img
    out = img
    if plan.background:
        if n_donors < 1:
            raise ConfigurationError("background replacement needs a non-empty donor pool")
        crop = plan.donor
        if self_index is not None and crop.index >= self_index:
            crop = DonorCrop(crop.index + 1, crop.u_x, crop.u_y, crop.u_size)
        out = replace_background(out, donor_pool, crop=crop)
    out = out.copy()
    for ov in plan.overlays:
        draw_overlay(out, ov)
    return out
