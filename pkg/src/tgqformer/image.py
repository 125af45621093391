"""Binary PPM (P6) I/O and the small raster toolkit used by the noise lab.

Images are ``(H, W, 3)`` uint8 arrays throughout.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import ContractError


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    return decode_ppm(raw)


def decode_ppm(raw: bytes) -> np.ndarray:
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise ContractError(f"only binary P6 PPM is supported, got {fields[0]!r}")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ContractError(f"only 8-bit PPM is supported (maxval={maxval})")
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height * 3, offset=pos)
    return data.reshape(height, width, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(img))


def write_pgm_heatmap(path, values: np.ndarray) -> None:
    """Write a 2-D array as an 8-bit grayscale heatmap scaled to its max."""
    values = np.asarray(values, dtype=np.float64)
    peak = values.max()
    scaled = np.zeros_like(values) if peak <= 0 else values / peak
    gray = np.round(scaled * 255).astype(np.uint8)
    write_ppm(path, np.repeat(gray[:, :, None], 3, axis=2))


# ------------------------------------------------------------------ resampling


def resize_bilinear(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping."""
    src = img.astype(np.float64)
    h, w = src.shape[:2]
    ys = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def gaussian_kernel(radius: float) -> np.ndarray:
    sigma = radius / 2.0
    half = max(int(math.ceil(3 * sigma)), 1)
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, radius: float = 2.0) -> np.ndarray:
    """Separable Gaussian blur, sigma = radius / 2, truncated at 3 sigma, edge-replicated."""
    k = gaussian_kernel(radius)
    half = len(k) // 2
    src = img.astype(np.float64)
    padded = np.pad(src, ((0, 0), (half, half), (0, 0)), mode="edge")
    tmp = sum(k[i] * padded[:, i:i + src.shape[1]] for i in range(len(k)))
    padded = np.pad(tmp, ((half, half), (0, 0), (0, 0)), mode="edge")
    out = sum(k[i] * padded[i:i + src.shape[0]] for i in range(len(k)))
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


# -------------------------------------------------------------------- drawing


def fill_polygon(img: np.ndarray, points, color) -> None:
    """Fill a polygon in place (even-odd rule at pixel centres); clipped to bounds."""
    pts = np.asarray(points, dtype=np.float64)
    h, w = img.shape[:2]
    ymin = max(int(math.floor(pts[:, 1].min())), 0)
    ymax = min(int(math.ceil(pts[:, 1].max())), h - 1)
    xmin = max(int(math.floor(pts[:, 0].min())), 0)
    xmax = min(int(math.ceil(pts[:, 0].max())), w - 1)
    if ymin > ymax or xmin > xmax:
        return
    yy, xx = np.mgrid[ymin:ymax + 1, xmin:xmax + 1]
    px = xx + 0.5
    py = yy + 0.5
    inside = np.zeros(px.shape, dtype=bool)
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    region = img[ymin:ymax + 1, xmin:xmax + 1]
    region[inside] = color


def fill_rect(img: np.ndarray, x0: float, y0: float, x1: float, y1: float, color) -> None:
    h, w = img.shape[:2]
    xa, xb = max(int(round(x0)), 0), min(int(round(x1)), w)
    ya, yb = max(int(round(y0)), 0), min(int(round(y1)), h)
    if xa < xb and ya < yb:
        img[ya:yb, xa:xb] = color


def star_points(cx: float, cy: float, radius: float, n_points: int = 8,
                inner_ratio: float = 0.5, rotation: float = 0.0) -> np.ndarray:
    angles = rotation + np.arange(2 * n_points) * math.pi / n_points
    radii = np.where(np.arange(2 * n_points) % 2 == 0, radius, radius * inner_ratio)
    return np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)


# 5x7 bitmap font; lowercase letters render with the uppercase glyph.
_FONT_ROWS = {
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
    "B": ["11110", "10001", "10001", "11110", "10001", "10001", "11110"],
    "C": ["01110", "10001", "10000", "10000", "10000", "10001", "01110"],
    "D": ["11110", "10001", "10001", "10001", "10001", "10001", "11110"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "F": ["11111", "10000", "10000", "11110", "10000", "10000", "10000"],
    "G": ["01110", "10001", "10000", "10111", "10001", "10001", "01111"],
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "I": ["01110", "00100", "00100", "00100", "00100", "00100", "01110"],
    "J": ["00111", "00010", "00010", "00010", "00010", "10010", "01100"],
    "K": ["10001", "10010", "10100", "11000", "10100", "10010", "10001"],
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "N": ["10001", "10001", "11001", "10101", "10011", "10001", "10001"],
    "O": ["01110", "10001", "10001", "10001", "10001", "10001", "01110"],
    "P": ["11110", "10001", "10001", "11110", "10000", "10000", "10000"],
    "Q": ["01110", "10001", "10001", "10001", "10101", "10010", "01101"],
    "R": ["11110", "10001", "10001", "11110", "10100", "10010", "10001"],
    "S": ["01111", "10000", "10000", "01110", "00001", "00001", "11110"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "U": ["10001", "10001", "10001", "10001", "10001", "10001", "01110"],
    "V": ["10001", "10001", "10001", "10001", "10001", "01010", "00100"],
    "W": ["10001", "10001", "10001", "10101", "10101", "10101", "01010"],
    "X": ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
    "Y": ["10001", "10001", "01010", "00100", "00100", "00100", "00100"],
    "Z": ["11111", "00001", "00010", "00100", "01000", "10000", "11111"],
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    "%": ["11000", "11001", "00010", "00100", "01000", "10011", "00011"],
    ".": ["00000", "00000", "00000", "00000", "00000", "01100", "01100"],
    "!": ["00100", "00100", "00100", "00100", "00100", "00000", "00100"],
    " ": ["00000"] * 7,
}
FONT = {ch: np.array([[c == "1" for c in row] for row in rows]) for ch, rows in _FONT_ROWS.items()}
GLYPH_W, GLYPH_H = 5, 7


def glyph(ch: str) -> np.ndarray:
    return FONT.get(ch.upper(), FONT[" "])


def draw_text(img: np.ndarray, text: str, x: int, y: int, color=(255, 255, 255), scale: int = 1) -> None:
    """Draw ``text`` with its top-left corner at ``(x, y)``; pixels outside are clipped."""
    h, w = img.shape[:2]
    cursor = x
    for ch in text:
        g = glyph(ch)
        if scale > 1:
            g = np.kron(g, np.ones((scale, scale), dtype=bool))
        ys, xs = np.nonzero(g)
        ys = ys + y
        xs = xs + cursor
        keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        img[ys[keep], xs[keep]] = color
        cursor += (GLYPH_W + 1) * scale


def text_width(text: str, scale: int = 1) -> int:
    return max(len(text) * (GLYPH_W + 1) * scale - scale, 0)
