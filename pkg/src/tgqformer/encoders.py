"""Frozen encoders: visual tokens, text tokens and the two global vectors.

The synthetic encoder stands in for a pretrained CLIP pair.  Text tokens map
to fixed pseudo-random unit vectors (plus a sinusoidal position offset) and
image patches map to features through a fixed orthonormal pixel basis.  The
same basis is used by the corpus renderer, so a patch painted with a concept
vector decodes back to (almost exactly) that vector.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .blob import read_blob
from .errors import ConfigurationError, ContractError, DimensionError
from .image import read_ppm, resize_bilinear
from .rng import stream, token_vector
from .tensor import Tensor

PIXEL_MID = 128.0
PIXEL_GAIN = 1000.0


@dataclass(frozen=True)
class EncoderConfig:
    d_v: int = 32
    L_v: int = 16
    max_title_tokens: int = 50
    mode: str = "synthetic"
    patch: int = 16
    seed: int = 0
    pos_scale: float = 0.1
    feature_scale: float | None = None

    def __post_init__(self):
        if self.d_v < 4:
            raise ConfigurationError(f"d_v must be >= 4, got {self.d_v}")
        if self.L_v < 1:
            raise ConfigurationError(f"L_v must be >= 1, got {self.L_v}")
        if self.mode not in ("synthetic", "ingest"):
            raise ConfigurationError(f"unknown encoder mode {self.mode!r}")
        if self.mode == "synthetic":
            g = int(round(self.L_v ** 0.5))
            if g * g != self.L_v:
                raise ConfigurationError("synthetic mode needs a square token grid (L_v = g*g)")
            if 3 * self.patch * self.patch < self.d_v:
                raise ConfigurationError("patch too small for d_v")

    @property
    def scale(self) -> float:
        """Multiplier on unit-norm features; defaults to sqrt(d_v), i.e. ~unit variance per channel."""
        return float(np.sqrt(self.d_v)) if self.feature_scale is None else float(self.feature_scale)

    @property
    def grid(self) -> int:
        return int(round(self.L_v ** 0.5))

    @property
    def image_size(self) -> int:
        return self.grid * self.patch


@dataclass
class EncodedItem:
    item_id: str
    H_img: Tensor
    f_img_global: Tensor
    H_txt: Tensor
    f_title_global: Tensor
    synthetic: bool = True


_TOKEN_RE = re.compile(r"\S+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def metadata_text(brand: str, categories, title: str) -> str:
    """Text fed to the query-initialisation path: brand, category path, title."""
    return " ".join([brand, *categories, title]).strip()


def sinusoid(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class SyntheticEncoder:
    """Deterministic stand-in for a frozen vision/text encoder pair."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        self.cfg = cfg
        self._vocab: dict[str, np.ndarray] = {}

    @cached_property
    def pixel_basis(self) -> np.ndarray:
        """Orthonormal ``(3*patch*patch, d_v)`` map between patch pixels and features."""
        n = 3 * self.cfg.patch * self.cfg.patch
        g = stream(self.cfg.seed, "pixel-basis").standard_normal((n, self.cfg.d_v))
        q, _ = np.linalg.qr(g)
        return q

    @cached_property
    def white_token(self) -> np.ndarray:
        flat = np.full(3 * self.cfg.patch ** 2, 255.0)
        return self.cfg.scale * (self.pixel_basis.T @ (flat - PIXEL_MID)) / PIXEL_GAIN

    def token_embedding(self, token: str) -> np.ndarray:
        vec = self._vocab.get(token)
        if vec is None:
            vec = token_vector(token, self.cfg.d_v, self.cfg.seed)
            self._vocab[token] = vec
        return vec

    # -- images

    def _patches(self, img: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        size = cfg.image_size
        if img.shape[0] != size or img.shape[1] != size:
            img = resize_bilinear(img, size, size)
        g, p = cfg.grid, cfg.patch
        x = img.astype(np.float64).reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4)
        return x.reshape(g * g, p * p * 3)

    def encode_image(self, img: np.ndarray) -> tuple[Tensor, Tensor]:
        if img.ndim != 3 or img.shape[2] != 3:
            raise DimensionError(f"expected an (H, W, 3) pixel grid, got {img.shape}")
        tokens = self.cfg.scale * ((self._patches(img) - PIXEL_MID) @ self.pixel_basis) / PIXEL_GAIN
        return Tensor(tokens), Tensor(tokens.mean(axis=0))

    def render(self, contents: np.ndarray) -> np.ndarray:
        """Paint one patch per row of ``contents`` (``(L_v, d_v)``, unscaled); NaN rows stay white."""
        cfg = self.cfg
        g, p = cfg.grid, cfg.patch
        flat = np.full((cfg.L_v, 3 * p * p), 255.0)
        for i, vec in enumerate(contents):
            if np.all(np.isfinite(vec)):
                flat[i] = np.clip(PIXEL_MID + PIXEL_GAIN * (self.pixel_basis @ vec), 0, 230)
        img = flat.reshape(g, g, p, p, 3).transpose(0, 2, 1, 3, 4).reshape(g * p, g * p, 3)
        return np.round(img).astype(np.uint8)

    # -- text

    def encode_text(self, text: str) -> Tensor:
        toks = tokenize(text)[: self.cfg.max_title_tokens]
        if not toks:
            raise ContractError("cannot encode empty text")
        base = np.stack([self.token_embedding(t) for t in toks])
        return Tensor(self.cfg.scale * (base + self.cfg.pos_scale * sinusoid(len(toks), self.cfg.d_v)))

    def encode_title_global(self, title: str) -> Tensor:
        return Tensor(self.encode_text(title).data.mean(axis=0))

    def encode_item(self, record, image: np.ndarray | None = None) -> EncodedItem:
        if image is None:
            if not record.image_ref:
                raise ContractError(f"item {record.item_id} has no image for synthetic encoding")
            image = read_ppm(record.image_ref)
        h_img, f_img = self.encode_image(image)
        return EncodedItem(
            item_id=record.item_id,
            H_img=h_img,
            f_img_global=f_img,
            H_txt=self.encode_text(metadata_text(record.brand, record.categories, record.title)),
            f_title_global=self.encode_title_global(record.title),
            synthetic=True,
        )


class IngestEncoder:
    """Reads precomputed encoder outputs from TGQT blobs.

    ``manifest`` maps item_id to a dict with ``image`` (L_v x d_v blob),
    ``text`` (L_t x d_v blob) and optionally ``title`` (title-only token blob).
    """

    def __init__(self, cfg: EncoderConfig, manifest: dict[str, dict[str, str]] | None = None):
        self.cfg = cfg
        self.manifest = manifest or {}

    @classmethod
    def from_manifest_file(cls, cfg: EncoderConfig, path) -> "IngestEncoder":
        path = Path(path)
        manifest = {}
        for line in path.read_text().splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            entry = {"image": str(path.parent / parts[1]), "text": str(path.parent / parts[2])}
            if len(parts) > 3 and parts[3]:
                entry["title"] = str(path.parent / parts[3])
            manifest[parts[0]] = entry
        return cls(cfg, manifest)

    def encode_image(self, blob: np.ndarray) -> tuple[Tensor, Tensor]:
        expected = (self.cfg.L_v, self.cfg.d_v)
        if blob.shape != expected:
            raise DimensionError(f"image blob shape {blob.shape} != expected {expected}")
        return Tensor(blob), Tensor(blob.mean(axis=0))

    def encode_tokens(self, blob: np.ndarray) -> Tensor:
        if blob.ndim != 2 or blob.shape[1] != self.cfg.d_v or blob.shape[0] < 1:
            raise DimensionError(f"text blob shape {blob.shape} incompatible with d_v={self.cfg.d_v}")
        return Tensor(blob[: self.cfg.max_title_tokens])

    def encode_item(self, record) -> EncodedItem:
        entry = self.manifest.get(record.item_id)
        image_path = entry["image"] if entry else record.feature_ref
        if image_path is None:
            raise ContractError(f"no feature blob for item {record.item_id}")
        h_img, f_img = self.encode_image(read_blob(image_path))
        if entry and entry.get("text"):
            h_txt = self.encode_tokens(read_blob(entry["text"]))
        else:
            raise ContractError(f"no text blob for item {record.item_id}")
        title = read_blob(entry["title"]) if entry.get("title") else h_txt.data
        return EncodedItem(record.item_id, h_img, f_img, h_txt,
                           Tensor(np.asarray(title).mean(axis=0)), synthetic=False)
