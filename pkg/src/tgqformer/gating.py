"""Dual-gated vector modulation of the two connector streams."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError
from .hqc import StreamEmbeddings
from .layers import MLP, ParamStore
from .tensor import Tensor


def agreement_score(f_img, f_title, eps: float = 1e-12) -> np.ndarray:
    """Cosine similarity between global image and global title vectors (row-wise)."""
    a = np.atleast_2d(np.asarray(getattr(f_img, "data", f_img), dtype=np.float64))
    b = np.atleast_2d(np.asarray(getattr(f_title, "data", f_title), dtype=np.float64))
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na <= eps) or np.any(nb <= eps):
        raise NumericError("agreement score undefined for a zero-norm global vector")
    s = np.clip((a * b).sum(axis=-1) / (na * nb), -1.0, 1.0)
    return s if np.ndim(getattr(f_img, "data", f_img)) > 1 else s[0]


def centered_sigmoid(x) -> Tensor:
    """``2 * sigmoid(x) - 1``, an odd map onto (-1, 1)."""
    return T.sigmoid(x) * 2.0 - 1.0


def masked_mean_rows(E: Tensor, mask: np.ndarray | None) -> Tensor:
    """Mean over the token axis of ``(N, T, d)`` honouring a ``(N, T)`` validity mask."""
    if mask is None:
        return T.mean(E, axis=1)
    w = mask / mask.sum(axis=1, keepdims=True)
    return T.tsum(E * w[:, :, None], axis=1)


@dataclass
class GateInputs:
    S_title: np.ndarray
    e_bar_txt: Tensor
    e_bar_rnd: Tensor
    f_img_global: np.ndarray
    f_title_global: np.ndarray

    def u_txt(self) -> Tensor:
        return T.concat([Tensor(self.f_img_global), Tensor(self.f_title_global),
                         Tensor(self.S_title[:, None]), self.e_bar_txt, self.e_bar_rnd], axis=1)

    def u_rnd(self) -> Tensor:
        return T.concat([Tensor(self.f_img_global), self.e_bar_rnd], axis=1)


def gate_inputs(streams: StreamEmbeddings, f_img: np.ndarray, f_title: np.ndarray) -> GateInputs:
    """Assemble gate conditioning from the PRE-modulation streams."""
    return GateInputs(
        S_title=agreement_score(f_img, f_title),
        e_bar_txt=masked_mean_rows(streams.E_txt, streams.txt_mask),
        e_bar_rnd=T.mean(streams.E_rnd, axis=1),
        f_img_global=f_img,
        f_title_global=f_title,
    )


@dataclass
class ModulatedStreams:
    E_txt_mod: Tensor | None
    E_rnd_mod: Tensor | None
    beta_txt: Tensor | None
    beta_rnd: Tensor | None
    txt_mask: np.ndarray | None


class GateNetworks:
    """Two disjoint gate MLPs; the last layers start at zero (identity modulation)."""

    def __init__(self, store: ParamStore, d_v: int, d_llm: int, hidden: int = 1024, scope: str = "gate"):
        self.d_v = d_v
        self.d_llm = d_llm
        self.txt_in = 2 * d_v + 1 + 2 * d_llm
        self.rnd_in = d_v + d_llm
        self.G_txt = MLP(store, f"{scope}.txt", self.txt_in, hidden, d_llm, zero_last=True)
        self.G_rnd = MLP(store, f"{scope}.rnd", self.rnd_in, hidden, d_llm, zero_last=True)

    def modulate(self, streams: StreamEmbeddings, inputs: GateInputs) -> ModulatedStreams:
        u_txt = inputs.u_txt()
        u_rnd = inputs.u_rnd()
        if u_txt.shape[-1] != self.txt_in:
            raise DimensionError(
                f"u_txt has {u_txt.shape[-1]} features, expected {self.txt_in} "
                f"(f_img {self.d_v} + f_title {self.d_v} + S 1 + e_txt {self.d_llm} + e_rnd {self.d_llm})")
        if u_rnd.shape[-1] != self.rnd_in:
            raise DimensionError(
                f"u_rnd has {u_rnd.shape[-1]} features, expected {self.rnd_in} "
                f"(f_img {self.d_v} + e_rnd {self.d_llm})")
        beta_txt = centered_sigmoid(self.G_txt(u_txt))
        beta_rnd = centered_sigmoid(self.G_rnd(u_rnd))
        e_txt = streams.E_txt * T.reshape(beta_txt + 1.0, (beta_txt.shape[0], 1, self.d_llm))
        e_rnd = streams.E_rnd * T.reshape(beta_rnd + 1.0, (beta_rnd.shape[0], 1, self.d_llm))
        return ModulatedStreams(e_txt, e_rnd, beta_txt, beta_rnd, streams.txt_mask)


def passthrough(streams: StreamEmbeddings) -> ModulatedStreams:
    """Identity modulation for variants without gates."""
    return ModulatedStreams(streams.E_txt, streams.E_rnd, None, None, streams.txt_mask)


def diagnostics(mod: ModulatedStreams, inputs: GateInputs | None) -> dict[str, float]:
    out = {}
    if mod.beta_txt is not None:
        out["mean_abs_beta_txt"] = float(np.abs(mod.beta_txt.data).mean())
    if mod.beta_rnd is not None:
        out["mean_abs_beta_rnd"] = float(np.abs(mod.beta_rnd.data).mean())
    if inputs is not None:
        out["mean_S_title"] = float(np.mean(inputs.S_title))
    return out
