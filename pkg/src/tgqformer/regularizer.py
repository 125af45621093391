"""Redundancy-reduction loss between batch-standardised stream summaries."""
from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor, as_tensor

log = logging.getLogger(__name__)


def standardize(S, eps: float = 1e-5) -> Tensor:
    """Per-column ``(x - mean) / (population std + eps)`` over the batch axis."""
    S = as_tensor(S)
    mu = T.mean(S, axis=0, keepdims=True)
    centred = S - mu
    # tiny floor keeps the sqrt differentiable on constant columns
    std = T.sqrt(T.mean(centred * centred, axis=0, keepdims=True) + 1e-24)
    return centred / (std + eps)


def cross_correlation(S_txt_hat, S_rnd_hat) -> Tensor:
    a, b = as_tensor(S_txt_hat), as_tensor(S_rnd_hat)
    if a.shape != b.shape:
        raise DimensionError(f"stream summaries disagree: {a.shape} vs {b.shape}")
    return T.matmul(T.transpose(a), b) * (1.0 / a.shape[0])


def rr_loss(C) -> Tensor:
    """Mean squared diagonal of the cross-correlation matrix."""
    C = as_tensor(C)
    d = C.shape[0]
    idx = np.arange(d)
    diag = C[(idx, idx)]
    return T.mean(diag * diag)


def redundancy_loss(S_txt, S_rnd, eps: float = 1e-5) -> Tensor:
    """Full pipeline; batches with fewer than two rows contribute zero."""
    S_txt = as_tensor(S_txt)
    if S_txt.shape[0] < 2:
        log.warning("redundancy loss skipped: batch of %d rows", S_txt.shape[0])
        return Tensor(0.0)
    C = cross_correlation(standardize(S_txt, eps), standardize(S_rnd, eps))
    return rr_loss(C)
