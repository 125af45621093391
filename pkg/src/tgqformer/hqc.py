"""Hybrid-query connector: metadata-anchored plus exploratory queries.

Text tokens are compressed by a strided Conv1D into ``T_g = ceil(L_t / s)``
slots and projected into query space; ``T_r`` learnable queries are appended.
Pre-norm blocks of query self-attention, query-to-image cross-attention and a
feed-forward layer follow, then one shared projection into ``d_llm``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, NumericError, StateError
from .layers import FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamStore, key_mask_bias
from .tensor import Parameter, Tensor


@dataclass(frozen=True)
class HqcConfig:
    k: int = 5
    s: int = 5
    T_r: int = 3
    d_q: int = 768
    d_llm: int = 1024
    n_layers: int = 6
    n_heads: int = 12
    self_attention: bool = True

    def __post_init__(self):
        if self.k < 1 or self.s < 1:
            raise ConfigurationError(f"conv kernel/stride must be >= 1 (k={self.k}, s={self.s})")
        if self.d_q % self.n_heads:
            raise ConfigurationError(f"d_q={self.d_q} not divisible by n_heads={self.n_heads}")
        if self.T_r < 0 or self.n_layers < 0:
            raise ConfigurationError("T_r and n_layers must be non-negative")


def n_semantic_slots(L_t: int, s: int) -> int:
    return math.ceil(L_t / s)


def downsample_text(H_txt, weight, bias, k: int, s: int) -> Tensor:
    """Conv1D over the token axis with right zero padding: ``L_t -> ceil(L_t / s)`` rows."""
    return T.conv1d(H_txt, weight, bias, kernel_size=k, stride=s)


def project_semantic_queries(H_tilde, W_Q) -> Tensor:
    return T.matmul(H_tilde, W_Q)


@dataclass
class StreamEmbeddings:
    """Connector outputs.  ``E_txt`` is padded to the batch max ``T_g``; use ``txt_mask``."""

    E_txt: Tensor | None
    E_rnd: Tensor | None
    txt_mask: np.ndarray | None

    def txt_rows(self, i: int) -> np.ndarray:
        return self.E_txt.data[i][self.txt_mask[i]]


class _Block:
    def __init__(self, store: ParamStore, name: str, cfg: HqcConfig, d_v: int):
        self.ln_self = LayerNorm(store, f"{name}.ln_self", cfg.d_q) if cfg.self_attention else None
        self.self_attn = (MultiHeadAttention(store, f"{name}.self_attn", cfg.d_q, cfg.n_heads)
                          if cfg.self_attention else None)
        self.ln_cross = LayerNorm(store, f"{name}.ln_cross", cfg.d_q)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", cfg.d_q, cfg.n_heads, d_kv=d_v)
        self.ln_ffn = LayerNorm(store, f"{name}.ln_ffn", cfg.d_q)
        self.ffn = FeedForward(store, f"{name}.ffn", cfg.d_q)

    def __call__(self, x: Tensor, h_img: Tensor, query_bias):
        if self.self_attn is not None:
            h = self.ln_self(x)
            a, _ = self.self_attn(h, h, query_bias)
            x = x + a
        c, weights = self.cross_attn(self.ln_cross(x), h_img)
        x = x + c
        x = x + self.ffn(self.ln_ffn(x))
        return x, weights


class HybridQueryConnector:
    def __init__(self, store: ParamStore, cfg: HqcConfig, d_v: int,
                 semantic: bool = True, exploratory: bool = True, scope: str = "hqc"):
        if not (semantic or exploratory):
            raise ConfigurationError("connector needs at least one query stream")
        if exploratory and cfg.T_r < 1:
            raise ConfigurationError("exploratory stream needs T_r >= 1")
        self.cfg = cfg
        self.d_v = d_v
        self.semantic = semantic
        self.exploratory = exploratory
        if semantic:
            self.conv_w = store.uniform(f"{scope}.semantic.conv.weight", (cfg.k * d_v, d_v), cfg.k * d_v)
            self.conv_b = store.uniform(f"{scope}.semantic.conv.bias", (d_v,), cfg.k * d_v)
            self.W_Q = store.uniform(f"{scope}.semantic.W_Q", (d_v, cfg.d_q), d_v)
        if exploratory:
            self.Q_rnd: Parameter = store.uniform(f"{scope}.exploratory.Q_rnd", (cfg.T_r, cfg.d_q), cfg.d_q)
        self.blocks = [_Block(store, f"{scope}.layer{i}", cfg, d_v) for i in range(cfg.n_layers)]
        self.ln_out = LayerNorm(store, f"{scope}.ln_out", cfg.d_q)
        self.out_proj = Linear(store, f"{scope}.out_proj", cfg.d_q, cfg.d_llm)
        self._attention: dict[str, list[np.ndarray]] = {}

    def semantic_queries(self, h_txt: np.ndarray, txt_len: np.ndarray):
        """``(N, Lmax, d_v)`` right-padded text tokens -> ``(Q_txt, mask)``."""
        h_tilde = downsample_text(Tensor(h_txt), self.conv_w, self.conv_b, self.cfg.k, self.cfg.s)
        q_txt = project_semantic_queries(h_tilde, self.W_Q)
        t_g = np.array([n_semantic_slots(int(n), self.cfg.s) for n in txt_len])
        mask = np.arange(q_txt.shape[1])[None, :] < t_g[:, None]
        return q_txt, mask

    def forward(self, h_img: np.ndarray, h_txt: np.ndarray | None = None,
                txt_len: np.ndarray | None = None, item_ids=None,
                record: bool = False) -> StreamEmbeddings:
        n = h_img.shape[0]
        parts, valid = [], []
        t_gmax = 0
        mask = None
        if self.semantic:
            q_txt, mask = self.semantic_queries(h_txt, txt_len)
            t_gmax = q_txt.shape[1]
            parts.append(q_txt)
            valid.append(mask)
        if self.exploratory:
            parts.append(self.Q_rnd + np.zeros((n, self.cfg.T_r, self.cfg.d_q)))
            valid.append(np.ones((n, self.cfg.T_r), dtype=bool))
        x = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        all_valid = np.concatenate(valid, axis=1)
        query_bias = None if all_valid.all() else key_mask_bias(all_valid)
        img = Tensor(h_img)
        maps = []
        for i, block in enumerate(self.blocks):
            x, weights = block(x, img, query_bias)
            if not np.all(np.isfinite(x.data)):
                raise NumericError(f"non-finite activations in connector layer {i}")
            maps.append(weights)
        e = self.out_proj(self.ln_out(x))
        if record and item_ids is not None:
            for row, iid in enumerate(item_ids):
                self._attention[iid] = [m[row][:, all_valid[row]] for m in maps]
        e_txt = e[:, :t_gmax] if self.semantic else None
        e_rnd = e[:, t_gmax:] if self.exploratory else None
        return StreamEmbeddings(e_txt, e_rnd, mask)

    def export_attention(self, item_id: str) -> dict:
        """Per-layer per-head cross-attention plus the head-averaged last-layer maps.

        Returns ``layers`` (list of ``(heads, T_q, L_v)``), ``semantic_mean``
        (``L_v``, averaged over heads and semantic queries) and ``exploratory``
        (``(T_r, L_v)``, averaged over heads).
        """
        if item_id not in self._attention:
            raise StateError(f"no recorded forward pass for item {item_id!r}")
        layers = self._attention[item_id]
        last = layers[-1].mean(axis=0) if layers else None
        t_r = self.cfg.T_r if self.exploratory else 0
        out = {"layers": layers, "semantic_mean": None, "exploratory": None}
        if last is not None:
            n_sem = last.shape[0] - t_r
            if self.semantic and n_sem > 0:
                out["semantic_mean"] = last[:n_sem].mean(axis=0)
            if self.exploratory:
                out["exploratory"] = last[n_sem:]
        return out
