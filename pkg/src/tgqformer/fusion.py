"""Prompt assembly, visual-token injection and the fusion backbone.

The backbone is a small trainable pre-norm transformer standing in for the
language model: it reads the tokenised metadata prompt with the calibrated
visual rows spliced in at the ``<IMG>`` placeholder and emits the hidden state
of the last position, projected and L2-normalised.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import sinusoid
from .errors import ConfigurationError, NumericError
from .gating import ModulatedStreams
from .layers import FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamStore, key_mask_bias
from .tensor import Tensor

IMG = "<IMG>"
DEFAULT_TEMPLATE = (
    "Product image: {'image': <IMG>}, Product metadata: {'brand': $b$, "
    "'category': $c1,c2,c3$, 'title': $t$}. Produce a single embedding for retrieval."
)
_PIECE_RE = re.compile(r"<IMG>|\w+|[^\w\s]", re.UNICODE)


def render_prompt(template: str, brand: str, categories, title: str) -> str:
    if IMG not in template:
        raise ConfigurationError(f"prompt template lacks the {IMG} placeholder")
    c1, c2, c3 = categories
    return (template.replace("$b$", brand)
            .replace("$c1,c2,c3$", f"{c1},{c2},{c3}")
            .replace("$t$", title))


def prompt_tokens(text: str) -> list[str]:
    return _PIECE_RE.findall(text)


class HashVocab:
    """Fixed-size vocabulary: token -> bucket by a stable digest."""

    def __init__(self, size: int = 4096):
        self.size = size
        self._cache: dict[str, int] = {}

    def __call__(self, token: str) -> int:
        idx = self._cache.get(token)
        if idx is None:
            idx = int.from_bytes(hashlib.md5(token.encode("utf-8")).digest()[:8], "little") % self.size
            self._cache[token] = idx
        return idx


@dataclass
class PromptIds:
    """Token ids before and after the single ``<IMG>`` placeholder."""

    prefix: np.ndarray
    suffix: np.ndarray

    @property
    def n_tokens(self) -> int:
        return len(self.prefix) + 1 + len(self.suffix)


def encode_prompt(template: str, record, vocab: HashVocab) -> PromptIds:
    toks = prompt_tokens(render_prompt(template, record.brand, record.categories, record.title))
    n_img = toks.count(IMG)
    if n_img != 1:
        raise ConfigurationError(f"rendered prompt has {n_img} {IMG} placeholders (need exactly 1)")
    cut = toks.index(IMG)
    ids = np.array([vocab(t) for t in toks], dtype=np.int64)
    return PromptIds(ids[:cut], ids[cut + 1:])


@dataclass
class PromptSequence:
    token_embeddings: Tensor
    placeholder: int
    fused: Tensor


class FusionBackbone:
    def __init__(self, store: ParamStore, d_llm: int, n_layers: int = 2, n_heads: int = 4,
                 d_out: int = 256, vocab_size: int = 4096, pos_scale: float = 0.1,
                 scope: str = "fusion"):
        self.d_llm = d_llm
        self.d_out = d_out
        self.pos_scale = pos_scale
        self.tok_embed = store.uniform(f"{scope}.tok_embed", (vocab_size, d_llm), d_llm)
        self.layers = []
        for i in range(n_layers):
            name = f"{scope}.layer{i}"
            self.layers.append((LayerNorm(store, f"{name}.ln_attn", d_llm),
                                MultiHeadAttention(store, f"{name}.attn", d_llm, n_heads),
                                LayerNorm(store, f"{name}.ln_ffn", d_llm),
                                FeedForward(store, f"{name}.ffn", d_llm)))
        self.ln_final = LayerNorm(store, f"{scope}.ln_final", d_llm)
        self.proj = Linear(store, f"{scope}.proj", d_llm, d_out)

    def assemble(self, prompts: list[PromptIds], mod: ModulatedStreams):
        """Splice visual rows into each prompt; left-pad so the last row is the summary.

        Returns ``(fused (N, F, d_llm), valid (N, F), lengths)``.
        """
        n = len(prompts)
        d = self.d_llm
        all_ids = np.concatenate([np.concatenate([p.prefix, p.suffix]) for p in prompts])
        pieces = [Tensor(np.zeros((1, d))), T.take(self.tok_embed, all_ids, axis=0)]
        offset = 1 + len(all_ids)
        txt_base = rnd_base = None
        t_g = np.zeros(n, dtype=int)
        t_gmax = 0
        if mod.E_txt_mod is not None:
            t_gmax = mod.E_txt_mod.shape[1]
            pieces.append(T.reshape(mod.E_txt_mod, (n * t_gmax, d)))
            txt_base = offset
            offset += n * t_gmax
            t_g = mod.txt_mask.sum(axis=1)
        t_r = 0
        if mod.E_rnd_mod is not None:
            t_r = mod.E_rnd_mod.shape[1]
            pieces.append(T.reshape(mod.E_rnd_mod, (n * t_r, d)))
            rnd_base = offset
        pool = T.concat(pieces, axis=0)
        rows = []
        cursor = 1
        for i, p in enumerate(prompts):
            pre = np.arange(cursor, cursor + len(p.prefix))
            cursor += len(p.prefix)
            suf = np.arange(cursor, cursor + len(p.suffix))
            cursor += len(p.suffix)
            vis = []
            if txt_base is not None:
                vis.append(txt_base + i * t_gmax + np.arange(t_g[i]))
            if rnd_base is not None:
                vis.append(rnd_base + i * t_r + np.arange(t_r))
            rows.append(np.concatenate([pre, *vis, suf]).astype(np.int64))
        lengths = np.array([len(r) for r in rows])
        width = int(lengths.max())
        index = np.zeros((n, width), dtype=np.int64)
        valid = np.zeros((n, width), dtype=bool)
        for i, r in enumerate(rows):
            index[i, width - len(r):] = r
            valid[i, width - len(r):] = True
        fused = T.take(pool, index, axis=0)
        return fused, valid, lengths

    def positions(self, valid: np.ndarray) -> np.ndarray:
        n, width = valid.shape
        table = sinusoid(width, self.d_llm) * self.pos_scale
        pe = np.zeros((n, width, self.d_llm))
        for i in range(n):
            m = int(valid[i].sum())
            pe[i, width - m:] = table[:m]
        return pe

    def encode(self, fused: Tensor, valid: np.ndarray) -> Tensor:
        """Run the transformer and return L2-normalised item embeddings ``(N, d_out)``."""
        x = fused + self.positions(valid)
        bias = None if valid.all() else key_mask_bias(valid)
        for i, (ln1, attn, ln2, ffn) in enumerate(self.layers):
            h = ln1(x)
            a, _ = attn(h, h, bias)
            x = x + a
            x = x + ffn(ln2(x))
            if not np.all(np.isfinite(x.data)):
                raise NumericError(f"non-finite hidden states in fusion layer {i}")
        last = self.ln_final(x[:, -1, :])
        return T.l2_normalize(self.proj(last), axis=-1)


def assemble_sequence(prompt: PromptIds, mod: ModulatedStreams, backbone: FusionBackbone,
                      row: int = 0) -> PromptSequence:
    """Single-item view of the injection: text rows plus fused sequence."""
    ids = np.concatenate([prompt.prefix, [0], prompt.suffix]).astype(np.int64)
    tok = T.take(backbone.tok_embed, ids, axis=0)
    one = ModulatedStreams(
        None if mod.E_txt_mod is None else mod.E_txt_mod[row:row + 1],
        None if mod.E_rnd_mod is None else mod.E_rnd_mod[row:row + 1],
        None, None,
        None if mod.txt_mask is None else mod.txt_mask[row:row + 1])
    fused, valid, _ = backbone.assemble([prompt], one)
    return PromptSequence(tok, len(prompt.prefix), fused[0])
