"""Parameter store and the small set of layers the connector and backbone share."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .rng import stream
from .tensor import Parameter, Tensor

MASK_NEG = -1e30


class ParamStore:
    """Owns every Parameter of a model, keyed by unique dotted name.

    Initial values come from a per-name random stream, so they do not depend
    on construction order or on which other modules exist.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.params: dict[str, Parameter] = {}

    def _add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        p = Parameter(data, name)
        self.params[name] = p
        return p

    def uniform(self, name: str, shape, fan_in: int) -> Parameter:
        a = 1.0 / math.sqrt(fan_in)
        return self._add(name, stream(self.seed, "init", name).uniform(-a, a, size=shape))

    def zeros(self, name: str, shape) -> Parameter:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Parameter:
        return self._add(name, np.ones(shape))

    def names(self) -> list[str]:
        return sorted(self.params)

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            if missing or extra:
                raise ConfigurationError(
                    f"checkpoint mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, value in state.items():
            if name in self.params:
                p = self.params[name]
                if p.data.shape != tuple(value.shape):
                    raise DimensionError(f"{name}: checkpoint shape {value.shape} != {p.data.shape}")
                p.data[...] = value

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 bias: bool = True, zero_init: bool = False):
        if zero_init:
            self.weight = store.zeros(f"{name}.weight", (d_in, d_out))
        else:
            self.weight = store.uniform(f"{name}.weight", (d_in, d_out), d_in)
        self.bias = None
        if bias:
            self.bias = (store.zeros if zero_init else
                         lambda n, s: store.uniform(n, s, d_in))(f"{name}.bias", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.weight = store.ones(f"{name}.weight", (dim,))
        self.bias = store.zeros(f"{name}.bias", (dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, axis=-1, eps=self.eps)


class MLP:
    """Two-layer perceptron with GELU between the layers."""

    def __init__(self, store: ParamStore, name: str, d_in: int, hidden: int, d_out: int,
                 zero_last: bool = False):
        self.fc1 = Linear(store, f"{name}.fc1", d_in, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, d_out, zero_init=zero_last)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


def key_mask_bias(valid: np.ndarray) -> np.ndarray:
    """``(N, Tk)`` boolean validity -> additive ``(N, 1, 1, Tk)`` attention bias."""
    return np.where(valid, 0.0, MASK_NEG)[:, None, None, :]


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, d_model: int, n_heads: int,
                 d_kv: int | None = None):
        if d_model % n_heads:
            raise ConfigurationError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        d_kv = d_model if d_kv is None else d_kv
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(store, f"{name}.wq", d_model, d_model)
        self.wk = Linear(store, f"{name}.wk", d_kv, d_model)
        self.wv = Linear(store, f"{name}.wv", d_kv, d_model)
        self.wo = Linear(store, f"{name}.wo", d_model, d_model)

    def _heads(self, x: Tensor) -> Tensor:
        n, t, _ = x.shape
        return T.transpose(T.reshape(x, (n, t, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, kv: Tensor, mask_bias: np.ndarray | None = None):
        """Return ``(output, weights)``; weights are ``(N, heads, Tq, Tk)`` numpy."""
        q = self._heads(self.wq(x))
        k = self._heads(self.wk(kv))
        v = self._heads(self.wv(kv))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.d_head))
        weights = T.softmax(scores, axis=-1, mask=mask_bias)
        ctx = T.matmul(weights, v)
        n, _, t, _ = ctx.shape
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (n, t, self.n_heads * self.d_head))
        return self.wo(ctx), weights.data


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d_model: int, mult: int = 4):
        self.fc1 = Linear(store, f"{name}.fc1", d_model, mult * d_model)
        self.fc2 = Linear(store, f"{name}.fc2", mult * d_model, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))
