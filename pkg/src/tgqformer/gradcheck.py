"""Central finite-difference gradient checks.

The checker only ever calls the loss closure with perturbed parameter
values, so it is independent of the reverse-mode path it verifies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream
from .tensor import Parameter, backward


@dataclass
class GroupReport:
    group: str
    n_checked: int
    max_abs_err: float
    max_rel_err: float


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs discrepancy scaled by the largest numeric gradient in the group."""
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-10)
    return float(np.max(np.abs(analytic - numeric))) / scale


def numeric_grad(loss_fn, param: Parameter, coords, h: float = 1e-5) -> np.ndarray:
    flat = param.data.reshape(-1)
    out = np.empty(len(coords))
    for n, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss_fn().data)
        flat[i] = orig - h
        down = float(loss_fn().data)
        flat[i] = orig
        out[n] = (up - down) / (2.0 * h)
    return out


def check(loss_fn, params: list[Parameter], group_of, *, h: float = 1e-5,
          max_coords: int = 12, seed: int = 0) -> list[GroupReport]:
    """Compare analytic and numeric gradients, grouped by ``group_of(name)``.

    Up to ``max_coords`` coordinates per parameter tensor are sampled.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss, params)
    analytic = {p.name: p.grad.reshape(-1).copy() for p in params}
    found: dict[str, tuple[list, list]] = {}
    for p in params:
        size = p.data.size
        if size <= max_coords:
            coords = np.arange(size)
        else:
            coords = np.sort(stream(seed, "gradcheck", p.name).choice(size, max_coords, replace=False))
        num = numeric_grad(loss_fn, p, coords, h)
        a, n = found.setdefault(group_of(p.name), ([], []))
        a.append(analytic[p.name][coords])
        n.append(num)
    reports = []
    for group in sorted(found):
        a = np.concatenate(found[group][0])
        n = np.concatenate(found[group][1])
        reports.append(GroupReport(group, len(a), float(np.max(np.abs(a - n))), relative_error(a, n)))
    return reports


SCOPES = ("all", "hqc", "gating", "regularizer", "fusion")
_SCOPE_PREFIX = {"hqc": ("hqc.",), "gating": ("gate.",), "fusion": ("fusion.",)}


def tiny_setup(seed: int = 0):
    """A small variant-(e) model and a seeded batch of two (query, target) pairs."""
    from .corpus import SynthConfig, synth_corpus
    from .encoders import EncoderConfig, SyntheticEncoder
    from .hqc import HqcConfig
    from .model import ItemBatch, ModelConfig, TGQModel

    enc_cfg = EncoderConfig(d_v=8, L_v=4, patch=2, seed=seed)
    corpus = synth_corpus(SynthConfig(n_items=4, group_size=2, n_cats=2, n_brands=2, seed=seed), enc_cfg)
    enc = SyntheticEncoder(enc_cfg)
    cfg = ModelConfig(d_v=8, L_v=4, hqc=HqcConfig(k=3, s=2, T_r=2, d_q=8, d_llm=8, n_layers=1, n_heads=2),
                      gate_hidden=8, fusion_layers=1, fusion_heads=2, d_out=8, vocab_size=64,
                      variant="e", seed=seed)
    model = TGQModel(cfg)
    for name in model.store.names():
        p = model.store.params[name]
        p.data += 0.2 * stream(seed, "perturb", name).standard_normal(p.data.shape)
    recs = corpus.by_id()
    first = {}
    for rec in corpus.items:
        first.setdefault(rec.factor, rec.item_id)
    queries = sorted(first.values())
    targets = [recs[q].related[0] for q in queries]

    def batch(ids):
        return ItemBatch.from_encoded([enc.encode_item(recs[i], corpus.images[i]) for i in ids],
                                      [model.prompt_ids(recs[i]) for i in ids])

    return model, batch(queries), batch(targets)


def run_scope(scope: str = "all", seed: int = 0, max_coords: int = 12, h: float = 1e-5) -> list[GroupReport]:
    """Finite-difference check of the joint loss restricted to one parameter scope."""
    from .errors import ConfigurationError
    from .model import param_group
    from .regularizer import redundancy_loss
    from .train import TrainConfig, joint_loss

    if scope not in SCOPES:
        raise ConfigurationError(f"unknown scope {scope!r}; expected one of {', '.join(SCOPES)}")
    reports: list[GroupReport] = []
    if scope in ("all", "regularizer"):
        rng = stream(seed, "gradcheck-rr")
        s_txt = Parameter(rng.standard_normal((6, 5)), name="S_txt")
        s_rnd = Parameter(rng.standard_normal((6, 5)) + 0.5 * s_txt.data, name="S_rnd")
        reports += check(lambda: redundancy_loss(s_txt, s_rnd), [s_txt, s_rnd],
                         lambda n: "rr_inputs", h=h, max_coords=max_coords, seed=seed)
    if scope == "regularizer":
        return reports
    model, q, t = tiny_setup(seed)
    cfg = TrainConfig(batch_pairs=2)
    prefixes = _SCOPE_PREFIX.get(scope, ("",))
    params = [p for p in model.params if p.name.startswith(prefixes)]
    reports += check(lambda: joint_loss(model, q, t, cfg).total, params, param_group,
                     h=h, max_coords=max_coords, seed=seed)
    return reports
