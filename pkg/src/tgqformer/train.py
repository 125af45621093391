"""Contrastive objective, optimiser and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .blob import load_checkpoint, save_checkpoint
from .encoders import EncodedItem
from .errors import ConfigurationError, ContractError, NumericError
from .model import ItemBatch, ModelConfig, TGQModel
from .regularizer import redundancy_loss
from .rng import stream
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.07
    lambda_rr: float = 1.0
    lr: float = 3e-5
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_ratio: float = 0.1
    batch_pairs: int = 32
    epochs: int = 3
    seed: int = 42
    variant: str = "e"
    max_steps: int | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.batch_pairs < 2:
            raise ConfigurationError("batch_pairs must be >= 2 for in-batch negatives")


def info_nce(z_q, z_t, tau: float = 0.07) -> Tensor:
    """Mean InfoNCE over queries; targets of the whole batch form the denominator."""
    z_q, z_t = T.as_tensor(z_q), T.as_tensor(z_t)
    b = z_q.shape[0]
    if b < 2:
        raise ContractError("info_nce needs at least 2 pairs for in-batch negatives")
    if z_t.shape != z_q.shape:
        raise ContractError(f"query/target shapes differ: {z_q.shape} vs {z_t.shape}")
    sims = T.matmul(T.l2_normalize(z_q), T.transpose(T.l2_normalize(z_t))) * (1.0 / tau)
    logp = T.log_softmax(sims, axis=1)
    idx = np.arange(b)
    return -T.mean(logp[(idx, idx)])


@dataclass
class LossParts:
    total: Tensor
    rec: float
    rr: float
    diagnostics: dict = field(default_factory=dict)


def joint_loss(model: TGQModel, queries: ItemBatch, targets: ItemBatch, cfg: TrainConfig) -> LossParts:
    """``L_rec + lambda_rr * L_rr``; the regulariser only runs for the full variant."""
    both = _stack(queries, targets)
    res = model.forward(both)
    b = len(queries)
    rec = info_nce(res.z[:b], res.z[b:], cfg.tau)
    total = rec
    rr_val = 0.0
    if model.variant.rr and cfg.lambda_rr != 0.0:
        rr = redundancy_loss(res.S_txt, res.S_rnd)
        rr_val = float(rr.data)
        total = rec + rr * cfg.lambda_rr
    diag = {}
    if res.modulated.beta_txt is not None:
        from .gating import diagnostics
        diag = diagnostics(res.modulated, res.gate_inputs)
    return LossParts(total, float(rec.data), rr_val, diag)


def _stack(a: ItemBatch, b: ItemBatch) -> ItemBatch:
    lmax = max(a.h_txt.shape[1], b.h_txt.shape[1])

    def pad(x):
        return np.pad(x, ((0, 0), (0, lmax - x.shape[1]), (0, 0)))

    return ItemBatch(a.item_ids + b.item_ids,
                     np.concatenate([a.h_img, b.h_img]),
                     np.concatenate([a.f_img, b.f_img]),
                     np.concatenate([pad(a.h_txt), pad(b.h_txt)]),
                     np.concatenate([a.txt_len, b.txt_len]),
                     np.concatenate([a.f_title, b.f_title]),
                     a.prompts + b.prompts)


class AdamW:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if self.wd:
                p.data -= lr * self.wd * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lr_at(step: int, total: int, peak: float, warmup_ratio: float = 0.1) -> float:
    """Linear warm-up over the first ``warmup_ratio`` of steps, then cosine decay to 0."""
    warm = max(int(math.ceil(warmup_ratio * total)), 1)
    if step < warm:
        return peak * (step + 1) / warm
    progress = (step - warm) / max(total - warm, 1)
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


class PairData:
    """Encoded items plus prompt ids, addressable by item id."""

    def __init__(self, encoded: dict[str, EncodedItem], records: dict, model: TGQModel):
        self.encoded = encoded
        self.prompts = {iid: model.prompt_ids(records[iid]) for iid in encoded}

    def batch(self, ids: list[str]) -> ItemBatch:
        return ItemBatch.from_encoded([self.encoded[i] for i in ids], [self.prompts[i] for i in ids])


def save_model(model: TGQModel, directory, extra: dict | None = None) -> Path:
    meta = {"model": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    return save_checkpoint(directory, model.store.state(), meta)


def load_model(directory) -> TGQModel:
    from .hqc import HqcConfig

    params, meta = load_checkpoint(directory)
    mc = dict(meta["model"])
    mc["hqc"] = HqcConfig(**mc["hqc"])
    model = TGQModel(ModelConfig(**mc))
    model.store.load(params)
    return model


def train(model: TGQModel, data: PairData, pairs: list[tuple[str, str]], cfg: TrainConfig,
          out_dir=None, on_step=None) -> list[dict]:
    """Mini-batch training; returns the per-step metric log."""
    if not pairs and cfg.epochs > 0:
        raise ContractError("no training pairs")
    out_dir = Path(out_dir) if out_dir is not None else None
    n_batches = len(pairs) // cfg.batch_pairs
    if cfg.epochs > 0 and n_batches == 0:
        raise ContractError(f"{len(pairs)} pairs cannot fill one batch of {cfg.batch_pairs}")
    total = cfg.epochs * n_batches
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    opt = AdamW(model.params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    metrics: list[dict] = []
    good_state = model.store.state()
    step = 0
    if out_dir is not None:
        save_model(model, out_dir / "checkpoint", {"train": asdict(cfg), "step": 0})
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "epoch", epoch).permutation(len(pairs))
        for bi in range(n_batches):
            if step >= total:
                break
            chunk = [pairs[i] for i in order[bi * cfg.batch_pairs:(bi + 1) * cfg.batch_pairs]]
            q = data.batch([p[0] for p in chunk])
            t = data.batch([p[1] for p in chunk])
            model.store.zero_grad()
            parts = joint_loss(model, q, t, cfg)
            loss_val = float(parts.total.data)
            if not math.isfinite(loss_val):
                model.store.load(good_state)
                if out_dir is not None:
                    save_model(model, out_dir / "checkpoint", {"train": asdict(cfg), "step": step, "diverged": True})
                raise NumericError(f"loss diverged at step {step}; restored last good parameters")
            T.backward(parts.total, model.params)
            lr = lr_at(step, total, cfg.lr, cfg.warmup_ratio)
            opt.step(lr)
            row = {"step": step, "L": loss_val, "L_rec": parts.rec, "L_rr": parts.rr, "lr": lr}
            row.update(parts.diagnostics)
            metrics.append(row)
            if on_step is not None:
                on_step(row)
            step += 1
        good_state = model.store.state()
        if out_dir is not None:
            save_model(model, out_dir / "checkpoint", {"train": asdict(cfg), "step": step, "epoch": epoch + 1})
    if out_dir is not None:
        write_metrics(out_dir / "metrics.csv", metrics)
    return metrics


def write_metrics(path, metrics: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["step", "L", "L_rec", "L_rr", "lr"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in metrics:
            w.writerow([row["step"]] + [repr(float(row[c])) for c in cols[1:]])
