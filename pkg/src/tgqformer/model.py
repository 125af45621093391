"""The full item-embedding model and its ablation lattice."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .encoders import EncodedItem
from .errors import ConfigurationError
from .fusion import DEFAULT_TEMPLATE, FusionBackbone, HashVocab, PromptIds, encode_prompt
from .gating import GateNetworks, gate_inputs, masked_mean_rows, passthrough
from .hqc import HqcConfig, HybridQueryConnector
from .layers import ParamStore
from .tensor import Tensor


@dataclass(frozen=True)
class Variant:
    key: str
    label: str
    semantic: bool
    exploratory: bool
    gates: bool
    rr: bool


VARIANTS = {
    "a": Variant("a", "Q-Former (exploratory-only)", False, True, False, False),
    "b": Variant("b", "Metadata-anchored-only", True, False, False, False),
    "c": Variant("c", "Hybrid queries", True, True, False, False),
    "d": Variant("d", "+ Dual-gated modulation", True, True, True, False),
    "e": Variant("e", "+ Dual-gate + RR (full)", True, True, True, True),
}

SCOPES = {
    "semantic": "hqc.semantic.",
    "exploratory": "hqc.exploratory.",
    "gate": "gate.",
    "fusion": "fusion.",
}


def variant(key: str) -> Variant:
    try:
        return VARIANTS[key]
    except KeyError:
        raise ConfigurationError(f"unknown variant {key!r}; expected one of {sorted(VARIANTS)}") from None


@dataclass(frozen=True)
class ModelConfig:
    d_v: int = 32
    L_v: int = 16
    hqc: HqcConfig = field(default_factory=lambda: HqcConfig(d_q=32, d_llm=32, n_layers=2, n_heads=4))
    gate_hidden: int = 64
    fusion_layers: int = 2
    fusion_heads: int = 4
    d_out: int = 256
    vocab_size: int = 4096
    template: str = DEFAULT_TEMPLATE
    variant: str = "e"
    seed: int = 42

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hqc"] = asdict(self.hqc)
        return d


@dataclass
class ItemBatch:
    item_ids: list[str]
    h_img: np.ndarray
    f_img: np.ndarray
    h_txt: np.ndarray
    txt_len: np.ndarray
    f_title: np.ndarray
    prompts: list[PromptIds]

    def __len__(self):
        return len(self.item_ids)

    @classmethod
    def from_encoded(cls, items: list[EncodedItem], prompts: list[PromptIds]) -> "ItemBatch":
        n = len(items)
        lens = np.array([it.H_txt.shape[0] for it in items])
        d_v = items[0].H_txt.shape[1]
        h_txt = np.zeros((n, int(lens.max()), d_v))
        for i, it in enumerate(items):
            h_txt[i, :lens[i]] = it.H_txt.data
        return cls(
            item_ids=[it.item_id for it in items],
            h_img=np.stack([it.H_img.data for it in items]),
            f_img=np.stack([it.f_img_global.data for it in items]),
            h_txt=h_txt,
            txt_len=lens,
            f_title=np.stack([it.f_title_global.data for it in items]),
            prompts=list(prompts),
        )


@dataclass
class ForwardResult:
    z: Tensor
    streams: object
    modulated: object
    gate_inputs: object
    S_txt: Tensor | None
    S_rnd: Tensor | None


class TGQModel:
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        self.variant = variant(cfg.variant)
        self.store = ParamStore(cfg.seed)
        v = self.variant
        self.connector = HybridQueryConnector(self.store, cfg.hqc, cfg.d_v,
                                              semantic=v.semantic, exploratory=v.exploratory)
        self.gates = GateNetworks(self.store, cfg.d_v, cfg.hqc.d_llm, cfg.gate_hidden) if v.gates else None
        self.backbone = FusionBackbone(self.store, cfg.hqc.d_llm, cfg.fusion_layers, cfg.fusion_heads,
                                       cfg.d_out, cfg.vocab_size)
        self.vocab = HashVocab(cfg.vocab_size)

    @property
    def params(self) -> list:
        return [self.store.params[n] for n in self.store.names()]

    def prompt_ids(self, record) -> PromptIds:
        return encode_prompt(self.cfg.template, record, self.vocab)

    def forward(self, batch: ItemBatch, record: bool = False) -> ForwardResult:
        streams = self.connector.forward(batch.h_img, batch.h_txt, batch.txt_len,
                                         item_ids=batch.item_ids, record=record)
        inputs = None
        if self.gates is not None:
            inputs = gate_inputs(streams, batch.f_img, batch.f_title)
            mod = self.gates.modulate(streams, inputs)
        else:
            mod = passthrough(streams)
        s_txt = s_rnd = None
        if mod.E_txt_mod is not None and mod.E_rnd_mod is not None:
            s_txt = masked_mean_rows(mod.E_txt_mod, mod.txt_mask)
            s_rnd = T.mean(mod.E_rnd_mod, axis=1)
        fused, valid, _ = self.backbone.assemble(batch.prompts, mod)
        z = self.backbone.encode(fused, valid)
        return ForwardResult(z, streams, mod, inputs, s_txt, s_rnd)

    def embed(self, batch: ItemBatch, chunk: int = 256) -> np.ndarray:
        out = []
        with T.no_grad():
            for start in range(0, len(batch), chunk):
                sub = _slice_batch(batch, start, start + chunk)
                out.append(self.forward(sub).z.data)
        return np.concatenate(out, axis=0)

    def scope_names(self, scope: str) -> list[str]:
        prefix = SCOPES[scope]
        return [n for n in self.store.names() if n.startswith(prefix)]


def _slice_batch(batch: ItemBatch, a: int, b: int) -> ItemBatch:
    lens = batch.txt_len[a:b]
    return ItemBatch(batch.item_ids[a:b], batch.h_img[a:b], batch.f_img[a:b],
                     batch.h_txt[a:b, :int(lens.max())], lens, batch.f_title[a:b], batch.prompts[a:b])


def param_group(name: str) -> str:
    """Coarse parameter group used by gradient-check reports."""
    if name.startswith("hqc.semantic.W_Q"):
        return "W_Q"
    if name.startswith("hqc.semantic."):
        return "conv1d"
    if name.startswith("hqc.exploratory."):
        return "Q_rnd"
    if name.startswith("hqc."):
        return "hqc"
    if name.startswith("gate.txt."):
        return "gate_txt"
    if name.startswith("gate.rnd."):
        return "gate_rnd"
    if name.startswith("fusion.proj."):
        return "projection"
    return "fusion"
