"""Flat ``section.key = value`` run configuration.

Sections map onto the dataclasses of the pipeline: ``corpus``, ``encoder``,
``hqc``, ``model``, ``train`` and ``desk``.  Values are Python literals;
anything that fails to parse as one is kept as a string.
"""
from __future__ import annotations

import ast
import dataclasses
from pathlib import Path

from .corpus import SynthConfig
from .encoders import EncoderConfig
from .errors import ConfigurationError
from .hqc import HqcConfig
from .model import ModelConfig
from .pipeline import DeskConfig
from .train import TrainConfig

SECTIONS = {
    "corpus": SynthConfig,
    "encoder": EncoderConfig,
    "hqc": HqcConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}
DESK_KEYS = ("n_test_pairs", "dirty_fraction", "dirty_severity", "ks")
# fields owned by another section or by the command line
_DERIVED = {("model", "hqc"), ("model", "d_v"), ("model", "L_v"), ("model", "variant"), ("model", "seed"),
            ("train", "variant")}


def parse_value(raw: str):
    raw = raw.strip()
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_text(text: str, source: str = "<config>") -> dict[str, object]:
    out: dict[str, object] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{n}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        check_key(key, f"{source}:{n}")
        out[key] = parse_value(value)
    return out


def load_config(path) -> dict[str, object]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_text(path.read_text(encoding="utf-8"), str(path))


def known_keys() -> list[str]:
    keys = [f"desk.{k}" for k in DESK_KEYS]
    for sec, cls in SECTIONS.items():
        keys += [f"{sec}.{f.name}" for f in dataclasses.fields(cls) if (sec, f.name) not in _DERIVED]
    return keys


def check_key(key: str, where: str = "config") -> None:
    if key not in known_keys():
        raise ConfigurationError(f"{where}: unknown config key {key!r}")


def _section(values: dict, name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}


def _coerce(cls, kw: dict) -> dict:
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for k, v in kw.items():
        t = str(types[k])
        if "float" in t and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        out[k] = v
    return out


def build_desk(values: dict | None = None) -> DeskConfig:
    """Assemble a :class:`DeskConfig` from flat keys on top of the defaults."""
    values = dict(values or {})
    for key in values:
        check_key(key)
    base = DeskConfig()
    try:
        corpus = dataclasses.replace(base.corpus, **_coerce(SynthConfig, _section(values, "corpus")))
        encoder = dataclasses.replace(base.encoder, **_coerce(EncoderConfig, _section(values, "encoder")))
        hqc = dataclasses.replace(base.model.hqc, **_coerce(HqcConfig, _section(values, "hqc")))
        model = dataclasses.replace(base.model, hqc=hqc, d_v=encoder.d_v, L_v=encoder.L_v,
                                    **_coerce(ModelConfig, _section(values, "model")))
        train = dataclasses.replace(base.train, **_coerce(TrainConfig, _section(values, "train")))
        desk = _section(values, "desk")
        if "ks" in desk:
            ks = desk["ks"]
            desk["ks"] = tuple(int(k) for k in (ks.split(",") if isinstance(ks, str) else ks))
        return dataclasses.replace(base, corpus=corpus, encoder=encoder, model=model, train=train, **desk)
    except TypeError as exc:
        raise ConfigurationError(f"bad config value: {exc}") from None


def flatten(desk: DeskConfig) -> dict[str, object]:
    """Inverse of :func:`build_desk`: every resolved key with its value."""
    out: dict[str, object] = {}
    for key in known_keys():
        sec, name = key.split(".", 1)
        if sec == "desk":
            out[key] = getattr(desk, name)
        elif sec == "hqc":
            out[key] = getattr(desk.model.hqc, name)
        else:
            out[key] = getattr(getattr(desk, sec), name)
    return out


def render(values: dict[str, object]) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in sorted(values.items()))
