"""End-to-end desk experiment: corpus, split, training and evaluation."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import (
    PairSet, SynthConfig, SynthCorpus, build_pairs, concept_vector, load_blocklist, load_items, load_pairs,
    sample_test_pairs, save_blocklist, save_items, save_pairs, style_vector, synth_corpus,
)
from .image import read_ppm, write_ppm
from .encoders import EncodedItem, EncoderConfig, SyntheticEncoder
from .model import ItemBatch, ModelConfig, TGQModel
from .noise import severity, token_corrupt
from .retrieval import DEFAULT_KS, EvalPool, HitReport, evaluate
from .rng import stream
from .train import PairData, TrainConfig, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeskConfig:
    corpus: SynthConfig = field(default_factory=SynthConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3, batch_pairs=32, epochs=6))
    n_test_pairs: int = 300
    dirty_fraction: float = 0.0
    dirty_severity: str = "medium"
    ks: tuple[int, ...] = DEFAULT_KS


@dataclass
class Prepared:
    cfg: DeskConfig
    corpus: SynthCorpus
    encoder: SyntheticEncoder
    clean: dict[str, EncodedItem]
    encoded: dict[str, EncodedItem]
    test_pairs: list[tuple[str, str]]
    test_ids: list[str]
    train_pairs: list[tuple[str, str]]
    dirty: set[str]

    @property
    def records(self):
        return self.corpus.by_id()


def factor_basis(corpus: SynthCorpus, encoder: SyntheticEncoder) -> dict[str, np.ndarray]:
    """Planted concept vectors of each item's product (rows)."""
    out = {}
    for rec in corpus.items:
        if rec.factor is None:
            continue
        cat = int(rec.categories[2][3:])
        rows = [concept_vector(encoder, cat, rec.factor, j) for j in range(corpus.config.fine_per_factor)]
        if corpus.config.style_cells:
            rows.append(style_vector(encoder, rec.factor))
        out[rec.item_id] = np.stack(rows)
    return out


def prepare(cfg: DeskConfig, source: "CorpusDir | None" = None) -> Prepared:
    """Encode a corpus and split it; synthesises one from ``cfg.corpus`` unless ``source`` is given."""
    corpus = synth_corpus(cfg.corpus, cfg.encoder) if source is None else source.corpus
    enc = SyntheticEncoder(cfg.encoder)
    clean = {rec.item_id: enc.encode_item(rec, corpus.images[rec.item_id]) for rec in corpus.items}
    dirty: set[str] = set()
    encoded = dict(clean)
    if cfg.dirty_fraction > 0:
        spec = severity(cfg.dirty_severity, cfg.corpus.seed)
        basis = factor_basis(corpus, enc)
        for iid in sorted(clean):
            if stream(cfg.corpus.seed, "dirty", iid).random() < cfg.dirty_fraction:
                dirty.add(iid)
                encoded[iid] = token_corrupt(clean[iid], spec, enc, basis.get(iid))
    if source is None:
        test, block = split_pairs(corpus.items, cfg.n_test_pairs, cfg.corpus.seed)
        train_pairs = build_pairs(corpus.items, block, None, cfg.corpus.seed)
    else:
        test, block, train_pairs = source.test, source.blocklist, source.train
    return Prepared(cfg, corpus, enc, clean, encoded, test.pairs, sorted(block), train_pairs.pairs, dirty)


def split_pairs(items, n_test_pairs: int, seed: int):
    return sample_test_pairs(items, max(1, min(n_test_pairs, len(items) // 2)), seed)


# ------------------------------------------------------------ corpus directories

ITEMS_FILE = "items.jsonl"
TRAIN_PAIRS = "train_pairs.tsv"
TEST_PAIRS = "test_pairs.tsv"
BLOCKLIST = "blocklist.txt"
CORPUS_CONFIG = "corpus_config.json"


@dataclass
class CorpusDir:
    root: Path
    corpus: SynthCorpus
    train: PairSet
    test: PairSet
    blocklist: set[str]
    encoder: EncoderConfig | None = None


def write_corpus_dir(root, corpus: SynthCorpus, n_test_pairs: int, enc_cfg: EncoderConfig) -> CorpusDir:
    """Items, PPM images, train/test pairs and the held-out blocklist."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for rec in corpus.items:
        write_ppm(root / rec.image_ref, corpus.images[rec.item_id])
    save_items(root / ITEMS_FILE, corpus.items)
    test, block = split_pairs(corpus.items, n_test_pairs, corpus.config.seed)
    train = build_pairs(corpus.items, block, None, corpus.config.seed)
    save_pairs(root / TRAIN_PAIRS, train)
    save_pairs(root / TEST_PAIRS, test)
    save_blocklist(root / BLOCKLIST, block)
    meta = {"corpus": asdict(corpus.config), "encoder": asdict(enc_cfg)}
    (root / CORPUS_CONFIG).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return CorpusDir(root, corpus, train, test, block)


def read_corpus_dir(root) -> CorpusDir:
    root = Path(root)
    for name in (ITEMS_FILE, TRAIN_PAIRS, TEST_PAIRS, BLOCKLIST):
        if not (root / name).exists():
            raise FileNotFoundError(f"corpus file missing: {root / name}")
    items = load_items(root / ITEMS_FILE)
    images = {rec.item_id: read_ppm(rec.image_ref) for rec in items if rec.image_ref}
    cfg = SynthConfig(n_items=max(len(items), 3))
    enc_cfg = None
    if (root / CORPUS_CONFIG).exists():
        meta = json.loads((root / CORPUS_CONFIG).read_text())
        cfg = SynthConfig(**meta["corpus"])
        enc_cfg = EncoderConfig(**meta["encoder"])
    return CorpusDir(root, SynthCorpus(items, images, cfg), load_pairs(root / TRAIN_PAIRS),
                     load_pairs(root / TEST_PAIRS), load_blocklist(root / BLOCKLIST), enc_cfg)


def with_source(cfg: DeskConfig, source: CorpusDir | None) -> DeskConfig:
    """Adopt the corpus and encoder settings recorded with a corpus directory."""
    if source is None:
        return cfg
    enc = source.encoder or cfg.encoder
    model = replace(cfg.model, d_v=enc.d_v, L_v=enc.L_v)
    return replace(cfg, corpus=source.corpus.config, encoder=enc, model=model)


def embed_items(model: TGQModel, encoded: dict[str, EncodedItem], records, ids=None):
    ids = sorted(encoded) if ids is None else list(ids)
    batch = ItemBatch.from_encoded([encoded[i] for i in ids], [model.prompt_ids(records[i]) for i in ids])
    return ids, model.embed(batch)


def evaluate_model(model: TGQModel, prep: Prepared, encoded=None) -> HitReport:
    encoded = prep.encoded if encoded is None else encoded
    ids, emb = embed_items(model, {i: encoded[i] for i in prep.test_ids}, prep.records)
    return evaluate(EvalPool(emb, ids), prep.test_pairs, prep.cfg.ks)


def run_variant(prep: Prepared, variant: str, seed: int | None = None, out_dir=None):
    """Train one ablation variant and return ``(model, report, metrics)``."""
    cfg = prep.cfg
    seed = cfg.train.seed if seed is None else seed
    model = TGQModel(replace(cfg.model, variant=variant, seed=seed))
    data = PairData({i: prep.encoded[i] for i in prep.encoded}, prep.records, model)
    tcfg = replace(cfg.train, variant=variant, seed=seed)
    metrics = train(model, data, prep.train_pairs, tcfg, out_dir)
    report = evaluate_model(model, prep)
    log.info("variant %s seed %d: H@10=%.4f", variant, seed, report.hit_rates.get(10, float("nan")))
    return model, report, metrics
