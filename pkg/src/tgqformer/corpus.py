"""Item records, pair construction and the planted synthetic corpus."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import EncoderConfig, SyntheticEncoder
from .errors import ConfigurationError, ContractError
from .rng import stream

log = logging.getLogger(__name__)


@dataclass
class ItemRecord:
    item_id: str
    title: str
    brand: str
    categories: tuple[str, str, str]
    image_ref: str | None = None
    feature_ref: str | None = None
    related: list[str] = field(default_factory=list)
    factor: int | None = None

    def validate(self) -> None:
        if not self.title.strip():
            raise ContractError(f"{self.item_id}: empty title")
        if len(self.categories) != 3:
            raise ContractError(f"{self.item_id}: categories must have 3 levels")
        if (self.image_ref is None) == (self.feature_ref is None):
            raise ContractError(f"{self.item_id}: exactly one of image_ref/feature_ref required")

    def to_json(self) -> str:
        d = asdict(self)
        d["categories"] = list(self.categories)
        if d["factor"] is None:
            del d["factor"]
        for key in ("image_ref", "feature_ref"):
            if d[key] is None:
                del d[key]
        return json.dumps(d, sort_keys=True, ensure_ascii=False)


@dataclass
class PairSet:
    pairs: list[tuple[str, str]]
    seed: int
    cap: int | None = None
    shortfall: bool = False

    def __len__(self):
        return len(self.pairs)

    def ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for q, t in self.pairs:
            seen.setdefault(q)
            seen.setdefault(t)
        return list(seen)


def parse_categories(raw_path) -> tuple[str, str, str]:
    """Truncate a category path to 3 levels, padding short paths with the last level."""
    levels = [str(c) for c in raw_path]
    if not levels:
        raise ContractError("empty category path")
    levels = levels[:3]
    while len(levels) < 3:
        levels.append(levels[-1])
    return tuple(levels)


def record_from_dict(d: dict, base: Path | None = None) -> ItemRecord:
    cats = d.get("categories") or []
    if cats and isinstance(cats[0], list):
        cats = cats[0]
    refs = {}
    for key in ("image_ref", "feature_ref"):
        val = d.get(key)
        if val and base is not None and not Path(val).is_absolute():
            val = str(base / val)
        refs[key] = val or None
    return ItemRecord(
        item_id=str(d["item_id"]),
        title=str(d.get("title") or ""),
        brand=str(d.get("brand") or ""),
        categories=parse_categories(cats),
        related=[str(r) for r in d.get("related") or []],
        factor=d.get("factor"),
        **refs,
    )


def load_items(path, check_files: bool = True) -> list[ItemRecord]:
    """Read an item corpus (one JSON object per line), dropping invalid records."""
    path = Path(path)
    items = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = record_from_dict(json.loads(line), path.parent)
            rec.validate()
            ref = rec.image_ref or rec.feature_ref
            if check_files and not Path(ref).exists():
                raise ContractError(f"{rec.item_id}: missing file {ref}")
        except (ContractError, KeyError, json.JSONDecodeError) as exc:
            log.warning("dropping record on line %d: %s", n, exc)
            continue
        items.append(rec)
    return items


def save_items(path, items: list[ItemRecord], relative_to: Path | None = None) -> None:
    path = Path(path)
    lines = []
    for rec in items:
        if relative_to is not None:
            rec = _relativize(rec, relative_to)
        lines.append(rec.to_json())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _relativize(rec: ItemRecord, base: Path) -> ItemRecord:
    out = ItemRecord(**{**asdict(rec), "categories": tuple(rec.categories)})
    for key in ("image_ref", "feature_ref"):
        val = getattr(out, key)
        if val and Path(val).is_absolute():
            setattr(out, key, str(Path(val).relative_to(base)))
    return out


def save_pairs(path, pairs: PairSet) -> None:
    Path(path).write_text("".join(f"{q}\t{t}\n" for q, t in pairs.pairs), encoding="utf-8")


def load_pairs(path) -> PairSet:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            q, t = line.split("\t")[:2]
            pairs.append((q, t))
    return PairSet(pairs, seed=-1)


def save_blocklist(path, ids) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in sorted(ids)), encoding="utf-8")


def load_blocklist(path) -> set[str]:
    return {ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()}


def _shuffled(seq: list, seed: int) -> list:
    order = np.random.default_rng(seed).permutation(len(seq))
    return [seq[i] for i in order]


def build_pairs(items: list[ItemRecord], blocklist=frozenset(), cap: int | None = None,
                seed: int = 42) -> PairSet:
    """Directed (item, related) training pairs, blocklist-filtered, shuffled and capped."""
    blocked = set(blocklist)
    valid = {it.item_id for it in items if it.item_id not in blocked}
    pairs = [(it.item_id, j) for it in items if it.item_id in valid
             for j in it.related if j in valid and j != it.item_id]
    pairs = _shuffled(pairs, seed)
    if cap is not None:
        pairs = pairs[:cap]
    return PairSet(pairs, seed, cap)


def sample_test_pairs(items: list[ItemRecord], n_pairs: int, seed: int = 42) -> tuple[PairSet, set[str]]:
    """One (query, first valid related target) pair per shuffled query until ``n_pairs``."""
    if n_pairs < 1:
        raise ConfigurationError("n_pairs must be >= 1")
    by_id = {it.item_id: it for it in items}
    pairs = []
    for qid in _shuffled(list(by_id), seed):
        target = next((j for j in by_id[qid].related if j in by_id and j != qid), None)
        if target is None:
            continue
        pairs.append((qid, target))
        if len(pairs) == n_pairs:
            break
    ps = PairSet(pairs, seed, n_pairs, shortfall=len(pairs) < n_pairs)
    if ps.shortfall:
        log.warning("only %d of %d test pairs obtainable", len(pairs), n_pairs)
    return ps, set(ps.ids())


# ------------------------------------------------------------ synthetic corpus


@dataclass(frozen=True)
class SynthConfig:
    n_items: int = 200
    n_brands: int = 4
    n_cats: int = 4
    planted_overlap: float = 1.0
    seed: int = 42
    group_size: int = 4
    fine_per_factor: int = 4
    title_fine_prob: float = 0.3
    filler_vocab: int = 300
    clutter: bool = True
    style_cells: int = 2

    def __post_init__(self):
        if self.n_items < 3:
            raise ConfigurationError("n_items must be >= 3")
        if not 0.0 <= self.planted_overlap <= 1.0:
            raise ConfigurationError("planted_overlap must lie in [0, 1]")
        if self.style_cells < 0:
            raise ConfigurationError("style_cells must be >= 0")


@dataclass
class SynthCorpus:
    items: list[ItemRecord]
    images: dict[str, np.ndarray]
    config: SynthConfig

    def by_id(self) -> dict[str, ItemRecord]:
        return {it.item_id: it for it in self.items}


def category_path(c: int) -> tuple[str, str, str]:
    return (f"dept{c // 4}", f"grp{c // 2}", f"cat{c}")


def fine_token(factor: int, j: int) -> str:
    return f"f{factor}x{j}"


def concept_vector(enc: SyntheticEncoder, cat: int, factor: int, j: int) -> np.ndarray:
    v = 0.8 * enc.token_embedding(f"cat{cat}") + enc.token_embedding(fine_token(factor, j))
    return v / np.linalg.norm(v)


def style_vector(enc: SyntheticEncoder, factor: int) -> np.ndarray:
    """Visual-only product detail: a shared marker plus a factor code no title ever names."""
    v = 0.8 * enc.token_embedding("style") + enc.token_embedding(f"s{factor}")
    return v / np.linalg.norm(v)


def synth_corpus(cfg: SynthConfig, enc_cfg: EncoderConfig = EncoderConfig()) -> SynthCorpus:
    """Planted corpus: a latent product factor drives titles, images and relatedness.

    Items of one factor share category, brand and fine concepts and are related
    to each other in both directions.  Each image shows the product's concepts
    on a 2x2 patch block, a co-displayed item from another category on a second
    block (clutter), a few single-cell style marks that encode the product but
    never appear in titles, and white background elsewhere.
    """
    enc = SyntheticEncoder(enc_cfg)
    g = enc_cfg.grid
    n_factors = max(cfg.n_items // cfg.group_size, 1)
    rng = stream(cfg.seed, "corpus")
    f_cat = rng.integers(0, cfg.n_cats, n_factors)
    f_brand = rng.integers(0, cfg.n_brands, n_factors)
    factor_of = np.arange(cfg.n_items) % n_factors
    factor_of = factor_of[rng.permutation(cfg.n_items)]
    width = len(str(cfg.n_items - 1))
    ids = [f"item{n:0{width}d}" for n in range(cfg.n_items)]
    members: dict[int, list[str]] = {}
    for iid, f in zip(ids, factor_of):
        members.setdefault(int(f), []).append(iid)

    block = min(2, g)
    corners = [(r, c) for r in range(g - block + 1) for c in range(g - block + 1)]
    items, images = [], {}
    for iid, f in zip(ids, factor_of):
        f = int(f)
        irng = stream(cfg.seed, "item", iid)
        cat = int(f_cat[f])
        brand = f"brand{int(f_brand[f])}"
        title = [f"cat{cat}"]
        title += [fine_token(f, j) for j in range(cfg.fine_per_factor)
                  if irng.random() < cfg.title_fine_prob]
        title += [f"w{int(w)}" for w in irng.integers(0, cfg.filler_vocab, irng.integers(2, 6))]
        contents = np.full((enc_cfg.L_v, enc_cfg.d_v), np.nan)
        r0, c0 = corners[irng.integers(len(corners))]
        cells = [(r0 + dr) * g + c0 + dc for dr in range(block) for dc in range(block)]
        p = cfg.planted_overlap
        for j, cell in enumerate(cells):
            noise = irng.standard_normal(enc_cfg.d_v)
            noise /= np.linalg.norm(noise)
            vec = np.sqrt(p) * concept_vector(enc, cat, f, j % cfg.fine_per_factor) + np.sqrt(1 - p) * noise
            contents[cell] = vec
        if cfg.clutter:
            others = [k for k in range(n_factors) if f_cat[k] != cat] or [k for k in range(n_factors) if k != f]
            if others:
                other = others[irng.integers(len(others))]
                free = [(r, c) for (r, c) in corners
                        if not {(r + dr) * g + c + dc for dr in range(block) for dc in range(block)} & set(cells)]
                if free:
                    r1, c1 = free[irng.integers(len(free))]
                    for j, (dr, dc) in enumerate([(a, b) for a in range(block) for b in range(block)]):
                        contents[(r1 + dr) * g + c1 + dc] = concept_vector(
                            enc, int(f_cat[other]), other, j % cfg.fine_per_factor)
        free = [c for c in range(enc_cfg.L_v) if np.isnan(contents[c, 0])]
        for cell in sorted(irng.choice(free, min(cfg.style_cells, len(free)), replace=False)):
            noise = irng.standard_normal(enc_cfg.d_v)
            noise /= np.linalg.norm(noise)
            contents[cell] = np.sqrt(p) * style_vector(enc, f) + np.sqrt(1 - p) * noise
        images[iid] = enc.render(contents)
        related = [j for j in members[f] if j != iid]
        items.append(ItemRecord(
            item_id=iid, title=" ".join(title), brand=brand, categories=category_path(cat),
            image_ref=f"images/{iid}.ppm", related=related, factor=f))
    return SynthCorpus(items, images, cfg)
