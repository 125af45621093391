"""``tgq`` command line: corpus generation, corruption, training, evaluation and checks.

Exit codes: 0 success; 1 other package error; 2 usage or configuration error;
3 dimension error; 4 contract violation; 5 numeric error (divergence, failed
gradient check); 6 state error; 7 unknown id; 10 file I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

IO_EXIT = 10
MANIFEST = "run_manifest.json"
log = logging.getLogger("tgq")


# ------------------------------------------------------------------ helpers


def _threads(args) -> int | None:
    value = args.threads if args.threads is not None else os.environ.get("TGQ_THREADS")
    if value is None:
        return None
    n = int(value)
    if n < 1:
        raise SystemExit("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    return n


def tree_hash(root, skip=(MANIFEST,)) -> str:
    """SHA-256 over relative paths and bytes of every file below ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.name not in skip):
        h.update(str(path.relative_to(root)).encode())
        h.update(b"\0")
        h.update(hashlib.sha256(path.read_bytes()).digest())
    return h.hexdigest()


def _input_hash(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        h.update(str(p.name).encode())
        h.update(bytes.fromhex(tree_hash(p)) if p.is_dir() else hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def write_manifest(out: Path, args, config: dict | None, seed, inputs=(), started: float | None = None) -> None:
    """Run manifest; the only file excluded from artifact hashes because it holds timestamps."""
    out.mkdir(parents=True, exist_ok=True)
    argv = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    data = {
        "command": args.command,
        "arguments": argv,
        "config_path": str(getattr(args, "config", None)) if getattr(args, "config", None) else None,
        "config": config,
        "seed": seed,
        "inputs_sha256": _input_hash(inputs),
        "started": started,
        "finished": time.time(),
    }
    (out / MANIFEST).write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def _resolve(args):
    """Config file values, then command-line ``--set`` and dedicated flags (flags win)."""
    from .config import build_desk, load_config, parse_value

    values = load_config(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = parse_value(v)
    for flag, key in (("epochs", "train.epochs"), ("lr", "train.lr"), ("batch_pairs", "train.batch_pairs"),
                      ("steps", "train.max_steps"), ("seed", "train.seed"), ("dirty_fraction", "desk.dirty_fraction")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    return build_desk(values)


def _flat(desk) -> dict:
    from .config import flatten

    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in flatten(desk).items()}


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"value must lie in [0, 1], got {v}")
    return v


def _severity_name(text: str) -> str:
    from .noise.pixels import SEVERITIES

    if text not in SEVERITIES:
        raise argparse.ArgumentTypeError(f"invalid severity {text!r} (choose from {', '.join(SEVERITIES)})")
    return text


def _load_model(ckpt: Path):
    from .train import load_model

    if not (ckpt / "manifest.json").exists() and (ckpt / "checkpoint" / "manifest.json").exists():
        ckpt = ckpt / "checkpoint"
    return load_model(ckpt), ckpt


def _encoder_cfg_for(model, corpus_root: Path):
    from .encoders import EncoderConfig

    meta = corpus_root / "corpus_config.json"
    if meta.exists():
        cfg = EncoderConfig(**json.loads(meta.read_text())["encoder"])
    else:
        cfg = EncoderConfig(d_v=model.cfg.d_v, L_v=model.cfg.L_v)
    if (cfg.d_v, cfg.L_v) != (model.cfg.d_v, model.cfg.L_v):
        from .errors import DimensionError

        raise DimensionError(f"corpus encoder (d_v={cfg.d_v}, L_v={cfg.L_v}) does not match checkpoint "
                             f"(d_v={model.cfg.d_v}, L_v={model.cfg.L_v})")
    return cfg


def _encode_corpus(records, images, enc_cfg, ids):
    from .encoders import IngestEncoder, SyntheticEncoder

    syn = SyntheticEncoder(enc_cfg)
    ing = IngestEncoder(replace(enc_cfg, mode="ingest"))
    out = {}
    for i in ids:
        rec = records[i]
        out[i] = syn.encode_item(rec, images[i]) if rec.image_ref else ing.encode_item(rec)
    return out


# ------------------------------------------------------------------ commands


def cmd_gen_corpus(args) -> int:
    from .config import build_desk
    from .corpus import synth_corpus
    from .pipeline import write_corpus_dir

    started = time.time()
    desk = build_desk({"corpus.n_items": args.items, "corpus.seed": args.seed,
                       "corpus.planted_overlap": args.planted_overlap})
    corpus = synth_corpus(desk.corpus, desk.encoder)
    n_test = args.test_pairs if args.test_pairs is not None else max(1, args.items // 6)
    out = write_corpus_dir(args.out, corpus, n_test, desk.encoder)
    write_manifest(args.out, args, {"corpus": asdict(desk.corpus), "test_pairs": n_test}, args.seed, (), started)
    print(f"wrote {len(corpus.items)} items, {len(out.train)} train pairs, {len(out.test)} test pairs to {args.out}")
    return 0


def cmd_corrupt(args) -> int:
    from .corpus import load_items
    from .image import read_ppm, write_ppm
    from .noise import corrupt, severity

    started = time.time()
    src: Path = args.input
    if not (src / "items.jsonl").exists():
        raise FileNotFoundError(f"corpus file missing: {src / 'items.jsonl'}")
    spec = severity(args.severity, args.seed)
    dest = args.out / args.severity
    items = load_items(src / "items.jsonl")
    image_paths = {Path(rec.image_ref).resolve(): rec.item_id for rec in items if rec.image_ref}
    ids = sorted(image_paths.values())
    images = {rec.item_id: read_ppm(rec.image_ref) for rec in items if rec.image_ref}
    donors = [images[i] for i in ids]
    position = {iid: n for n, iid in enumerate(ids)}
    for path in sorted(p for p in src.rglob("*") if p.is_file()):
        rel = path.relative_to(src)
        if rel.name == MANIFEST:
            continue
        target = dest / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        iid = image_paths.get(path.resolve())
        if iid is None:
            shutil.copyfile(path, target)
            continue
        img = corrupt(images[iid], spec, iid, donors, self_index=position[iid])
        if img is images[iid]:
            shutil.copyfile(path, target)
        else:
            write_ppm(target, img)
    write_manifest(dest, args, asdict(spec), args.seed, (src,), started)
    print(f"{args.severity}: corrupted view of {len(ids)} images in {dest}")
    return 0


def cmd_train(args) -> int:
    from .pipeline import prepare, read_corpus_dir, with_source
    from .plotting import plot_hit_curve
    from .retrieval import write_report
    from .pipeline import evaluate_model
    from .model import TGQModel
    from .train import PairData, train

    started = time.time()
    desk = _resolve(args)
    source = read_corpus_dir(args.corpus) if args.corpus else None
    desk = with_source(desk, source)
    prep = prepare(desk, source)
    seed = desk.train.seed
    model = TGQModel(replace(desk.model, variant=args.variant, seed=seed))
    data = PairData(prep.encoded, prep.records, model)
    tcfg = replace(desk.train, variant=args.variant)
    metrics = train(model, data, prep.train_pairs, tcfg, args.out,
                    on_step=lambda row: log.info("step %d L=%.4f", row["step"], row["L"]))
    report = evaluate_model(model, prep)
    write_report(args.out / "eval", report)
    plot_hit_curve(report.hit_rates, args.out / "eval" / "hit_rate.png", f"variant {args.variant}")
    write_manifest(args.out, args, _flat(desk), seed, (args.config, args.corpus), started)
    last = metrics[-1]["L"] if metrics else float("nan")
    print(f"variant {args.variant}: {len(metrics)} steps, final loss {last:.4f}")
    _print_table(report.hit_rates)
    return 0


def cmd_embed(args) -> int:
    from .pipeline import read_corpus_dir
    from .pipeline import embed_items
    from .retrieval import export_embeddings

    started = time.time()
    model, ckpt = _load_model(args.ckpt)
    source = read_corpus_dir(args.corpus)
    records = source.corpus.by_id()
    ids = sorted(records) if args.all else sorted(source.blocklist) or sorted(records)
    enc_cfg = _encoder_cfg_for(model, args.corpus)
    encoded = _encode_corpus(records, source.corpus.images, enc_cfg, ids)
    ids, emb = embed_items(model, encoded, records, ids)
    export_embeddings(args.out, ids, emb)
    write_manifest(args.out, args, model.cfg.to_dict(), model.cfg.seed, (ckpt, args.corpus), started)
    print(f"embedded {len(ids)} items into {args.out}")
    return 0


def _print_table(rates: dict[int, float]) -> None:
    print("K\tH@K")
    for k in sorted(rates):
        print(f"{k}\t{100 * rates[k]:.2f}")


def cmd_eval(args) -> int:
    from .corpus import load_pairs
    from .plotting import plot_hit_curve
    from .retrieval import evaluate, load_embeddings, write_report

    started = time.time()
    pool = load_embeddings(args.emb)
    pairs = load_pairs(args.pairs).pairs
    report = evaluate(pool, pairs, args.ks)
    out = args.out or args.emb / "eval"
    write_report(out, report)
    plot_hit_curve(report.hit_rates, out / "hit_rate.png")
    write_manifest(out, args, {"ks": list(args.ks)}, None, (args.emb, args.pairs), started)
    _print_table(report.hit_rates)
    return 0


def cmd_ablate(args) -> int:
    import csv

    import numpy as np

    from .model import VARIANTS
    from .pipeline import prepare, read_corpus_dir, run_variant, with_source
    from .plotting import plot_ablation

    started = time.time()
    desk = _resolve(args)
    source = read_corpus_dir(args.corpus) if args.corpus else None
    desk = with_source(desk, source)
    prep = prepare(desk, source)
    seeds = args.seeds or (desk.train.seed,)
    variants = args.variants or tuple(VARIANTS)
    args.out.mkdir(parents=True, exist_ok=True)
    runs = []
    for v in variants:
        for s in seeds:
            _, report, _ = run_variant(prep, v, s)
            runs.append((v, s, report.hit_rates))
            log.info("variant %s seed %d done", v, s)
    with (args.out / "ablation_runs.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "K", "hit_rate"])
        for v, s, rates in runs:
            for k in sorted(rates):
                w.writerow([v, s, k, f"{rates[k]:.6f}"])
    table = []
    for v in variants:
        rates = [r for vv, _, r in runs if vv == v]
        table.append((v, {k: float(np.mean([r[k] for r in rates])) for k in rates[0]}))
    cols = [k for k in (20, 50, 100) if k in table[0][1]]
    with (args.out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "label"] + [f"H@{k}" for k in cols])
        for v, mean in table:
            w.writerow([v, VARIANTS[v].label] + [f"{100 * mean[k]:.2f}" for k in cols])
    if cols:
        plot_ablation([(f"({v}) {VARIANTS[v].label}", m) for v, m in table], args.out / "ablation.png", cols)
    write_manifest(args.out, args, _flat(desk), list(seeds), (args.config, args.corpus), started)
    print("variant\t" + "\t".join(f"H@{k}" for k in cols))
    for v, mean in table:
        print(v + "\t" + "\t".join(f"{100 * mean[k]:.2f}" for k in cols))
    return 0


def cmd_robustness(args) -> int:
    from .noise import robustness_sweep, write_grid
    from .noise.sweep import corrupt_pool
    from .pipeline import embed_items, factor_basis, read_corpus_dir
    from .plotting import plot_robustness
    from .encoders import SyntheticEncoder

    started = time.time()
    model, ckpt = _load_model(args.ckpt)
    source = read_corpus_dir(args.corpus)
    records = source.corpus.by_id()
    ids = sorted(source.blocklist)
    enc_cfg = _encoder_cfg_for(model, args.corpus)
    encoder = SyntheticEncoder(enc_cfg)
    encoded = _encode_corpus(records, source.corpus.images, enc_cfg, ids)
    extra = {"mode": args.mode, "records": records, "images": source.corpus.images}
    if args.mode == "token":
        basis = factor_basis(source.corpus, encoder)
        extra["protect"] = {i: basis.get(i) for i in ids}
    grid = robustness_sweep(lambda view: embed_items(model, view, records), encoded, source.test.pairs,
                            encoder, severities=args.severities, seed=args.seed, ks=args.ks, **extra)
    write_grid(args.out / "robustness.csv", grid)
    plot_robustness({k: v.hit_rates for k, v in grid.items()}, args.out / "robustness.png",
                    [k for k in (10, 20, 50) if k in args.ks] or list(args.ks)[:1])
    write_manifest(args.out, args, {"severities": list(args.severities), "mode": args.mode},
                   args.seed, (ckpt, args.corpus), started)
    ks = sorted(args.ks)
    print("severity\t" + "\t".join(f"H@{k}" for k in ks))
    for name, rep in grid.items():
        print(name + "\t" + "\t".join(f"{100 * rep.hit_rates[k]:.2f}" for k in ks))
    return 0


def cmd_attn_dump(args) -> int:
    import numpy as np

    from .blob import write_blob
    from .image import write_pgm_heatmap
    from .model import ItemBatch
    from .pipeline import read_corpus_dir

    started = time.time()
    model, ckpt = _load_model(args.ckpt)
    if not args.items.exists():
        raise FileNotFoundError(f"item list not found: {args.items}")
    wanted = [ln.strip() for ln in args.items.read_text().splitlines() if ln.strip()]
    source = read_corpus_dir(args.corpus)
    records = source.corpus.by_id()
    from .errors import LookupFailure

    missing = [i for i in wanted if i not in records]
    if missing:
        raise LookupFailure(f"unknown item ids: {', '.join(missing)}")
    enc_cfg = _encoder_cfg_for(model, args.corpus)
    encoded = _encode_corpus(records, source.corpus.images, enc_cfg, wanted)
    batch = ItemBatch.from_encoded([encoded[i] for i in wanted], [model.prompt_ids(records[i]) for i in wanted])
    model.forward(batch, record=True)
    grid = enc_cfg.grid if enc_cfg.grid * enc_cfg.grid == model.cfg.L_v else None
    for iid in wanted:
        maps = model.connector.export_attention(iid)
        d = args.out / iid
        d.mkdir(parents=True, exist_ok=True)
        for n, layer in enumerate(maps["layers"]):
            write_blob(d / f"layer{n}.tgqt", layer)
        views = {}
        if maps["semantic_mean"] is not None:
            views["semantic_mean"] = maps["semantic_mean"]
        if maps["exploratory"] is not None:
            for j, row in enumerate(maps["exploratory"]):
                views[f"exploratory{j}"] = row
        for name, vec in views.items():
            write_blob(d / f"{name}.tgqt", np.asarray(vec))
            if grid is not None:
                heat = np.kron(np.asarray(vec).reshape(grid, grid), np.ones((enc_cfg.patch, enc_cfg.patch)))
                write_pgm_heatmap(d / f"{name}.ppm", heat)
    write_manifest(args.out, args, model.cfg.to_dict(), model.cfg.seed, (ckpt, args.items), started)
    print(f"attention maps for {len(wanted)} items in {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_scope

    started = time.time()
    reports = run_scope(args.scope, seed=args.seed, max_coords=args.max_coords)
    worst = max(r.max_rel_err for r in reports)
    print("group\tn\tmax_rel_err")
    for r in reports:
        print(f"{r.group}\t{r.n_checked}\t{r.max_rel_err:.3e}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        with (args.out / "gradcheck.csv").open("w") as fh:
            fh.write("group,n_checked,max_abs_err,max_rel_err\n")
            for r in reports:
                fh.write(f"{r.group},{r.n_checked},{r.max_abs_err:.6e},{r.max_rel_err:.6e}\n")
        write_manifest(args.out, args, {"scope": args.scope}, args.seed, (), started)
    ok = worst < args.tol
    print(f"{'PASS' if ok else 'FAIL'}: worst relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if ok else 5


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tgq", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="worker cap (falls back to TGQ_THREADS)")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp):
        sp.add_argument("--config", type=Path, help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--corpus", type=Path, help="corpus directory from gen-corpus (default: synthesise)")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-pairs", type=int)
        sp.add_argument("--steps", type=int, help="stop after this many optimiser steps")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dirty-fraction", type=_fraction)

    sp = sub.add_parser("gen-corpus", help="synthesise a planted corpus with pairs and blocklist")
    sp.add_argument("--items", type=int, default=200)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--planted-overlap", type=_fraction, default=1.0)
    sp.add_argument("--test-pairs", type=int, default=None)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("corrupt", help="write a corrupted mirror of a corpus under OUT/SEVERITY")
    sp.add_argument("--in", dest="input", type=Path, required=True)
    sp.add_argument("--severity", type=_severity_name, required=True)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_corrupt)

    sp = sub.add_parser("train", help="train one ablation variant")
    config_flags(sp)
    sp.add_argument("--variant", choices=list("abcde"), default="e")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("embed", help="export item embeddings from a checkpoint")
    sp.add_argument("--ckpt", type=Path, required=True)
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--all", action="store_true", help="embed every item, not just the test pool")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("eval", help="full-pool retrieval evaluation")
    sp.add_argument("--emb", type=Path, required=True)
    sp.add_argument("--pairs", type=Path, required=True)
    sp.add_argument("--ks", type=_parse_ks, default=(1, 5, 10, 20, 50, 100))
    sp.add_argument("--out", type=Path)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and evaluate variants a..e")
    config_flags(sp)
    sp.add_argument("--variants", type=lambda s: tuple(s.split(",")), default=None)
    sp.add_argument("--seeds", type=lambda s: tuple(int(x) for x in s.split(",")), default=None)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("robustness", help="H@K of a checkpoint across the severity ladder")
    sp.add_argument("--ckpt", type=Path, required=True)
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--mode", choices=("pixel", "token"), default="pixel")
    sp.add_argument("--severities", type=lambda s: tuple(s.split(",")), default=("clean", "light", "medium", "heavy"))
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--ks", type=_parse_ks, default=(1, 5, 10, 20, 50, 100))
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_robustness)

    sp = sub.add_parser("attn-dump", help="export connector cross-attention maps")
    sp.add_argument("--ckpt", type=Path, required=True)
    sp.add_argument("--items", type=Path, required=True, help="file with one item id per line")
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_attn_dump)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check per parameter group")
    sp.add_argument("--scope", choices=("all", "hqc", "gating", "regularizer", "fusion"), default="all")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-coords", type=int, default=12)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--out", type=Path)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _threads(args)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import ConfigurationError, TGQError

    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"tgq {args.command}: configuration error: {exc}", file=sys.stderr)
        return exc.exit_code
    except TGQError as exc:
        print(f"tgq {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"tgq {args.command}: I/O error: {exc}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
