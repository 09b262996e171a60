"""Command-line entry point: ``multiattn {stats,preprocess,augment,train,eval,predict,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import model as M
from .augment import AugmentPolicy, RecordingBackend, augment_dataset, make_backend
from .corpus import CorpusError, class_distribution, parse_column_map, read_corpus, write_corpus
from .embeddings import EmbeddingFormatError, encode
from .pipeline import RunSpec, make_runspec, prepare, read_config_file, to_examples
from .textprep import preprocess
from .training import TABLE_COLUMNS, evaluate, run_protocol, train

log = logging.getLogger("multiattn")


class UsageError(Exception):
    pass


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# -- run spec from config file + flags ------------------------------------

_FLAG_KEYS = [
    # (flag, key, type)
    ("--corpus", "corpus", str), ("--embeddings", "embeddings", str), ("--out-dir", "out_dir", str),
    ("--seed", "seed", int), ("--variant", "variant", str), ("--threshold", "threshold", float),
    ("--lr", "lr", float), ("--batch-size", "batch_size", int), ("--max-epochs", "max_epochs", int),
    ("--patience", "patience", int), ("--adam-beta1", "adam_beta1", float), ("--adam-beta2", "adam_beta2", float),
    ("--adam-eps", "adam_eps", float), ("--d", "d", int), ("--m", "m", int), ("--proj-width", "proj_width", int),
    ("--head-width", "head_width", int), ("--head-layers", "head_layers", int),
    ("--attn-hidden", "attn_hidden", int), ("--attn-layers", "attn_layers", int),
    ("--dropout-rate", "dropout_rate", float), ("--max-len", "max_len", int), ("--min-freq", "min_freq", int),
    ("--column-map", "column_map", str), ("--augment-backend", "augment_backend", str),
    ("--pivots", "pivots", str), ("--augment-categories", "augment_categories", str),
    ("--mt-endpoint", "mt_endpoint", str), ("--mt-token-env", "mt_token_env", str),
    ("--cassette", "cassette", str),
]


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file; flags override it")
    for flag, key, typ in _FLAG_KEYS:
        p.add_argument(flag, dest=key, type=typ, default=None)
    p.add_argument("--freeze-embeddings", dest="freeze_embeddings", action="store_const", const=True, default=None)
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False, default=None)
    p.add_argument("--no-dedup", dest="dedup", action="store_const", const=False, default=None)


def _runspec(args) -> RunSpec:
    values = read_config_file(args.config) if args.config else {}
    for _, key, _ in _FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    for key in ("freeze_embeddings", "augment", "dedup", "runs", "variants"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return make_runspec(values)


# -- commands --------------------------------------------------------------

def cmd_stats(args) -> int:
    rows = read_corpus(args.corpus, parse_column_map(args.column_map))
    dist = class_distribution(rows)
    header = ["split", "tweets", "harassment", "harassment_pct", "indirect_pct", "sexual_pct", "physical_pct"]
    print(" ".join(f"{h:>15}" for h in header))
    for d in dist:
        print(" ".join(f"{d[h]:>15}" for h in header))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "class_distribution.csv", header, [[d[h] for h in header] for d in dist])
        from .report import plot_distribution

        plot_distribution(dist, out / "class_distribution.png")
    return 0


def cmd_preprocess(args) -> int:
    rows = read_corpus(args.corpus, parse_column_map(args.column_map))
    tokens = [" ".join(preprocess(r.text)) for r in rows]
    write_corpus(rows, args.output, extra={"tokens": tokens})
    return 0


def cmd_augment(args) -> int:
    rows = read_corpus(args.corpus, parse_column_map(args.column_map))
    backend = make_backend(args.backend, seed=args.seed, endpoint=args.mt_endpoint, token_env=args.mt_token_env,
                           cassette=args.cassette)
    if args.record:
        backend = RecordingBackend(backend, args.record)
    policy = AugmentPolicy(
        pivot_langs=tuple(p for p in args.pivots.split(",") if p),
        target_categories=frozenset(c for c in args.categories.split(",") if c),
        dedup=not args.no_dedup,
    )
    out, report = augment_dataset(rows, policy, backend)
    write_corpus(out, args.output)
    if args.record:
        backend.save()
    if args.report:
        _write_json(args.report, report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_train(args) -> int:
    spec = _runspec(args)
    data = prepare(spec)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runspec.txt").write_text(spec.dump(), encoding="utf-8")
    if not data.splits["validation"]:
        raise UsageError("corpus has no validation split")
    model = M.build(spec.model, data.embeddings, data.vocab)
    best, history = train(model, data.splits["train"], data.splits["validation"], spec.train)
    history["augmentation"] = data.augment_report
    M.save(best, out / "model.ckpt")
    data.vocab.save(out / "vocab.txt")
    _write_json(out / "history.json", history)
    rep = evaluate(best, data.splits["validation"], spec.train.threshold, seed=spec.seed,
                   best_epoch=history["best_epoch"])
    _write_json(out / "metrics_validation.json", rep.to_dict())
    from .report import plot_history

    plot_history(history, out / "history.png")
    print(json.dumps({"best_epoch": history["best_epoch"], **rep.table_row(), "auc_avg": rep.auc_avg}))
    return 0


def cmd_eval(args) -> int:
    model = M.load(args.checkpoint)
    rows = [r for r in read_corpus(args.corpus, parse_column_map(args.column_map)) if r.split == args.split]
    if not rows:
        raise UsageError(f"split {args.split!r} is empty in {args.corpus}")
    examples = to_examples(rows, model.vocab, model.config.max_len, model.clean_config)
    rep = evaluate(model, examples, args.threshold)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    row = rep.table_row()
    _write_csv(out / f"eval_{args.split}.csv", ["model", *TABLE_COLUMNS],
               [[model.config.variant.value, *(_fmt(row[c]) for c in TABLE_COLUMNS)]])
    _write_json(out / f"eval_{args.split}.json", {"model": model.config.variant.value, "split": args.split,
                                                  "threshold": args.threshold, **rep.to_dict()})
    print(json.dumps(row))
    return 0


def cmd_predict(args) -> int:
    model = M.load(args.checkpoint)
    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "text" not in reader.fieldnames:
            raise CorpusError(f"{args.input}: needs a text column")
        records = list(reader)
    header = ["id", "text"] + [f"{c}_score" for c in M.CATEGORIES] + ["harassment", "IndirectH", "PhysicalH", "SexualH"]
    out_rows = []
    for i, rec in enumerate(records):
        idx = encode(preprocess(rec["text"] or "", model.clean_config), model.vocab, model.config.max_len)
        s = model.score(idx)
        lab = M.decide(s, args.threshold)
        out_rows.append([rec.get("id", str(i)), rec["text"], *(_fmt(x) for x in s),
                         lab.harassment, lab.indirect, lab.physical, lab.sexual])
    _write_csv(args.output, header, out_rows)
    return 0


def cmd_bench(args) -> int:
    spec = _runspec(args)
    data = prepare(spec)
    if not data.splits["validation"]:
        raise UsageError("corpus has no validation split")
    eval_split = "test" if data.splits["test"] else "validation"
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runspec.txt").write_text(spec.dump(), encoding="utf-8")

    def progress(v, s, rep):
        log.info("%s seed %d: f1_macro %.4f", v.value, s, rep.f1_macro)

    rows = run_protocol(spec.variant_list(), spec.model, spec.train, data.embeddings, data.splits["train"],
                        data.splits["validation"], data.splits[eval_split], n_runs=spec.runs, vocab=data.vocab,
                        on_run=progress)
    if args.sort:
        rows = sorted(rows, key=lambda r: -r.mean["f1_macro"])
    header = ["model", *TABLE_COLUMNS, *(f"{c}_std" for c in TABLE_COLUMNS)]
    table = [[r.variant, *(_fmt(r.mean[c]) for c in TABLE_COLUMNS), *(_fmt(r.std[c]) for c in TABLE_COLUMNS)]
             for r in rows]
    _write_csv(out / "bench.csv", header, table)
    _write_json(out / "bench.json", {"eval_split": eval_split, "runs": spec.runs, "threshold": spec.train.threshold,
                                     "rows": [{"model": r.variant, "mean": r.mean, "std": r.std, "runs": r.runs}
                                              for r in rows]})
    from .report import plot_bench

    plot_bench(rows, out / "bench.png", TABLE_COLUMNS)
    print(f"{'model':<28}" + "".join(f"{c:>15}" for c in TABLE_COLUMNS))
    for r in rows:
        print(f"{r.variant:<28}" + "".join(f"{r.mean[c]:>15.6f}" for c in TABLE_COLUMNS))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiattn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="class distribution per split")
    p.add_argument("corpus")
    p.add_argument("--out-dir")
    p.add_argument("--column-map")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("preprocess", help="add a tokens column")
    p.add_argument("corpus")
    p.add_argument("output")
    p.add_argument("--column-map")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="back-translate rare types in the train split")
    p.add_argument("corpus")
    p.add_argument("output")
    p.add_argument("--backend", default="shuffle", choices=["identity", "shuffle", "http", "replay"])
    p.add_argument("--pivots", default="de,fr,el")
    p.add_argument("--categories", default="indirect,physical")
    p.add_argument("--no-dedup", action="store_true")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--mt-endpoint")
    p.add_argument("--mt-token-env", default="MT_API_TOKEN")
    p.add_argument("--cassette", help="replay translations from this cassette")
    p.add_argument("--record", help="record translations into this cassette")
    p.add_argument("--report", help="write the augmentation report JSON here")
    p.add_argument("--column-map")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train one variant")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.33)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--column-map")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score a CSV with id,text columns")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--threshold", type=float, default=0.33)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="train every variant over several seeds")
    _add_run_flags(p)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--variants", default=None, help="comma-separated, or 'all'")
    p.add_argument("--sort", action="store_true", help="sort rows by f1_macro, best first")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, M.ConfigError, CorpusError, FileNotFoundError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except (M.CheckpointError, EmbeddingFormatError) as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
