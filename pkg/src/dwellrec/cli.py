"""Command-line entry point.

Commands: gen-data, ingest, train, eval, ablate, sweep, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
3 output exists and ``--overwrite`` was not given. Failures print one JSON
line ``{"error": ..., "message": ...}`` on stderr.

A run directory holds ``config.json`` (the resolved configuration),
``checkpoints/``, ``logs/`` and ``reports/``. Metric records never contain
timings or paths, so re-running from ``config.json`` reproduces them byte for
byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, plotting
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, ConfigError, RunConfig, merge
from .data import DataError, load_raw, prepare_dataset, write_jsonl
from .metrics import METRIC_NAMES
from .synth import GROUND_TRUTH_FILE, GeneratorConfig, emit_dataset, generate, read_ground_truth
from .train import TrainingDiverged, build_model, evaluate, train

log = logging.getLogger("dwellrec")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_EXISTS = 0, 1, 2, 3

CHECKPOINT = Path("checkpoints") / "model.ckpt"


class UsageError(Exception):
    pass


class OutputExists(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


def _claim(paths, overwrite: bool) -> None:
    """Refuse to replace existing artifacts unless ``overwrite``."""
    taken = [str(p) for p in paths if Path(p).exists()]
    if taken and not overwrite:
        raise OutputExists(f"output exists (pass --overwrite to replace): {', '.join(taken)}")


def _write_tsv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    if rows:
        cols = list(rows[0])
        w = csv.DictWriter(buf, fieldnames=cols, delimiter="\t", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else ("" if v is None else v)) for k, v in r.items()})
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_records(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(path, (_dumps(r) for r in rows))


def _resolve_config(args, flag_overrides: dict) -> RunConfig:
    cfg = PRESETS[args.preset]()
    if getattr(args, "config", None):
        raw = _read_json(Path(args.config), "config")
        cfg = merge(cfg, raw)
    overrides = {sec: {k: v for k, v in vals.items() if v is not None} for sec, vals in flag_overrides.items()}
    return merge(cfg, overrides)


def _read_json(path: Path, what: str) -> dict:
    if not path.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="base hyperparameters (default: desk)")
    p.add_argument("--config", help="JSON run config; overrides the preset")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--title-len", type=int)
    p.add_argument("--body-len", type=int)
    p.add_argument("--pos-cap", type=int)
    p.add_argument("--neg-cap", type=int)
    p.add_argument("--threshold-seconds", type=float)
    p.add_argument("--neg-ratio", type=int)


def _data_overrides(args) -> dict:
    return {
        "title_len": args.title_len,
        "body_len": args.body_len,
        "pos_cap": args.pos_cap,
        "neg_cap": args.neg_cap,
        "threshold_seconds": args.threshold_seconds,
        "neg_ratio": args.neg_ratio,
    }


def load_dataset(data_dir, cfg: RunConfig, threshold: float | None = None):
    """Prepare a raw data directory under ``cfg``; the basic model keeps all clicks positive."""
    news, impressions = load_raw(data_dir)
    d = cfg.data
    return prepare_dataset(
        news,
        impressions,
        title_len=d.title_len,
        body_len=d.body_len,
        pos_cap=d.pos_cap,
        neg_cap=d.neg_cap,
        threshold=d.threshold_seconds if threshold is None else threshold,
        q=d.neg_ratio,
        seed=d.sample_seed,
        min_freq=d.min_freq,
        route_all_positive=not cfg.model.negative_feedback,
    )


def _vocab_digest(ds) -> str:
    return hashlib.sha256(ds.vocab.to_json().encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    from .data import IMPRESSIONS_FILE, NEWS_FILE

    _claim([out / NEWS_FILE, out / IMPRESSIONS_FILE], args.overwrite)
    base = GeneratorConfig()
    cfg = replace(
        base,
        users=args.users if args.users is not None else base.users,
        news=args.news if args.news is not None else base.news,
        sessions=args.sessions if args.sessions is not None else base.sessions,
        clickbait_rate=args.clickbait_rate if args.clickbait_rate is not None else base.clickbait_rate,
        seed=args.seed if args.seed is not None else base.seed,
    )
    data = generate(cfg)
    emit_dataset(data, out)
    clicks = sum(len(i.clicked) for i in data.impressions)
    print(_dumps({"news": len(data.corpus), "users": len(data.users), "impressions": len(data.impressions), "clicks": clicks}))
    return EXIT_OK


def cmd_ingest(args) -> int:
    out = Path(args.out)
    cfg = _resolve_config(args, {"data": {**_data_overrides(args), "sample_seed": args.seed}})
    files = [out / "config.json", out / "vocab.json", out / "samples.jsonl", out / "ingest_report.json"]
    _claim(files, args.overwrite)
    ds = load_dataset(args.data, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    (out / "vocab.json").write_text(ds.vocab.to_json() + "\n", encoding="utf-8")
    write_jsonl(out / "samples.jsonl", (s.to_json() for s in ds.samples))
    r = ds.report
    report = {
        "news": ds.num_news,
        "vocab": len(ds.vocab),
        "train_impressions": len(ds.train_impressions),
        "valid_impressions": len(ds.valid),
        "test_impressions": len(ds.test),
        "samples": r.samples,
        "skipped_no_negatives": r.skipped_no_negatives,
        "drawn_with_replacement": r.drawn_with_replacement,
    }
    (out / "ingest_report.json").write_text(_dumps(report) + "\n", encoding="utf-8")
    print(_dumps(report))
    return EXIT_OK


def _run_train(args) -> int:
    run = Path(args.out)
    cfg = _resolve_config(
        args,
        {
            "data": {"threshold_seconds": args.threshold_seconds},
            "train": {"seed": args.seed, "epochs": args.epochs},
        },
    )
    targets = [run / "config.json", run / CHECKPOINT, run / "logs" / "train.jsonl", run / "reports" / "metrics.jsonl"]
    _claim(targets, args.overwrite)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    ds = load_dataset(args.data, cfg)
    log_path = run / "logs" / "train.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("", encoding="utf-8")

    def on_epoch(rec):
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(_dumps(rec) + "\n")

    result = train(ds, cfg, on_epoch=on_epoch)
    model = result.model
    meta = {
        "config": cfg.to_dict(),
        "vocab_size": len(ds.vocab),
        "vocab_sha256_16": _vocab_digest(ds),
        "best_epoch": result.best_epoch,
    }
    save_checkpoint(run / CHECKPOINT, model.state_dict(), meta)
    with T.precision(cfg.train.precision):
        test = evaluate(model, ds, ds.test, cfg.train.eval_batch)
    record = {
        "split": "test",
        "seed": cfg.train.seed,
        "best_epoch": result.best_epoch,
        **{m: test[m] for m in METRIC_NAMES},
        "impressions": test["impressions"],
        "excluded": test["excluded"],
        "w_p": float(model.w_p.data[0]),
        "w_n": float(model.w_n.data[0]),
    }
    _write_records(run / "reports" / "metrics.jsonl", [record])
    variant = "nrnf" if cfg.model.negative_feedback else "nrnf-basic"
    run_rec = analysis.RunRecord(
        variant=variant,
        seed=cfg.train.seed,
        threshold=float(cfg.data.threshold_seconds),
        **{m: test[m] for m in METRIC_NAMES},
        w_p=record["w_p"],
        w_n=record["w_n"],
        best_epoch=result.best_epoch,
        impressions=test["impressions"],
        excluded=test["excluded"],
    )
    _write_records(run / "reports" / "runs.jsonl", [run_rec.to_dict()])
    plotting.plot_training(result.log, run / "reports" / "training.png")
    print(_dumps(record))
    return EXIT_OK


def cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    if "config" not in meta:
        raise DataError(f"checkpoint {args.checkpoint} carries no configuration")
    cfg = RunConfig.from_dict(meta["config"])
    ds = load_dataset(args.data, cfg)
    if _vocab_digest(ds) != meta.get("vocab_sha256_16"):
        raise DataError(f"vocabulary of {args.data} does not match checkpoint {args.checkpoint}")
    split = ds.valid if args.split == "valid" else ds.test
    with T.precision(cfg.train.precision):
        model = build_model(cfg, ds, np.random.default_rng(0))
        model.load_state_dict(params)
        m = evaluate(model, ds, split, cfg.train.eval_batch)
    record = {
        "split": args.split,
        **{k: m[k] for k in METRIC_NAMES},
        "impressions": m["impressions"],
        "excluded": m["excluded"],
        "w_p": float(model.w_p.data[0]),
        "w_n": float(model.w_n.data[0]),
    }
    if args.out:
        out = Path(args.out)
        _claim([out], args.overwrite)
        _write_records(out, [record])
    print(_dumps(record))
    return EXIT_OK


def _seed_list(args) -> list[int]:
    if args.seed_list:
        try:
            return [int(s) for s in args.seed_list.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"--seed-list must be comma-separated integers, got {args.seed_list!r}") from None
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    return list(range(args.seeds))


def _suite_outputs(run: Path, stem: str, reports, table_key: str) -> list[dict]:
    rows = analysis.comparison_table(reports)
    _write_records(run / "reports" / f"{stem}.jsonl", [r.summary() for r in reports])
    _write_tsv(run / "reports" / f"{stem}.tsv", rows)
    if table_key == "threshold":
        plotting.plot_sweep(rows, run / "reports" / f"{stem}.png")
    else:
        plotting.plot_variants(rows, run / "reports" / f"{stem}.png", title=stem)
    return rows


def _run_suite(args, stem: str, runner) -> int:
    run = Path(args.out)
    cfg = _resolve_config(args, {"data": {"threshold_seconds": getattr(args, "threshold_seconds", None)}, "train": {"epochs": args.epochs}})
    seeds = _seed_list(args)
    runs_path = run / "reports" / "runs.jsonl"
    _claim([run / "config.json", runs_path, run / "reports" / f"{stem}.jsonl"], args.overwrite)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    news, impressions = load_raw(args.data)
    done: list[dict] = []

    def on_run(rec):
        done.append(rec.to_dict())
        _write_records(runs_path, done)

    try:
        reports = runner(news, impressions, cfg, seeds, args.jobs, on_run)
    except analysis.SuiteAborted as e:
        _write_records(runs_path, [r.to_dict() for r in e.partial])
        raise
    _write_records(runs_path, [r.to_dict() for rep in reports for r in rep.runs])
    rows = _suite_outputs(run, stem, reports, "threshold" if stem == "sweep" else "variant")
    for r in rows:
        print(_dumps(r))
    return EXIT_OK


def cmd_ablate(args) -> int:
    return _run_suite(
        args,
        f"ablation_{args.suite}",
        lambda news, imps, cfg, seeds, jobs, on_run: analysis.ablation_suite(
            news, imps, cfg, args.suite, seeds, jobs, on_run
        ),
    )


def cmd_sweep(args) -> int:
    try:
        ts = [float(t) for t in args.thresholds.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--thresholds must be comma-separated numbers, got {args.thresholds!r}") from None
    if not ts or any(t < 0 for t in ts) or ts != sorted(set(ts)):
        raise UsageError("--thresholds must be non-negative, distinct and ascending")
    return _run_suite(
        args,
        "sweep",
        lambda news, imps, cfg, seeds, jobs, on_run: analysis.threshold_sweep(news, imps, cfg, ts, seeds, jobs, on_run),
    )


def cmd_report(args) -> int:
    if args.kind == "weights":
        if not args.run:
            raise UsageError("report --kind weights needs --run DIR")
        run = Path(args.run)
        src = run / "reports" / "runs.jsonl"
        if not src.is_file():
            raise FileNotFoundError(f"no run records at {src}")
        from .data import read_jsonl

        rep = analysis.weight_report(read_jsonl(src))
        out = run / "reports"
        _claim([out / "weights.jsonl"], args.overwrite)
        _write_records(out / "weights.jsonl", rep["rows"])
        _write_tsv(out / "weights.tsv", rep["rows"])
        plotting.plot_weights(rep["rows"], out / "weights.png")
        summary = {k: rep[k] for k in ("runs", "w_p_positive", "w_n_negative")}
        _write_records(out / "weights_summary.jsonl", [summary])
        for row in rep["rows"]:
            print(_dumps(row))
        print(_dumps(summary))
        return EXIT_OK

    if not args.data or not args.out:
        raise UsageError(f"report --kind {args.kind} needs --data DIR and --out DIR")
    news, impressions = load_raw(args.data)
    topics = {r["news_id"]: str(r.get("topic", "")) for r in news}
    threshold = args.threshold_seconds if args.threshold_seconds is not None else 10.0
    nf = analysis.nf_ratio_report(impressions, threshold, topics, args.min_clicks)
    out = Path(args.out) / "reports"
    if args.kind == "nf-ratio":
        _claim([out / "nf_ratio.jsonl"], args.overwrite)
        per_news = [
            {"news_id": x.news_id, "topic": x.topic, "clicks": x.clicks, "short_clicks": x.short_clicks, "nf_ratio": x.ratio}
            for x in nf.news
        ]
        _write_records(out / "nf_ratio.jsonl", per_news)
        top = [{"rank": i + 1, **{k: v for k, v in row.items()}} for i, row in enumerate(
            {"news_id": x.news_id, "topic": x.topic, "clicks": x.clicks, "nf_ratio": x.ratio} for x in nf.top(args.top)
        )]
        _write_tsv(out / "nf_ratio_top.tsv", top)
        summary = {"threshold": threshold, "min_clicks": args.min_clicks, "news": len(nf.news), "excluded": nf.excluded}
        gt_path = Path(args.data) / GROUND_TRUTH_FILE
        if gt_path.is_file():
            gt = read_ground_truth(gt_path)
            summary.update(analysis.clickbait_summary(nf, {k: bool(v["is_clickbait"]) for k, v in gt.items()}))
        _write_records(out / "nf_ratio_summary.jsonl", [summary])
        for row in top:
            print(_dumps(row))
        print(_dumps(summary))
        return EXIT_OK

    _claim([out / "topics.jsonl"], args.overwrite)
    rows = nf.per_topic()
    _write_records(out / "topics.jsonl", rows)
    _write_tsv(out / "topics.tsv", rows)
    if rows:
        plotting.plot_topic_nf(rows, out / "topics.png")
    for row in rows:
        print(_dumps(row))
    return EXIT_OK


# ---------------------------------------------------------------------------
# grammar
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dwellrec", description="Dwell-time aware news recommendation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic news/impression log")
    g.add_argument("--users", type=int)
    g.add_argument("--news", type=int)
    g.add_argument("--sessions", type=int)
    g.add_argument("--clickbait-rate", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--overwrite", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    i = sub.add_parser("ingest", help="tokenize, split and sample a raw log")
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    _common_flags(i)
    _data_flags(i)
    i.add_argument("--seed", type=int, help="negative-sampling seed")
    i.add_argument("--overwrite", action="store_true")
    i.set_defaults(func=cmd_ingest)

    t = sub.add_parser("train", help="train one model into a run directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    _common_flags(t)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--threshold-seconds", type=float)
    t.add_argument("--overwrite", action="store_true")
    t.set_defaults(func=_run_train)

    e = sub.add_parser("eval", help="score a checkpoint on a data split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("valid", "test"), default="test")
    e.add_argument("--out", help="also write the record to this file")
    e.add_argument("--overwrite", action="store_true")
    e.set_defaults(func=cmd_eval)

    for name, func, helptext in (
        ("ablate", cmd_ablate, "seed-averaged ablation suite"),
        ("sweep", cmd_sweep, "seed-averaged dwell-threshold sweep"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True)
        _common_flags(s)
        s.add_argument("--seeds", type=int, default=5, help="train seeds 0..N-1 (default 5)")
        s.add_argument("--seed-list", help="explicit comma-separated seeds")
        s.add_argument("--epochs", type=int)
        s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        s.add_argument("--overwrite", action="store_true")
        s.set_defaults(func=func)
        if name == "ablate":
            s.add_argument("--suite", choices=sorted(analysis.SUITES), required=True)
            s.add_argument("--threshold-seconds", type=float)
        else:
            s.add_argument("--thresholds", default="2,5,10,30,60")

    r = sub.add_parser("report", help="weight, NF-ratio and topic tables")
    r.add_argument("--kind", choices=("weights", "nf-ratio", "topics"), required=True)
    r.add_argument("--run", help="run directory (weights)")
    r.add_argument("--data", help="raw data directory (nf-ratio, topics)")
    r.add_argument("--out", help="directory receiving reports/ (nf-ratio, topics)")
    r.add_argument("--threshold-seconds", type=float)
    r.add_argument("--min-clicks", type=int, default=10)
    r.add_argument("--top", type=int, default=10)
    r.add_argument("--overwrite", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_USAGE)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        return _fail("usage", str(e), EXIT_USAGE)
    except OutputExists as e:
        return _fail("exists", str(e), EXIT_EXISTS)
    except analysis.SuiteAborted as e:
        return _fail("suite_aborted", f"{e} ({len(e.partial)} runs kept)", EXIT_RUNTIME)
    except TrainingDiverged as e:
        return _fail("diverged", str(e), EXIT_RUNTIME)
    except (FileNotFoundError, DataError, ValueError, OSError) as e:
        return _fail(type(e).__name__, str(e), EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
