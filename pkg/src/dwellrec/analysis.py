"""Experiment harness: seed-averaged ablations, threshold sweeps and feedback reports."""

from __future__ import annotations

import logging
import statistics
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

from . import tensor as T
from .config import RunConfig, merge
from .data import Dataset, ImpressionRecord, prepare_dataset
from .metrics import METRIC_NAMES, mean_std
from .train import evaluate, train

log = logging.getLogger(__name__)

# variant name -> (model overrides, dataset built without the short/long split)
SUITES: dict[str, dict[str, tuple[dict, bool]]] = {
    "views": {
        "title-only": ({"views": "title"}, False),
        "body-only": ({"views": "body"}, False),
        "title+body": ({"views": "both"}, False),
    },
    "attention": {
        "no-word-attention": ({"word_attention": False}, False),
        "no-news-attention": ({"news_attention": False}, False),
        "no-interactive": ({"interactive": False}, False),
        "all": ({}, False),
    },
    "negfeed": {
        "nrnf-basic": ({"negative_feedback": False}, True),
        "nrnf": ({}, False),
    },
}


class SuiteAborted(RuntimeError):
    """A variant run failed; ``partial`` holds every run that finished before it."""

    def __init__(self, message: str, partial: list["RunRecord"]):
        super().__init__(message)
        self.partial = partial


@dataclass
class RunRecord:
    variant: str
    seed: int
    threshold: float
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    w_p: float
    w_n: float
    best_epoch: int
    impressions: int
    excluded: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentReport:
    variant: str
    runs: list[RunRecord]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.runs:
            raise ValueError("an experiment report needs at least one run")

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    def stat(self, metric: str) -> tuple[float, float | None]:
        return mean_std([getattr(r, metric) for r in self.runs])

    def summary(self) -> dict:
        row = {"variant": self.variant, "runs": len(self.runs)}
        for m in METRIC_NAMES:
            row[f"{m}_mean"], row[f"{m}_std"] = self.stat(m)
        row["w_p"] = [r.w_p for r in self.runs]
        row["w_n"] = [r.w_n for r in self.runs]
        row.update(self.meta)
        return row


@dataclass(frozen=True)
class _Job:
    variant: str
    seed: int
    threshold: float
    model_overrides: tuple
    route_all_positive: bool


def _dataset(news_rows, impressions, cfg: RunConfig, threshold: float, route_all_positive: bool) -> Dataset:
    d = cfg.data
    return prepare_dataset(
        news_rows,
        impressions,
        title_len=d.title_len,
        body_len=d.body_len,
        pos_cap=d.pos_cap,
        neg_cap=d.neg_cap,
        threshold=threshold,
        q=d.neg_ratio,
        seed=d.sample_seed,
        min_freq=d.min_freq,
        route_all_positive=route_all_positive,
    )


def run_once(ds: Dataset, cfg: RunConfig, variant: str = "nrnf") -> RunRecord:
    """Train one configuration and score it on the test split."""
    result = train(ds, cfg)
    with T.precision(cfg.train.precision):
        test = evaluate(result.model, ds, ds.test, cfg.train.eval_batch)
    return RunRecord(
        variant=variant,
        seed=cfg.train.seed,
        threshold=float(ds.settings["threshold"]),
        auc=test["auc"],
        mrr=test["mrr"],
        ndcg5=test["ndcg5"],
        ndcg10=test["ndcg10"],
        w_p=float(result.model.w_p.data[0]),
        w_n=float(result.model.w_n.data[0]),
        best_epoch=result.best_epoch,
        impressions=test["impressions"],
        excluded=test["excluded"],
    )


def _job_config(base: RunConfig, job: _Job) -> RunConfig:
    return merge(base, {"model": dict(job.model_overrides), "train": {"seed": job.seed}})


# worker-side cache so a process prepares each dataset variant once
_DATASETS: dict = {}


def _run_job(args) -> RunRecord:
    news_rows, impressions, base, job = args
    key = (job.threshold, job.route_all_positive, id(news_rows))
    if key not in _DATASETS:
        _DATASETS.clear()
        _DATASETS[key] = _dataset(news_rows, impressions, base, job.threshold, job.route_all_positive)
    return run_once(_DATASETS[key], _job_config(base, job), job.variant)


def _execute(
    jobs: list[_Job],
    news_rows,
    impressions,
    base: RunConfig,
    workers: int,
    on_run: Callable[[RunRecord], None] | None,
) -> list[RunRecord]:
    done: list[RunRecord] = []
    args = [(news_rows, impressions, base, j) for j in jobs]
    try:
        if workers <= 1:
            cache: dict = {}
            for job in jobs:
                key = (job.threshold, job.route_all_positive)
                if key not in cache:
                    cache[key] = _dataset(news_rows, impressions, base, job.threshold, job.route_all_positive)
                rec = run_once(cache[key], _job_config(base, job), job.variant)
                log.info("%s seed %d T=%g: auc %.4f", job.variant, job.seed, job.threshold, rec.auc)
                done.append(rec)
                if on_run:
                    on_run(rec)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rec in pool.map(_run_job, args):
                    done.append(rec)
                    if on_run:
                        on_run(rec)
    except Exception as e:  # noqa: BLE001 - any failure aborts the suite with what finished
        failed = jobs[len(done)]
        raise SuiteAborted(f"{failed.variant} seed {failed.seed} failed: {e}", done) from e
    return done


def _group(records: list[RunRecord], key) -> list[ExperimentReport]:
    groups: dict = defaultdict(list)
    for r in records:
        groups[key(r)].append(r)
    return [ExperimentReport(runs[0].variant, runs) for runs in groups.values()]


def ablation_suite(
    news_rows: Sequence[dict],
    impressions: Sequence[ImpressionRecord],
    base: RunConfig,
    suite: str,
    seeds: Sequence[int] = range(5),
    workers: int = 1,
    on_run: Callable[[RunRecord], None] | None = None,
) -> list[ExperimentReport]:
    """Train every variant of ``suite`` once per seed; one report per variant in suite order."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {sorted(SUITES)}")
    threshold = base.data.threshold_seconds
    jobs = [
        _Job(name, seed, threshold, tuple(sorted(over.items())), flat)
        for name, (over, flat) in SUITES[suite].items()
        for seed in seeds
    ]
    records = _execute(jobs, news_rows, impressions, base, workers, on_run)
    reports = _group(records, lambda r: r.variant)
    for rep in reports:
        rep.meta = {"suite": suite, "threshold": threshold}
    return reports


def threshold_sweep(
    news_rows: Sequence[dict],
    impressions: Sequence[ImpressionRecord],
    base: RunConfig,
    thresholds: Sequence[float],
    seeds: Sequence[int] = range(5),
    workers: int = 1,
    on_run: Callable[[RunRecord], None] | None = None,
) -> list[ExperimentReport]:
    """Full train+evaluate of the complete model per threshold; one report per threshold."""
    ts = [float(t) for t in thresholds]
    if not ts:
        raise ValueError("need at least one threshold")
    if any(t < 0 for t in ts) or ts != sorted(set(ts)):
        raise ValueError("thresholds must be non-negative, distinct and ascending")
    jobs = [_Job("nrnf", seed, t, (), False) for t in ts for seed in seeds]
    records = _execute(jobs, news_rows, impressions, base, workers, on_run)
    reports = _group(records, lambda r: r.threshold)
    for rep in reports:
        rep.meta = {"threshold": rep.runs[0].threshold}
    return reports


def comparison_table(reports: Sequence[ExperimentReport]) -> list[dict]:
    """Flat rows (one per report) of metric means and standard deviations."""
    rows = []
    for rep in reports:
        s = rep.summary()
        rows.append({k: v for k, v in s.items() if k not in ("w_p", "w_n")})
    return rows


# ---------------------------------------------------------------------------
# Feedback reports
# ---------------------------------------------------------------------------


@dataclass
class NewsFeedback:
    news_id: str
    topic: str
    clicks: int
    short_clicks: int

    @property
    def ratio(self) -> float:
        return self.short_clicks / self.clicks


@dataclass
class NFRatioReport:
    threshold: float
    min_clicks: int
    news: list[NewsFeedback]
    excluded: int

    def top(self, n: int = 10) -> list[NewsFeedback]:
        """Highest NF ratio first; ties by more clicks, then news id."""
        return sorted(self.news, key=lambda x: (-x.ratio, -x.clicks, x.news_id))[:n]

    def per_topic(self) -> list[dict]:
        by_topic: dict[str, list[float]] = defaultdict(list)
        for x in self.news:
            by_topic[x.topic].append(x.ratio)
        rows = []
        for topic in sorted(by_topic):
            vals = sorted(by_topic[topic])
            q1, med, q3 = statistics.quantiles(vals, n=4, method="inclusive") if len(vals) > 1 else (vals[0],) * 3
            rows.append(
                {
                    "topic": topic,
                    "news": len(vals),
                    "mean_nf_ratio": statistics.fmean(vals),
                    "q1": q1,
                    "median": med,
                    "q3": q3,
                }
            )
        return rows


def nf_ratio_report(
    impressions: Sequence[ImpressionRecord],
    threshold: float,
    topics: dict[str, str] | None = None,
    min_clicks: int = 10,
) -> NFRatioReport:
    """Share of each news item's clicks whose dwell falls below ``threshold``.

    News with fewer than ``min_clicks`` clicks are dropped and counted in ``excluded``.
    """
    clicks: dict[str, int] = defaultdict(int)
    short: dict[str, int] = defaultdict(int)
    for imp in impressions:
        for nid in imp.clicked:
            clicks[nid] += 1
            if imp.dwell[nid] < threshold:
                short[nid] += 1
    topics = topics or {}
    kept = [
        NewsFeedback(nid, topics.get(nid, ""), n, short[nid])
        for nid, n in sorted(clicks.items())
        if n >= min_clicks
    ]
    return NFRatioReport(threshold, min_clicks, kept, excluded=len(clicks) - len(kept))


def clickbait_summary(report: NFRatioReport, is_clickbait: dict[str, bool]) -> dict:
    """Compare NF ratios of generated clickbait against the rest, plus top-decile purity."""
    bait = [x.ratio for x in report.news if is_clickbait[x.news_id]]
    rest = [x.ratio for x in report.news if not is_clickbait[x.news_id]]
    decile = report.top(max(1, len(report.news) // 10))
    return {
        "clickbait_news": len(bait),
        "other_news": len(rest),
        "clickbait_mean_nf_ratio": statistics.fmean(bait) if bait else float("nan"),
        "other_mean_nf_ratio": statistics.fmean(rest) if rest else float("nan"),
        "top_decile_size": len(decile),
        "top_decile_clickbait_share": sum(is_clickbait[x.news_id] for x in decile) / len(decile) if decile else float("nan"),
    }


def weight_report(runs: Sequence[RunRecord | dict]) -> dict:
    """Per-seed (w_p, w_n) rows and how often each weight has its expected sign."""
    if not runs:
        raise ValueError("weight report needs at least one run")
    rows = [r.to_dict() if isinstance(r, RunRecord) else dict(r) for r in runs]
    table = [{"variant": r.get("variant", ""), "seed": r["seed"], "w_p": r["w_p"], "w_n": r["w_n"]} for r in rows]
    return {
        "rows": table,
        "runs": len(table),
        "w_p_positive": sum(r["w_p"] > 0 for r in table),
        "w_n_negative": sum(r["w_n"] < 0 for r in table),
    }
