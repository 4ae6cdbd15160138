"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The benchmark criteria (negative-feedback advantage, weight signs, view
ablation) share one module-scoped set of training runs on the default
synthetic benchmark and are marked slow.
"""

import json
import math
import time

import numpy as np
import pytest

from dwellrec import tensor as T
from dwellrec.analysis import clickbait_summary, nf_ratio_report, run_once
from dwellrec.cli import EXIT_OK, main
from dwellrec.config import desk_config, merge
from dwellrec.data import ImpressionRecord, prepare_dataset
from dwellrec.metrics import auc, mrr, ndcg_at_k
from dwellrec.model import Recommender, UserEmbeddingPair, softmax_nll
from dwellrec.nn import EVAL, Context
from dwellrec.optim import AdamState, adam_step, clip_grad_norm
from dwellrec.synth import GeneratorConfig, generate
from dwellrec.tensor import Tensor
from dwellrec.train import build_model, evaluate, score_impressions, train

from .conftest import news_rows
from .test_metrics import brute_auc, brute_mrr, brute_ndcg, random_impressions
from .test_model import cfg as tiny_model_cfg
from .test_model import encode, encoder, full_model_gradient_errors, news_inputs
from .test_tensor import CASES, primitive_worst_error

SEEDS = range(5)
BENCH_EPOCHS = 1


def verdict(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


def test_gradient_suite(capsys):
    start = time.perf_counter()
    with T.precision("double"):
        prim = {name: primitive_worst_error(name) for name in CASES}
        full = [max(full_model_gradient_errors(seed).values()) for seed in range(20)]
    elapsed = time.perf_counter() - start
    worst = max(max(prim.values()), max(full))
    ok = worst <= 1e-4 and elapsed < 120
    verdict(
        capsys, 1, ok,
        f"{len(prim)} primitives and the full loss over 20 seeds, worst relative error {worst:.1e}, {elapsed:.0f} s",
    )  # fmt: skip


def test_metric_oracles(capsys):
    diffs = []
    for scores, labels in random_impressions(1000, seed=0):
        s, y = list(scores), list(labels)
        diffs += [
            abs(auc(scores, labels) - brute_auc(s, y)),
            abs(mrr(scores, labels) - brute_mrr(s, y)),
            abs(ndcg_at_k(scores, labels, 5) - brute_ndcg(s, y, 5)),
            abs(ndcg_at_k(scores, labels, 10) - brute_ndcg(s, y, 10)),
        ]
    examples = (
        auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75
        and auc([0.5] * 5, [1, 0, 0, 0, 0]) == 0.5
        and math.isclose(mrr([0.9, 0.5, 0.7, 0.4, 0.1], [1, 0, 0, 1, 0]), 0.625)
        and round(ndcg_at_k([0.9, 0.8, 0.7, 0.1], [0, 1, 1, 0], 5), 4) == 0.6934
    )
    worst = max(diffs)
    # identical up to the last bit of float summation order
    verdict(capsys, 2, examples and worst <= 1e-15, f"1000 impressions, max |fast - brute| {worst:.1e}, worked examples ok={examples}")


def test_equation_identities(capsys):
    with T.precision("double"):
        e = encode(encoder(), news_inputs(np.random.default_rng(0)))
        r_exact = np.array_equal(e.r.data, e.r_t.data + e.r_b.data + e.c_t.data + e.c_b.data)

        rng = np.random.default_rng(1)
        model = Recommender(tiny_model_cfg(), 20, rng, title_len=4, body_len=5)
        cand = Tensor(rng.normal(size=(3, 5, 6)))
        users = UserEmbeddingPair(
            Tensor(rng.normal(size=(3, 6))), Tensor(rng.normal(size=(3, 6))), np.zeros(3, bool), np.zeros(3, bool)
        )
        y, y_p, y_n = model.score(cand, users)
        y_exact = np.array_equal(y.data, y_p.data * model.w_p.data + y_n.data * model.w_n.data)

        uniform = float(np.max(np.abs(softmax_nll(Tensor(np.full((4, 5), 0.3))).data - math.log(5))))
    with T.precision("single"):
        s = Tensor(np.random.default_rng(2).normal(size=(1000, 5)) * 5)
        prob_err = float(np.max(np.abs(np.exp(T.log_softmax(s).data.astype(np.float64)).sum(axis=1) - 1)))
    ok = r_exact and y_exact and prob_err <= 1e-6 and uniform <= 1e-9
    verdict(
        capsys, 3, ok,
        f"r sum exact={r_exact}, score sum exact={y_exact}, softmax sum err {prob_err:.1e}, "
        f"uniform loss - log 5 = {uniform:.1e}",
    )  # fmt: skip


def train_auc(model, ds, samples) -> float:
    """Mean per-sample AUC of the clicked candidate against its sampled negatives."""
    y, _, _ = model.batch_scores(ds, samples.candidates, samples.hist_pos, samples.hist_neg, EVAL)
    labels = np.zeros(samples.candidates.shape[1], dtype=int)
    labels[0] = 1
    return float(np.mean([auc(row, labels) for row in y.data]))


def test_overfit_smoke(capsys):
    data = generate(GeneratorConfig(users=30, news=200, sessions=120, seed=0))
    cfg = merge(desk_config(), {"model": {"dropout": 0.0}})
    ds = prepare_dataset(news_rows(data), data.impressions, body_len=cfg.data.body_len)
    # a user with no history scores every candidate 0, which no amount of fitting changes
    has_history = (ds.train.hist_pos >= 0).any(axis=1) | (ds.train.hist_neg >= 0).any(axis=1)
    samples = ds.train.subset(np.flatnonzero(has_history)[:50])
    assert len(samples) == 50
    start = time.perf_counter()
    with T.precision("single"):
        rng = np.random.default_rng(0)
        model = build_model(cfg, ds, rng)
        params = model.parameters()
        state = AdamState(lr=cfg.train.lr)
        score, epoch = train_auc(model, ds, samples), 0
        while score < 0.99 and epoch < 200:
            epoch += 1
            order = rng.permutation(len(samples))
            for begin in range(0, len(order), cfg.train.batch_size):
                batch = samples.subset(order[begin : begin + cfg.train.batch_size])
                with T.Tape() as tape:
                    loss = model.loss(ds, batch, Context(training=True, rng=rng))
                    tape.backward(loss)
                clip_grad_norm(params, cfg.train.clip_norm)
                adam_step(params, state)
            score = train_auc(model, ds, samples)
    elapsed = time.perf_counter() - start
    ok = score >= 0.99 and elapsed < 180
    verdict(capsys, 4, ok, f"50 samples, train AUC {score:.4f} after {epoch} epochs, {elapsed:.0f} s")


# ---------------------------------------------------------------------------
# default synthetic benchmark
# ---------------------------------------------------------------------------


def bench_config():
    return merge(desk_config(), {"train": {"epochs": BENCH_EPOCHS, "patience": BENCH_EPOCHS}})


@pytest.fixture(scope="module")
def benchmark():
    data = generate(GeneratorConfig())
    rows = news_rows(data)
    base = bench_config()
    d = base.data
    nrnf = prepare_dataset(rows, data.impressions, body_len=d.body_len, threshold=d.threshold_seconds)
    basic = prepare_dataset(rows, data.impressions, body_len=d.body_len, route_all_positive=True)
    variants = {
        "nrnf": (nrnf, {}),
        "nrnf-basic": (basic, {"negative_feedback": False}),
        "title-only": (nrnf, {"views": "title"}),
        "body-only": (nrnf, {"views": "body"}),
    }
    runs, seconds = {}, {}
    for name, (ds, over) in variants.items():
        start = time.perf_counter()
        runs[name] = [run_once(ds, merge(base, {"model": over, "train": {"seed": s}}), name) for s in SEEDS]
        seconds[name] = time.perf_counter() - start
        aucs = ", ".join(f"{r.auc:.4f}" for r in runs[name])
        print(f"{name}: test AUC {aucs} ({seconds[name]:.0f} s)")
    return runs, seconds


def mean_auc(runs):
    return float(np.mean([r.auc for r in runs]))


@pytest.mark.slow
def test_negative_feedback_advantage(capsys, benchmark):
    runs, seconds = benchmark
    gap = mean_auc(runs["nrnf"]) - mean_auc(runs["nrnf-basic"])
    minutes = (seconds["nrnf"] + seconds["nrnf-basic"]) / 60
    ok = gap >= 0.02 and minutes < 60
    verdict(
        capsys, 5, ok,
        f"NRNF {mean_auc(runs['nrnf']):.4f} vs NRNF-basic {mean_auc(runs['nrnf-basic']):.4f}, "
        f"gap {gap:+.4f} over {len(SEEDS)} seeds, {minutes:.1f} min",
    )  # fmt: skip


@pytest.mark.slow
def test_weight_signs(capsys, benchmark):
    runs, _ = benchmark
    good = sum(r.w_p > 0 and r.w_n < 0 for r in runs["nrnf"])
    pairs = ", ".join(f"({r.w_p:+.3f}, {r.w_n:+.3f})" for r in runs["nrnf"])
    verdict(capsys, 6, good >= 4, f"w_p > 0 and w_n < 0 in {good}/{len(SEEDS)} seeds: {pairs}")


@pytest.mark.slow
def test_view_ablation_direction(capsys, benchmark):
    runs, _ = benchmark
    both, title, body = (mean_auc(runs[k]) for k in ("nrnf", "title-only", "body-only"))
    verdict(capsys, 8, both >= max(title, body), f"title+body {both:.4f}, title-only {title:.4f}, body-only {body:.4f}")


# ---------------------------------------------------------------------------
# boundaries, ground truth, reproducibility
# ---------------------------------------------------------------------------


def test_boundary_equivalences(capsys, small_data, tiny_config):
    rows = news_rows(small_data)
    zero = prepare_dataset(rows, small_data.impressions, body_len=32, threshold=0.0)
    basic = prepare_dataset(rows, small_data.impressions, body_len=32, route_all_positive=True)
    flat_cfg = merge(tiny_config, {"model": {"negative_feedback": False}})
    gaps = []
    for seed in range(3):
        a = train(zero, merge(tiny_config, {"train": {"seed": seed}}))
        b = train(basic, merge(flat_cfg, {"train": {"seed": seed}}))
        with T.precision("single"):
            gaps.append(abs(evaluate(a.model, zero, zero.test)["auc"] - evaluate(b.model, basic, basic.test)["auc"]))

    long_only = [
        ImpressionRecord(i.user_id, i.timestamp, i.displayed, i.clicked, {k: v + 60.0 for k, v in i.dwell.items()})
        for i in small_data.impressions
    ]
    nrnf = prepare_dataset(rows, long_only, body_len=32, threshold=10.0)
    flat = prepare_dataset(rows, long_only, body_len=32, route_all_positive=True)
    with T.precision("single"):
        model = build_model(tiny_config, nrnf, np.random.default_rng(0))
        full = score_impressions(model, nrnf, nrnf.test)
        model.cfg.negative_feedback = False
        try:
            only_pos = score_impressions(model, flat, flat.test)
        finally:
            model.cfg.negative_feedback = True
    exact = all(np.array_equal(x.scores, y.scores) for x, y in zip(full, only_pos))
    ok = max(gaps) <= 0.005 and exact
    verdict(capsys, 7, ok, f"T=0 vs NRNF-basic max AUC gap {max(gaps):.4f} over 3 seeds; no-short-dwell scores identical={exact}")


def test_nf_ratio_ground_truth(capsys):
    data = generate(GeneratorConfig())
    report = nf_ratio_report(data.impressions, 10.0, min_clicks=10)
    s = clickbait_summary(report, {n.news_id: n.is_clickbait for n in data.corpus})
    ok = s["clickbait_mean_nf_ratio"] > s["other_mean_nf_ratio"] and s["top_decile_clickbait_share"] >= 0.6
    verdict(
        capsys, 9, ok,
        f"mean NF ratio clickbait {s['clickbait_mean_nf_ratio']:.3f} vs other {s['other_mean_nf_ratio']:.3f}, "
        f"top decile {s['top_decile_clickbait_share']:.0%} clickbait",
    )  # fmt: skip


def test_reproducibility(capsys, tmp_path):
    gen = ["--users", "40", "--news", "300", "--sessions", "400", "--seed", "7"]
    tiny = {"data": {"body_len": 32}, "model": {"word_dim": 8, "heads": 2, "head_dim": 4, "attn_hidden": 8}, "train": {"epochs": 1}}
    (tmp_path / "tiny.json").write_text(json.dumps(tiny))
    data = tmp_path / "data"
    checks = {}

    def twice(name, argv, outputs, snapshot=None):
        """Run ``argv``, re-run it (from the first run's config snapshot if given), compare outputs."""
        first, second = tmp_path / f"{name}1", tmp_path / f"{name}2"
        assert main([*argv, "--out", str(first)]) == EXIT_OK
        again = [*argv, "--config", str(first / snapshot)] if snapshot else argv
        assert main([*again, "--out", str(second)]) == EXIT_OK
        checks[name] = all((first / rel).read_bytes() == (second / rel).read_bytes() for rel in outputs)

    twice("gen-data", ["gen-data", *gen], ["news.jsonl", "impressions.jsonl", "ground_truth.jsonl"])
    assert main(["gen-data", *gen, "--out", str(data)]) == EXIT_OK
    assert main(["train", "--data", str(data), "--config", str(tmp_path / "tiny.json"), "--out", str(tmp_path / "seed")]) == EXIT_OK
    snap = str(tmp_path / "seed" / "config.json")
    twice("train", ["train", "--data", str(data), "--config", snap], ["reports/metrics.jsonl", "reports/runs.jsonl", "checkpoints/model.ckpt"], "config.json")
    sweep = ["sweep", "--thresholds", "0,10", "--seed-list", "0", "--data", str(data), "--config", snap]
    twice("sweep", sweep, ["reports/sweep.jsonl", "reports/runs.jsonl"], "config.json")
    ok = all(checks.values())
    verdict(capsys, 10, ok, "byte-identical reruns from the config snapshot: " + ", ".join(f"{k}={v}" for k, v in checks.items()))
