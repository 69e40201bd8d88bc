"""Acceptance criteria, one test each. A summary line per criterion is
printed at the end of the pytest run."""
import itertools
import json
import time

import numpy as np
import pytest

from seedstab import pipeline
from seedstab.checklist import SuiteConfig, build_suite
from seedstab.config import from_dict
from seedstab.data import extract_name_polarity, gen_synthetic_corpus
from seedstab.stability import build_dev_matrix, fleiss_kappa, overlap_ratio
from seedstab.swa import SwaConfig, train_swa
from seedstab.textmodel import (
    WARMUP_LINEAR_DECAY,
    WARMUP_THEN_CONSTANT,
    LrSchedule,
    ModelWeights,
    TrainConfig,
    loss_and_grad,
    lr_at,
    train,
)

from conftest import random_batch, separable_data
from oracles import kappa_by_pair_counting

criterion = pytest.mark.criterion


@criterion(1, "Fleiss' kappa equals the pair-counting oracle on 200 matrices")
def test_kappa_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(200):
        N = int(rng.integers(1, 13))
        n = int(rng.integers(2, 7))
        k = int(rng.integers(2, 5))
        counts = rng.multinomial(n, rng.dirichlet(np.ones(k) * 0.7), size=N)
        got = fleiss_kappa(counts, degenerate=None)
        want = kappa_by_pair_counting(counts.tolist())
        assert (got is None) == (want is None)
        if want is not None:
            assert abs(got - want) <= 1e-10
            checked += 1
    assert checked >= 150
    for _ in range(50):
        N, n, k = int(rng.integers(1, 13)), int(rng.integers(2, 7)), int(rng.integers(2, 5))
        counts = np.zeros((N, k), dtype=int)
        counts[np.arange(N), rng.integers(0, k, size=N)] = n
        assert fleiss_kappa(counts) == 1.0
    assert time.perf_counter() - start < 1.0


@criterion(2, "overlap ratio properties over 1000 random set pairs")
def test_overlap_properties():
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    universe = 30
    for _ in range(1000):
        a = set(rng.choice(universe, size=rng.integers(0, 12), replace=False).tolist())
        b = set(rng.choice(universe, size=rng.integers(0, 12), replace=False).tolist())
        v = overlap_ratio(a, b)
        assert v == overlap_ratio(b, a)
        if not (a | b):
            assert v is None
            continue
        if a:
            assert overlap_ratio(a, a) == 1.0
        c = {x + universe for x in a}
        if a:
            assert overlap_ratio(a, c) == 0.0
        # growing one side with elements already on the other never lowers the ratio
        extra = next(iter(b - a), None)
        if extra is not None:
            assert overlap_ratio(a | {extra}, b) >= v
        # growing one side with new elements never raises it
        assert overlap_ratio(a | {universe + 100}, b) <= v
    assert time.perf_counter() - start < 1.0


@criterion(3, "analytic gradient matches central differences")
def test_gradient_correctness():
    start = time.perf_counter()
    eps = 1e-5
    worst = 0.0
    for seed in range(25):
        rng = np.random.default_rng(seed)
        V, d, h = int(rng.integers(4, 12)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
        w = ModelWeights.initialize(V, d, h, rng)
        w.b1[:] = rng.normal(scale=0.1, size=h)
        w.b2[:] = rng.normal(scale=0.1, size=2)
        batch = random_batch(rng, V, int(rng.integers(1, 9)))
        _, grad = loss_and_grad(w, batch)
        fd = np.empty_like(w.flat)
        for i in range(w.flat.size):
            plus, minus = w.copy(), w.copy()
            plus.flat[i] += eps
            minus.flat[i] -= eps
            fd[i] = (loss_and_grad(plus, batch)[0] - loss_and_grad(minus, batch)[0]) / (2 * eps)
        scale = np.maximum(np.maximum(np.abs(fd), np.abs(grad.flat)), 1e-7)
        worst = max(worst, float(np.max(np.abs(fd - grad.flat) / scale)))
    assert worst < 1e-4, worst
    assert time.perf_counter() - start < 5.0


@pytest.fixture(scope="module")
def tiny():
    rng = np.random.default_rng(11)
    return separable_data(rng, 200), separable_data(rng, 50)


TINY_CFG = TrainConfig(seed=5, epochs=5, batch_size=16, peak_lr=3e-2, embedding_dim=6, hidden_dim=6)


@criterion(4, "SWA weights equal the mean of the post-cutoff snapshots")
def test_swa_mean_invariant(tiny):
    tr, dv = tiny
    res = train_swa(TINY_CFG, SwaConfig(cutoff_epoch=2), tr, dv, 30, constant_lr=1e-2)
    assert res.n_averaged == 3 and len(res.snapshots) == 3
    snaps = res.run.snapshots[2:]
    mean = np.mean([s.flat for s in snaps], axis=0)
    assert np.max(np.abs(res.weights.flat - mean)) <= 1e-9


@criterion(5, "vanilla and SWA runs are bit-identical through the cutoff epoch")
def test_pre_cutoff_equivalence(tiny):
    tr, dv = tiny
    cfg = TINY_CFG.resolved(len(tr))
    vanilla = train(cfg, LrSchedule.linear(cfg), tr, dv, 30)
    swa = train_swa(TINY_CFG, SwaConfig(cutoff_epoch=2), tr, dv, 30, constant_lr=1e-2)
    for epoch in (0, 1):
        assert vanilla.snapshots[epoch].flat.tobytes() == swa.run.snapshots[epoch].flat.tobytes()
    cutoff = 2 * cfg.steps_per_epoch(len(tr))
    assert vanilla.lr_trace[:cutoff] == swa.run.lr_trace[:cutoff]
    assert vanilla.snapshots[2].flat.tobytes() != swa.run.snapshots[2].flat.tobytes()


@criterion(6, "learning-rate schedule shape is exact")
def test_schedule_exactness():
    warmup, total, peak, cutoff, const = 7, 50, 3e-2, 20, 6e-3
    lin = LrSchedule(WARMUP_LINEAR_DECAY, warmup, peak, total)
    swa = LrSchedule(WARMUP_THEN_CONSTANT, warmup, peak, total, cutoff, const)
    assert lr_at(lin, 0) == 0.0
    assert lr_at(lin, warmup) == peak
    assert lr_at(lin, total) == 0.0
    for step in range(total + 5):
        if step < warmup:
            want = peak * (step / warmup)
        elif step < total:
            want = peak * ((total - step) / (total - warmup))
        else:
            want = 0.0
        assert lr_at(lin, step) == want
        if step < cutoff:
            assert lr_at(swa, step) == want
        else:
            assert lr_at(swa, step) == const
    # both schedules rise linearly through warmup
    ramp = [lr_at(lin, s) for s in range(warmup + 1)]
    assert all(b > a for a, b in zip(ramp, ramp[1:]))


@criterion(7, "suite sizes at scale 1 for name and phrase capabilities")
def test_suite_size_bookkeeping():
    corpus = gen_synthetic_corpus(0, 2000, 400, 1821)
    pos, neg, _ = extract_name_polarity(corpus.train, corpus.lexicons["names"])
    cfg = SuiteConfig(scale=1.0, enabled=["Change Names", "Add Positive Phrases", "Add Negative Phrases"])
    suite = build_suite(cfg, corpus.test, {"positive": pos, "negative": neg}, corpus.lexicons)
    sizes = {c.name: (c.n_cases, c.m_instances) for c in suite.capabilities}
    assert sizes == {
        "Change Names": (147, 1617),
        "Add Positive Phrases": (500, 5500),
        "Add Negative Phrases": (500, 5000),
    }


DESK = {"corpus": {"n_train": 2000, "n_dev": 400, "n_test": 400}, "suite": {"scale": 0.1}, "seeds": list(range(10))}


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    cfg = from_dict({**DESK, "out_dir": str(out)})
    start = time.perf_counter()
    pipeline.run_all(cfg)
    elapsed = time.perf_counter() - start
    index = json.loads((out / "report" / "index.json").read_text())
    main = index["reports"].get("without_outliers") or index["reports"]["all_seeds"]
    full = index["reports"].get("with_outliers") or index["reports"]["all_seeds"]
    return {
        "out": out,
        "elapsed": elapsed,
        "index": index,
        "main": json.loads((out / "report" / main).read_text()),
        "full": json.loads((out / "report" / full).read_text()),
    }


@criterion(8, "end-to-end desk run: runtime and report schema")
def test_end_to_end_desk_run(desk_run):
    assert desk_run["elapsed"] < 180
    full, main = desk_run["full"], desk_run["main"]
    assert full["seeds"] == list(range(10)) and full["n_models"] == 20
    assert len(full["capabilities"]) == 18
    for cap in full["capabilities"]:
        for v in ("vanilla", "swa"):
            assert len(cap["error_rates"][v]) == 10
        assert set(cap["kappa"]) == {"vanilla", "swa", "difference"}
    for cap in main["capabilities"]:
        n = len(main["seeds"])
        for v in ("vanilla", "swa"):
            assert len(cap["overlap"][v]["pairs"]) == n * (n - 1) // 2
            assert len(cap["overlap"][v]["matrix"]) == n
    for v in ("vanilla", "swa"):
        assert main["dev"]["kappa"][v] is not None
    assert "difference" in main["dev"]
    summary = (desk_run["out"] / "report").rglob("summary.txt")
    assert any("Vanilla" in p.read_text() and "Difference" in p.read_text() for p in summary)


@criterion("8b", "overlap matrices hold 36 seed pairs per capability and variant")
@pytest.mark.xfail(
    strict=True,
    reason="36 pairs needs 9 analysed seeds; the desk run flags no outlier, so 10 seeds give 45",
)
def test_end_to_end_36_pairs(desk_run):
    for cap in desk_run["main"]["capabilities"]:
        for v in ("vanilla", "swa"):
            assert cap["overlap"][v]["summary"]["n_pairs"] == 36


@criterion(9, "report JSON is byte-identical across runs and parallelism")
def test_determinism(desk_run, tmp_path):
    reference = desk_run["out"]
    for name, parallelism in (("again", 1), ("parallel", 4)):
        out = tmp_path / name
        pipeline.run_all(from_dict({**DESK, "out_dir": str(out), "parallelism": parallelism}))
        for path in sorted((reference / "report").rglob("*")):
            if path.is_file():
                rel = path.relative_to(reference)
                assert (out / rel).read_bytes() == path.read_bytes(), rel


@criterion(10, "dev-matrix kappa: coin-flip raters near 0, identical raters exactly 1")
def test_calibration_sanity():
    rng = np.random.default_rng(31337)
    N, n = 1000, 9
    labels = {f"d{i}": int(y) for i, y in enumerate(rng.integers(0, 2, size=N))}
    coin = {s: {iid: int(rng.integers(0, 2)) for iid in labels} for s in range(n)}
    k = fleiss_kappa(build_dev_matrix(coin, labels))
    assert abs(k) < 0.1, k
    shared = {iid: int(rng.integers(0, 2)) for iid in labels}
    same = {s: dict(shared) for s in range(n)}
    assert fleiss_kappa(build_dev_matrix(same, labels)) == 1.0
