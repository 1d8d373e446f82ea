"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""

import shutil
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from oracles import brute_force_rho, loop_similarity, pairwise_auc, random_pair

from canonsim.cca import CsaModel, FeatureMatrix, fit, project
from canonsim.cli import run
from canonsim.evaluation import (
    classification_accuracy,
    retrieval_metrics,
    robustness_sweep,
    roc_curve,
    s_sweep,
)
from canonsim.similarity import score_matrix
from canonsim.synth import SyntheticConfig, distance_bound_check, fit_pipeline, generate, make_class_task, tradeoff_curves

pytestmark = pytest.mark.acceptance
DATA = Path(__file__).parent / "data" / "tiny"


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def class_task():
    t0 = time.perf_counter()
    task = make_class_task(SyntheticConfig(), n_classes=10, n_test=1000, class_sep=1.0)
    return task, time.perf_counter() - t0


def test_c01_whitening_constraint(verdict):
    rng = np.random.default_rng(1)
    z1, z2 = random_pair(rng, 50, 80, 1000, k=20)
    t0 = time.perf_counter()
    model = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=0.0)
    elapsed = time.perf_counter() - t0
    u, v = project(model, 1, FeatureMatrix(z1)), project(model, 2, FeatureMatrix(z2))
    dev = max(np.abs(u @ u.T - np.eye(model.r)).max(), np.abs(v @ v.T - np.eye(model.r)).max())
    verdict(1, dev < 1e-4 and elapsed < 10, f"max |gram - I| = {dev:.2e} (< 1e-4), fit {elapsed:.2f}s (< 10s)")


def test_c02_oracle_equivalence(verdict):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng([2, seed])
        d1, d2 = rng.integers(1, 11, 2)
        n = int(rng.integers(d1 + d2 + 5, 201))
        z1, z2 = random_pair(rng, d1, d2, n, k=int(rng.integers(1, min(d1, d2) + 1)))
        rho = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=0.0).rho
        worst = max(worst, float(np.abs(rho - brute_force_rho(z1, z2)).max()))
    verdict(2, worst < 1e-8, f"100 instances, max |rho - oracle| = {worst:.2e} (< 1e-8)")


def test_c03_self_pair(verdict):
    z = np.random.default_rng(3).standard_normal((12, 300))
    rho = fit(FeatureMatrix(z), FeatureMatrix(z.copy()), eps=0.0).rho
    # the default relative ridge shrinks each rho_i to lambda_i / (lambda_i + eps * mean(lambda))
    ridged = fit(FeatureMatrix(z), FeatureMatrix(z.copy())).rho
    verdict(3, rho.min() >= 1 - 1e-6,
            f"eps=0: min rho = {rho.min():.12f} (>= 1 - 1e-6); default eps=1e-6 gives {ridged.min():.9f}")


def test_c04_tradeoff_trend(verdict):
    cfg = SyntheticConfig()
    t0 = time.perf_counter()
    rows = tradeoff_curves(cfg, list(range(1, cfg.q + 1)))
    elapsed = time.perf_counter() - t0
    snr = [r.snr_db for r in rows]
    mono = all(b <= a for a, b in zip(snr, snr[1:]))
    p1, pr = rows[0].p_value, rows[-1].p_value
    ok = mono and p1 > 0.05 and pr < 0.01 and elapsed < 60
    verdict(4, ok, f"snr non-increasing {mono}; p(s=1) = {p1:.3g} (> 0.05); p(s=r) = {pr:.3g} (< 0.01); "
                   f"{elapsed:.1f}s (< 60s)")


def test_c05_distance_bound(verdict):
    cfg = SyntheticConfig()
    ds = generate(cfg)
    pipe = fit_pipeline(ds, cfg.q)
    r = pipe.model.r
    reports = [distance_bound_check(ds, pipe, s, n_pairs=1000, seed=5) for s in (1, r // 2, r)]
    ok = all(rep.passed for rep in reports)
    slack = min(min(rep.min_slack + rep.min_slack_signal) for rep in reports)
    verdict(5, ok, f"s in (1, {r // 2}, {r}), 1000 pairs per modality, min slack {slack:.3e} (>= -1e-9)")


def test_c06_roc_consistency(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(2, 80))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 3, n).astype(float) if i % 2 else rng.standard_normal(n)
        worst = max(worst, abs(roc_curve(scores, labels).auc - pairwise_auc(scores, labels)))
    tied = roc_curve(np.full(10, 0.3), [0, 1] * 5).auc
    verdict(6, worst <= 1e-9 and tied == 0.5, f"200 fixtures, max |auc - pairwise| = {worst:.1e}; all-tied auc = {tied}")


def test_c07_retrieval_oracles(verdict):
    scores = np.array([
        [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2],
        [0.1, 0.5, 0.5, 0.9, 0.2, 0.3, 0.0, 0.4],
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ])
    rel = np.zeros((3, 8), dtype=bool)
    rel[0, [1, 3, 6]] = rel[1, [2, 7]] = rel[2, 0] = True
    rep = retrieval_metrics(scores, rel, k=5)
    exact = (rep.precision_at_1 == 1 / 3 and rep.precision_at_k == (0.4 + 0.4 + 0.2) / 3
             and rep.map_at_k == (1 / 3 + 5 / 12 + 1) / 3)
    perfect = retrieval_metrics(np.arange(10.0, 0, -1)[None], np.arange(10)[None] < 5, k=5)
    ok = exact and (perfect.precision_at_1, perfect.precision_at_k, perfect.map_at_k) == (1.0, 1.0, 1.0)
    verdict(7, ok, f"fixture P@1={rep.precision_at_1:.4f} P@5={rep.precision_at_k:.4f} mAP@5={rep.map_at_k:.4f} "
                   f"(1/3, 1/3, 7/12); perfect ranking all 1.0: {perfect.map_at_k == 1.0}")


def test_c08_end_to_end_classification(verdict, class_task):
    t0 = time.perf_counter()
    task = make_class_task(SyntheticConfig(), n_classes=10, n_test=1000, class_sep=1.0)
    model = fit(task.train1, task.train2)
    acc = classification_accuracy(model, task.test1, task.prototypes, task.test_labels)
    elapsed = time.perf_counter() - t0
    verdict(8, acc >= 0.5 and elapsed < 30, f"accuracy {acc:.3f} (>= 0.5, chance 0.1), s = {model.s}, {elapsed:.1f}s (< 30s)")


def test_c09_robustness_trend(verdict, class_task):
    task, _ = class_task
    rows = robustness_sweep(task.train1, task.train2, task.test1, task.prototypes, task.test_labels,
                            [0.0, 0.5, 1.0], seed=0, repeats=10)
    acc = [r["accuracy"] for r in rows]
    mono = acc[0] >= acc[1] >= acc[2]
    se = rows[-1]["stderr"]
    near = abs(acc[2] - 0.1) <= 3 * se
    verdict(9, mono and near, f"accuracy {acc[0]:.3f} / {acc[1]:.3f} / {acc[2]:.3f}; "
                              f"|acc(1.0) - 0.1| = {abs(acc[2] - 0.1):.4f} (<= 3 SE = {3 * se:.4f})")


def test_c10_determinism_and_serialization(verdict, tmp_path):
    rng = np.random.default_rng(10)
    z1, z2 = random_pair(rng, 9, 7, 400, k=4)
    a1, a2 = FeatureMatrix(z1[:, :300]), FeatureMatrix(z2[:, :300])
    t1, t2 = FeatureMatrix(z1[:, 300:]), FeatureMatrix(z2[:, 300:])
    model = fit(a1, a2)
    back = CsaModel.from_bytes(model.to_bytes())

    def scores(m):
        return score_matrix(project(m, 1, t1), project(m, 2, t2), m.rho, m.s).scores

    same_scores = np.array_equal(scores(model), scores(back)) and scores(model).tobytes() == scores(back).tobytes()
    outputs = []
    for k in range(2):
        d = tmp_path / str(k)
        shutil.copytree(DATA, d)
        run(["fit", str(d / "manifest.json"), "-o", str(d / "m.csam")])
        run(["score", str(d / "m.csam"), str(d / "manifest.json"), "-o", str(d / "s.csv")])
        run(["detect", str(d / "m.csam"), str(d / "manifest.json"), "--seed", "4", "-o", str(d / "d.txt")])
        run(["synth", "tradeoff", "--n", "300", "--seed", "7", "-o", str(d / "t.csv")])
        outputs.append([(d / f).read_bytes() for f in ("m.csam", "s.csv", "d.txt", "t.csv")])
    same_cli = outputs[0] == outputs[1]
    golden = outputs[0][1] == (DATA / "golden_scores.csv").read_bytes()
    verdict(10, same_scores and same_cli and golden,
            f"round-trip scores bit-exact {same_scores}; repeated CLI byte-identical {same_cli}; golden match {golden}")


def test_c11_s_sweep(verdict, class_task):
    task, _ = class_task
    model = fit(task.train1, task.train2)
    rows, best = s_sweep(model, task.test1, task.prototypes, task.test_labels)
    covered = [r["s"] for r in rows] == list(range(1, model.r + 1))
    marked = [r["s"] for r in rows if r["best"]] == [best]
    argmax = rows[best - 1]["accuracy"] == max(r["accuracy"] for r in rows)
    verdict(11, covered and marked and argmax, f"s = 1..{model.r} all reported {covered}; argmax s = {best} marked {marked}")


def test_golden_scores_loop_oracle_sanity():
    # the committed golden file was verified against the loop formula before freezing
    from canonsim.io import load_manifest
    from canonsim.similarity import ScoreMatrix

    m = load_manifest(DATA / "manifest.json")
    model = fit(m.train.z1, m.train.z2)
    u, v = project(model, 1, m.test.z1), project(model, 2, m.test.z2)
    golden = ScoreMatrix.from_text((DATA / "golden_scores.csv").read_text()).scores
    assert abs(golden[0, 0] - loop_similarity(u[:, 0], v[:, 0], model.rho, model.s)) < 1e-12


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
