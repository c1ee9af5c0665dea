"""Acceptance criteria, one test each, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
Criterion 10 needs the public Adult data; point ``LDP_ADULT_DIR`` at a
directory holding ``adult.data`` and ``adult.test`` to enable it.
"""

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ldp_influence import model as M
from ldp_influence.correction import FlcObjective, flc_adjusted_gradient, flc_adjusted_loss, train_with_flc
from ldp_influence.dataset import (
    CategoricalDomain, Dataset, GroupSpec, SelectionRule, encode, make_synthetic, select_group, split,
)
from ldp_influence.ihvp import IhvpConfig, ihvp
from ldp_influence.influence import TestGradientCache as GradCache, influence_rr, influence_rr_label
from ldp_influence.model import ModelParams, TrainConfig
from ldp_influence.oracle import mae, run_sweep_comparison, spearman_rho
from ldp_influence.randomize import (
    PerturbationPlan, build_distortion, observed_distribution, perturb_records, recover_distribution,
)

RESULTS = {}


def _report(n, ok, detail, capsys=None):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS[n] = line
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    return ok


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


def _fd(f, theta, h):
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def _binary_instance(seed=0):
    """n = 2000, five binary features, label driven by them, l2 = 1e-2."""
    ds = make_synthetic(2000, (2,) * 5, seed=seed)
    tr, te = split(ds, 0.2, seed=seed)
    cfg = TrainConfig(l2_strength=1e-2)
    etr, ete = encode(tr), encode(te)
    return tr, te, etr, ete, cfg, M.train(etr, cfg)


# ---------------------------------------------------------------------------

def test_criterion_01_distortion_matrices(capsys):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_row = worst_diag = worst_inv = 0.0
    for _ in range(200):
        C = int(rng.integers(2, 17))
        eps = float(rng.uniform(0, 10))
        P = build_distortion(C, eps).entries
        worst_row = max(worst_row, np.abs(P.sum(axis=1) - 1).max())
        worst_diag = max(worst_diag, np.abs(np.diag(P) - np.exp(eps) / (C - 1 + np.exp(eps))).max())
        if eps > 0:
            pi = rng.dirichlet(np.ones(C))
            back = recover_distribution(observed_distribution(pi, P).proportions, P).proportions
            worst_inv = max(worst_inv, np.abs(back - pi).max())
    dt = time.perf_counter() - t0
    ok = worst_row <= 1e-12 and worst_diag <= 1e-12 and worst_inv <= 1e-10 and dt < 1.0
    assert _report(1, ok, f"row sum err {worst_row:.1e}, diagonal err {worst_diag:.1e}, "
                          f"inversion err {worst_inv:.1e}, {dt:.3f} s", capsys)


def test_criterion_02_calculus(capsys):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    g_err = f_err = h_err = 0.0
    for k in range(50):
        C = int(rng.integers(2, 5))
        p = int(rng.integers(2, 6))
        n = 20
        link = "sigmoid" if C == 2 else "softmax"
        params = ModelParams(rng.normal(size=(1 if C == 2 else C, p)), link, l2_strength=0.05)
        X, y = rng.normal(size=(n, p)), rng.integers(0, C, size=n)
        th = params.theta
        fd = _fd(lambda t: M.loss_point(params.with_theta(t), X[0], y[0]), th, 1e-6)
        g_err = max(g_err, _rel(M.grad_point(params, X[0], y[0]), fd))

        data = type("D", (), {"X": X, "y": y, "n": n, "n_classes": C})()
        obj = FlcObjective(build_distortion(C, float(rng.uniform(0.1, 4))), rng.choice(n, 8, replace=False), n)
        fd = _fd(lambda t: flc_adjusted_loss(data, params.with_theta(t), obj), th, 1e-6)
        f_err = max(f_err, _rel(flc_adjusted_gradient(data, params, obj), fd))

        H = M.hessian(data, params)
        grad = lambda t: M.mean_gradient(params.with_theta(t), X, y) + params.l2_strength * t
        fdH = np.column_stack([(grad(th + e) - grad(th - e)) / 2e-5 for e in np.eye(th.size) * 1e-5])
        h_err = max(h_err, _rel(H, fdH))
    dt = time.perf_counter() - t0
    ok = g_err <= 1e-5 and f_err <= 1e-5 and h_err <= 1e-4 and dt < 30
    assert _report(2, ok, f"grad {g_err:.1e}, corrected grad {f_err:.1e}, Hessian {h_err:.1e}, {dt:.2f} s", capsys)


def test_criterion_03_ihvp_agreement(capsys):
    t0 = time.perf_counter()
    ds = make_synthetic(2000, (2, 2, 2, 2, 2, 3, 3), seed=3)
    tr, te = split(ds, 0.2, seed=3)
    etr, ete = encode(tr), encode(te)
    params = M.train(etr, TrainConfig(l2_strength=1e-2))
    v = -M.mean_gradient(params, ete.X, ete.y)
    ex = ihvp(etr, params, v, IhvpConfig("explicit", damping=1e-2)).solution
    cg = ihvp(etr, params, v, IhvpConfig("cg", damping=1e-2)).solution
    se = ihvp(etr, params, v, IhvpConfig("stochastic", damping=1e-2, se_recursion_depth=500,
                                         se_repeats=10, se_batch_size=10, seed=0)).solution
    dt = time.perf_counter() - t0
    e_cg, e_se = _rel(cg, ex), _rel(se, ex)
    ok = e_cg <= 1e-4 and e_se <= 5e-2 and dt < 60
    assert _report(3, ok, f"p={params.theta.size}, cg {e_cg:.1e}, stochastic {e_se:.1e} "
                          f"(depth 500, 10 repeats, batch 10), {dt:.2f} s", capsys)


def test_criterion_04_additivity(capsys):
    t0 = time.perf_counter()
    tr, te, etr, ete, cfg, params = _binary_instance(4)
    cache = GradCache.build(etr, params, ete)
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        rows = rng.choice(etr.n, size=int(rng.integers(2, 40)), replace=False)
        names = ["label"] if rng.random() < 0.5 else ["x0", "x3", "label"]
        plan = PerturbationPlan.for_dataset(tr, names, float(rng.uniform(0.01, 5)))
        whole = influence_rr(etr, params, rows, plan, cache=cache).raw_influence
        parts = sum(influence_rr(etr, params, [i], plan, cache=cache).raw_influence for i in rows)
        worst = max(worst, abs(whole - parts) / abs(whole))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 30
    assert _report(4, ok, f"max relative gap {worst:.1e} over 20 groups, {dt:.2f} s", capsys)


def test_criterion_05_consistency(capsys):
    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(20):
        C = int(rng.integers(2, 5))
        ds = make_synthetic(300, (2, 3), n_classes=C, seed=100 + k)
        tr, te = split(ds, 0.2, seed=k)
        etr, ete = encode(tr), encode(te)
        params = M.train(etr, TrainConfig(l2_strength=float(rng.uniform(1e-3, 1e-1))))
        cache = GradCache.build(etr, params, ete)
        rows = rng.choice(etr.n, size=int(rng.integers(1, 60)), replace=False)
        eps = float(rng.uniform(0, 10))
        plan = PerturbationPlan.for_dataset(tr, ["label"], eps)
        a = influence_rr(etr, params, rows, plan, scaling="exact", cache=cache).raw_influence
        b = influence_rr_label(etr, params, rows, eps, cache=cache).raw_influence
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    ok = worst <= 1e-12
    assert _report(5, ok, f"max relative gap {worst:.1e} over 20 configurations", capsys)


def _estimator_vs_oracle(correction):
    tr, te, etr, ete, cfg, params = _binary_instance(0)
    group = select_group(tr, SelectionRule("x0", "1", 0.10, seed=0), test=te)
    plan = PerturbationPlan.for_dataset(tr, ["label"], 1.0)
    eps = np.linspace(0.01, 5, 10)
    rep = run_sweep_comparison(etr, ete, params, [group], eps, plan, correction=correction,
                               cfg=cfg, repeats=5, seed=0)
    est = [abs(r.estimated_delta) for r in rep.rows]
    act = [r.actual_abs for r in rep.rows]
    return group.size, spearman_rho(est, act), mae(est, act)


def test_criterion_06_estimator_vs_oracle(capsys):
    t0 = time.perf_counter()
    size, rho, err = _estimator_vs_oracle("none")
    dt = time.perf_counter() - t0
    ok = rho >= 0.8 and err <= 0.05 and dt < 300
    assert _report(6, ok, f"|S|={size}, rho {rho:.3f}, MAE {err:.2e}, {dt:.1f} s", capsys)


def test_criterion_07_estimator_vs_oracle_flc(capsys):
    t0 = time.perf_counter()
    size, rho, err = _estimator_vs_oracle("flc")
    dt = time.perf_counter() - t0
    ok = err <= 0.02 and dt < 600
    assert _report(7, ok, f"|S|={size}, MAE {err:.2e} (rho {rho:.3f}, not asserted), {dt:.1f} s", capsys)


def test_criterion_08_corrected_training_on_noisy_labels(capsys):
    # the property concerns the unpenalized minimizer; a small penalty keeps its bias negligible
    t0 = time.perf_counter()
    cfg = TrainConfig(l2_strength=1e-4)
    gaps = []
    for s in range(5):
        ds = make_synthetic(6250, seed=200 + s)
        tr, te = split(ds, 0.2, seed=s)
        etr, ete = encode(tr), encode(te)
        clean = M.train(etr, cfg)
        rows = np.random.default_rng(s).choice(tr.n, size=int(0.3 * tr.n), replace=False)
        plan = PerturbationPlan.for_dataset(tr, ["label"], 1.0)
        noisy = etr.reencode(perturb_records(tr.records, plan, rows, seed=s))
        fixed = train_with_flc(noisy, FlcObjective(build_distortion(2, 1.0), rows, tr.n), cfg)
        base = M.mean_loss(clean, ete.X, ete.y)
        gaps.append((M.mean_loss(fixed, ete.X, ete.y) - base) / base)
    gap = float(np.mean(gaps))
    dt = time.perf_counter() - t0
    ok = abs(gap) <= 0.01 and dt < 300
    assert _report(8, ok, f"mean relative clean-test loss gap {gap:+.2e} over 5 seeds "
                          f"(n_train={tr.n}), {dt:.1f} s", capsys)


def test_criterion_09_timing(capsys):
    t0 = time.perf_counter()
    tr, te, etr, ete, cfg, params = _binary_instance(0)
    groups = [select_group(tr, SelectionRule("x0", "1", float(k), seed=0), test=te)
              for k in np.linspace(0.01, 0.30, 10)]
    plan = PerturbationPlan.for_dataset(tr, ["label"], 1.0)
    eps = np.geomspace(1e-3, 10, 30)
    rep = run_sweep_comparison(etr, ete, params, groups, eps, plan, cfg=cfg, repeats=1, seed=0)
    est, orc = rep.timings["estimator_phase"], rep.timings["oracle_phase"]
    dt = time.perf_counter() - t0
    ok = est <= orc / 10 and dt < 1800
    assert _report(9, ok, f"estimator {est:.3f} s vs oracle {orc:.2f} s over {rep.timings['retrains']} "
                          f"retrains (ratio {orc / est:.0f}x), {dt:.1f} s", capsys)


ADULT_COLUMNS = ["age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
                 "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
                 "hours-per-week", "native-country", "income"]
ADULT_FEATURES = ["workclass", "education", "marital-status", "occupation", "relationship",
                  "race", "sex"]


def _read_adult(path):
    rows = []
    for line in Path(path).read_text().splitlines():
        parts = [p.strip().rstrip(".") for p in line.split(",")]
        if len(parts) != len(ADULT_COLUMNS) or "?" in parts:
            continue
        rows.append(dict(zip(ADULT_COLUMNS, parts)))
    return rows


def test_criterion_10_adult(capsys):
    root = os.environ.get("LDP_ADULT_DIR")
    if not root or not (Path(root) / "adult.data").exists():
        RESULTS[10] = "SKIP criterion 10: Adult data not available (set LDP_ADULT_DIR)"
        if capsys is not None:
            with capsys.disabled():
                print("\n" + RESULTS[10])
        pytest.skip("Adult data not available")
    t0 = time.perf_counter()
    train_rows = _read_adult(Path(root) / "adult.data")
    test_rows = _read_adult(Path(root) / "adult.test")
    names = ADULT_FEATURES + ["income"]
    attrs = tuple(CategoricalDomain(n, tuple(sorted({r[n] for r in train_rows + test_rows})))
                  for n in names)
    to_records = lambda rows: np.array([[a.index(r[a.name]) for a in attrs] for r in rows])
    tr = Dataset(attrs, to_records(train_rows), len(names) - 1)
    te = Dataset(attrs, to_records(test_rows), len(names) - 1)
    etr, ete = encode(tr), encode(te)
    cfg = TrainConfig(l2_strength=1e-3)
    params = M.train(etr, cfg)
    fractions = np.linspace(0.01, 0.30, 10)
    groups = [select_group(tr, SelectionRule("sex", "Female", float(k), seed=0), test=te)
              for k in fractions]
    plan = PerturbationPlan.for_dataset(tr, ["income"], 1.0)
    rep = run_sweep_comparison(etr, ete, params, groups, np.geomspace(1e-3, 10, 30), plan,
                               cfg=cfg, repeats=3)
    by_k = {a["fraction"]: a for a in rep.aggregates}
    a30 = by_k[max(by_k)]
    rho_ok = all(a["rho"] >= 0.8 for k, a in by_k.items() if k >= 0.10)
    ok = 0.005 <= a30["mae"] <= 0.1 and rho_ok
    dt = time.perf_counter() - t0
    assert _report(10, ok, f"k=30% MAE {a30['mae']:.4f}, min rho (k>=10%) "
                           f"{min(a['rho'] for k, a in by_k.items() if k >= 0.10):.3f}, {dt:.0f} s", capsys)


if __name__ == "__main__":
    failures = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn(None)
            except AssertionError:
                failures += 1
            except pytest.skip.Exception:
                print(RESULTS[10])
    sys.exit(1 if failures else 0)
