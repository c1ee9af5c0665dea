"""Ground truth by actually randomizing and retraining, plus estimator scoring."""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import model as M
from .correction import FlcObjective, train_with_flc
from .ihvp import IhvpConfig
from .influence import (
    TestGradientCache, influence_rr, influence_rr_flc, influence_rr_label,
)
from .model import ModelParams, TrainConfig
from .randomize import PerturbationPlan, build_distortion, perturb_records


@dataclass
class OracleResult:
    signed_delta: float
    retrained_params: ModelParams
    wall_time: float
    converged: bool = True

    @property
    def actual_loss_delta(self) -> float:
        return abs(self.signed_delta)


def _test_rows(test, group):
    te = group.test_indices if group.test_indices.size else np.arange(test.n)
    return test.X[te], test.y[te]


def retrain_actual(train, test, baseline: ModelParams, group, plan: PerturbationPlan,
                   correction: str = "none", cfg: TrainConfig = TrainConfig(),
                   seed: int = 0) -> OracleResult:
    """Randomize exactly the group's rows, retrain from scratch and measure the test-loss change.

    With ``correction="flc"`` the plan must include the label; the randomized
    rows are then fit with the forward-corrected loss for the label's
    distortion matrix.
    """
    if correction not in ("none", "flc"):
        raise ValueError(f"unknown correction {correction!r}")
    t0 = time.perf_counter()
    rows = group.indices
    X_te, y_te = _test_rows(test, group)
    if rows.size == 0:
        # nothing to randomize: the retrain is the baseline problem
        noisy = train
    else:
        noisy = train.reencode(perturb_records(train.records, plan, rows, seed))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", M.ConvergenceWarning)
        if correction == "flc":
            label = train.encoder.label_attribute
            if label not in plan.attributes:
                raise ValueError("forward loss correction needs the label in the perturbation plan")
            eps = plan.epsilons[plan.attributes.index(label)]
            obj = FlcObjective(build_distortion(train.n_classes, eps), rows, train.n)
            params = train_with_flc(noisy, obj, cfg)
        else:
            params = M.train(noisy, cfg)
    converged = not any(issubclass(w.category, M.ConvergenceWarning) for w in caught)
    delta = M.mean_loss(params, X_te, y_te) - M.mean_loss(baseline, X_te, y_te)
    return OracleResult(float(delta), params, time.perf_counter() - t0, converged)


def spearman_rho(estimates, actuals) -> float:
    """Rank correlation with average ranks for ties; a constant input gives 0 with a warning."""
    a = np.asarray(estimates, dtype=float)
    b = np.asarray(actuals, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("estimates and actuals must be 1-D with equal length")
    if a.size < 2:
        raise ValueError("need at least 2 points for a rank correlation")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0:
        warnings.warn("constant input: rank correlation undefined, reporting 0", RuntimeWarning,
                      stacklevel=2)
        return 0.0
    return float(np.clip(ra @ rb / denom, -1.0, 1.0))


def mae(estimates, actuals) -> float:
    a = np.asarray(estimates, dtype=float)
    b = np.asarray(actuals, dtype=float)
    if a.shape != b.shape:
        raise ValueError("estimates and actuals must have equal length")
    return float(np.mean(np.abs(a - b)))


def estimate(train, params, group, plan: PerturbationPlan, cache: TestGradientCache,
             correction: str = "none", scaling: str = "exact"):
    """Dispatch to the estimator matching the plan and correction."""
    label = train.encoder.label_attribute if train.encoder is not None else None
    if correction == "flc":
        if plan.attributes != (label,):
            raise ValueError("the corrected estimator covers label-only randomization")
        return influence_rr_flc(train, params, group, plan.epsilons[0], cache=cache)
    if plan.attributes == (label,) and scaling == "exact":
        return influence_rr_label(train, params, group, plan.epsilons[0], cache=cache)
    return influence_rr(train, params, group, plan, scaling=scaling, cache=cache)


@dataclass
class SweepRow:
    group_size: int
    fraction: float | None
    epsilon: float
    estimated_delta: float
    estimate_seconds: float
    actual_signed: float | None = None
    actual_abs: float | None = None
    retrain_seconds: float | None = None
    repeats: int = 0
    calibrated_delta: float | None = None


@dataclass
class SweepReport:
    rows: list[SweepRow]
    aggregates: list[dict] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    fit: dict | None = None
    config: dict = field(default_factory=dict)
    baseline: ModelParams | None = None


def aggregate(rows: list[SweepRow]) -> list[dict]:
    """Per group size: MAE and rank correlation of |estimate| against mean |actual|."""
    out = []
    for size in sorted({r.group_size for r in rows}):
        sel = [r for r in rows if r.group_size == size and r.actual_abs is not None]
        agg = {"group_size": size, "fraction": next(r.fraction for r in rows if r.group_size == size),
               "n_epsilons": len(sel)}
        if sel:
            est = [abs(r.estimated_delta) for r in sel]
            act = [r.actual_abs for r in sel]
            agg["mae"] = mae(est, act)
            if len(sel) >= 2:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    agg["rho"] = spearman_rho(est, act)
        out.append(agg)
    return out


def run_sweep_comparison(train, test, params: ModelParams, groups, epsilons, plan: PerturbationPlan,
                         correction: str = "none", cfg: TrainConfig = TrainConfig(),
                         ihvp_cfg: IhvpConfig = IhvpConfig(), repeats: int = 10, seed: int = 0,
                         scaling: str = "exact", oracle_epsilons=None, threads: int = 1,
                         cache: TestGradientCache | None = None) -> SweepReport:
    """Estimate every (group, epsilon) pair and compare against averaged retrains.

    The test-gradient IHVP is computed once and shared by every estimate. Repeat
    ``r`` of an oracle retrain randomizes with seed ``seed + r``; training itself
    is deterministic. ``oracle_epsilons`` limits retraining to a subset of the
    grid (``None`` retrains all, an empty list none).
    """
    groups = list(groups)
    epsilons = [float(e) for e in epsilons]
    if not groups or not epsilons:
        raise ValueError("need at least one group and one epsilon")
    te = groups[0].test_indices
    if any(not np.array_equal(g.test_indices, te) for g in groups):
        raise ValueError("every group must share the same test group")
    timings = {}
    t0 = time.perf_counter()
    if cache is None:
        cache = TestGradientCache.build(train, params, test, te, ihvp_cfg)
    timings["ihvp"] = cache.ihvp_seconds
    timings["cache_build"] = time.perf_counter() - t0

    rows = []
    t_est = time.perf_counter()
    for g in groups:
        for eps in epsilons:
            res = estimate(train, params, g, plan.with_epsilon(eps), cache, correction, scaling)
            frac = g.rule.fraction if g.rule is not None else None
            rows.append(SweepRow(g.size, frac, eps, res.estimated_loss_delta, res.metadata["seconds"]))
    timings["estimates"] = time.perf_counter() - t_est
    timings["estimator_phase"] = timings["cache_build"] + timings["estimates"]

    retrain_eps = epsilons if oracle_epsilons is None else [float(e) for e in oracle_epsilons]
    jobs = [(i, r) for i, row in enumerate(rows) if row.epsilon in retrain_eps for r in range(repeats)]
    t_or = time.perf_counter()

    def work(job):
        i, r = job
        g = groups[i // len(epsilons)]
        return retrain_actual(train, test, params, g, plan.with_epsilon(rows[i].epsilon),
                              correction, cfg, seed + r)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    by_row: dict[int, list[OracleResult]] = {}
    for (i, _), res in zip(jobs, results):
        by_row.setdefault(i, []).append(res)
    for i, rs in by_row.items():
        rows[i].actual_signed = float(np.mean([x.signed_delta for x in rs]))
        rows[i].actual_abs = float(np.mean([x.actual_loss_delta for x in rs]))
        rows[i].retrain_seconds = float(np.mean([x.wall_time for x in rs]))
        rows[i].repeats = len(rs)
    timings["oracle_phase"] = time.perf_counter() - t_or if jobs else 0.0
    timings["retrains"] = len(jobs)
    timings["nonconverged_retrains"] = sum(not x.converged for x in results)

    report = SweepReport(rows, aggregate(rows), timings, baseline=params)
    if oracle_epsilons is not None and jobs:
        report.fit = calibration_fit(rows)
        if report.fit is not None:
            for r in rows:
                r.calibrated_delta = report.fit["slope"] * abs(r.estimated_delta) + report.fit["intercept"]
    return report


def calibration_fit(rows: list[SweepRow]) -> dict | None:
    """Least-squares line from |estimate| to mean |actual| over the retrained rows."""
    pts = [(abs(r.estimated_delta), r.actual_abs) for r in rows if r.actual_abs is not None]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    if np.ptp(x) == 0:
        return None
    slope, intercept = np.polyfit(x, y, 1)
    return {"slope": float(slope), "intercept": float(intercept), "points": len(pts)}
