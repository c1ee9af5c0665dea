"""Influence estimates for removing, perturbing and randomizing training points.

Sign and scale conventions: a raw influence ``I`` is ``eta^T H^-1 gamma`` with
``eta`` the negated gradient of the average test loss and ``gamma`` the
gradient of the summed training-loss change. ``I / n`` approximates the change
in average test loss after retraining.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .ihvp import IhvpConfig, ihvp
from .model import ModelParams
from .randomize import (
    PerturbationPlan, build_distortion, change_probability, joint_outcomes,
    outcome_probabilities, switch_probability,
)


@dataclass(frozen=True)
class InfluenceResult:
    raw_influence: float
    n: int
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def estimated_loss_delta(self) -> float:
        return self.raw_influence / self.n


def _fingerprint(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class TestGradientCache:
    """``eta`` and ``H^-1 eta`` for one (model, test group, IHVP config).

    ``H`` is symmetric, so ``eta^T H^-1 gamma = (H^-1 eta)^T gamma`` and one
    IHVP serves every training-side perturbation.
    """

    eta: np.ndarray
    s_test: np.ndarray
    key: tuple
    n_train: int
    ihvp_seconds: float
    ihvp_info: dict = field(default_factory=dict, compare=False)

    @staticmethod
    def make_key(train, params: ModelParams, test, test_indices, cfg: IhvpConfig) -> tuple:
        return (_fingerprint(params.weights, np.array([params.l2_strength])),
                _fingerprint(np.asarray(test_indices, dtype=np.int64), test.X, test.y),
                _fingerprint(train.X, train.y), cfg)

    @classmethod
    def build(cls, train, params: ModelParams, test, test_indices=None,
              cfg: IhvpConfig = IhvpConfig()) -> "TestGradientCache":
        if test_indices is None:
            test_indices = np.arange(test.n)
        test_indices = np.asarray(test_indices, dtype=np.int64)
        if test_indices.size == 0:
            raise ValueError("test group is empty")
        X_te, y_te = test.X[test_indices], test.y[test_indices]
        eta = -M.mean_gradient(params, X_te, y_te)
        t0 = time.perf_counter()
        res = ihvp(train, params, eta, cfg)
        seconds = time.perf_counter() - t0
        info = {"method": res.method, "iterations": res.iterations, "residual": res.residual,
                "converged": res.converged}
        return cls(eta, res.solution, cls.make_key(train, params, test, test_indices, cfg),
                   train.n, seconds, info)

    def matches(self, train, params, test, test_indices, cfg) -> bool:
        if test_indices is None:
            test_indices = np.arange(test.n)
        return self.key == self.make_key(train, params, test, test_indices, cfg)

    def influence(self, gamma) -> float:
        return float(self.s_test @ gamma)


def get_cache(train, params, test, test_indices=None, cfg: IhvpConfig | None = None,
              cache: TestGradientCache | None = None) -> TestGradientCache:
    """Reuse ``cache`` when it was built for these inputs; otherwise rebuild."""
    cfg = cfg or IhvpConfig()
    if cache is not None and (test is None or cache.matches(train, params, test, test_indices, cfg)):
        return cache
    if test is None:
        raise ValueError("need a test set (or a cache) to evaluate test-loss influence")
    return TestGradientCache.build(train, params, test, test_indices, cfg)


# ---------------------------------------------------------------------------
# single-point influences

def influence_up_params(train, params: ModelParams, z, cfg: IhvpConfig = IhvpConfig()) -> np.ndarray:
    """Parameter-space influence of upweighting ``z = (x, y)``."""
    x, y = z
    g = M.grad_point(params, x, y)
    if not np.any(g):
        return np.zeros_like(g)
    return -ihvp(train, params, g, cfg).solution


def params_after_removal(train, params: ModelParams, z, cfg: IhvpConfig = IhvpConfig()) -> ModelParams:
    """First-order estimate of the parameters retrained without ``z``."""
    delta = influence_up_params(train, params, z, cfg)
    return params.with_theta(params.theta - delta / train.n)


def influence_up_loss(train, params: ModelParams, z, z_test, cfg: IhvpConfig = IhvpConfig()) -> float:
    """Influence of upweighting ``z`` on the loss at ``z_test``."""
    g_test = M.grad_point(params, *z_test)
    return float(g_test @ influence_up_params(train, params, z, cfg))


def _pair_gradient(params, pairs) -> np.ndarray:
    if len(pairs) == 0:
        return np.zeros(params.theta.size)
    X = np.array([np.asarray(z[0], dtype=float) for z, _ in pairs])
    y = np.array([z[1] for z, _ in pairs])
    Xb = np.array([np.asarray(zb[0], dtype=float) for _, zb in pairs])
    yb = np.array([zb[1] for _, zb in pairs])
    return M.weighted_gradient(params, Xb, yb) - M.weighted_gradient(params, X, y)


def influence_pert_loss_g2g(train, params: ModelParams, pairs, test=None, test_indices=None,
                            cfg: IhvpConfig | None = None,
                            cache: TestGradientCache | None = None) -> InfluenceResult:
    """Group-to-group influence of replacing each ``z`` by ``z_beta`` in ``pairs``.

    ``pairs`` is a sequence of ``((x, y), (x_beta, y_beta))`` with encoded rows.
    """
    cache = get_cache(train, params, test, test_indices, cfg, cache)
    t0 = time.perf_counter()
    gamma = _pair_gradient(params, pairs)
    raw = cache.influence(gamma) if len(pairs) else 0.0
    return InfluenceResult(raw, train.n, {"method": "g2g", "group_size": len(pairs),
                                          "seconds": time.perf_counter() - t0})


def approx_params_after_perturbation(train, params: ModelParams, pairs,
                                     cfg: IhvpConfig = IhvpConfig()) -> ModelParams:
    """First-order estimate of the parameters retrained with each ``z`` replaced by ``z_beta``."""
    gamma = _pair_gradient(params, pairs)
    if not np.any(gamma):
        return params
    delta = -ihvp(train, params, gamma, cfg).solution
    return params.with_theta(params.theta + delta / train.n)


# ---------------------------------------------------------------------------
# randomized response

def _label_only_gradient(params, X, y, epsilon, C, corrected: bool):
    """``sum_i sum_{c != y_i} grad[loss(target_c) - loss(x_i, y_i)]`` before scaling.

    ``corrected`` swaps the first loss for the forward-corrected one, whose
    target vector for class ``c`` is column ``c`` of the distortion matrix.
    """
    n = len(X)
    if n == 0:
        return np.zeros(params.theta.size)
    Xr = np.repeat(X, C - 1, axis=0)
    alt = ((np.asarray(y)[:, None] + np.arange(1, C)[None, :]) % C).ravel()
    if corrected:
        T = build_distortion(C, epsilon).entries[:, alt].T
        g_alt = M.weighted_gradient(params, Xr, T=T)
    else:
        g_alt = M.weighted_gradient(params, Xr, alt)
    return g_alt - (C - 1) * M.weighted_gradient(params, X, y)


def influence_rr_label(train, params: ModelParams, group, epsilon: float, test=None,
                       cfg: IhvpConfig | None = None,
                       cache: TestGradientCache | None = None) -> InfluenceResult:
    """Expected influence of label randomization with privacy ``epsilon`` on the group."""
    rows, te = _group_rows(group)
    cache = get_cache(train, params, test, te, cfg, cache)
    t0 = time.perf_counter()
    C = train.n_classes
    coef = switch_probability(C, epsilon)
    gamma = coef * _label_only_gradient(params, train.X[rows], train.y[rows], epsilon, C, False)
    return InfluenceResult(cache.influence(gamma) if rows.size else 0.0, train.n,
                           {"method": "rr-label", "epsilon": float(epsilon), "group_size": int(rows.size),
                            "seconds": time.perf_counter() - t0})


def influence_rr_flc(train, params: ModelParams, group, epsilon: float, test=None,
                     cfg: IhvpConfig | None = None,
                     cache: TestGradientCache | None = None) -> InfluenceResult:
    """Influence of label randomization followed by forward loss correction."""
    rows, te = _group_rows(group)
    cache = get_cache(train, params, test, te, cfg, cache)
    t0 = time.perf_counter()
    C = train.n_classes
    coef = switch_probability(C, epsilon)
    gamma = coef * _label_only_gradient(params, train.X[rows], train.y[rows], epsilon, C, True)
    return InfluenceResult(cache.influence(gamma) if rows.size else 0.0, train.n,
                           {"method": "rr-flc", "epsilon": float(epsilon), "group_size": int(rows.size),
                            "seconds": time.perf_counter() - t0})


def _group_rows(group):
    if hasattr(group, "indices"):
        return np.asarray(group.indices, dtype=np.int64), group.test_indices
    return np.asarray(group, dtype=np.int64), None


def rr_gradient(train, params: ModelParams, rows, plan: PerturbationPlan,
                scaling: str = "exact", max_outcomes: int = 1_000_000,
                chunk_rows: int = 200_000) -> np.ndarray:
    """Gradient of the summed loss change over every alternative outcome of the plan.

    ``scaling="exact"`` weights each alternative by its randomized-response
    probability (the exact expectation); ``scaling="paper"`` applies the single
    change probability of the plan to every alternative.
    """
    if scaling not in ("exact", "paper"):
        raise ValueError(f"unknown scaling mode {scaling!r}")
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        return np.zeros(params.theta.size)
    if train.records is None or train.encoder is None:
        raise ValueError("randomizing attributes needs the categorical records and encoder")
    outcomes = joint_outcomes(plan.cardinalities)
    if len(outcomes) - 1 > max_outcomes:
        raise ValueError(
            f"{len(outcomes) - 1} alternative outcomes per point exceed the cap of {max_outcomes}; "
            "analyse labels alone or fewer attributes"
        )
    attrs = list(plan.attributes)
    base = train.records[rows]
    alpha = base[:, attrs]
    # flat index of each point's own outcome in the lexicographic enumeration
    strides = np.cumprod((plan.cardinalities[1:] + (1,))[::-1])[::-1]
    own = alpha @ strides
    J = len(outcomes)
    shared = change_probability(plan)
    gamma = np.zeros(params.theta.size)
    per_chunk = max(1, chunk_rows // max(J - 1, 1))
    for lo in range(0, rows.size, per_chunk):
        sl = slice(lo, lo + per_chunk)
        b, a, o = base[sl], alpha[sl], own[sl]
        m = len(b)
        rec = np.repeat(b, J, axis=0)
        rec[:, attrs] = np.tile(outcomes, (m, 1))
        mask = np.ones(m * J, dtype=bool)
        mask[np.arange(m) * J + o] = False
        rec = rec[mask]
        if scaling == "exact":
            w = np.prod(outcome_probabilities(np.repeat(a, J, axis=0)[mask], rec[:, attrs], plan), axis=1)
            orig_w = np.add.reduceat(w, np.arange(m) * (J - 1)) if J > 1 else np.zeros(m)
        else:
            w = np.full(len(rec), shared)
            orig_w = np.full(m, shared * (J - 1))
        X_alt, y_alt = train.encoder.encode(rec)
        X0, y0 = train.encoder.encode(b)
        gamma += M.weighted_gradient(params, X_alt, y_alt, weights=w)
        gamma -= M.weighted_gradient(params, X0, y0, weights=orig_w)
    return gamma


def influence_rr(train, params: ModelParams, group, plan: PerturbationPlan, test=None,
                 cfg: IhvpConfig | None = None, scaling: str = "exact",
                 cache: TestGradientCache | None = None,
                 max_outcomes: int = 1_000_000) -> InfluenceResult:
    """Influence of randomizing the plan's attributes (features and/or label) on the group."""
    rows, te = _group_rows(group)
    cache = get_cache(train, params, test, te, cfg, cache)
    t0 = time.perf_counter()
    gamma = rr_gradient(train, params, rows, plan, scaling, max_outcomes)
    return InfluenceResult(cache.influence(gamma) if rows.size else 0.0, train.n,
                           {"method": "rr", "scaling": scaling, "epsilon": list(plan.epsilons),
                            "attributes": list(plan.attributes), "group_size": int(rows.size),
                            "seconds": time.perf_counter() - t0})
