"""Inverse-Hessian-vector products ``s = H^-1 v`` for the training objective."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import HessianOperator, ModelParams, hessian_operator


class IhvpError(ArithmeticError):
    pass


@dataclass(frozen=True)
class IhvpConfig:
    """How to solve ``H s = v``.

    ``damping`` is added to the Hessian on top of the model's own L2 term.
    For the stochastic method ``se_scale=None`` picks a scale from a bound on
    the single-point Hessian norms.
    """

    method: str = "explicit"
    damping: float = 1e-2
    cg_tolerance: float = 1e-10
    cg_max_iters: int = 1000
    se_recursion_depth: int = 500
    se_repeats: int = 10
    se_scale: float | None = None
    se_batch_size: int = 10
    seed: int = 0
    explicit_cap: int = 4096

    def __post_init__(self):
        if self.method not in ("explicit", "cg", "stochastic"):
            raise ValueError(f"unknown IHVP method {self.method!r}")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")
        if not self.cg_tolerance > 0 or self.cg_max_iters < 1:
            raise ValueError("invalid CG settings")
        if self.se_recursion_depth < 1 or self.se_repeats < 1 or self.se_batch_size < 1:
            raise ValueError("invalid stochastic-estimation settings")
        if self.se_scale is not None and not self.se_scale > 0:
            raise ValueError("se_scale must be positive")


@dataclass
class IhvpResult:
    solution: np.ndarray
    method: str
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    seconds: float = 0.0
    history: list = field(default_factory=list, repr=False)


def _relative(r, v):
    nv = np.linalg.norm(v)
    return float(np.linalg.norm(r) / nv) if nv > 0 else float(np.linalg.norm(r))


def ihvp_explicit(data, params: ModelParams, v, cfg: IhvpConfig = IhvpConfig(),
                  op: HessianOperator | None = None) -> IhvpResult:
    """Solve with a Cholesky factorization of the materialized Hessian."""
    t0 = time.perf_counter()
    op = op or hessian_operator(data, params, cfg.damping)
    if op.dim > cfg.explicit_cap:
        raise IhvpError(
            f"parameter dimension {op.dim} exceeds explicit cap {cfg.explicit_cap}; use cg or stochastic"
        )
    v = np.asarray(v, dtype=float)
    H = op.dense()
    try:
        factor = cho_factor(H)
    except np.linalg.LinAlgError:
        raise IhvpError("Hessian is not positive definite; increase damping") from None
    s = cho_solve(factor, v)
    return IhvpResult(s, "explicit", 1, _relative(H @ s - v, v), True, time.perf_counter() - t0)


def conjugate_gradient(matvec, b, tol: float, max_iters: int):
    """Plain CG for a symmetric positive definite operator.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns the iterate, the number of
    iterations, and the residual-norm history (relative to ``||b||``).
    """
    x = np.zeros_like(b)
    r = b.copy()
    nb = np.linalg.norm(b)
    if nb == 0:
        return x, 0, [0.0]
    d = r.copy()
    rr = r @ r
    history = [np.sqrt(rr) / nb]
    k = 0
    while history[-1] > tol and k < max_iters:
        Ad = matvec(d)
        curv = d @ Ad
        if curv <= 0:
            raise IhvpError("operator is not positive definite; increase damping")
        alpha = rr / curv
        x += alpha * d
        r -= alpha * Ad
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
        k += 1
        history.append(np.sqrt(rr) / nb)
    return x, k, history


def ihvp_cg(data, params: ModelParams, v, cfg: IhvpConfig = IhvpConfig(),
            op: HessianOperator | None = None) -> IhvpResult:
    """Matrix-free conjugate gradient on Hessian-vector products."""
    t0 = time.perf_counter()
    op = op or hessian_operator(data, params, cfg.damping)
    v = np.asarray(v, dtype=float)
    s, k, hist = conjugate_gradient(op.matvec, v, cfg.cg_tolerance, cfg.cg_max_iters)
    res = _relative(op.matvec(s) - v, v) if k else 0.0
    return IhvpResult(s, "cg", k, res, hist[-1] <= cfg.cg_tolerance,
                      time.perf_counter() - t0, hist)


def power_iteration(matvec, dim: int, iters: int = 100, seed: int = 0) -> float:
    """Estimate of the largest eigenvalue of a symmetric PSD operator."""
    x = np.random.default_rng(seed).normal(size=dim)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = matvec(x)
        lam_new = float(np.linalg.norm(y))
        if lam_new == 0:
            return 0.0
        x = y / lam_new
        if abs(lam_new - lam) <= 1e-10 * lam_new:
            return lam_new
        lam = lam_new
    return lam


def ihvp_stochastic(data, params: ModelParams, v, cfg: IhvpConfig = IhvpConfig(),
                    op: HessianOperator | None = None) -> IhvpResult:
    """Truncated Neumann-series estimate using sampled Hessians.

    Each of ``se_repeats`` runs iterates ``s <- v + (I - scale * H_batch) s`` for
    ``se_recursion_depth`` steps with minibatches drawn uniformly with
    replacement; the estimate is ``scale`` times the average final iterate.
    Repeat ``j`` draws from a stream seeded by ``(seed, j)``.
    """
    t0 = time.perf_counter()
    op = op or hessian_operator(data, params, cfg.damping)
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return IhvpResult(np.zeros_like(v), "stochastic", 0, 0.0, True, time.perf_counter() - t0)
    if cfg.se_scale is None:
        scale = 0.9 / op.point_norm_bound()
    else:
        scale = cfg.se_scale
        lam = power_iteration(op.matvec, op.dim, seed=cfg.seed)
        if scale * lam >= 1.0:
            raise IhvpError(
                f"se_scale {scale:g} times Hessian norm {lam:.3g} is >= 1; "
                "decrease se_scale or increase damping"
            )
    nv = np.linalg.norm(v)
    total = np.zeros_like(v)
    for j in range(cfg.se_repeats):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, j]))
        rows = rng.integers(0, op.n, size=(cfg.se_recursion_depth, cfg.se_batch_size))
        s = v.copy()
        for batch in rows:
            s = v + s - scale * op.sample_matvec(batch, s)
            if np.linalg.norm(s) > 10 * nv * cfg.se_recursion_depth or not np.all(np.isfinite(s)):
                raise IhvpError(
                    "stochastic estimation diverged; decrease se_scale or increase damping"
                )
        total += s
    s = scale * total / cfg.se_repeats
    return IhvpResult(s, "stochastic", cfg.se_recursion_depth * cfg.se_repeats,
                      _relative(op.matvec(s) - v, v), True, time.perf_counter() - t0)


_METHODS = {"explicit": ihvp_explicit, "cg": ihvp_cg, "stochastic": ihvp_stochastic}


def ihvp(data, params: ModelParams, v, cfg: IhvpConfig = IhvpConfig()) -> IhvpResult:
    return _METHODS[cfg.method](data, params, v, cfg)
