"""Binary logistic and multinomial softmax regression with exact derivatives.

Every per-point loss in this package has the form ``-log(h(x)^T t)`` where
``h`` is the predicted class distribution and ``t`` a nonnegative target
vector: a one-hot label for plain cross-entropy, or a column of a distortion
matrix for the forward-corrected loss. In logit space the gradient is
``h - r`` with ``r = softmax(z + log t)`` and the Hessian is
``(diag(h) - h h^T) - (diag(r) - r r^T)``, so a single code path serves both.

Parameters are stored as a ``(K, p)`` weight matrix flattened row-major, where
``K = 1`` for the sigmoid link (logits ``(0, w.x)``) and ``K = C`` for softmax.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelParams:
    weights: np.ndarray
    link: str
    l2_strength: float = 1e-3
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float)).copy()
        if self.link not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown link {self.link!r}")
        if self.link == "sigmoid" and w.shape[0] != 1:
            raise ValueError("sigmoid link stores a single weight row")
        if self.link == "softmax" and w.shape[0] < 2:
            raise ValueError("softmax link needs one weight row per class")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite weights")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_classes(self) -> int:
        return 2 if self.link == "sigmoid" else self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return self.weights.ravel()

    def with_theta(self, theta, **metadata) -> "ModelParams":
        return replace(self, weights=np.asarray(theta, dtype=float).reshape(self.weights.shape),
                       metadata={**self.metadata, **metadata})

    @classmethod
    def zeros(cls, p: int, n_classes: int, l2_strength: float = 1e-3, link: str = "auto"):
        link = default_link(n_classes) if link == "auto" else link
        k = 1 if link == "sigmoid" else n_classes
        return cls(np.zeros((k, p)), link, l2_strength)

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "shape": list(self.weights.shape),
            "weights": self.weights.ravel().tolist(),
            "l2_strength": self.l2_strength,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        w = np.asarray(d["weights"], dtype=float).reshape(d["shape"])
        return cls(w, d["link"], float(d["l2_strength"]), dict(d.get("metadata", {})))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_link(n_classes: int) -> str:
    return "sigmoid" if n_classes == 2 else "softmax"


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    ``seed`` drives the random initial point when ``init_scale > 0``; the
    default is a zero start, which makes every retrain begin identically.
    """

    optimizer: str = "newton"
    learning_rate: float = 1.0
    max_epochs: int = 200
    tolerance: float = 1e-9
    l2_strength: float = 1e-3
    link: str = "auto"
    seed: int = 0
    init_scale: float = 0.0

    def __post_init__(self):
        if self.optimizer not in ("newton", "gradient-descent"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be nonnegative")


# ---------------------------------------------------------------------------
# logit-space primitives

def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def full_logits(params: ModelParams, X) -> np.ndarray:
    X = _as_2d(X)
    if X.shape[1] != params.p:
        raise ValueError(f"feature width {X.shape[1]} does not match model width {params.p}")
    Z = X @ params.weights.T
    if params.link == "sigmoid":
        Z = np.column_stack([np.zeros(len(Z)), Z[:, 0]])
    return Z


def predict_proba(params: ModelParams, X) -> np.ndarray:
    """Class probabilities; a single row in gives a single vector out."""
    P = _normalize(full_logits(params, X))[1]
    return P[0] if np.asarray(X).ndim == 1 else P


def targets(y, n_classes: int) -> np.ndarray:
    """One-hot target vectors for integer labels."""
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    T = np.zeros((y.size, n_classes))
    T[np.arange(y.size), y] = 1.0
    return T


def _normalize(Z):
    """Row-wise log-sum-exp and softmax from one max-shifted pass."""
    m = Z.max(axis=1, keepdims=True)
    E = np.exp(Z - m)
    s = E.sum(axis=1, keepdims=True)
    return (m + np.log(s))[:, 0], E / s


def _terms(Z, T):
    with np.errstate(divide="ignore"):
        logT = np.log(T)
    lse, h = _normalize(Z)
    lse_t, r = _normalize(Z + logT)
    return lse - lse_t, h, r


def _free(params: ModelParams, G):
    # gradient w.r.t. the free logits
    return G[:, 1:] if params.link == "sigmoid" else G


def _curvature(params: ModelParams, h, r):
    A = (np.einsum("nk,kl->nkl", h, np.eye(h.shape[1])) - h[:, :, None] * h[:, None, :]
         - np.einsum("nk,kl->nkl", r, np.eye(r.shape[1])) + r[:, :, None] * r[:, None, :])
    return A[:, 1:, 1:] if params.link == "sigmoid" else A


def _target_matrix(params: ModelParams, y, T):
    if T is not None:
        T = np.atleast_2d(np.asarray(T, dtype=float))
        if T.shape[1] != params.n_classes:
            raise ValueError("target vectors must have one entry per class")
        return T
    return targets(y, params.n_classes)


def losses(params: ModelParams, X, y=None, T=None) -> np.ndarray:
    """Per-point losses ``-log(h(x)^T t)``; regularization is not included."""
    loss, _, _ = _terms(full_logits(params, X), _target_matrix(params, y, T))
    return loss


def loss_point(params: ModelParams, x, y) -> float:
    return float(losses(params, _as_2d(x), [y])[0])


def point_gradients(params: ModelParams, X, y=None, T=None) -> np.ndarray:
    """Per-point gradients, one flattened parameter vector per row."""
    X = _as_2d(X)
    _, h, r = _terms(full_logits(params, X), _target_matrix(params, y, T))
    G = _free(params, h - r)
    return (G[:, :, None] * X[:, None, :]).reshape(len(X), -1)


def grad_point(params: ModelParams, x, y) -> np.ndarray:
    return point_gradients(params, _as_2d(x), [y])[0]


def weighted_gradient(params: ModelParams, X, y=None, T=None, weights=None) -> np.ndarray:
    """``sum_i w_i * grad loss_i`` without forming per-point gradients."""
    X = _as_2d(X)
    _, h, r = _terms(full_logits(params, X), _target_matrix(params, y, T))
    G = _free(params, h - r)
    if weights is not None:
        G = G * np.asarray(weights, dtype=float)[:, None]
    return (G.T @ X).ravel()


def mean_loss(params: ModelParams, X, y=None, T=None) -> float:
    return float(np.mean(losses(params, X, y, T)))


def mean_gradient(params: ModelParams, X, y=None, T=None) -> np.ndarray:
    X = _as_2d(X)
    return weighted_gradient(params, X, y, T) / len(X)


# ---------------------------------------------------------------------------
# curvature

class HessianOperator:
    """Average-loss Hessian plus ``shift * I``, usable as a matrix-free operator.

    The per-point logit curvature is computed once; :meth:`matvec` then costs
    O(n p K) and :meth:`sample_matvec` applies the Hessian of a subset of points.
    """

    def __init__(self, params: ModelParams, X, y=None, T=None, shift: float = 0.0):
        self.params = params
        self.X = _as_2d(X)
        _, h, r = _terms(full_logits(params, self.X), _target_matrix(params, y, T))
        self.A = _curvature(params, h, r)
        self.shift = float(shift)
        self.K = self.A.shape[1]
        self.dim = self.K * self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def _apply(self, X, A, v):
        V = np.asarray(v, dtype=float).reshape(self.K, -1)
        Zv = X @ V.T
        out = np.einsum("nkl,nl->nk", A, Zv)
        return (out.T @ X).ravel()

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"vector of length {v.size} does not match parameter dimension {self.dim}")
        return self._apply(self.X, self.A, v) / self.n + self.shift * v

    def sample_matvec(self, rows, v) -> np.ndarray:
        rows = np.atleast_1d(rows)
        return self._apply(self.X[rows], self.A[rows], v) / len(rows) + self.shift * np.asarray(v)

    def dense(self) -> np.ndarray:
        p = self.X.shape[1]
        H = np.empty((self.dim, self.dim))
        for k in range(self.K):
            for l in range(k, self.K):
                block = self.X.T @ (self.A[:, k, l][:, None] * self.X) / self.n
                H[k * p:(k + 1) * p, l * p:(l + 1) * p] = block
                H[l * p:(l + 1) * p, k * p:(k + 1) * p] = block.T
        H += self.shift * np.eye(self.dim)
        return 0.5 * (H + H.T)

    def point_norm_bound(self) -> float:
        """Upper bound on the spectral norm of any single-point Hessian."""
        eig = np.linalg.eigvalsh(self.A).max(axis=1) if self.K > 1 else self.A[:, 0, 0]
        sq = np.einsum("ij,ij->i", self.X, self.X)
        return float(np.max(np.abs(eig) * sq)) + self.shift


def _data_arrays(data):
    return data.X, data.y


def hessian(data, params: ModelParams, damping: float = 0.0) -> np.ndarray:
    """Explicit Hessian of the regularized training objective (plus ``damping * I``)."""
    X, y = _data_arrays(data)
    if len(X) == 0:
        raise ValueError("empty dataset")
    return HessianOperator(params, X, y, shift=params.l2_strength + damping).dense()


def hessian_operator(data, params: ModelParams, damping: float = 0.0) -> HessianOperator:
    X, y = _data_arrays(data)
    if len(X) == 0:
        raise ValueError("empty dataset")
    return HessianOperator(params, X, y, shift=params.l2_strength + damping)


def hvp(data, params: ModelParams, v, damping: float = 0.0) -> np.ndarray:
    return hessian_operator(data, params, damping).matvec(v)


# ---------------------------------------------------------------------------
# training

def objective(params: ModelParams, X, T):
    """Regularized empirical risk and its gradient."""
    loss, h, r = _terms(full_logits(params, X), T)
    G = _free(params, h - r)
    n = len(X)
    theta = params.theta
    value = loss.sum() / n + 0.5 * params.l2_strength * theta @ theta
    grad = (G.T @ X).ravel() / n + params.l2_strength * theta
    return float(value), grad


def _initial(p: int, n_classes: int, cfg: TrainConfig) -> ModelParams:
    start = ModelParams.zeros(p, n_classes, cfg.l2_strength, cfg.link)
    if cfg.init_scale > 0:
        rng = np.random.default_rng(cfg.seed)
        start = start.with_theta(rng.normal(scale=cfg.init_scale, size=start.theta.size))
    return start


def fit(X, T, n_classes: int, cfg: TrainConfig) -> ModelParams:
    """Minimize the regularized objective for target vectors ``T``."""
    X = _as_2d(X)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if cfg.optimizer == "newton" and cfg.l2_strength <= 0:
        raise ValueError("newton training requires l2_strength > 0")
    params = _initial(X.shape[1], n_classes, cfg)
    t0 = time.perf_counter()
    step = _newton_step if cfg.optimizer == "newton" else _gd_step
    value, grad = objective(params, X, T)
    epochs = 0
    gnorm = float(np.linalg.norm(grad))
    while gnorm > cfg.tolerance and epochs < cfg.max_epochs:
        new, value, grad = step(params, X, T, value, grad, cfg)
        epochs += 1
        if new is params:
            break
        params = new
        gnorm = float(np.linalg.norm(grad))
    converged = gnorm <= cfg.tolerance
    if not converged:
        warnings.warn(
            f"{cfg.optimizer} stopped after {epochs} epochs with gradient norm {gnorm:.3g}",
            ConvergenceWarning, stacklevel=2,
        )
    return params.with_theta(
        params.theta, epochs=epochs, grad_norm=gnorm, converged=bool(converged),
        optimizer=cfg.optimizer, train_seconds=time.perf_counter() - t0,
    )


def _newton_step(params, X, T, value, grad, cfg):
    H = HessianOperator(params, X, T=T, shift=params.l2_strength).dense()
    # the corrected loss need not be convex; shift until the system is PD
    mu = 0.0
    while True:
        try:
            c = np.linalg.cholesky(H + mu * np.eye(len(H)))
            break
        except np.linalg.LinAlgError:
            mu = max(2 * mu, 1e-8 * max(1.0, np.abs(H).max()))
    direction = -np.linalg.solve(c.T, np.linalg.solve(c, grad))
    slope = grad @ direction
    t = 1.0
    theta = params.theta
    gnorm = np.linalg.norm(grad)
    # near the optimum value changes drop below rounding; fall back on the gradient norm
    flat = 64 * np.finfo(float).eps * max(1.0, abs(value))
    for _ in range(60):
        cand = params.with_theta(theta + t * direction)
        v, g = objective(cand, X, T)
        if v <= value + 1e-4 * t * slope or (v - value <= flat and np.linalg.norm(g) < gnorm):
            return cand, v, g
        t *= 0.5
    # no decrease possible at working precision
    return params, value, grad


def _gd_step(params, X, T, value, grad, cfg):
    cand = params.with_theta(params.theta - cfg.learning_rate * grad)
    v, g = objective(cand, X, T)
    return cand, v, g


def train(data, cfg: TrainConfig = TrainConfig()) -> ModelParams:
    """Fit the classifier to an :class:`~ldp_influence.dataset.EncodedDataset`."""
    X, y = _data_arrays(data)
    return fit(X, targets(y, data.n_classes), data.n_classes, cfg)
