"""Forward loss correction for labels randomized on part of the training set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .model import ModelParams, TrainConfig


def _check_matrix(P, allow_singular: bool = False) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("distortion matrix must be square")
    if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("distortion matrix rows must sum to 1")
    if not allow_singular and np.linalg.matrix_rank(P) < P.shape[0]:
        raise np.linalg.LinAlgError("distortion matrix is singular")
    return P


@dataclass(frozen=True)
class FlcObjective:
    """Corrected loss on ``perturbed`` rows, plain loss on the rest."""

    distortion: object
    perturbed: np.ndarray
    n: int

    def __post_init__(self):
        P = _check_matrix(self.distortion)
        S = np.unique(np.asarray(self.perturbed, dtype=np.int64))
        if S.size and (S[0] < 0 or S[-1] >= self.n):
            raise ValueError("perturbed indices out of range")
        object.__setattr__(self, "distortion", P)
        object.__setattr__(self, "perturbed", S)

    @property
    def clean(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.perturbed)

    def target_matrix(self, y) -> np.ndarray:
        """Per-row target vectors: one-hot on clean rows, ``P[:, y]`` on perturbed rows."""
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (self.n,):
            raise ValueError(f"expected {self.n} labels, got {y.shape}")
        T = M.targets(y, self.distortion.shape[0])
        T[self.perturbed] = self.distortion[:, y[self.perturbed]].T
        return T


def flc_loss(data_noisy, params: ModelParams, P, allow_singular: bool = False) -> float:
    """Average corrected cross-entropy ``-log((P^T h(x))[y_noisy])`` over every row.

    A singular ``P`` (epsilon = 0) is rejected unless ``allow_singular`` is set;
    the value is still defined there but the correction cannot be trained.
    """
    P = _check_matrix(P, allow_singular)
    return M.mean_loss(params, data_noisy.X, T=P[:, data_noisy.y].T)


def flc_adjusted_loss(data_mixed, params: ModelParams, obj: FlcObjective) -> float:
    """Plain loss on clean rows plus corrected loss on perturbed rows, averaged over all."""
    if obj.n != data_mixed.n:
        raise ValueError("objective and data disagree on the number of rows")
    return M.mean_loss(params, data_mixed.X, T=obj.target_matrix(data_mixed.y))


def flc_adjusted_gradient(data_mixed, params: ModelParams, obj: FlcObjective) -> np.ndarray:
    if obj.n != data_mixed.n:
        raise ValueError("objective and data disagree on the number of rows")
    return M.mean_gradient(params, data_mixed.X, T=obj.target_matrix(data_mixed.y))


def train_with_flc(data_mixed, obj: FlcObjective, cfg: TrainConfig = TrainConfig()) -> ModelParams:
    """Minimize the adjusted corrected loss plus the L2 penalty.

    With no perturbed rows the target matrix is one-hot and this runs exactly
    the same computation as :func:`ldp_influence.model.train`.
    """
    if obj.n != data_mixed.n:
        raise ValueError("objective and data disagree on the number of rows")
    return M.fit(data_mixed.X, obj.target_matrix(data_mixed.y), data_mixed.n_classes, cfg)


def compose_group_distortions(groups):
    """Merge per-group label mixes and distortion matrices into one population-level pair.

    ``groups`` is a sequence of ``(pi_k, P_k)`` where ``pi_k`` holds the
    (unnormalized) class mass of group ``k``. Returns ``(pi, P)`` with
    ``pi = sum_k pi_k`` and ``P[u, v] = sum_k pi_k[u] / pi[u] * P_k[u, v]``, so
    that ``sum_k P_k^T pi_k == P^T pi``.
    """
    groups = list(groups)
    if not groups:
        raise ValueError("need at least one group")
    pis = [np.asarray(pi, dtype=float) for pi, _ in groups]
    Ps = [np.asarray(P, dtype=float) for _, P in groups]
    C = pis[0].size
    for pi, P in zip(pis, Ps):
        if pi.shape != (C,) or P.shape != (C, C):
            raise ValueError("every group needs a length-C mix and a C x C matrix")
        if np.any(pi < 0):
            raise ValueError("class mass must be nonnegative")
        if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("group matrices must be row-stochastic")
    if len(groups) == 1:
        return pis[0], Ps[0]
    pi = np.sum(pis, axis=0)
    if np.any(pi == 0):
        raise ValueError("a class has zero total mass; the combined row is undefined")
    P = sum(pk[:, None] / pi[:, None] * Pk for pk, Pk in zip(pis, Ps))
    return pi, P
