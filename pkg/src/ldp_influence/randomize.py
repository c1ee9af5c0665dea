"""Randomized response over categorical domains.

Conventions: a distortion matrix ``P`` has ``P[u, v] = Pr(output v | input u)``,
so rows sum to one. Retention and switching probabilities are evaluated in the
``1 / (1 + (d - 1) e^-eps)`` form so that very large epsilons do not overflow.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def keep_probability(d: int, epsilon: float) -> float:
    """Probability that randomized response reports the true value."""
    return 1.0 / (1.0 + (d - 1) * np.exp(-epsilon))


def switch_probability(d: int, epsilon: float) -> float:
    """Probability of reporting one specific other value."""
    t = np.exp(-epsilon)
    return t / (1.0 + (d - 1) * t)


@dataclass(frozen=True)
class DistortionMatrix:
    """Symmetric C x C randomized-response matrix for a given epsilon."""

    size: int
    epsilon: float

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"distortion matrix needs at least 2 categories, got {self.size}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    @property
    def diagonal(self) -> float:
        return keep_probability(self.size, self.epsilon)

    @property
    def off_diagonal(self) -> float:
        return switch_probability(self.size, self.epsilon)

    @property
    def entries(self) -> np.ndarray:
        m = np.full((self.size, self.size), self.off_diagonal)
        np.fill_diagonal(m, self.diagonal)
        return m

    def __array__(self, dtype=None, copy=None):
        m = self.entries
        return m if dtype is None else m.astype(dtype)


def build_distortion(C: int, epsilon: float) -> DistortionMatrix:
    return DistortionMatrix(int(C), float(epsilon))


@dataclass(frozen=True)
class PerturbationPlan:
    """Which attributes get randomized, and with what epsilon each.

    Attributes:
        attributes: indices into the dataset's attribute list (the label may be one of them).
        epsilons: per-attribute privacy parameter, same order as ``attributes``.
        cardinalities: domain size of each randomized attribute.
        mode: ``"sample"`` draws concrete randomized records, ``"expectation"``
            asks estimators to average over all outcomes.
    """

    attributes: tuple[int, ...]
    epsilons: tuple[float, ...]
    cardinalities: tuple[int, ...]
    mode: str = "expectation"

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(int(a) for a in self.attributes))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "cardinalities", tuple(int(d) for d in self.cardinalities))
        if not self.attributes:
            raise ValueError("perturbation plan needs at least one attribute")
        if not (len(self.attributes) == len(self.epsilons) == len(self.cardinalities)):
            raise ValueError("attributes, epsilons and cardinalities must have equal length")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("duplicate attribute in perturbation plan")
        if any(not e >= 0 for e in self.epsilons):
            raise ValueError(f"every epsilon must be >= 0, got {self.epsilons}")
        if any(d < 2 for d in self.cardinalities):
            raise ValueError("randomized attributes need cardinality >= 2")
        if self.mode not in ("sample", "expectation"):
            raise ValueError(f"unknown plan mode {self.mode!r}")

    @classmethod
    def for_dataset(cls, dataset, names: Sequence[str], epsilon, mode: str = "expectation"):
        """Build a plan from attribute names; ``epsilon`` is a scalar or one value per name."""
        idx = [dataset.attribute_index(name) for name in names]
        eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (len(idx),))
        cards = [dataset.attributes[i].cardinality for i in idx]
        return cls(tuple(idx), tuple(eps), tuple(cards), mode)

    def with_epsilon(self, epsilon) -> "PerturbationPlan":
        eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (len(self.attributes),))
        return PerturbationPlan(self.attributes, tuple(eps), self.cardinalities, self.mode)

    def matrices(self) -> list[DistortionMatrix]:
        return [build_distortion(d, e) for d, e in zip(self.cardinalities, self.epsilons)]

    @property
    def joint_size(self) -> int:
        return int(np.prod(self.cardinalities, dtype=np.int64))


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for one record, keyed by (root seed, record index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _draw(rng: np.random.Generator, value: int, d: int, epsilon: float) -> int:
    # inverse CDF over row `value` of the distortion matrix
    row = np.full(d, switch_probability(d, epsilon))
    row[value] = keep_probability(d, epsilon)
    cdf = np.cumsum(row)
    out = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(out, d - 1)


def perturb_record(record, plan: PerturbationPlan, seed: int, index: int = 0) -> np.ndarray:
    """Randomize the attributes in ``plan`` for a single record.

    Attributes outside the plan are copied unchanged. The draw depends only on
    ``(seed, index)`` so records can be processed in any order.
    """
    out = np.array(record, dtype=np.int64, copy=True)
    rng = record_rng(seed, index)
    for a, eps, d in zip(plan.attributes, plan.epsilons, plan.cardinalities):
        out[a] = _draw(rng, int(out[a]), d, eps)
    return out


def perturb_records(records: np.ndarray, plan: PerturbationPlan, rows, seed: int) -> np.ndarray:
    """Return a copy of ``records`` with ``rows`` randomized.

    Row ``i`` uses the same stream as ``perturb_record(records[i], plan, seed, i)``.
    """
    out = np.array(records, dtype=np.int64, copy=True)
    for i in np.asarray(rows, dtype=np.int64):
        out[i] = perturb_record(out[i], plan, seed, int(i))
    return out


def outcome_probability(alpha, outcome, plan: PerturbationPlan) -> float:
    """Probability that the randomized attributes ``alpha`` are reported as ``outcome``."""
    alpha = np.asarray(alpha)
    outcome = np.asarray(outcome)
    if alpha.shape != (len(plan.attributes),) or outcome.shape != alpha.shape:
        raise ValueError(
            f"expected {len(plan.attributes)} values, got {alpha.shape} and {outcome.shape}"
        )
    return float(np.prod(outcome_probabilities(alpha, outcome[None, :], plan)))


def outcome_probabilities(alpha, outcomes: np.ndarray, plan: PerturbationPlan) -> np.ndarray:
    """Per-attribute factors for a batch of outcomes; product over axis 1 gives the joint.

    ``alpha`` is either one vector of true values or one row per outcome.
    """
    alpha = np.asarray(alpha)
    outcomes = np.atleast_2d(outcomes)
    keep = np.array([keep_probability(d, e) for d, e in zip(plan.cardinalities, plan.epsilons)])
    switch = np.array([switch_probability(d, e) for d, e in zip(plan.cardinalities, plan.epsilons)])
    return np.where(outcomes == alpha, keep[None, :], switch[None, :])


def change_probability(plan: PerturbationPlan) -> float:
    """Probability that at least one randomized attribute changes."""
    keep = [keep_probability(d, e) for d, e in zip(plan.cardinalities, plan.epsilons)]
    return float(1.0 - np.prod(keep))


def joint_outcomes(cardinalities: Sequence[int]) -> np.ndarray:
    """All joint outcomes of the randomized attributes, one per row, in lexicographic order."""
    return np.array(list(itertools.product(*(range(d) for d in cardinalities))), dtype=np.int64)


@dataclass(frozen=True)
class PopulationDistribution:
    """Category proportions on the probability simplex.

    ``clipped`` records the total negative mass removed when the distribution
    came out of an inversion.
    """

    proportions: np.ndarray
    clipped: float = field(default=0.0, compare=False)

    def __post_init__(self):
        p = np.asarray(self.proportions, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("proportions must be a non-empty vector")
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"proportions are not on the simplex: {p}")
        object.__setattr__(self, "proportions", p)

    def __array__(self, dtype=None, copy=None):
        return self.proportions if dtype is None else self.proportions.astype(dtype)


def observed_distribution(pi, P) -> PopulationDistribution:
    """Expected distribution of randomized reports given the true proportions."""
    pi = np.asarray(pi, dtype=float)
    lam = np.asarray(P, dtype=float).T @ pi
    lam = np.clip(lam, 0.0, None)
    return PopulationDistribution(lam / lam.sum())


def recover_distribution(lam, P) -> PopulationDistribution:
    """Invert randomized response aggregation, projecting back onto the simplex."""
    if isinstance(P, DistortionMatrix) and P.epsilon == 0:
        raise np.linalg.LinAlgError("distortion matrix is singular at epsilon = 0")
    M = np.asarray(P, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise np.linalg.LinAlgError("distortion matrix is singular")
    pi = np.linalg.solve(M.T, lam)
    neg = float(-pi[pi < 0].sum())
    pi = np.clip(pi, 0.0, None)
    return PopulationDistribution(pi / pi.sum(), clipped=neg)
