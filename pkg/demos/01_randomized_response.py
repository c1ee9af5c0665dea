"""Randomized response: distortion matrices, perturbing records, recovering frequencies."""

import numpy as np

from ldp_influence.randomize import (
    PerturbationPlan, build_distortion, observed_distribution, perturb_records, recover_distribution,
)

# A 3-category attribute randomized with epsilon = 1. Row u holds Pr(report v | truth u).
P = build_distortion(3, 1.0)
print("distortion matrix, eps=1:\n", np.round(P.entries, 4))
print("keep probability", round(P.diagonal, 4), "switch probability", round(P.off_diagonal, 4))

# Smaller epsilon means more privacy and a flatter matrix; eps=0 is uniform noise.
for eps in (0.0, 0.5, 2.0, 8.0):
    print(f"eps={eps:<4} diagonal={build_distortion(3, eps).diagonal:.4f}")

# Randomize 50k records whose true distribution is skewed.
rng = np.random.default_rng(0)
pi = np.array([0.6, 0.3, 0.1])
records = rng.choice(3, size=(50_000, 1), p=pi)
plan = PerturbationPlan(attributes=(0,), epsilons=(1.0,), cardinalities=(3,))
noisy = perturb_records(records, plan, rows=np.arange(len(records)), seed=42)

lam = np.bincount(noisy[:, 0], minlength=3) / len(noisy)
print("true      ", pi)
print("expected  ", np.round(observed_distribution(pi, P).proportions, 4))
print("observed  ", np.round(lam, 4))

# The aggregator inverts P^T to estimate the true frequencies.
est = recover_distribution(lam, P)
print("recovered ", np.round(est.proportions, 4), "(negative mass clipped:", round(est.clipped, 5), ")")

# Each record's draw depends only on (seed, index), so results do not depend on order.
again = perturb_records(records, plan, rows=np.arange(len(records))[::-1], seed=42)
print("order independent:", np.array_equal(noisy, again))
