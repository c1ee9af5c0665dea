"""Randomizing features (not just labels) and the two ways of weighting alternative outcomes."""

import numpy as np

from ldp_influence import (
    PerturbationPlan, SelectionRule, TrainConfig, encode, influence_rr, make_synthetic,
    retrain_actual, select_group, split, train,
)
from ldp_influence.influence import TestGradientCache

ds = make_synthetic(n=2000, cardinalities=(2, 3, 4, 2), seed=2)
tr, te = split(ds, 0.2, seed=2)
etr, ete = encode(tr), encode(te)
cfg = TrainConfig(l2_strength=1e-2)
params = train(etr, cfg)
group = select_group(tr, SelectionRule("x0", "1", 0.2, seed=0), test=te)

# One IHVP serves every estimate below.
cache = TestGradientCache.build(etr, params, ete)

# "exact" weights each alternative outcome by its randomized-response probability;
# scaling="paper" gives every alternative the whole change probability of the record.
for names in (["x1"], ["x1", "x2"], ["x1", "x2", "label"]):
    plan = PerturbationPlan.for_dataset(tr, names, 1.0)
    exact = influence_rr(etr, params, group, plan, cache=cache).estimated_loss_delta
    shared = influence_rr(etr, params, group, plan, scaling="paper", cache=cache).estimated_loss_delta
    actual = np.mean([retrain_actual(etr, ete, params, group, plan, cfg=cfg, seed=s).signed_delta
                      for s in range(5)])
    print(f"{'+'.join(names):<14} {plan.joint_size:>3} outcomes/record  exact {exact:+.5f}  "
          f"shared {shared:+.5f}  retrained {actual:+.5f}")
