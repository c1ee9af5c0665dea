"""How much does privatizing one group's labels cost? Estimates vs retraining across epsilon."""

import numpy as np

from ldp_influence import (
    PerturbationPlan, SelectionRule, TrainConfig, encode, make_synthetic, run_sweep_comparison,
    select_group, split, train,
)

ds = make_synthetic(n=2000, seed=0)
tr, te = split(ds, 0.2, seed=0)
etr, ete = encode(tr), encode(te)
cfg = TrainConfig(l2_strength=1e-2)
params = train(etr, cfg)

# Randomize the labels of k% of the rows with x0 == 1; evaluate on the whole test set.
groups = [select_group(tr, SelectionRule("x0", "1", k, seed=0), test=te) for k in (0.05, 0.10, 0.30)]
plan = PerturbationPlan.for_dataset(tr, ["label"], epsilon=1.0)
eps_grid = np.geomspace(0.01, 5, 10)

report = run_sweep_comparison(etr, ete, params, groups, eps_grid, plan, cfg=cfg, repeats=5, seed=0)

print(f"{'|S|':>4} {'eps':>6} {'estimate':>10} {'actual':>10}")
for r in report.rows:
    print(f"{r.group_size:>4} {r.epsilon:>6.3f} {abs(r.estimated_delta):>10.5f} {r.actual_abs:>10.5f}")

for a in report.aggregates:
    print(f"group size {a['group_size']}: MAE {a['mae']:.5f}, Spearman rho {a['rho']:.3f}")

t = report.timings
print(f"estimates took {t['estimator_phase']:.3f} s; {t['retrains']} retrains took {t['oracle_phase']:.2f} s")
