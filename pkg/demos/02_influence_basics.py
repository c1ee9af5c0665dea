"""Train a classifier, solve H^-1 v three ways, and check influence against retraining."""

import numpy as np

from ldp_influence import (
    IhvpConfig, SelectionRule, TrainConfig, encode, make_synthetic, select_group, split, train,
)
from ldp_influence import model as M
from ldp_influence.ihvp import ihvp
from ldp_influence.influence import approx_params_after_perturbation, influence_pert_loss_g2g

ds = make_synthetic(n=2000, cardinalities=(2, 2, 2, 3, 3), seed=0)
tr, te = split(ds, test_fraction=0.2, seed=0)
etr, ete = encode(tr), encode(te)
print("design matrix", etr.X.shape, "columns per attribute", etr.encoding_map)

cfg = TrainConfig(l2_strength=1e-2)
params = train(etr, cfg)
acc = np.mean(M.predict_proba(params, ete.X).argmax(axis=1) == ete.y)
print(f"newton converged in {params.metadata['epochs']} steps, test accuracy {acc:.3f}")

# The expensive piece of every influence estimate: s = H^-1 v.
v = -M.mean_gradient(params, ete.X, ete.y)
exact = ihvp(etr, params, v, IhvpConfig("explicit")).solution
for method in ("cg", "stochastic"):
    res = ihvp(etr, params, v, IhvpConfig(method))
    err = np.linalg.norm(res.solution - exact) / np.linalg.norm(exact)
    print(f"{method:<10} relative error {err:.2e} in {res.iterations} iterations")

# Flip the labels of a small group, then compare the first-order prediction with a real retrain.
group = select_group(tr, SelectionRule("x0", "1", 0.05, seed=0), test=te)
pairs = [((etr.X[i], etr.y[i]), (etr.X[i], 1 - etr.y[i])) for i in group.indices]
est = influence_pert_loss_g2g(etr, params, pairs, ete, cfg=IhvpConfig(damping=0.0))

y = etr.y.copy()
y[group.indices] = 1 - y[group.indices]
retrained = train(etr.with_labels(y), cfg)
actual = M.mean_loss(retrained, ete.X, ete.y) - M.mean_loss(params, ete.X, ete.y)
print(f"flipping {group.size} labels: estimated test-loss change {est.estimated_loss_delta:+.5f}, "
      f"actual {actual:+.5f}")

approx = approx_params_after_perturbation(etr, params, pairs, IhvpConfig(damping=0.0))
d1, d2 = approx.theta - params.theta, retrained.theta - params.theta
print("cosine(predicted shift, actual shift) =", round(float(d1 @ d2 / np.linalg.norm(d1) / np.linalg.norm(d2)), 4))
