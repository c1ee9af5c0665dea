import numpy as np
import pytest

from ldp_influence import (
    SelectionRule, TrainConfig, encode, make_synthetic, select_group, split, train,
)


@pytest.fixture(scope="session")
def small():
    """A trained binary instance small enough for dense finite differences."""
    ds = make_synthetic(600, (2, 2, 3), seed=7)
    tr, te = split(ds, 0.25, seed=1)
    etr, ete = encode(tr), encode(te)
    cfg = TrainConfig(l2_strength=1e-2)
    params = train(etr, cfg)
    group = select_group(tr, SelectionRule("x0", "1", 0.2, seed=3), test=te)
    return dict(ds=ds, train=tr, test=te, etr=etr, ete=ete, cfg=cfg, params=params, group=group)


@pytest.fixture(scope="session")
def multiclass():
    ds = make_synthetic(500, (3, 2), n_classes=3, seed=11)
    tr, te = split(ds, 0.2, seed=2)
    etr, ete = encode(tr), encode(te)
    cfg = TrainConfig(l2_strength=1e-2)
    params = train(etr, cfg)
    group = select_group(tr, SelectionRule("x1", "0", 0.3, seed=0), test=te)
    return dict(ds=ds, train=tr, test=te, etr=etr, ete=ete, cfg=cfg, params=params, group=group)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
