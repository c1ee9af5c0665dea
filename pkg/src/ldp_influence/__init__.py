"""Influence-function estimates of how randomized-response LDP changes a classifier's test loss."""

from .dataset import (
    CategoricalDomain, Dataset, EncodedDataset, GroupSpec, Schema, SelectionRule,
    encode, load_csv, make_synthetic, select_group, split,
)
from .model import ModelParams, TrainConfig, train
from .ihvp import IhvpConfig
from .randomize import DistortionMatrix, PerturbationPlan, build_distortion
from .influence import (
    InfluenceResult, TestGradientCache, influence_rr, influence_rr_flc, influence_rr_label,
)
from .oracle import mae, retrain_actual, run_sweep_comparison, spearman_rho

__version__ = "0.1.0"
