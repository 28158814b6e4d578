"""Controlled sparsity for neural networks via hard-concrete gates and L0-density constraints."""
from .baselines import BisectionTrace, bisection_search, l1_magnitude_prune, magnitude_mask
from .config import ConfigError, ExperimentConfig
from .constraints import (
    ConstraintSet,
    DualState,
    GroupSpec,
    PenaltyConfig,
    build_groups,
    densities,
    dual_step,
    l0_density,
    lagrangian,
    penalty_term,
)
from .data import Dataset, load_mnist_idx, synth_dataset
from .experiment import run_experiment
from .hard_concrete import HardConcreteConfig, initial_density, median_gate, p_active, sample_gate
from .purge import compression_report, count_macs, count_params, purge
from .sparse_net import GatedNetwork, build_network, forward_eval, forward_train

__version__ = "0.1.0"
