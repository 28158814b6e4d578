"""Expected-L0 density constraints, the Lagrangian, penalties and the dual update."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .hard_concrete import GateSet, p_active, p_active_grad


@dataclass
class GroupSpec:
    groups: list  # list of int index arrays into the GateSet
    mode: str
    param_counts: np.ndarray
    layer_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.groups = [np.asarray(g, dtype=np.int64) for g in self.groups]
        self.param_counts = np.asarray(self.param_counts, dtype=np.int64)
        if np.any(self.param_counts <= 0):
            raise ValueError("every group must govern at least one parameter")

    def __len__(self):
        return len(self.groups)


def build_groups(net, mode: str = "model_wise") -> GroupSpec:
    """One group over all gates (model_wise) or one per sparsifiable layer (layer_wise)."""
    layer_ids = net.sparsifiable()
    if not layer_ids:
        raise ValueError("network has no sparsifiable layers")
    per_layer = [np.arange(net.gate_slices[i].start, net.gate_slices[i].stop) for i in layer_ids]
    if mode == "model_wise":
        groups = [np.concatenate(per_layer)]
    elif mode == "layer_wise":
        groups = per_layer
    else:
        raise ValueError(f"unknown grouping mode {mode!r}")
    counts = [int(net.gates.coverage[g].sum()) for g in groups]
    return GroupSpec(groups, mode, counts, layer_ids)


def l0_density(group, gates: GateSet) -> float:
    """Coverage-weighted expected fraction of active parameters in ``group``."""
    group = np.asarray(group, dtype=np.int64)
    if group.size == 0:
        raise ValueError("empty group")
    cov = gates.coverage[group]
    return float(np.dot(p_active(gates.log_phi[group], gates.config), cov) / cov.sum())


def l0_density_grad(group, gates: GateSet) -> np.ndarray:
    """Gradient of l0_density w.r.t. every log_phi (zero outside the group)."""
    group = np.asarray(group, dtype=np.int64)
    if group.size == 0:
        raise ValueError("empty group")
    cov = gates.coverage[group]
    out = np.zeros(len(gates))
    out[group] = p_active_grad(gates.log_phi[group], gates.config) * cov / cov.sum()
    return out


def densities(spec: GroupSpec, gates: GateSet) -> np.ndarray:
    return np.array([l0_density(g, gates) for g in spec.groups])


def densities_grad(spec: GroupSpec, gates: GateSet, coefs) -> np.ndarray:
    """sum_g coefs[g] * d density_g / d log_phi."""
    out = np.zeros(len(gates))
    for c, g in zip(coefs, spec.groups):
        if c != 0.0:
            out += c * l0_density_grad(g, gates)
    return out


@dataclass
class ConstraintSet:
    spec: GroupSpec
    epsilon: np.ndarray

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=np.float64).reshape(-1)
        if eps.size == 1 and len(self.spec) > 1:
            eps = np.full(len(self.spec), eps[0])
        if eps.size != len(self.spec):
            raise ValueError(f"{eps.size} target densities for {len(self.spec)} groups")
        if np.any(eps < 0):
            raise ValueError("target densities must be >= 0")
        self.epsilon = eps


@dataclass(frozen=True)
class DualState:
    lambdas: np.ndarray
    eta_dual: float = 1e-3
    restarts_enabled: bool = True

    @classmethod
    def zeros(cls, n_groups, eta_dual=1e-3, restarts_enabled=True):
        return cls(np.zeros(n_groups), eta_dual, restarts_enabled)


def lagrangian(f_obj: float, dens, constraints: ConstraintSet, dual: DualState) -> float:
    dens = np.asarray(dens, dtype=np.float64)
    if dens.shape != constraints.epsilon.shape or dual.lambdas.shape != dens.shape:
        raise ValueError("densities, targets and multipliers must have equal length")
    return float(f_obj + np.dot(dual.lambdas, dens - constraints.epsilon))


def dual_step(dual: DualState, dens, constraints: ConstraintSet) -> DualState:
    """Projected gradient ascent on the multipliers, with optional dual restarts."""
    dens = np.asarray(dens, dtype=np.float64)
    violation = dens - constraints.epsilon
    ascended = np.maximum(0.0, dual.lambdas + dual.eta_dual * violation)
    if dual.restarts_enabled:
        ascended = np.where(violation > 0.0, ascended, 0.0)
    return replace(dual, lambdas=ascended)


@dataclass
class PenaltyConfig:
    lambda_pen: np.ndarray
    normalization: str = "by_param_count"  # or "by_dataset_size"

    def __post_init__(self):
        self.lambda_pen = np.atleast_1d(np.asarray(self.lambda_pen, dtype=np.float64))
        if np.any(self.lambda_pen < 0):
            raise ValueError("penalty coefficients must be >= 0")
        if self.normalization not in ("by_param_count", "by_dataset_size"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def penalty_term(dens, cfg: PenaltyConfig, dataset_size: int = 0, param_counts=None):
    """Penalty value and its derivative w.r.t. each group density.

    ``by_dataset_size`` penalizes the unnormalized expected L0 (density times
    the group's parameter count) divided by ``dataset_size``.
    """
    dens = np.asarray(dens, dtype=np.float64)
    lam = np.broadcast_to(cfg.lambda_pen, dens.shape) if cfg.lambda_pen.size == 1 else cfg.lambda_pen
    if lam.shape != dens.shape:
        raise ValueError("one penalty coefficient per group is required")
    if cfg.normalization == "by_param_count":
        coefs = np.array(lam, dtype=np.float64)
    else:
        if dataset_size <= 0:
            raise ValueError("dataset_size must be positive for by_dataset_size normalization")
        if param_counts is None:
            raise ValueError("by_dataset_size normalization needs the group parameter counts")
        coefs = lam * np.asarray(param_counts, dtype=np.float64) / dataset_size
    return float(np.dot(coefs, dens)), coefs
