"""Hard-concrete gate distribution.

Every function takes the gate log-parameter ``log_phi`` directly and works
elementwise on scalars or numpy arrays. Gates are stretched-and-clamped
concrete variables, so they put point masses at exactly 0 and 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class HardConcreteConfig:
    beta: float = 2.0 / 3.0
    gamma: float = -0.1
    zeta: float = 1.1

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not (self.gamma < 0.0 and self.zeta > 1.0):
            raise ValueError(f"need gamma < 0 < 1 < zeta, got gamma={self.gamma}, zeta={self.zeta}")

    @property
    def log_ratio(self) -> float:
        """beta * log(-gamma / zeta): the logit shift between log_phi and P[z != 0]."""
        return self.beta * np.log(-self.gamma / self.zeta)


DEFAULT_CONFIG = HardConcreteConfig()


@dataclass(frozen=True)
class GateInit:
    rho_init: float = 0.3
    noise_std: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.rho_init < 1.0:
            raise ValueError(f"rho_init must lie in (0, 1), got {self.rho_init}")
        if self.noise_std < 0.0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass
class GateSet:
    """Gate log-parameters plus the number of parameters each gate governs."""

    log_phi: np.ndarray
    coverage: np.ndarray
    config: HardConcreteConfig = field(default_factory=HardConcreteConfig)

    def __post_init__(self):
        self.log_phi = np.asarray(self.log_phi, dtype=np.float64).reshape(-1)
        self.coverage = np.asarray(self.coverage, dtype=np.int64).reshape(-1)
        if self.log_phi.shape != self.coverage.shape:
            raise ValueError(
                f"log_phi and coverage differ in length: {self.log_phi.size} vs {self.coverage.size}"
            )
        if self.coverage.size and self.coverage.min() < 1:
            raise ValueError("every gate must cover at least one parameter")

    def __len__(self) -> int:
        return self.log_phi.size

    def p_active(self) -> np.ndarray:
        return p_active(self.log_phi, self.config)

    def medians(self) -> np.ndarray:
        return median_gate(self.log_phi, self.config)


def p_active(log_phi, cfg: HardConcreteConfig = DEFAULT_CONFIG):
    """Probability that a gate is nonzero (closed form)."""
    return expit(np.asarray(log_phi, dtype=np.float64) - cfg.log_ratio)


def p_active_grad(log_phi, cfg: HardConcreteConfig = DEFAULT_CONFIG):
    p = p_active(log_phi, cfg)
    return p * (1.0 - p)


def _stretched(log_phi, u, cfg):
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("uniform draws must lie strictly inside (0, 1)")
    s = expit((np.asarray(log_phi, dtype=np.float64) + np.log(u) - np.log1p(-u)) / cfg.beta)
    return s, s * (cfg.zeta - cfg.gamma) + cfg.gamma


def sample_gate(log_phi, u, cfg: HardConcreteConfig = DEFAULT_CONFIG):
    """Reparametrized gate sample for given uniform draws ``u``."""
    _, pre = _stretched(log_phi, u, cfg)
    return np.clip(pre, 0.0, 1.0)


def sample_gate_grad(log_phi, u, cfg: HardConcreteConfig = DEFAULT_CONFIG):
    """d(sample_gate)/d(log_phi) at fixed ``u``; zero wherever the clamp is active."""
    s, pre = _stretched(log_phi, u, cfg)
    grad = (cfg.zeta - cfg.gamma) * s * (1.0 - s) / cfg.beta
    return np.where((pre > 0.0) & (pre < 1.0), grad, 0.0)


def sample_gate_and_grad(log_phi, u, cfg: HardConcreteConfig = DEFAULT_CONFIG):
    s, pre = _stretched(log_phi, u, cfg)
    inside = (pre > 0.0) & (pre < 1.0)
    grad = np.where(inside, (cfg.zeta - cfg.gamma) * s * (1.0 - s) / cfg.beta, 0.0)
    return np.clip(pre, 0.0, 1.0), grad


def median_gate(log_phi, cfg: HardConcreteConfig = DEFAULT_CONFIG):
    """Deterministic test-time gate: the median of the gate distribution."""
    s = expit(np.asarray(log_phi, dtype=np.float64) / cfg.beta)
    return np.minimum(1.0, np.maximum(0.0, s * (cfg.zeta - cfg.gamma) + cfg.gamma))


def uniform_open(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws restricted to [ulp, 1 - ulp] so the logit stays finite."""
    eps = np.finfo(np.float64).eps
    return np.clip(rng.random(size), eps, 1.0 - eps)


def init_log_phi(init: GateInit, n_gates: int, rng: np.random.Generator) -> np.ndarray:
    if n_gates < 1:
        raise ValueError("n_gates must be >= 1")
    center = np.log((1.0 - init.rho_init) / init.rho_init)
    return center + init.noise_std * rng.standard_normal(n_gates)


def initial_density(rho_init: float, cfg: HardConcreteConfig = DEFAULT_CONFIG) -> float:
    """P[z != 0] for a gate initialized at rho_init, ignoring the init noise."""
    if not 0.0 < rho_init < 1.0:
        raise ValueError(f"rho_init must lie in (0, 1), got {rho_init}")
    psi = (-cfg.gamma / cfg.zeta) ** cfg.beta
    return (1.0 - rho_init) / (1.0 - (1.0 - psi) * rho_init)
