"""Comparators: L1-norm structured magnitude pruning and bisection over log(lambda_pen)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .purge import PurgedNetwork, purge
from .sparse_net import Conv2d, Dense, GatedNetwork


def gate_group_l1(layer) -> np.ndarray:
    """L1 norm of the weight slice each of the layer's gates governs."""
    if isinstance(layer, Dense) and layer.gating == "input":
        return np.abs(layer.weight).sum(axis=1)
    if isinstance(layer, Conv2d) and layer.gating == "output":
        return np.abs(layer.weight).reshape(layer.out_channels, int(np.prod(layer.weight.shape[1:]))).sum(axis=1)
    if layer.gating == "unstructured":
        return np.abs(layer.weight).reshape(-1)
    raise ValueError("layer has no gate groups to rank")


def keep_top(norms, density: float) -> np.ndarray:
    """0/1 mask keeping the ceil(density * n) largest norms; ties keep the lower index."""
    n = len(norms)
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    k = math.ceil(density * n - 1e-12)
    if k < 1:
        raise ValueError(f"density {density} keeps no units out of {n}")
    order = np.argsort(-np.asarray(norms), kind="stable")
    mask = np.zeros(n)
    mask[order[:k]] = 1.0
    return mask


def magnitude_mask(net: GatedNetwork, eps) -> np.ndarray:
    """Binary gate values from layer-wise L1 ranking; ``eps`` is a scalar or one density per sparsifiable layer."""
    layer_ids = net.sparsifiable()
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (len(layer_ids),))
    mask = np.ones(net.n_gates)
    for e, i in zip(eps, layer_ids):
        mask[net.gate_slices[i]] = keep_top(gate_group_l1(net.layers[i]), float(e))
    return mask


def l1_magnitude_prune(net: GatedNetwork, eps) -> PurgedNetwork:
    """Prune by filter/unit L1 norm and purge; the gates' learned values are ignored."""
    return purge(net, gate_values=magnitude_mask(net, eps))


@dataclass
class BisectionTrace:
    target: float
    tolerance: float
    iterations: list = field(default_factory=list)  # (iteration, log_lambda, density, val_error)
    converged: bool = False

    @property
    def n_runs(self) -> int:
        return len(self.iterations)

    @property
    def n_midpoints(self) -> int:
        return sum(1 for it in self.iterations if it[0] > 0)

    def best(self):
        return min(self.iterations, key=lambda it: abs(it[2] - self.target))

    def to_csv(self, path):
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "log_lambda", "density", "val_error"])
            for it in self.iterations:
                w.writerow([it[0], repr(float(it[1])), repr(float(it[2])),
                            "" if it[3] is None else repr(float(it[3]))])


def _measure(fn, log_lambda):
    out = fn(log_lambda)
    if isinstance(out, tuple):
        return float(out[0]), (None if out[1] is None else float(out[1]))
    return float(out), None


def bisection_search(train_and_measure: Callable, target: float, tol: float, log_lambda_lo: float,
                     log_lambda_hi: float, max_iter: int = 20) -> BisectionTrace:
    """Bisection on log(lambda_pen) until the achieved density is within ``tol`` of ``target``.

    ``train_and_measure(log_lambda)`` runs one full training and returns the
    density, or ``(density, val_error)``. Both endpoints are evaluated first
    and recorded as iteration 0; ``max_iter`` bounds the midpoint runs.
    """
    trace = BisectionTrace(target, tol)
    lo, hi = float(log_lambda_lo), float(log_lambda_hi)
    d_lo, e_lo = _measure(train_and_measure, lo)
    d_hi, e_hi = _measure(train_and_measure, hi)
    trace.iterations += [(0, lo, d_lo, e_lo), (0, hi, d_hi, e_hi)]
    if abs(d_lo - target) <= tol or abs(d_hi - target) <= tol:
        trace.converged = True
        return trace
    if not min(d_lo, d_hi) <= target <= max(d_lo, d_hi):
        raise ValueError(f"endpoint densities {d_lo:.4f}, {d_hi:.4f} do not straddle target {target}")
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        d, e = _measure(train_and_measure, mid)
        trace.iterations.append((it, mid, d, e))
        if abs(d - target) <= tol:
            trace.converged = True
            break
        if (d - target) * (d_lo - target) > 0:
            lo, d_lo = mid, d
        else:
            hi = mid
    return trace
