"""Named experiment configurations for the MNIST checks and their stand-ins.

Each builder returns an ExperimentConfig with the MNIST defaults (Adam 7e-4,
dual step 1e-3, restarts on, batch 128, 20 epochs). ``data`` swaps the dataset,
and ``max_steps`` caps the run.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .baselines import bisection_search
from .config import ExperimentConfig
from .data import find_mnist
from .experiment import load_data, run_experiment

MNIST_DIR = Path("data/mnist")
SWEEP_TARGETS = (0.2, 0.35, 0.5, 0.65, 0.8)
PENALTY_SWEEP = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
MNIST_STEPS_PER_EPOCH = 391  # ceil(50000 / 128)


def mnist_data(directory=MNIST_DIR):
    return {"kind": "mnist", "dir": str(directory), "n_train": 50000}


def mnist_available(directory=MNIST_DIR) -> bool:
    return find_mnist(directory, "train") is not None


def _cfg(data, name, epochs, max_steps, seed, **kw):
    return ExperimentConfig.from_dict({"data": data or mnist_data(), "name": name, "epochs": epochs,
                                       "max_steps": max_steps, "seed": seed, **kw})


def mlp_constrained(eps, data=None, epochs=20, max_steps=None, seed=0):
    return _cfg(data, f"mlp-eps{eps}", epochs, max_steps, seed, epsilon=eps)


def mlp_penalized(lam, data=None, epochs=20, max_steps=None, seed=0):
    return _cfg(data, f"mlp-pen{lam:g}", epochs, max_steps, seed, method="penalized", lambda_pen=lam)


def lenet_constrained(eps, restarts, data=None, epochs=20, max_steps=None, seed=0):
    return _cfg(data, f"lenet-eps{eps}-{'restart' if restarts else 'norestart'}", epochs, max_steps, seed,
                arch={"kind": "lenet5"}, epsilon=eps, restarts=restarts)


def mlp_unstructured(eps=0.1, data=None, epochs=20, max_steps=None, seed=0):
    return _cfg(data, f"mlp-unstructured-eps{eps}", epochs, max_steps, seed,
                arch={"kind": "mlp", "hidden": [300, 100], "gating": "unstructured"},
                grouping="layer_wise", epsilon=eps)


def run_bisection(target=0.5, tol=0.01, data=None, epochs=20, max_steps=None, seed=0,
                  lo=float(np.log(1e-4)), hi=float(np.log(10.0)), max_iter=20, out_dir=None, log=print):
    """Bisection over log(lambda_pen) with penalized MLP runs."""
    loaded = load_data((data or mnist_data()), seed)

    def measure(log_lambda):
        cfg = mlp_penalized(float(np.exp(log_lambda)), data, epochs, max_steps, seed)
        out = Path(out_dir) / f"loglam{log_lambda:+.4f}" if out_dir else None
        s = run_experiment(cfg, out, data=loaded).summary
        log(f"log_lambda={log_lambda:+.4f} density={s['overall_density']:.4f} val_error={s['val_error']:.4f}")
        return s["overall_density"], s["val_error"]

    trace = bisection_search(measure, target, tol, lo, hi, max_iter)
    if out_dir:
        trace.to_csv(Path(out_dir) / "bisection.csv")
    return trace
