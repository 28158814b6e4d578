"""MNIST experiments: target sweep, penalty sweep, bisection, restart ablation, unstructured run.

    python scripts/reproduce_mnist.py all --data-dir data/mnist --out runs/mnist
    python scripts/reproduce_mnist.py sweep --standin --out runs/digits

``--standin`` swaps MNIST for sklearn's 8x8 digits upsampled to 28x28 (1497
train / 300 validation) and caps every run at the step count of 20 MNIST
epochs, so the optimizer sees the same number of updates.
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from sparsity_control import reproduce
from sparsity_control.config import ExperimentConfig
from sparsity_control.experiment import load_data, run_experiment
from sparsity_control.plotdata import emit_plot_data


def runner(args):
    if args.standin:
        data = {"kind": "digits"}
        steps = args.max_steps or 20 * reproduce.MNIST_STEPS_PER_EPOCH
        epochs = 10_000
    else:
        data = reproduce.mnist_data(args.data_dir)
        steps, epochs = args.max_steps, args.epochs
    loaded = load_data(data, 0)
    return data, loaded, epochs, steps


def _run(cfg, out, loaded, args=None):
    overrides = {}
    if args is not None and args.lr_gates is not None:
        overrides["optimizer"] = {**cfg.to_dict()["optimizer"], "lr_gates": args.lr_gates}
    if args is not None and args.eta_dual is not None:
        overrides["eta_dual"] = args.eta_dual
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    t = time.perf_counter()
    res = run_experiment(cfg, out / cfg.name, data=loaded)
    s = res.summary
    print(f"{cfg.name}: density {np.round(s['achieved_density'], 4).tolist()} val_error {s['val_error']:.4f} "
          f"status {s['status']} ({time.perf_counter() - t:.0f} s)", flush=True)
    return res


def sweep(args, out):
    data, loaded, epochs, steps = runner(args)
    rows = {}
    for eps in args.targets:
        s = _run(reproduce.mlp_constrained(eps, data, epochs, steps, args.seed), out, loaded, args).summary
        rows[eps] = {"achieved": s["overall_density"], "val_error": s["val_error"],
                     "retained_params": s["report"]["retained_params_fraction"]}
    return rows


def penalty(args, out):
    data, loaded, epochs, steps = runner(args)
    return {lam: _run(reproduce.mlp_penalized(lam, data, epochs, steps, args.seed), out, loaded, args)
            .summary["overall_density"] for lam in reproduce.PENALTY_SWEEP}


def bisect(args, out):
    data, _, epochs, steps = runner(args)
    trace = reproduce.run_bisection(0.5, 0.01, data, epochs, steps, args.seed, out_dir=out / "bisection")
    return {"midpoint_runs": trace.n_midpoints, "total_runs": trace.n_runs, "converged": trace.converged,
            "iterations": trace.iterations}


def restarts(args, out):
    data, loaded, epochs, steps = runner(args)
    if args.standin and not args.max_steps:
        steps = 2000
    on = _run(reproduce.lenet_constrained(0.3, True, data, epochs, steps, args.seed), out, loaded, args)
    off = _run(reproduce.lenet_constrained(0.3, False, data, epochs, steps, args.seed), out, loaded, args)
    n = min(len(on.density_trace), len(off.density_trace))
    return {"steps": n, "min_density_restart": min(d[0] for d in on.density_trace[:n]),
            "min_density_no_restart": min(d[0] for d in off.density_trace[:n]),
            "final_restart": on.summary["overall_density"], "final_no_restart": off.summary["overall_density"]}


def unstructured(args, out):
    data, loaded, epochs, steps = runner(args)
    s = _run(reproduce.mlp_unstructured(0.1, data, epochs, steps, args.seed), out, loaded, args).summary
    return {"densities": s["achieved_density"], "val_error": s["val_error"]}


EXPERIMENTS = {"sweep": sweep, "penalty": penalty, "bisect": bisect, "restarts": restarts,
               "unstructured": unstructured}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("experiment", choices=sorted(EXPERIMENTS) + ["all"])
    p.add_argument("--data-dir", default=str(reproduce.MNIST_DIR))
    p.add_argument("--standin", action="store_true", help="use upsampled sklearn digits instead of MNIST")
    p.add_argument("--targets", type=float, nargs="+", default=list(reproduce.SWEEP_TARGETS))
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr-gates", type=float, help="override the gate learning rate (not bisect)")
    p.add_argument("--eta-dual", type=float, help="override the dual step size (not bisect)")
    p.add_argument("--out", default="runs/mnist")
    args = p.parse_args()
    if not args.standin and not reproduce.mnist_available(args.data_dir):
        raise SystemExit(f"no MNIST IDX files in {args.data_dir}; pass --standin to use the digits substitute")

    out = Path(args.out)
    names = sorted(EXPERIMENTS) if args.experiment == "all" else [args.experiment]
    for name in names:
        result = EXPERIMENTS[name](args, out / name)
        (out / name).mkdir(parents=True, exist_ok=True)
        (out / name / "result.json").write_text(json.dumps(result, indent=2, default=str))
        print(name, json.dumps(result, default=str), flush=True)
        emit_plot_data(out / name)


if __name__ == "__main__":
    main()
