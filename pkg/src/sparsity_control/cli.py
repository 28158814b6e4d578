"""Command line entry point: ``python -m sparsity_control <command>``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import bisection_search, magnitude_mask
from .config import ExperimentConfig
from .data import find_mnist, load_mnist_idx, load_npz, save_npz, synth_dataset
from .experiment import error_rate, load_data, run_experiment
from .plotdata import emit_plot_data
from .purge import compression_report, dense_baseline, load_purged, purge, save_purged
from .sparse_net import forward_eval, load_checkpoint


def _load_eval_data(arg):
    p = Path(arg)
    if p.is_dir():
        pair = find_mnist(p, "test") or find_mnist(p, "train")
        if pair is None:
            raise SystemExit(f"no IDX files in {p}")
        return load_mnist_idx(*pair)
    if p.suffix == ".npz":
        return load_npz(p)
    raise SystemExit(f"--data must be an IDX directory or an .npz file, got {arg}")


def _load_any(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") == "purged":
        return "purged", load_purged(path)
    return "gated", load_checkpoint(path)[0]


def cmd_train(args):
    cfg = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or f"runs/{cfg.name or 'run'}-s{cfg.seed}")
    result = run_experiment(cfg, out)
    s = result.summary
    print(f"status={s['status']} density={s['overall_density']:.4f} val_error={s['val_error']:.4f} "
          f"params={s['report']['params']} macs={s['report']['macs']} -> {out}")
    if s["status"] != "ok":
        print(s["status"], file=sys.stderr)
    return 0


def cmd_purge(args):
    net, _ = load_checkpoint(args.ckpt)
    purged = purge(net)
    out = Path(args.out or Path(args.ckpt).with_name("purged.json"))
    save_purged(out, purged)
    report = compression_report(net, purged, dense_baseline(net))
    print(json.dumps(asdict(report)))
    return 0


def cmd_eval(args):
    kind, model = _load_any(args.ckpt)
    ds = _load_eval_data(args.data)
    if kind == "purged":
        err = error_rate(model, ds)
    else:
        err = error_rate(lambda x: forward_eval(model, x), ds)
    print(json.dumps({"n": len(ds), "error": err}))
    return 0


def cmd_bisect(args):
    base = ExperimentConfig.from_json(args.config)
    data = load_data(base.data, base.seed)
    runs = Path(args.out) if args.out else None

    def train_and_measure(log_lambda):
        cfg = ExperimentConfig.from_dict({**base.to_dict(), "method": "penalized",
                                          "lambda_pen": float(np.exp(log_lambda))})
        out = runs / f"loglam{log_lambda:+.4f}" if runs else None
        s = run_experiment(cfg, out, data=data).summary
        print(f"log_lambda={log_lambda:+.4f} density={s['overall_density']:.4f} val_error={s['val_error']:.4f}")
        return s["overall_density"], s["val_error"]

    trace = bisection_search(train_and_measure, args.target, args.tol, args.lo, args.hi, args.max_iter)
    if runs:
        trace.to_csv(runs / "bisection.csv")
    best = trace.best()
    print(f"converged={trace.converged} runs={trace.n_runs} midpoints={trace.n_midpoints} "
          f"best_log_lambda={best[1]:+.4f} density={best[2]:.4f}")
    return 0 if trace.converged else 1


def cmd_magprune(args):
    net, _ = load_checkpoint(args.ckpt)
    if args.finetune_epochs:
        if not args.config:
            raise SystemExit("--finetune-epochs needs --config for the data and optimizer")
        cfg = ExperimentConfig.from_json(args.config)
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "method": "magnitude_prune", "epochs": 0,
                                          "epsilon": args.density, "finetune_epochs": args.finetune_epochs})
        result = run_experiment(cfg, None, init_net=net)
        purged = result.purged
    else:
        purged = purge(net, gate_values=magnitude_mask(net, args.density))
    out = Path(args.out or Path(args.ckpt).with_name(f"magprune-{args.density}.json"))
    save_purged(out, purged)
    report = compression_report(net, purged, dense_baseline(net))
    print(json.dumps({"params": report.params, "macs": report.macs,
                      "retained_params_fraction": report.retained_params_fraction, "out": str(out)}))
    return 0


def cmd_gen_data(args):
    ds = synth_dataset(args.seed, args.n, args.kind)
    out = args.out or f"{args.kind}-n{args.n}-s{args.seed}.npz"
    save_npz(out, ds)
    print(out)
    return 0


def cmd_plotdata(args):
    table, traces = emit_plot_data(args.runs, args.out)
    print(table)
    print(traces)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="sparsity_control", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("purge", help="purge a gated checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_purge)

    s = sub.add_parser("eval", help="error rate of a checkpoint on a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True, help="IDX directory or .npz file")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("bisect", help="bisection over log(lambda_pen) for a target density")
    s.add_argument("--config", required=True)
    s.add_argument("--target", type=float, required=True)
    s.add_argument("--tol", type=float, required=True)
    s.add_argument("--lo", type=float, default=float(np.log(1e-4)))
    s.add_argument("--hi", type=float, default=float(np.log(10.0)))
    s.add_argument("--max-iter", type=int, default=20)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_bisect)

    s = sub.add_parser("magprune", help="L1 magnitude pruning of a trained checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--density", type=float, required=True)
    s.add_argument("--finetune-epochs", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_magprune)

    s = sub.add_parser("gen-data", help="write a synthetic dataset to .npz")
    s.add_argument("--kind", choices=["blobs", "moons"], default="blobs")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("plotdata", help="collect run folders into plot-ready CSVs")
    s.add_argument("--runs", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_plotdata)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
