"""Training loop wiring: data, gated network, penalty or constraint, logging, purge."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import magnitude_mask
from .config import ConfigError, ExperimentConfig
from .constraints import (
    ConstraintSet,
    DualState,
    PenaltyConfig,
    build_groups,
    densities,
    densities_grad,
    dual_step,
    penalty_term,
)
from .data import Dataset, find_mnist, load_mnist_idx, load_npz, synth_dataset
from .hard_concrete import GateInit, median_gate
from .purge import PurgedNetwork, compression_report, dense_baseline, purge
from .sparse_net import (
    GatedNetwork,
    OptimizerState,
    add_grads,
    backward,
    build_network,
    forward_eval,
    forward_fixed,
    forward_train,
    lenet5_arch,
    loss_xent,
    mlp_arch,
    primal_step,
    save_checkpoint,
    weight_decay,
)

COLLAPSE_MESSAGE = "Failed due to sparsity collapse"


class DatasetUnavailable(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# data


def _digits_28():
    """sklearn's bundled 8x8 digits, upsampled to 28x28 and scaled to [0, 1]."""
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    d = load_digits()
    imgs = d.images / 16.0
    big = np.stack([zoom(im, 3.5, order=1) for im in imgs])
    return Dataset(np.clip(big, 0.0, 1.0), d.target)


def load_data(spec: dict, seed: int = 0):
    """Return (train, val) from a data spec dict."""
    spec = dict(spec)
    kind = spec.get("kind")
    if kind == "mnist":
        directory = spec.get("dir", "data/mnist")
        pair = find_mnist(directory, "train")
        if pair is None:
            raise DatasetUnavailable(f"no MNIST IDX files found in {directory!r}")
        full = load_mnist_idx(*pair)
        return full.split(int(spec.get("n_train", 50000)))
    if kind == "synthetic":
        n, n_val = int(spec.get("n", 512)), int(spec.get("n_val", 256))
        full = synth_dataset(int(spec.get("seed", seed)), n + n_val, spec.get("dataset", "blobs"),
                             float(spec.get("separation", 10.0)), float(spec.get("noise", 0.1)))
        return full.split(n)
    if kind == "npz":
        full = load_npz(spec["path"])
        return full.split(int(spec.get("n_train", math.ceil(0.8 * len(full)))))
    if kind == "digits":
        full = _digits_28()
        order = np.random.default_rng(int(spec.get("split_seed", 0))).permutation(len(full))
        full = Dataset(full.x[order], full.y[order])
        return full.split(int(spec.get("n_train", len(full) - 300)))
    raise ConfigError(f"unknown data kind {kind!r}")


def _input_shape(arch: dict, x: np.ndarray):
    if "input_shape" in arch:
        return tuple(arch["input_shape"])
    sample = x.shape[1:]
    if arch["kind"] == "lenet5":
        return (1,) + tuple(sample[-2:]) if len(sample) == 2 else tuple(sample)
    if arch["kind"] == "layers" and arch["layers"] and arch["layers"][0].get("type") == "conv":
        return (1,) + tuple(sample) if len(sample) == 2 else tuple(sample)
    return (int(np.prod(sample)),)


def _layers(arch: dict, n_classes: int):
    kind = arch["kind"]
    if kind == "mlp":
        return mlp_arch(tuple(arch.get("hidden", (300, 100))), arch.get("n_classes", n_classes),
                        arch.get("gating", "input"))
    if kind == "lenet5":
        return lenet5_arch(arch.get("n_classes", n_classes), tuple(arch.get("gating", ("output", "input"))))
    return arch["layers"]


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    train_loss: float
    density: list
    lam: list
    violation: list
    val_error: Optional[float] = None


def metrics_header(n_groups: int):
    cols = ["step", "epoch", "train_loss"]
    for name in ("density", "lambda", "violation"):
        cols += [f"{name}_{g}" for g in range(n_groups)]
    return cols + ["val_error"]


def _fmt(v):
    return "" if v is None else repr(float(v))


def metrics_rows(records, n_groups):
    yield metrics_header(n_groups)
    for r in records:
        viol = r.violation if r.violation is not None else [None] * n_groups
        yield ([r.step, r.epoch, _fmt(r.train_loss)] + [_fmt(v) for v in r.density]
               + [_fmt(v) for v in r.lam] + [_fmt(v) for v in viol] + [_fmt(r.val_error)])


def write_metrics(path, records, n_groups):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\r\n").writerows(metrics_rows(records, n_groups))
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_metrics(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# training


@dataclass
class RunResult:
    config: ExperimentConfig
    net: GatedNetwork
    purged: PurgedNetwork
    records: list
    summary: dict
    out_dir: Optional[Path] = None
    density_trace: list = field(default_factory=list)  # per-step densities before each update


def error_rate(predict, ds: Dataset, batch_size=1000):
    if len(ds) == 0:
        return float("nan")
    wrong = 0
    for s in range(0, len(ds), batch_size):
        wrong += int(np.sum(np.argmax(predict(ds.x[s:s + batch_size]), axis=1) != ds.y[s:s + batch_size]))
    return wrong / len(ds)


def _overall_density(net: GatedNetwork) -> float:
    return float(densities(build_groups(net, "model_wise"), net.gates)[0])


def _collapsed_layers(net: GatedNetwork, gate_values):
    return [i for i in net.sparsifiable() if not np.any(gate_values[net.gate_slices[i]] > 0)]


def _epochs_loop(cfg, n_train, shuffle_rng):
    """Yield (epoch, step, batch index array) following the config's schedule."""
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        for s in range(0, n_train, cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return
            step += 1
            yield epoch, step, order[s:s + cfg.batch_size], s + cfg.batch_size >= n_train


def build_from_config(cfg: ExperimentConfig, train: Dataset, init_rng):
    n_classes = int(cfg.arch.get("n_classes", max(train.n_classes, 2)))
    input_shape = _input_shape(cfg.arch, train.x)
    if int(np.prod(train.x.shape[1:])) != int(np.prod(input_shape)):
        raise ConfigError(f"data samples of shape {train.x.shape[1:]} do not fit input shape {input_shape}")
    net = build_network(_layers(cfg.arch, n_classes), input_shape, init_rng,
                        GateInit(cfg.rho_init, cfg.init_noise_std))
    out = net.shapes[-1]
    if out != (n_classes,) or train.n_classes > out[0]:
        raise ConfigError(f"network emits {out} logits but the data has {train.n_classes} classes")
    return net


def run_experiment(cfg: ExperimentConfig, out_dir=None, data=None, init_net: Optional[GatedNetwork] = None) -> RunResult:
    """Train, log, purge and report.

    ``data`` may pass a preloaded (train, val) pair and ``init_net`` a network
    to continue from instead of a fresh initialization.
    """
    cfg.validate()
    train, val = load_data(cfg.data, cfg.seed) if data is None else data
    init_ss, shuffle_ss, gate_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    if init_net is None:
        net = build_from_config(cfg, train, np.random.default_rng(init_ss))
    else:
        net = init_net.copy()
    shuffle_rng, gate_rng = np.random.default_rng(shuffle_ss), np.random.default_rng(gate_ss)

    method = cfg.method
    grouping = cfg.grouping
    spec = build_groups(net, grouping)
    n_groups = len(spec)
    cons = dual = pen = None
    if method == "constrained":
        eps = cfg.epsilon
        if isinstance(eps, list) and len(eps) not in (1, n_groups):
            raise ConfigError(f"{len(eps)} target densities for {n_groups} groups")
        cons = ConstraintSet(spec, eps)
        dual = DualState.zeros(n_groups, cfg.eta_dual, cfg.restarts)
    elif method == "penalized":
        lam = cfg.lambda_pen
        if isinstance(lam, list) and len(lam) not in (1, n_groups):
            raise ConfigError(f"{len(lam)} penalty coefficients for {n_groups} groups")
        pen = PenaltyConfig(lam if isinstance(lam, list) and len(lam) > 1 else np.atleast_1d(lam)[0],
                            cfg.normalization)
    opt = cfg.optimizer
    state = OptimizerState()
    ones = np.ones(net.n_gates)

    def evaluate():
        return error_rate(lambda x: forward_eval(net, x), val, cfg.eval_batch_size)

    def one_step(xb, yb, fixed_z=None):
        nonlocal dual
        if fixed_z is None:
            logits, cache = forward_train(net, xb, rng=gate_rng)
        else:
            logits, cache = forward_fixed(net, xb, fixed_z)
        loss, dlogits = loss_xent(logits, yb)
        grads = backward(net, cache, dlogits)
        if opt.weight_decay > 0:
            _, wd_grads = weight_decay(net, opt.weight_decay)
            grads = add_grads(grads, wd_grads)
        dens = densities(spec, net.gates)
        if fixed_z is not None:
            del grads["log_phi"]
        elif method == "constrained":
            grads["log_phi"] = grads["log_phi"] + densities_grad(spec, net.gates, dual.lambdas)
        elif method == "penalized":
            _, coefs = penalty_term(dens, pen, len(train), spec.param_counts)
            grads["log_phi"] = grads["log_phi"] + densities_grad(spec, net.gates, coefs)
        primal_step(net, grads, state, opt)
        if method == "constrained" and fixed_z is None:
            dual = dual_step(dual, dens, cons)
        return loss, dens

    records, trace = [], []
    min_density = np.full(n_groups, np.inf)
    loss_acc, loss_n = 0.0, 0

    def log(step, epoch, val_error=None):
        nonlocal loss_acc, loss_n
        dens = densities(spec, net.gates)
        lam = dual.lambdas.tolist() if dual is not None else [0.0] * n_groups
        viol = (dens - cons.epsilon).tolist() if cons is not None else None
        records.append(MetricsRecord(step, epoch, loss_acc / max(loss_n, 1), dens.tolist(), lam, viol, val_error))
        loss_acc, loss_n = 0.0, 0

    # magnitude pruning trains the dense net (gates pinned on) before ranking
    fixed = ones if method == "magnitude_prune" else None
    step = 0
    for epoch, step, idx, last in _epochs_loop(cfg, len(train), shuffle_rng):
        loss, dens = one_step(train.x[idx], train.y[idx], fixed)
        trace.append(dens.tolist())
        min_density = np.minimum(min_density, dens)
        loss_acc += loss
        loss_n += 1
        if last:
            log(step, epoch, evaluate() if fixed is None else
                error_rate(lambda x: forward_fixed(net, x, fixed)[0], val, cfg.eval_batch_size))
        elif step % cfg.log_every == 0:
            log(step, epoch)
    if loss_n:
        log(step, records[-1].epoch if records else 0)

    if method == "magnitude_prune":
        eps = cfg.epsilon
        if grouping == "layer_wise" and isinstance(eps, list) and len(eps) > 1:
            mask = magnitude_mask(net, eps)
        else:
            mask = magnitude_mask(net, np.atleast_1d(eps)[0])
        ft = ExperimentConfig.from_dict({**cfg.to_dict(), "epochs": cfg.finetune_epochs, "max_steps": None})
        for epoch, fstep, idx, last in _epochs_loop(ft, len(train), shuffle_rng):
            one_step(train.x[idx], train.y[idx], mask)
        gate_values = mask
        val_error = error_rate(lambda x: forward_fixed(net, x, mask)[0], val, cfg.eval_batch_size)
    else:
        gate_values = median_gate(net.gates.log_phi, net.config)
        val_error = evaluate()

    purged = purge(net, gate_values=gate_values)
    report = compression_report(net, purged, dense_baseline(net), grouping)
    collapsed = _collapsed_layers(net, gate_values)
    target = cfg.epsilon if method != "penalized" else None
    summary = {
        "name": cfg.name,
        "method": method,
        "grouping": grouping,
        "target": target,
        "lambda_pen": cfg.lambda_pen if method == "penalized" else None,
        "restarts": cfg.restarts,
        "seed": cfg.seed,
        "steps": step,
        "achieved_density": report.l0_density,
        "overall_density": _overall_density(net),
        "min_density": min_density.tolist() if step else None,
        "final_lambda": dual.lambdas.tolist() if dual is not None else None,
        "val_error": val_error,
        "purged_val_error": error_rate(purged, val, cfg.eval_batch_size),
        "report": asdict(report),
        "status": COLLAPSE_MESSAGE if collapsed else "ok",
        "collapsed_layers": collapsed,
    }
    if method == "magnitude_prune":
        mask_spec = build_groups(net, grouping)
        summary["achieved_density"] = [float(np.dot(gate_values[g], net.gates.coverage[g])
                                             / net.gates.coverage[g].sum()) for g in mask_spec.groups]
    result = RunResult(cfg, net, purged, records, summary, None, trace)
    if out_dir is not None:
        write_outputs(result, out_dir, state)
    return result


def write_outputs(result: RunResult, out_dir, opt_state=None):
    from .purge import save_purged

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_groups = len(result.records[0].density) if result.records else len(result.summary["achieved_density"])
    result.config.to_json(out / "config.json")
    write_metrics(out / "metrics.csv", result.records, n_groups)
    save_checkpoint(out / "checkpoint.json", result.net, opt_state)
    save_purged(out / "purged.json", result.purged)
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2))
    result.out_dir = out
    return out
