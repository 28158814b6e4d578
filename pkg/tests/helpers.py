"""Shared test utilities: random small networks and a finite-difference gradient checker."""
import numpy as np

from sparsity_control.hard_concrete import GateInit, uniform_open
from sparsity_control.sparse_net import (
    Conv2d,
    Dense,
    MaxPool2d,
    backward,
    build_network,
    forward_train,
    loss_xent,
)


def random_arch(rng, conv=None):
    """A small random architecture mixing conv, pooling and dense layers."""
    conv = bool(rng.integers(0, 2)) if conv is None else conv
    arch = []
    if conv:
        c_in = int(rng.integers(1, 3))
        size = int(rng.integers(6, 9))
        input_shape = (c_in, size, size)
        arch.append({"type": "conv", "out_ch": int(rng.integers(2, 4)), "kernel": int(rng.integers(2, 4)),
                     "padding": int(rng.integers(0, 2)), "stride": int(rng.integers(1, 3)),
                     "gating": ["output", "unstructured", None][int(rng.integers(0, 3))]})
        if rng.integers(0, 2):
            arch.append({"type": "maxpool", "window": 2})
        arch.append({"type": "flatten"})
    else:
        input_shape = (int(rng.integers(2, 6)),)
    for _ in range(int(rng.integers(1, 3))):
        arch.append({"type": "dense", "out": int(rng.integers(2, 6)),
                     "gating": ["input", "unstructured", None][int(rng.integers(0, 3))]})
    arch.append({"type": "dense", "out": 3, "activation": "identity", "gating": "input"})
    return arch, input_shape


def random_net(rng, conv=None, rho=0.5, noise=1.0):
    arch, shape = random_arch(rng, conv)
    net = build_network(arch, shape, rng, GateInit(rho, noise))
    for p in net.named_params().values():
        if p is not net.gates.log_phi:
            p += 0.3 * rng.standard_normal(p.shape)
    return net


def _pattern(cache):
    """Every piecewise-linear branch taken in a forward pass: relu signs, pool argmaxes, gate clamps."""
    bits = [cache.z == 0.0, cache.z == 1.0]
    for c in cache.layer_caches:
        if isinstance(c, tuple) and len(c) == 3 and isinstance(c[2], np.ndarray):  # dense
            bits.append(c[2] > 0)
        elif isinstance(c, tuple) and len(c) == 7:  # conv
            bits.append(c[6] > 0)
        elif isinstance(c, tuple) and len(c) == 2 and isinstance(c[1], np.ndarray):  # maxpool
            bits.append(c[1])
    return bits


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(net, x, y, u, h=1e-6, floor=1e-6):
    """Compare backward against central differences for every parameter entry.

    Returns (max relative error, number of checked entries, number skipped
    because the +-h probe crossed a kink). Gates whose pre-clamp value lies
    within 1e-3 of 0 or 1 are skipped for their log_phi entry.
    """
    logits, cache = forward_train(net, x, u=u)
    _, dlogits = loss_xent(logits, y)
    grads = backward(net, cache, dlogits)
    cfg = net.config
    s = 1.0 / (1.0 + np.exp(-(net.gates.log_phi + np.log(u) - np.log1p(-u)) / cfg.beta))
    pre = s * (cfg.zeta - cfg.gamma) + cfg.gamma
    near_clamp = (np.abs(pre) <= 1e-3) | (np.abs(pre - 1.0) <= 1e-3)

    worst, checked, skipped = 0.0, 0, 0
    for name, p in net.named_params().items():
        g = grads[name]
        for idx in np.ndindex(p.shape):
            if name == "log_phi" and near_clamp[idx]:
                skipped += 1
                continue
            old = p[idx]
            p[idx] = old + h
            lp, cp = forward_train(net, x, u=u)
            fp = loss_xent(lp, y)[0]
            p[idx] = old - h
            lm, cm = forward_train(net, x, u=u)
            fm = loss_xent(lm, y)[0]
            p[idx] = old
            if not (_same(_pattern(cp), _pattern(cm)) and _same(_pattern(cp), _pattern(cache))):
                skipped += 1
                continue
            fd = (fp - fm) / (2 * h)
            err = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), floor)
            worst = max(worst, err)
            checked += 1
    return worst, checked, skipped


def random_batch(net, rng, n=8):
    x = rng.standard_normal((n,) + net.input_shape)
    y = rng.integers(0, net.shapes[-1][0], n)
    u = uniform_open(rng, net.n_gates)
    return x, y, u


PARAM_LAYER_TYPES = (Dense, Conv2d, MaxPool2d)
