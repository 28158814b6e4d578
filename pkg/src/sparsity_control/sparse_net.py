"""Small numpy network engine with hard-concrete gates.

Effective parameters are ``theta = theta_tilde * z``. Dense layers gate their
input neurons (or every weight, in unstructured mode); conv layers gate their
output feature maps (or every kernel entry). Gradients are hand-derived and
everything runs in float64.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from .hard_concrete import (
    GateInit,
    GateSet,
    HardConcreteConfig,
    init_log_phi,
    median_gate,
    p_active,
    sample_gate_and_grad,
    uniform_open,
)

FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "identity")


class StaleCacheError(ValueError):
    """Raised when a ForwardCache does not belong to the network's current state."""


def _act(a, kind):
    return np.maximum(a, 0.0) if kind == "relu" else a


def _act_grad(dout, a, kind):
    return dout * (a > 0.0) if kind == "relu" else dout


# ---------------------------------------------------------------------------
# layers


@dataclass
class Dense:
    weight: np.ndarray  # (in_features, out_features)
    bias: np.ndarray
    activation: str = "relu"
    gating: Optional[str] = "input"  # "input" | "unstructured" | None

    kind = "dense"

    def __post_init__(self):
        if self.gating not in ("input", "unstructured", None):
            raise ValueError(f"dense gating must be 'input', 'unstructured' or None, got {self.gating!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def in_features(self):
        return self.weight.shape[0]

    @property
    def out_features(self):
        return self.weight.shape[1]

    @property
    def n_gates(self):
        if self.gating == "input":
            return self.in_features
        if self.gating == "unstructured":
            return self.weight.size
        return 0

    def gate_coverage(self):
        if self.gating == "input":
            return np.full(self.in_features, self.out_features)
        return np.ones(self.n_gates, dtype=np.int64)

    def weight_activity(self, pi):
        """Broadcast per-gate values onto the weight tensor."""
        if self.gating == "input":
            return np.broadcast_to(pi[:, None], self.weight.shape)
        if self.gating == "unstructured":
            return pi.reshape(self.weight.shape)
        return np.ones_like(self.weight)

    def bias_activity(self, pi):
        return np.ones_like(self.bias)

    def output_shape(self, shape):
        if tuple(shape) != (self.in_features,):
            raise ValueError(f"dense layer expects input shape ({self.in_features},), got {tuple(shape)}")
        return (self.out_features,)

    def forward(self, x, z):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"dense layer expects (batch, {self.in_features}) input, got {x.shape}")
        if self.gating == "input":
            xg = x * z
            a = xg @ self.weight + self.bias
            cache = (x, xg, a)
        elif self.gating == "unstructured":
            w = self.weight * z.reshape(self.weight.shape)
            a = x @ w + self.bias
            cache = (x, w, a)
        else:
            a = x @ self.weight + self.bias
            cache = (x, None, a)
        return _act(a, self.activation), cache

    def backward(self, cache, dout, z, need_dx=True):
        x, aux, a = cache
        da = _act_grad(dout, a, self.activation)
        db = da.sum(axis=0)
        dz = None
        if self.gating == "input":
            dw = aux.T @ da
            dxg = da @ self.weight.T
            dz = np.einsum("bi,bi->i", dxg, x)
            dx = dxg * z
        elif self.gating == "unstructured":
            zw = z.reshape(self.weight.shape)
            dw_eff = x.T @ da
            dw = dw_eff * zw
            dz = (dw_eff * self.weight).reshape(-1)
            dx = da @ aux.T
        else:
            dw = x.T @ da
            dx = da @ self.weight.T
        return dx, dw, db, dz


def _im2col(x, kh, kw, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return cols, ho, wo, x.shape


def _col2im(dcols, padded_shape, kh, kw, stride, padding, ho, wo):
    b, c, hp, wp = padded_shape
    # one contiguous copy per kernel offset, accumulated channels-last
    d = dcols.reshape(b, ho, wo, c, kh * kw).transpose(4, 0, 1, 2, 3).copy()
    dx = np.zeros((b, hp, wp, c))
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += d[i * kw + j]
    dx = dx.transpose(0, 3, 1, 2)
    if padding:
        dx = dx[:, :, padding : hp - padding, padding : wp - padding]
    return dx


@dataclass
class Conv2d:
    weight: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    activation: str = "relu"
    gating: Optional[str] = "output"  # "output" | "unstructured" | None

    kind = "conv"

    def __post_init__(self):
        if self.gating not in ("output", "unstructured", None):
            raise ValueError(f"conv gating must be 'output', 'unstructured' or None, got {self.gating!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def n_gates(self):
        if self.gating == "output":
            return self.out_channels
        if self.gating == "unstructured":
            return self.weight.size
        return 0

    def gate_coverage(self):
        if self.gating == "output":
            per_map = int(np.prod(self.weight.shape[1:])) + 1
            return np.full(self.out_channels, per_map)
        return np.ones(self.n_gates, dtype=np.int64)

    def weight_activity(self, pi):
        if self.gating == "output":
            return np.broadcast_to(pi[:, None, None, None], self.weight.shape)
        if self.gating == "unstructured":
            return pi.reshape(self.weight.shape)
        return np.ones_like(self.weight)

    def bias_activity(self, pi):
        if self.gating == "output":
            return pi
        return np.ones_like(self.bias)

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ValueError(f"conv layer expects ({self.in_channels}, H, W) input, got {tuple(shape)}")
        kh, kw = self.weight.shape[2:]
        ho = (shape[1] + 2 * self.padding - kh) // self.stride + 1
        wo = (shape[2] + 2 * self.padding - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"conv kernel larger than padded input {tuple(shape)}")
        return (self.out_channels, ho, wo)

    def forward(self, x, z):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"conv layer expects (batch, {self.in_channels}, H, W) input, got {x.shape}")
        kh, kw = self.weight.shape[2:]
        cols, ho, wo, pshape = _im2col(x, kh, kw, self.stride, self.padding)
        w = self.weight * z.reshape(self.weight.shape) if self.gating == "unstructured" else self.weight
        a = cols @ w.reshape(self.out_channels, int(np.prod(self.weight.shape[1:]))).T + self.bias
        a = a.reshape(x.shape[0], ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        if self.gating == "output":
            ag = a * z[None, :, None, None]
        else:
            ag = a
        return _act(ag, self.activation), (cols, ho, wo, pshape, w, a, ag)

    def backward(self, cache, dout, z, need_dx=True):
        cols, ho, wo, pshape, w, a, ag = cache
        dag = _act_grad(dout, ag, self.activation)
        dz = None
        if self.gating == "output":
            dz = np.einsum("bchw,bchw->c", dag, a)
            da = dag * z[None, :, None, None]
        else:
            da = dag
        db = da.sum(axis=(0, 2, 3))
        dmat = da.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        dw_eff = (dmat.T @ cols).reshape(self.weight.shape)
        if self.gating == "unstructured":
            zw = z.reshape(self.weight.shape)
            dw = dw_eff * zw
            dz = (dw_eff * self.weight).reshape(-1)
        else:
            dw = dw_eff
        if not need_dx:
            return None, dw, db, dz
        dcols = dmat @ w.reshape(self.out_channels, int(np.prod(self.weight.shape[1:])))
        kh, kw = self.weight.shape[2:]
        dx = _col2im(dcols, pshape, kh, kw, self.stride, self.padding, ho, wo)
        return dx, dw, db, dz


@dataclass
class MaxPool2d:
    window: int = 2
    stride: int = 2

    kind = "maxpool"
    n_gates = 0

    def output_shape(self, shape):
        c, h, w = shape
        return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)

    def forward(self, x, z=None):
        k, s = self.window, self.stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        b, c, ho, wo = win.shape[:4]
        flat = win.reshape(b, c, ho, wo, k * k)
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, cache, dout, z=None, need_dx=True):
        shape, idx = cache
        k, s = self.window, self.stride
        b, c, ho, wo = idx.shape
        dwin = np.zeros((b, c, ho, wo, k * k))
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dwin = dwin.reshape(b, c, ho, wo, k, k)
        dx = np.zeros(shape)
        if k == s:
            dx[:, :, : ho * k, : wo * k] = dwin.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
            return dx, None, None, None
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dwin[:, :, :, :, i, j]
        return dx, None, None, None


@dataclass
class Flatten:
    kind = "flatten"
    n_gates = 0

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, z=None):
        return x.reshape(x.shape[0], int(np.prod(x.shape[1:]))), x.shape

    def backward(self, cache, dout, z=None, need_dx=True):
        return dout.reshape(cache), None, None, None


PARAM_LAYERS = (Dense, Conv2d)


# ---------------------------------------------------------------------------
# network


class GatedNetwork:
    """Ordered layers sharing one GateSet; gates are laid out in layer order."""

    def __init__(self, layers, input_shape, gates: GateSet):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.gates = gates
        self.version = 0
        self.gate_slices = []
        start = 0
        for layer in self.layers:
            n = layer.n_gates
            self.gate_slices.append(slice(start, start + n) if n else None)
            start += n
        if start != len(gates):
            raise ValueError(f"layers reference {start} gates but the GateSet holds {len(gates)}")
        expected = [layer.gate_coverage() for layer in self.layers if layer.n_gates]
        if expected and not np.array_equal(np.concatenate(expected), gates.coverage):
            raise ValueError("GateSet coverage does not match the layer structure")
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        for layer in self.layers[:-1]:
            if getattr(layer, "activation", "relu") not in ACTIVATIONS:
                raise ValueError("only relu/identity activations keep purging exact")

    @property
    def n_gates(self):
        return len(self.gates)

    @property
    def config(self) -> HardConcreteConfig:
        return self.gates.config

    def sparsifiable(self):
        """Indices of layers that own gates."""
        return [i for i, sl in enumerate(self.gate_slices) if sl is not None]

    def named_params(self):
        params = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, PARAM_LAYERS):
                params[f"layers.{i}.weight"] = layer.weight
                params[f"layers.{i}.bias"] = layer.bias
        params["log_phi"] = self.gates.log_phi
        return params

    def n_params(self):
        return sum(v.size for k, v in self.named_params().items() if k != "log_phi")

    def copy(self):
        layers = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                layers.append(Dense(layer.weight.copy(), layer.bias.copy(), layer.activation, layer.gating))
            elif isinstance(layer, Conv2d):
                layers.append(
                    Conv2d(layer.weight.copy(), layer.bias.copy(), layer.stride, layer.padding,
                           layer.activation, layer.gating)
                )
            else:
                layers.append(type(layer)(**asdict(layer)))
        gates = GateSet(self.gates.log_phi.copy(), self.gates.coverage.copy(), self.gates.config)
        return GatedNetwork(layers, self.input_shape, gates)


def _uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_network(arch, input_shape, rng: np.random.Generator, gate_init: GateInit = GateInit(),
                  hc: HardConcreteConfig = HardConcreteConfig()) -> GatedNetwork:
    """Build a network from a list of layer dicts.

    Layer dicts look like ``{"type": "dense", "out": 300, "gating": "input"}``,
    ``{"type": "conv", "out_ch": 20, "kernel": 5, "gating": "output"}``,
    ``{"type": "maxpool", "window": 2}`` or ``{"type": "flatten"}``; input
    sizes are inferred from ``input_shape``.
    """
    shape = tuple(input_shape)
    layers = []
    for spec in arch:
        spec = dict(spec)
        kind = spec.pop("type")
        if kind == "dense":
            if len(shape) != 1:
                raise ValueError(f"dense layer needs a flat input, got shape {shape}")
            n_in, n_out = shape[0], int(spec.pop("out"))
            layer = Dense(
                _uniform_init(rng, n_in, (n_in, n_out)),
                _uniform_init(rng, n_in, (n_out,)),
                activation=spec.pop("activation", "relu"),
                gating=spec.pop("gating", "input"),
            )
        elif kind == "conv":
            if len(shape) != 3:
                raise ValueError(f"conv layer needs a (C, H, W) input, got shape {shape}")
            k = int(spec.pop("kernel"))
            out_ch = int(spec.pop("out_ch"))
            fan_in = shape[0] * k * k
            layer = Conv2d(
                _uniform_init(rng, fan_in, (out_ch, shape[0], k, k)),
                _uniform_init(rng, fan_in, (out_ch,)),
                stride=int(spec.pop("stride", 1)),
                padding=int(spec.pop("padding", 0)),
                activation=spec.pop("activation", "relu"),
                gating=spec.pop("gating", "output"),
            )
        elif kind == "maxpool":
            window = int(spec.pop("window", 2))
            layer = MaxPool2d(window, int(spec.pop("stride", window)))
        elif kind == "flatten":
            layer = Flatten()
        else:
            raise ValueError(f"unknown layer type {kind!r}")
        if spec:
            raise ValueError(f"unexpected keys for {kind} layer: {sorted(spec)}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    coverage = [layer.gate_coverage() for layer in layers if layer.n_gates]
    coverage = np.concatenate(coverage) if coverage else np.zeros(0, dtype=np.int64)
    log_phi = init_log_phi(gate_init, coverage.size, rng) if coverage.size else np.zeros(0)
    return GatedNetwork(layers, input_shape, GateSet(log_phi, coverage, hc))


def mlp_arch(hidden=(300, 100), n_classes=10, gating="input"):
    sizes = list(hidden) + [n_classes]
    return [
        {"type": "dense", "out": n, "gating": gating, "activation": "relu" if i < len(sizes) - 1 else "identity"}
        for i, n in enumerate(sizes)
    ]


def lenet5_arch(n_classes=10, gating=("output", "input")):
    conv_g, dense_g = gating
    return [
        {"type": "conv", "out_ch": 20, "kernel": 5, "gating": conv_g},
        {"type": "maxpool", "window": 2},
        {"type": "conv", "out_ch": 50, "kernel": 5, "gating": conv_g},
        {"type": "maxpool", "window": 2},
        {"type": "flatten"},
        {"type": "dense", "out": 500, "gating": dense_g},
        {"type": "dense", "out": n_classes, "gating": dense_g, "activation": "identity"},
    ]


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardCache:
    layer_caches: list
    z: np.ndarray
    u: Optional[np.ndarray]
    dz_dlogphi: np.ndarray
    token: tuple
    batch_size: int


def _check_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    n_in = int(np.prod(net.input_shape))
    if x.ndim < 1 or int(np.prod(x.shape[1:])) != n_in:
        raise ValueError(f"batch of shape {x.shape} does not match network input {net.input_shape}")
    return x.reshape((x.shape[0],) + net.input_shape)


def _run(net, x, z):
    h = _check_batch(net, x)
    caches = []
    for layer, sl in zip(net.layers, net.gate_slices):
        h, c = layer.forward(h, z[sl] if sl is not None else None)
        caches.append(c)
    return h, caches


def forward_fixed(net: GatedNetwork, x, z):
    """Forward pass with caller-supplied gate values (no gate gradient)."""
    z = np.asarray(z, dtype=np.float64)
    logits, caches = _run(net, x, z)
    cache = ForwardCache(caches, z, None, np.zeros_like(z), (id(net), net.version), logits.shape[0])
    return logits, cache


def forward_train(net: GatedNetwork, x, rng: Optional[np.random.Generator] = None, u=None):
    """Single-sample stochastic forward pass.

    Draws exactly one uniform per gate, in layer order, from ``rng``
    (or uses ``u`` when given).
    """
    if u is None:
        if rng is None:
            raise ValueError("forward_train needs either rng or u")
        u = uniform_open(rng, net.n_gates)
    u = np.asarray(u, dtype=np.float64)
    z, dz = sample_gate_and_grad(net.gates.log_phi, u, net.config)
    logits, caches = _run(net, x, z)
    cache = ForwardCache(caches, z, u, dz, (id(net), net.version), logits.shape[0])
    return logits, cache


def forward_eval(net: GatedNetwork, x):
    """Deterministic forward pass with every gate at its median."""
    logits, _ = _run(net, x, median_gate(net.gates.log_phi, net.config))
    return logits


def backward(net: GatedNetwork, cache: ForwardCache, dlogits):
    if cache.token != (id(net), net.version):
        raise StaleCacheError("cache was produced by a different network or before a parameter update")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape[0] != cache.batch_size:
        raise StaleCacheError("upstream gradient batch size does not match the cache")
    grads = {}
    dz_all = np.zeros(net.n_gates)
    dh = dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        layer, sl = net.layers[i], net.gate_slices[i]
        z = cache.z[sl] if sl is not None else None
        dh, dw, db, dz = layer.backward(cache.layer_caches[i], dh, z, need_dx=i > 0)
        if dw is not None:
            grads[f"layers.{i}.weight"] = dw
            grads[f"layers.{i}.bias"] = db
        if dz is not None:
            dz_all[sl] = dz
    grads["log_phi"] = dz_all * cache.dz_dlogphi
    return grads


def loss_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("labels out of range for the logits")
    rows = np.arange(n)
    loss = -log_softmax(logits, axis=1)[rows, labels].mean()
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def weight_decay(net: GatedNetwork, lam: float):
    """L2 penalty on theta_tilde weighted by detached gate activity.

    Gate activity enters as a constant, so the gradient w.r.t. log_phi is
    exactly zero.
    """
    if lam < 0:
        raise ValueError("weight decay coefficient must be >= 0")
    pi_all = p_active(net.gates.log_phi, net.config)
    penalty = 0.0
    grads = {"log_phi": np.zeros(net.n_gates)}
    for i, (layer, sl) in enumerate(zip(net.layers, net.gate_slices)):
        if not isinstance(layer, PARAM_LAYERS):
            continue
        pi = pi_all[sl] if sl is not None else None
        pw = layer.weight_activity(pi) if sl is not None else 1.0
        pb = layer.bias_activity(pi) if sl is not None else 1.0
        penalty += lam * float(np.sum(pw * layer.weight**2) + np.sum(pb * layer.bias**2))
        grads[f"layers.{i}.weight"] = 2.0 * lam * pw * layer.weight
        grads[f"layers.{i}.bias"] = 2.0 * lam * pb * layer.bias
    return penalty, grads


def add_grads(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] + v if k in out else v
    return out


# ---------------------------------------------------------------------------
# primal optimizers


@dataclass
class PrimalOptimizerConfig:
    kind: str = "adam"  # "sgd" | "sgd_momentum" | "adam"
    lr_weights: float = 7e-4
    lr_gates: float = 7e-4
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.kind not in ("sgd", "sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr_weights < 0 or self.lr_gates < 0:
            raise ValueError("learning rates must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def primal_step(net: GatedNetwork, grads: dict, state: OptimizerState, cfg: PrimalOptimizerConfig):
    """Apply one in-place update; gates use ``lr_gates``, everything else ``lr_weights``."""
    params = net.named_params()
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        lr = cfg.lr_gates if name == "log_phi" else cfg.lr_weights
        if cfg.kind == "sgd":
            p -= lr * g
        elif cfg.kind == "sgd_momentum":
            buf = state.m.get(name)
            buf = g.copy() if buf is None else cfg.momentum * buf + g
            state.m[name] = buf
            p -= lr * buf
        else:
            b1, b2 = cfg.betas
            m = state.m.get(name, np.zeros_like(p))
            v = state.v.get(name, np.zeros_like(p))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            state.m[name], state.v[name] = m, v
            mhat = m / (1.0 - b1**t)
            vhat = v / (1.0 - b2**t)
            p -= lr * mhat / (np.sqrt(vhat) + cfg.eps)
    net.version += 1
    return state


# ---------------------------------------------------------------------------
# checkpoints


def _arr(a):
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _unarr(d, dtype=np.float64):
    return np.asarray(d["data"], dtype=dtype).reshape(d["shape"])


def layer_to_dict(layer):
    if isinstance(layer, Dense):
        return {"type": "dense", "activation": layer.activation, "gating": layer.gating,
                "weight": _arr(layer.weight), "bias": _arr(layer.bias)}
    if isinstance(layer, Conv2d):
        return {"type": "conv", "activation": layer.activation, "gating": layer.gating,
                "stride": layer.stride, "padding": layer.padding,
                "weight": _arr(layer.weight), "bias": _arr(layer.bias)}
    if isinstance(layer, MaxPool2d):
        return {"type": "maxpool", "window": layer.window, "stride": layer.stride}
    return {"type": "flatten"}


def layer_from_dict(d):
    kind = d["type"]
    if kind == "dense":
        return Dense(_unarr(d["weight"]), _unarr(d["bias"]), d["activation"], d["gating"])
    if kind == "conv":
        return Conv2d(_unarr(d["weight"]), _unarr(d["bias"]), d["stride"], d["padding"],
                      d["activation"], d["gating"])
    if kind == "maxpool":
        return MaxPool2d(d["window"], d["stride"])
    if kind == "flatten":
        return Flatten()
    raise ValueError(f"unknown layer type {kind!r} in checkpoint")


def network_to_dict(net: GatedNetwork, opt_state: Optional[OptimizerState] = None, extra=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "gated",
        "input_shape": list(net.input_shape),
        "hard_concrete": asdict(net.config),
        "layers": [layer_to_dict(layer) for layer in net.layers],
        "log_phi": _arr(net.gates.log_phi),
        "coverage": _arr(net.gates.coverage),
    }
    if opt_state is not None:
        doc["optimizer_state"] = {
            "step": opt_state.step,
            "m": {k: _arr(v) for k, v in opt_state.m.items()},
            "v": {k: _arr(v) for k, v in opt_state.v.items()},
        }
    if extra:
        doc.update(extra)
    return doc


def network_from_dict(doc):
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    if doc.get("kind", "gated") != "gated":
        raise ValueError("checkpoint does not hold a gated network")
    gates = GateSet(_unarr(doc["log_phi"]), _unarr(doc["coverage"], np.int64),
                    HardConcreteConfig(**doc["hard_concrete"]))
    net = GatedNetwork([layer_from_dict(d) for d in doc["layers"]], doc["input_shape"], gates)
    state = None
    if "optimizer_state" in doc:
        s = doc["optimizer_state"]
        state = OptimizerState(s["step"], {k: _unarr(v) for k, v in s["m"].items()},
                               {k: _unarr(v) for k, v in s["v"].items()})
    return net, state


def save_checkpoint(path, net: GatedNetwork, opt_state: Optional[OptimizerState] = None, extra=None):
    Path(path).write_text(json.dumps(network_to_dict(net, opt_state, extra)))


def load_checkpoint(path):
    return network_from_dict(json.loads(Path(path).read_text()))
