"""Turn a gated network into a deterministic, physically smaller one.

Gates are frozen at their medians, fractional medians are folded into the
weights they scale, and units whose gate is zero are deleted together with
the matching slices of the neighbouring layers. Deleted units always carry
an exact zero (relu/identity both map 0 to 0), so outputs are unchanged.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .constraints import build_groups, densities
from .sparse_net import (
    FORMAT_VERSION,
    Conv2d,
    Dense,
    Flatten,
    GatedNetwork,
    MaxPool2d,
    _act,
    _arr,
    _im2col,
    _unarr,
)
from .hard_concrete import median_gate


@dataclass
class PDense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str
    masked: bool = False


@dataclass
class PConv:
    weight: np.ndarray
    bias: np.ndarray
    stride: int
    padding: int
    activation: str
    masked: bool = False


@dataclass
class PMaxPool:
    window: int
    stride: int


@dataclass
class PFlatten:
    keep: Optional[np.ndarray] = None


@dataclass
class PurgedNetwork:
    layers: list
    input_shape: tuple
    input_keep: Optional[np.ndarray]
    provenance: dict
    param_count: int = 0
    mac_count: int = 0
    collapsed: list = field(default_factory=list)

    def __post_init__(self):
        self.param_count = count_params(self)
        self.mac_count = count_macs(self)

    def __call__(self, x):
        return forward_purged(self, x)


def _units(shape):
    return shape[0]


def purge(net: GatedNetwork, gate_values=None) -> PurgedNetwork:
    """Build the purged network; ``gate_values`` overrides the gate medians."""
    if gate_values is None:
        v = median_gate(net.gates.log_phi, net.config)
    else:
        v = np.asarray(gate_values, dtype=np.float64)
        if v.shape != (net.n_gates,):
            raise ValueError(f"expected {net.n_gates} gate values, got shape {v.shape}")
    layers, shapes, n = net.layers, net.shapes, len(net.layers)
    gv = [v[sl] if sl is not None else None for sl in net.gate_slices]

    produced = [np.ones(_units(shapes[0]), bool)]
    for k, layer in enumerate(layers):
        prev = produced[-1]
        if isinstance(layer, Conv2d) and layer.gating == "output" and gv[k] is not None:
            produced.append(gv[k] > 0)
        elif isinstance(layer, MaxPool2d):
            produced.append(prev.copy())
        elif isinstance(layer, Flatten):
            produced.append(np.repeat(prev, int(np.prod(shapes[k][1:]))))
        else:
            produced.append(np.ones(_units(shapes[k + 1]), bool))

    consumed = [None] * (n + 1)
    consumed[n] = np.ones(_units(shapes[n]), bool)
    for k in range(n - 1, -1, -1):
        layer = layers[k]
        if isinstance(layer, Dense) and layer.gating == "input" and gv[k] is not None:
            consumed[k] = gv[k] > 0
        elif isinstance(layer, MaxPool2d):
            consumed[k] = consumed[k + 1].copy()
        elif isinstance(layer, Flatten):
            per_unit = int(np.prod(shapes[k][1:]))
            consumed[k] = consumed[k + 1].reshape(shapes[k][0], per_unit).any(axis=1)
        else:
            consumed[k] = np.ones(_units(shapes[k]), bool)

    alive = [p & c for p, c in zip(produced, consumed)]

    out_layers, provenance, collapsed = [], {}, []
    for k, layer in enumerate(layers):
        a_in, a_out = alive[k], alive[k + 1]
        if gv[k] is not None and not np.any(gv[k] > 0):
            collapsed.append(k)
        if isinstance(layer, Dense):
            w = layer.weight * layer.weight_activity(gv[k]) if gv[k] is not None else layer.weight
            out_layers.append(PDense(w[a_in][:, a_out].copy(), layer.bias[a_out].copy(), layer.activation,
                                     masked=layer.gating == "unstructured"))
            provenance[k] = np.flatnonzero(a_out)
        elif isinstance(layer, Conv2d):
            if gv[k] is not None:
                w = layer.weight * layer.weight_activity(gv[k])
                b = layer.bias * layer.bias_activity(gv[k])
            else:
                w, b = layer.weight, layer.bias
            out_layers.append(PConv(w[a_out][:, a_in].copy(), b[a_out].copy(), layer.stride, layer.padding,
                                    layer.activation, masked=layer.gating == "unstructured"))
            provenance[k] = np.flatnonzero(a_out)
        elif isinstance(layer, MaxPool2d):
            out_layers.append(PMaxPool(layer.window, layer.stride))
        else:
            feat = a_out.reshape(shapes[k][0], int(np.prod(shapes[k][1:])))[a_in].reshape(-1)
            out_layers.append(PFlatten(None if feat.all() else np.flatnonzero(feat)))
            provenance[k] = np.flatnonzero(a_out)
    input_keep = None if alive[0].all() else np.flatnonzero(alive[0])
    provenance["input"] = np.flatnonzero(alive[0])
    return PurgedNetwork(out_layers, net.input_shape, input_keep, provenance, collapsed=collapsed)


def _select_input(p: PurgedNetwork, x):
    x = np.asarray(x, dtype=np.float64)
    n_in = int(np.prod(p.input_shape))
    if x.ndim < 1 or int(np.prod(x.shape[1:])) != n_in:
        raise ValueError(f"batch of shape {x.shape} does not match network input {p.input_shape}")
    x = x.reshape((x.shape[0],) + tuple(p.input_shape))
    if p.input_keep is not None:
        x = x[:, p.input_keep]
    return x


def forward_purged(p: PurgedNetwork, x):
    h = _select_input(p, x)
    for layer in p.layers:
        if isinstance(layer, PDense):
            h = _act(h @ layer.weight + layer.bias, layer.activation)
        elif isinstance(layer, PConv):
            o, c, kh, kw = layer.weight.shape
            cols, ho, wo, _ = _im2col(h, kh, kw, layer.stride, layer.padding)
            a = cols @ layer.weight.reshape(o, c * kh * kw).T + layer.bias
            h = _act(a.reshape(h.shape[0], ho, wo, o).transpose(0, 3, 1, 2), layer.activation)
        elif isinstance(layer, PMaxPool):
            h = MaxPool2d(layer.window, layer.stride).forward(h)[0]
        else:
            h = h.reshape(h.shape[0], int(np.prod(h.shape[1:])))
            if layer.keep is not None:
                h = h[:, layer.keep]
    return h


def _n_weights(layer):
    return int(np.count_nonzero(layer.weight)) if layer.masked else layer.weight.size


def count_params(p: PurgedNetwork) -> int:
    """Weights plus biases; masked (unstructured) layers count nonzero weights only."""
    return sum(_n_weights(l) + l.bias.size for l in p.layers if isinstance(l, (PDense, PConv)))


def count_macs(p: PurgedNetwork, input_shape=None) -> int:
    """Multiply-accumulates of one forward pass for a single example.

    Dense: in*out + out; conv: (kernel entries + 1) per output element,
    i.e. each bias add counts as one MAC. Pooling and activations are free.
    """
    shape = tuple(p.input_shape if input_shape is None else input_shape)
    if int(np.prod(shape)) != int(np.prod(p.input_shape)):
        raise ValueError(f"input shape {shape} does not match network input {tuple(p.input_shape)}")
    shape = tuple(p.input_shape)
    if p.input_keep is not None:
        shape = (len(p.input_keep),) + shape[1:]
    macs = 0
    for layer in p.layers:
        if isinstance(layer, PDense):
            if shape != (layer.weight.shape[0],):
                raise ValueError(f"dense layer expects ({layer.weight.shape[0]},), got {shape}")
            macs += _n_weights(layer) + layer.bias.size
            shape = (layer.weight.shape[1],)
        elif isinstance(layer, PConv):
            o, c, kh, kw = layer.weight.shape
            if len(shape) != 3 or shape[0] != c:
                raise ValueError(f"conv layer expects {c} input channels, got shape {shape}")
            ho = (shape[1] + 2 * layer.padding - kh) // layer.stride + 1
            wo = (shape[2] + 2 * layer.padding - kw) // layer.stride + 1
            macs += (_n_weights(layer) + o) * ho * wo
            shape = (o, ho, wo)
        elif isinstance(layer, PMaxPool):
            c, h, w = shape
            shape = (c, (h - layer.window) // layer.stride + 1, (w - layer.window) // layer.stride + 1)
        else:
            shape = (int(np.prod(shape)) if layer.keep is None else len(layer.keep),)
    return int(macs)


def dense_baseline(net: GatedNetwork) -> PurgedNetwork:
    """The same architecture with every gate fully on."""
    return purge(net, gate_values=np.ones(net.n_gates))


@dataclass
class CompressionReport:
    l0_density: list
    retained_params_fraction: float
    retained_macs_fraction: float
    params: int
    macs: int
    baseline_params: int
    baseline_macs: int
    collapsed_layers: list


def compression_report(net: GatedNetwork, purged: PurgedNetwork, baseline: Optional[PurgedNetwork] = None,
                       mode: str = "model_wise") -> CompressionReport:
    baseline = dense_baseline(net) if baseline is None else baseline
    dens = densities(build_groups(net, mode), net.gates).tolist() if net.sparsifiable() else []
    return CompressionReport(
        l0_density=dens,
        retained_params_fraction=purged.param_count / baseline.param_count,
        retained_macs_fraction=purged.mac_count / baseline.mac_count,
        params=purged.param_count,
        macs=purged.mac_count,
        baseline_params=baseline.param_count,
        baseline_macs=baseline.mac_count,
        collapsed_layers=list(purged.collapsed),
    )


def as_gated(p: PurgedNetwork, open_logit: float = 30.0) -> GatedNetwork:
    """Re-wrap a purged network as a GatedNetwork whose gates sit at median 1.

    Feature selections (``input_keep`` and flatten ``keep``) are expressed as
    zero rows behind closed gates in the following dense layer, so purging the
    result reproduces ``p``. Useful for fine-tuning a purged model.
    """
    from .hard_concrete import GateSet

    input_shape = tuple(p.input_shape)
    layers, log_phi = [], []
    pending = None  # (input size, kept indices) for the first dense layer
    slot = {}  # layer index -> position of its gate block in log_phi
    if p.input_keep is not None:
        if not p.layers or not isinstance(p.layers[0], PDense):
            raise ValueError("input selection is only supported in front of a dense layer")
        pending = (input_shape[0], p.input_keep)
    for layer in p.layers:
        if isinstance(layer, PDense):
            w = layer.weight
            gating = "unstructured" if layer.masked else "input"
            if pending is not None:
                full, keep = pending
                w = np.zeros((full, w.shape[1]))
                w[keep] = layer.weight
                gating = "input"
            if w.shape[1] == 0:
                gating = None  # no outputs left, so input gates would cover nothing
            d = Dense(w.copy(), layer.bias.copy(), layer.activation, gating)
            slot[len(layers)] = len(log_phi)
            if gating is None:
                pass
            elif gating == "unstructured":
                log_phi.append(np.where(w.reshape(-1) != 0, open_logit, -open_logit))
            else:
                lp = np.full(w.shape[0], open_logit)
                if pending is not None:
                    lp[:] = -open_logit
                    lp[pending[1]] = open_logit
                log_phi.append(lp)
            pending = None
            layers.append(d)
        elif isinstance(layer, PConv):
            gating = "unstructured" if layer.masked else "output"
            slot[len(layers)] = len(log_phi)
            layers.append(Conv2d(layer.weight.copy(), layer.bias.copy(), layer.stride, layer.padding,
                                 layer.activation, gating))
            if layer.masked:
                log_phi.append(np.where(layer.weight.reshape(-1) != 0, open_logit, -open_logit))
            else:
                log_phi.append(np.full(layer.weight.shape[0], open_logit))
        elif isinstance(layer, PMaxPool):
            layers.append(MaxPool2d(layer.window, layer.stride))
        else:
            layers.append(Flatten())
    # flatten selections: scatter the next dense layer's rows back to full width
    shape = input_shape
    for i, layer in enumerate(layers):
        if isinstance(layer, Flatten) and p.layers[i].keep is not None:
            full = int(np.prod(shape))
            nxt = layers[i + 1]
            w = np.zeros((full, nxt.weight.shape[1]))
            w[p.layers[i].keep] = p.layers[i + 1].weight
            if w.shape[1] == 0:
                layers[i + 1] = Dense(w, nxt.bias, nxt.activation, None)
            else:
                layers[i + 1] = Dense(w, nxt.bias, nxt.activation, "input")
                lp = np.full(full, -open_logit)
                lp[p.layers[i].keep] = open_logit
                log_phi[slot[i + 1]] = lp
        shape = layers[i].output_shape(shape)
    coverage = [l.gate_coverage() for l in layers if l.n_gates]
    gates = GateSet(np.concatenate(log_phi) if log_phi else np.zeros(0),
                    np.concatenate(coverage) if coverage else np.zeros(0, dtype=np.int64))
    return GatedNetwork(layers, input_shape, gates)


# ---------------------------------------------------------------------------
# serialization


def purged_to_dict(p: PurgedNetwork):
    layers = []
    for layer in p.layers:
        if isinstance(layer, PDense):
            layers.append({"type": "dense", "activation": layer.activation, "masked": layer.masked,
                           "weight": _arr(layer.weight), "bias": _arr(layer.bias)})
        elif isinstance(layer, PConv):
            layers.append({"type": "conv", "activation": layer.activation, "masked": layer.masked,
                           "stride": layer.stride, "padding": layer.padding,
                           "weight": _arr(layer.weight), "bias": _arr(layer.bias)})
        elif isinstance(layer, PMaxPool):
            layers.append({"type": "maxpool", "window": layer.window, "stride": layer.stride})
        else:
            layers.append({"type": "flatten", "keep": None if layer.keep is None else layer.keep.tolist()})
    return {
        "format_version": FORMAT_VERSION,
        "kind": "purged",
        "input_shape": list(p.input_shape),
        "input_keep": None if p.input_keep is None else p.input_keep.tolist(),
        "layers": layers,
        "provenance": {str(k): v.tolist() for k, v in p.provenance.items()},
        "param_count": p.param_count,
        "mac_count": p.mac_count,
        "collapsed": list(p.collapsed),
    }


def purged_from_dict(doc) -> PurgedNetwork:
    if doc.get("format_version") != FORMAT_VERSION or doc.get("kind") != "purged":
        raise ValueError("not a purged-network checkpoint")
    layers = []
    for d in doc["layers"]:
        if d["type"] == "dense":
            layers.append(PDense(_unarr(d["weight"]), _unarr(d["bias"]), d["activation"], d["masked"]))
        elif d["type"] == "conv":
            layers.append(PConv(_unarr(d["weight"]), _unarr(d["bias"]), d["stride"], d["padding"],
                                d["activation"], d["masked"]))
        elif d["type"] == "maxpool":
            layers.append(PMaxPool(d["window"], d["stride"]))
        else:
            layers.append(PFlatten(None if d["keep"] is None else np.asarray(d["keep"], dtype=np.int64)))
    keep = doc["input_keep"]
    prov = {(k if k == "input" else int(k)): np.asarray(v, dtype=np.int64) for k, v in doc["provenance"].items()}
    return PurgedNetwork(layers, tuple(doc["input_shape"]),
                         None if keep is None else np.asarray(keep, dtype=np.int64), prov,
                         collapsed=doc.get("collapsed", []))


def save_purged(path, p: PurgedNetwork):
    Path(path).write_text(json.dumps(purged_to_dict(p)))


def load_purged(path) -> PurgedNetwork:
    return purged_from_dict(json.loads(Path(path).read_text()))
