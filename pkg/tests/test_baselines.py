import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsity_control.baselines import (
    bisection_search,
    gate_group_l1,
    keep_top,
    l1_magnitude_prune,
    magnitude_mask,
)
from sparsity_control.purge import dense_baseline
from sparsity_control.sparse_net import Conv2d, build_network, forward_fixed, mlp_arch


def conv_with_norms(norms):
    w = np.zeros((len(norms), 1, 2, 2))
    for i, n in enumerate(norms):
        w[i, 0, 0, 0] = n
    arch_net = build_network([{"type": "conv", "out_ch": len(norms), "kernel": 2}], (1, 3, 3),
                             np.random.default_rng(0))
    arch_net.layers[0].weight[:] = w
    return arch_net


def test_keep_top_example():
    mask = keep_top(np.array([0.1, 0.5, 0.2, 0.9]), 0.5)
    assert np.flatnonzero(mask).tolist() == [1, 3]


def test_keep_top_ties_keep_lower_index():
    assert np.flatnonzero(keep_top(np.ones(4), 0.5)).tolist() == [0, 1]


def test_keep_top_errors():
    with pytest.raises(ValueError):
        keep_top(np.ones(4), 0.0)
    with pytest.raises(ValueError):
        keep_top(np.ones(4), 1.5)


@given(st.integers(1, 200), st.floats(0.001, 1.0))
def test_keep_count_is_ceiling(n, eps):
    mask = keep_top(np.random.default_rng(n).random(n), eps)
    assert mask.sum() == math.ceil(eps * n - 1e-12)


def test_filter_norm_ranking_through_network():
    net = conv_with_norms([0.1, 0.5, 0.2, 0.9])
    np.testing.assert_allclose(gate_group_l1(net.layers[0]), [0.1, 0.5, 0.2, 0.9])
    mask = magnitude_mask(net, 0.5)
    assert np.flatnonzero(mask).tolist() == [1, 3]
    p = l1_magnitude_prune(net, 0.5)
    assert p.layers[0].weight.shape[0] == 2


def test_dense_unit_ranking_uses_input_rows():
    net = build_network(mlp_arch((3,), 2), (4,), np.random.default_rng(0))
    net.layers[0].weight[:] = np.array([[1.0], [3.0], [0.5], [2.0]]) * np.ones((4, 3))
    np.testing.assert_allclose(gate_group_l1(net.layers[0]), [3.0, 9.0, 1.5, 6.0])


def test_eps_one_is_identity():
    rng = np.random.default_rng(1)
    net = build_network(mlp_arch((6, 5), 3), (4,), rng)
    p = l1_magnitude_prune(net, 1.0)
    x = rng.standard_normal((10, 4))
    np.testing.assert_allclose(p(x), forward_fixed(net, x, np.ones(net.n_gates))[0], atol=1e-12)
    assert p.param_count == dense_baseline(net).param_count


def test_isolated_layer_retained_fraction():
    for n, eps in [(10, 0.35), (7, 0.5), (50, 0.2)]:
        net = build_network([{"type": "conv", "out_ch": n, "kernel": 3}], (2, 6, 6), np.random.default_rng(n))
        p = l1_magnitude_prune(net, eps)
        assert p.param_count / dense_baseline(net).param_count == pytest.approx(math.ceil(eps * n) / n)


def test_layer_wise_densities():
    net = build_network(mlp_arch((10,), 2), (8,), np.random.default_rng(2))
    mask = magnitude_mask(net, [0.5, 0.3])
    assert mask[:8].sum() == 4 and mask[8:].sum() == 3


def test_unstructured_ranking():
    net = build_network([{"type": "dense", "out": 3, "gating": "unstructured"}], (2,), np.random.default_rng(0))
    net.layers[0].weight[:] = [[1.0, -5.0, 2.0], [0.5, 3.0, -4.0]]
    mask = magnitude_mask(net, 0.5)
    assert np.flatnonzero(mask).tolist() == [1, 4, 5]


def test_ungated_layer_cannot_be_ranked():
    layer = build_network([{"type": "dense", "out": 2, "gating": None}], (2,), np.random.default_rng(0)).layers[0]
    with pytest.raises(ValueError):
        gate_group_l1(layer)
    assert isinstance(conv_with_norms([1.0]).layers[0], Conv2d)


# bisection


def sigmoid_oracle(log_lambda):
    return 1.0 / (1.0 + math.exp(log_lambda))


def test_bisection_synthetic_oracle():
    trace = bisection_search(sigmoid_oracle, 0.5, 0.01, -5.0, 5.0, max_iter=20)
    assert trace.converged
    it, loglam, dens, _ = trace.iterations[-1]
    assert abs(dens - 0.5) <= 0.01
    assert abs(loglam) <= 0.04
    assert trace.iterations[0][0] == 0 and trace.iterations[1][0] == 0
    assert trace.n_midpoints <= 20


def test_bisection_width_halves():
    trace = bisection_search(sigmoid_oracle, 0.3, 1e-9, -5.0, 5.0, max_iter=12)
    mids = [row[1] for row in trace.iterations[2:]]
    assert mids[0] == 0.0
    steps = np.abs(np.diff(mids))
    np.testing.assert_allclose(steps, [10.0 / 2 ** (k + 2) for k in range(len(steps))], rtol=1e-12)
    assert not trace.converged and trace.n_midpoints == 12


def test_bisection_straddle_error_before_midpoints():
    calls = []

    def fn(x):
        calls.append(x)
        return sigmoid_oracle(x)

    with pytest.raises(ValueError):
        bisection_search(fn, 0.999, 0.001, -5.0, 5.0)
    assert len(calls) == 2


def test_bisection_vacuous_tolerance():
    trace = bisection_search(sigmoid_oracle, 0.5, 1.0, -5.0, 5.0)
    assert trace.converged and trace.n_midpoints == 0 and trace.n_runs == 2


@settings(max_examples=50)
@given(st.floats(0.05, 0.95), st.floats(0.001, 0.05))
def test_bisection_converges_on_monotone_oracles(target, tol):
    trace = bisection_search(sigmoid_oracle, target, tol, -8.0, 8.0, max_iter=40)
    assert trace.converged
    assert abs(trace.best()[2] - target) <= tol


def test_bisection_csv(tmp_path):
    trace = bisection_search(lambda x: (sigmoid_oracle(x), 0.01 * abs(x)), 0.5, 0.01, -5.0, 4.0)
    trace.to_csv(tmp_path / "b.csv")
    with open(tmp_path / "b.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "log_lambda", "density", "val_error"]
    assert len(rows) == trace.n_runs + 1
    assert float(rows[1][1]) == -5.0 and rows[1][0] == "0"
