import math

import numpy as np
import pytest

from _corpus import random_net
from relcert.crown import LinearForm
from relcert.milp import LinearProgram, MilpModel, build_milp, lp_solve
from relcert.model import Network, affine
from relcert.oracle import GridSpec, enumerate_milp, finite_diff, grid_attack
from relcert.relspec import build_kuap, mu

INF = math.inf


def test_grid_spec_contents():
    grid = GridSpec(5, INF, 0.3)
    pts = grid.points(2)
    assert len(pts) == 25
    assert any(np.all(p == 0) for p in pts)
    for corner in ([0.3, 0.3], [-0.3, 0.3], [0.3, -0.3], [-0.3, -0.3]):
        assert any(np.allclose(p, corner) for p in pts)
    round_grid = GridSpec(21, 2.0, 0.3).points(2)
    assert np.all(np.linalg.norm(round_grid, axis=1) <= 0.3 + 1e-12)
    with pytest.raises(ValueError):
        GridSpec(4, INF, 0.1)
    with pytest.raises(ValueError):
        GridSpec(3, INF, 0.1).points(5)


def test_grid_attack_zero_radius_and_margins():
    rng = np.random.default_rng(0)
    net = random_net(rng, n_out=3)
    X = rng.normal(size=(4, 2))
    inst = build_kuap(X, [0, 1, 2, 0], 0.0, "inf", 3)
    low, delta, high = grid_attack(net, inst, GridSpec(5, INF, 0.0))
    assert low == mu(inst, np.zeros(2), net) and high == 4 - low
    ident = Network((affine(np.eye(2), np.zeros(2)),), 2)
    inst = build_kuap(np.eye(2) * 5, [0, 1], 0.5, "inf", 2)
    assert grid_attack(ident, inst, GridSpec(11, INF, 0.5))[0] == 2


def test_grid_attack_matches_double_loop():
    rng = np.random.default_rng(1)
    net = random_net(rng, n_out=3, n_affine=3)
    X = rng.uniform(-1, 1, size=(3, 2))
    inst = build_kuap(X, [0, 1, 2], 0.4, "inf", 3)
    low, delta, high = grid_attack(net, inst, GridSpec(101, INF, 0.4))
    axis = np.linspace(-0.4, 0.4, 101)
    counts = []
    for a in axis:
        for b in axis:
            count = 0
            for i in range(3):
                h = X[i] + np.array([a, b])
                for layer in net.layers:
                    h = layer.weight @ h + layer.bias if layer.kind == "affine" else np.maximum(h, 0)
                count += int(h[inst.labels[i]] >= h.max())
            counts.append(count)
    assert low == min(counts) and high == 3 - min(counts)
    assert mu(inst, delta, net) == low


def test_enumerate_without_binaries():
    forms_lp = LinearProgram([0.0, 1.0], "min", [], [-0.5, -INF], [0.5, INF])
    forms_lp.add_row([1.0, -1.0], "<=", 0.2)
    forms_lp.add_row([-1.0, -1.0], "<=", 0.0)
    model = MilpModel(forms_lp, [], 1, integral_objective=False)
    assert enumerate_milp(model) == pytest.approx(lp_solve(forms_lp).value, abs=1e-9)


def test_enumerate_all_forced():
    inst = build_kuap(np.zeros((3, 2)), [0, 0, 0], 0.5, "inf", 2)
    approx = {(i, 0): [LinearForm(np.ones(2), 2.0)] for i in range(2)}
    model = build_milp(inst, approx, [0, 1], {key: 0.0 for key in approx})
    assert enumerate_milp(model) == 1 + 2


def test_enumerate_limit():
    inst = build_kuap(np.zeros((7, 1)), [0] * 7, 0.5, "inf", 2)
    approx = {(i, 0): [LinearForm(np.ones(1), 0.0)] for i in range(7)}
    model = build_milp(inst, approx, range(7), {key: 0.0 for key in approx})
    with pytest.raises(ValueError, match="enumeration limit"):
        enumerate_milp(model)


def test_finite_diff_exact_cases():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -0.7])
    assert np.allclose(finite_diff(lambda z: z @ A @ z, x), 2 * A @ x, atol=1e-8)
    assert np.allclose(finite_diff(lambda z: 3 * z[0] - z[1], x), [3, -1], atol=1e-9)
