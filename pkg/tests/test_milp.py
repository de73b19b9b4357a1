import math

import numpy as np
import pytest

from relcert import crown
from relcert.crown import LinearForm
from relcert.milp import (LinearProgram, MilpModel, build_lp_pairwise, build_milp, dump_model, lp_solve,
                          milp_solve)
from relcert.oracle import enumerate_milp, lp_optimum, lp_vertices
from relcert.relspec import build_hamming, build_kuap

INF = math.inf


def random_milp_case(rng):
    """Random forms over a tiny k-UAP or hamming instance with at most 12 binaries."""
    n_out = int(rng.choice([2, 3]))
    m = n_out - 1
    k = int(rng.integers(1, 12 // (1 + m) + 1))
    k = min(k, 4)
    n0 = int(rng.integers(1, 4))
    X = rng.normal(size=(k, n0))
    labels = rng.integers(0, n_out, size=k)
    eps = float(rng.uniform(0.05, 1.0))
    if n_out == 2 and rng.random() < 0.5:
        inst = build_hamming(X, labels, eps, "inf")
    else:
        inst = build_kuap(X, labels, eps, "inf", n_out)
    approx = {(i, j): [LinearForm(rng.normal(size=n0), rng.normal() * 0.5) for _ in range(rng.integers(1, 4))]
              for i in range(k) for j in range(m)}
    uppers = {key: 0.0 for key in approx}
    return build_milp(inst, approx, range(k), uppers), inst


def test_lp_abs_value():
    lp = LinearProgram([0.0, 1.0], "min", [], [-0.5, -INF], [0.5, INF])
    lp.add_row([1.0, -1.0], "<=", 0.0)
    lp.add_row([-1.0, -1.0], "<=", 0.0)
    res = lp_solve(lp)
    assert res.status == "optimal" and res.value == pytest.approx(0.0, abs=1e-12)
    assert res.x[0] == pytest.approx(0.0, abs=1e-12)


def test_lp_symmetric_pair():
    forms = [LinearForm(np.array([1.0]), 0.0), LinearForm(np.array([-1.0]), 0.0)]
    res = lp_solve(build_lp_pairwise(forms, [np.zeros(1)] * 2, 0.5))
    assert res.value == pytest.approx(0.0, abs=1e-12)


def test_lp_statuses():
    lp = LinearProgram([1.0], "min", [], [0.0], [1.0])
    lp.add_row([1.0], ">=", 2.0)
    assert lp_solve(lp).status == "infeasible"
    assert lp_solve(LinearProgram([-1.0], "min", [], [0.0], [INF])).status == "unbounded"
    assert lp_solve(LinearProgram([1.0], "max", [], [-INF], [3.0])).value == 3.0
    lp = LinearProgram([1.0, 1.0], "min", [], [0.0, 0.0], [5.0, 5.0])
    lp.add_row([1.0, 1.0], "=", 2.0)
    lp.add_row([2.0, 2.0], "=", 4.0)  # redundant equality
    assert lp_solve(lp).value == pytest.approx(2.0)
    with pytest.raises(ValueError):
        lp.add_row([1.0], "<=", 1.0)
    with pytest.raises(ValueError):
        lp.add_row([1.0, 0.0], "<", 1.0)


def test_lp_matches_vertex_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = 5
        lp = LinearProgram(rng.normal(size=n), str(rng.choice(["min", "max"])), [],
                           -rng.uniform(0.5, 2, size=n), rng.uniform(0.5, 2, size=n))
        for _ in range(int(rng.integers(1, 5))):
            lp.add_row(rng.normal(size=n), str(rng.choice(["<=", ">="])), float(rng.normal() * 0.3))
        res, ref = lp_solve(lp), lp_vertices(lp)
        if ref is None:
            assert res.status == "infeasible"
        else:
            assert res.status == "optimal" and res.value == pytest.approx(ref, abs=1e-6)


def test_lp_matches_highs_with_free_and_one_sided_variables():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        lo = np.where(rng.random(n) < 0.6, rng.normal(size=n) - 1, -INF)
        hi = np.where(rng.random(n) < 0.6, np.abs(rng.normal(size=n)) + 1, INF)
        lp = LinearProgram(rng.normal(size=n), "min", [], lo, hi)
        for _ in range(int(rng.integers(0, 7))):
            lp.add_row(rng.normal(size=n), str(rng.choice(["<=", ">=", "="], p=[.45, .45, .1])),
                       float(rng.normal() * 2))
        res, ref = lp_solve(lp), lp_optimum(lp)
        if ref is None:
            assert res.status == "infeasible"
        elif math.isinf(ref):
            assert res.status == "unbounded"
        else:
            assert res.status == "optimal" and res.value == pytest.approx(ref, abs=1e-6)


def test_pairwise_single_form_is_concretization():
    rng = np.random.default_rng(2)
    for _ in range(20):
        form, x = LinearForm(rng.normal(size=3), rng.normal()), rng.normal(size=3)
        res = lp_solve(build_lp_pairwise([form], [x], 0.4))
        assert res.value == pytest.approx(crown.concretize(form, x, 0.4, INF), abs=1e-9)


def test_pairwise_matches_grid():
    rng = np.random.default_rng(3)
    for _ in range(10):
        forms = [LinearForm(rng.normal(size=2), rng.normal()) for _ in range(2)]
        X, eps = rng.normal(size=(2, 2)), rng.uniform(0.1, 1)
        axis = np.linspace(-eps, eps, 401)
        D = np.stack(np.meshgrid(axis, axis), -1).reshape(-1, 2)
        brute = np.max([(X[i] + D) @ forms[i].L + forms[i].b for i in range(2)], axis=0).min()
        lp = lp_solve(build_lp_pairwise(forms, X, eps)).value
        slope = max(np.abs(f.L).sum() for f in forms)
        assert lp <= brute + 1e-9
        assert brute - lp <= slope * (2 * eps / 400)


def test_pairwise_cancellation_and_norm_check():
    L = np.array([1.0, -2.0])
    forms = [LinearForm(L, 0.0), LinearForm(-L, 0.0)]
    assert lp_solve(build_lp_pairwise(forms, [np.zeros(2)] * 2, 0.3)).value == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        build_lp_pairwise(forms, [np.zeros(2)] * 2, 0.3, norm_p=2.0)


def test_pairwise_sign_matches_common_violation_on_grid():
    rng = np.random.default_rng(4)
    for _ in range(40):
        forms = [LinearForm(rng.normal(size=2), rng.normal() * 0.3) for _ in range(2)]
        X, eps = rng.normal(size=(2, 2)), 0.5
        t = lp_solve(build_lp_pairwise(forms, X, eps)).value
        axis = np.linspace(-eps, eps, 801)
        D = np.stack(np.meshgrid(axis, axis), -1).reshape(-1, 2)
        common = np.max([(X[i] + D) @ forms[i].L + forms[i].b for i in range(2)], axis=0).min()
        if abs(t) > 1e-2:
            assert (t >= 0) == (common >= 0)


def _inst3():
    return build_kuap(np.zeros((3, 2)), [0, 0, 0], 1.0, "inf", 2)


def test_milp_no_unverified():
    inst = _inst3()
    model = build_milp(inst, {}, [], {})
    assert model.binaries == [] and model.lp.offset == 3
    assert milp_solve(model).objective == 3


def test_milp_forced_z():
    inst = _inst3()
    approx = {(0, 0): [LinearForm(np.array([0.1, 0.1]), 1.0)]}
    model = build_milp(inst, approx, [0], {(0, 0): 2.0})
    assert milp_solve(model).objective == 3
    assert enumerate_milp(model) == 3
    assert len(model.binaries) == 2


def test_milp_pairwise_safe_consistency():
    # three executions, each violable alone near a different corner, never two at once
    inst = _inst3()
    approx = {(0, 0): [LinearForm(np.array([1.0, 1.0]), 1.5)],
              (1, 0): [LinearForm(np.array([-1.0, 1.0]), 1.5)],
              (2, 0): [LinearForm(np.array([1.0, -1.0]), 1.5)]}
    for a in range(3):
        for b in range(a + 1, 3):
            pair = lp_solve(build_lp_pairwise(approx[(a, 0)] + approx[(b, 0)], [np.zeros(2)] * 2, 1.0))
            assert pair.value >= 0
    model = build_milp(inst, approx, [0, 1, 2], {key: 0.0 for key in approx})
    res = milp_solve(model)
    assert res.objective >= 0 + 3 - 1
    assert res.objective == 2
    assert np.all(np.abs(res.witness_delta) <= 1.0 + 1e-9)


def test_milp_errors():
    inst = _inst3()
    with pytest.raises(ValueError, match="no linear approximation"):
        build_milp(inst, {}, [0], {})
    p2 = build_kuap(np.zeros((1, 2)), [0], 0.1, 2.0, 2)
    with pytest.raises(ValueError, match="infinity norm"):
        build_milp(p2, {(0, 0): [LinearForm(np.ones(2), 0.0)]}, [0], {(0, 0): 1.0})


def test_milp_without_binaries_equals_lp():
    rng = np.random.default_rng(5)
    for _ in range(10):
        forms = [LinearForm(rng.normal(size=2), rng.normal()) for _ in range(3)]
        lp = build_lp_pairwise(forms, rng.normal(size=(3, 2)), 0.5)
        res = milp_solve(MilpModel(lp, [], 2, integral_objective=False))
        assert res.objective == pytest.approx(lp_solve(lp).value, abs=1e-12)


def test_milp_matches_enumeration_oracle():
    rng = np.random.default_rng(6)
    for _ in range(40):
        model, _ = random_milp_case(rng)
        assert len(model.binaries) <= 12
        assert milp_solve(model).objective == enumerate_milp(model)


def test_elimination_neutrality_on_models():
    # a verified execution kept in the model (forms concretize > 0) must be counted as correct
    rng = np.random.default_rng(7)
    for _ in range(20):
        model, inst = random_milp_case(rng)
        approx = {}
        for (i, j) in [(i, j) for i in range(inst.k) for j in range(inst.clauses[i].m)]:
            approx[(i, j)] = [LinearForm(rng.normal(size=inst.input_dim) * 0.1, 5.0)]
        full = milp_solve(build_milp(inst, approx, range(inst.k), {key: 0.0 for key in approx})).objective
        reduced = milp_solve(build_milp(inst, approx, [], {})).objective
        assert full == reduced


def test_dump_model_lists_everything():
    model, _ = random_milp_case(np.random.default_rng(8))
    text = dump_model(model)
    assert text.startswith(("Minimize", "Maximize")) and text.endswith("End\n")
    assert text.count("\n c") == len(model.lp.rows)
    assert "Binaries" in text
    assert dump_model(model) == text
