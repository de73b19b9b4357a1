import csv
import json
import math

import numpy as np
import pytest

from _corpus import random_instance, random_net
from relcert.cli import main
from relcert.errors import DominanceViolation
from relcert.model import Network, affine, forward
from relcert.oracle import GridSpec, grid_attack
from relcert.pipeline import (COVERED, METHODS, UNVERIFIED, VERIFIED, VerificationReport, check_dominance,
                              run_all, run_instance, verify_individual)
from relcert.relspec import build_hamming, build_kuap

INF = math.inf


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(14)
    net = random_net(rng, n_out=3, n_affine=2, max_width=8)
    X = rng.uniform(-1, 1, size=(5, 2))
    labels = forward(net, X).argmax(axis=1)
    (tmp_path / "net.json").write_text(json.dumps(net.to_dict()))
    (tmp_path / "data.json").write_text(json.dumps({"inputs": X.tolist(), "labels": labels.tolist(),
                                                    "epsilon": 0.4, "norm": "inf"}))
    return tmp_path


def args(files, *extra):
    return ["verify", "--network", str(files / "net.json"), "--data", str(files / "data.json"), *extra]


def test_verify_individual_examples():
    ident = Network((affine(np.eye(3), np.zeros(3)),), 3)
    inst = build_kuap(np.eye(3), [0, 1, 2], 0.1, "inf", 3)
    s, ok, forms = verify_individual(ident, inst, 1)
    assert s == pytest.approx(1 - 2 * 0.1) and ok and len(forms) == 2
    rng = np.random.default_rng(0)
    net = random_net(rng, n_out=3)
    x = rng.normal(size=(1, 2))
    label = int(forward(net, x).argmax())
    clean = build_kuap(x, [label], 0.0, "inf", 3)
    s, ok, _ = verify_individual(net, clean, 0)
    y = forward(net, x[0])
    assert ok and s == pytest.approx(min(y[label] - np.delete(y, label)), abs=1e-12)
    # a radius at which the grid attack already breaks the prediction
    for eps in (0.5, 1.0, 2.0, 4.0, 8.0):
        inst = clean.with_epsilon(eps)
        if grid_attack(net, inst, GridSpec(41, INF, eps))[0] == 0:
            break
    s, ok, _ = verify_individual(net, inst, 0)
    assert not ok and s < 0
    with pytest.raises(IndexError):
        verify_individual(net, inst, 3)


def test_all_verified_fast_path():
    ident = Network((affine(np.eye(2), np.zeros(2)),), 2)
    inst = build_kuap(np.eye(2) * 3, [0, 1], 0.1, "inf", 2)
    reports = run_all(ident, inst)
    assert {r.bound for r in reports.values()} == {2}
    assert reports["racoon"].subsets == []
    assert all(e["status"] == VERIFIED for e in reports["racoon"].executions)
    ham = build_hamming(np.eye(2) * 3, [0, 1], 0.1, "inf")
    assert {r.bound for r in run_all(ident, ham).values()} == {0}


def test_statuses_partition_and_bounds_in_range():
    rng = np.random.default_rng(1)
    for _ in range(10):
        net = random_net(rng, n_out=3)
        inst = random_instance(rng, net, eps_range=(0.2, 0.6))
        for report in run_all(net, inst).values():
            assert 0 <= report.bound <= inst.k
            assert [e["index"] for e in report.executions] == list(range(inst.k))
            assert {e["status"] for e in report.executions} <= {VERIFIED, COVERED, UNVERIFIED}


def test_racoon_at_least_io_on_seeded_instances():
    rng = np.random.default_rng(2)
    for _ in range(15):
        kind = "hamming" if rng.random() < 0.5 else "kuap"
        net = random_net(rng, n_out=2 if kind == "hamming" else 3)
        inst = random_instance(rng, net, kind=kind, eps_range=(0.1, 0.7))
        reports = run_all(net, inst)
        check_dominance(reports, inst.kind)


def test_check_dominance_detects_violation():
    fake = {m: VerificationReport(m, "kuap", 3, 0.1, 2, []) for m in METHODS}
    fake["io"].bound = 3
    with pytest.raises(DominanceViolation, match="racoon"):
        check_dominance(fake, "kuap")
    check_dominance(fake, "hamming")  # reversed ordering holds here
    fake["io"].bound = 1
    with pytest.raises(DominanceViolation):
        check_dominance(fake, "hamming")


def test_non_infinity_norm_refinement_methods():
    rng = np.random.default_rng(3)
    net = random_net(rng, n_out=3)
    inst = build_kuap(rng.uniform(-1, 1, size=(3, 2)), [0, 1, 2], 0.3, 2.0, 3)
    reports = run_all(net, inst, methods=("nonrel", "indiv", "cross"))
    assert reports["indiv"].bound >= reports["nonrel"].bound
    assert reports["cross"].bound >= reports["nonrel"].bound


def test_cli_writes_json_and_csv(files):
    out, sweep = files / "r.json", files / "s.csv"
    assert main(args(files, "--out", str(out), "--csv", str(sweep))) == 0
    report = json.loads(out.read_text())
    assert set(report) == {"method", "property", "k", "epsilon", "bound", "executions", "subsets", "milp",
                           "timings_sec"}
    assert set(report["milp"]) == {"objective", "witness_delta"}
    for entry in report["subsets"]:
        assert set(entry) == {"members", "clause_targets", "bound"}
    rows = list(csv.reader(sweep.open()))
    assert rows[0] == ["method", "epsilon", "k", "bound", "seconds"] and len(rows) == 2


def test_cli_epsilon_sweep_is_monotone(files):
    sweep = files / "sweep.csv"
    for eps in (0.05, 0.1, 0.2, 0.3, 0.5):
        assert main(args(files, "--epsilon", str(eps), "--csv", str(sweep), "--out", str(files / "r.json"))) == 0
    rows = list(csv.DictReader(sweep.open()))
    assert len(rows) == 5
    bounds = [int(r["bound"]) for r in rows]
    assert bounds == sorted(bounds, reverse=True)


def test_cli_deterministic(files):
    a, b = files / "a.json", files / "b.json"
    assert main(args(files, "--out", str(a), "--no-timings", "--seed", "7")) == 0
    assert main(args(files, "--out", str(b), "--no-timings", "--seed", "7")) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "timings_sec" not in json.loads(a.read_text())


def test_cli_missing_output_dir(files, capsys):
    assert main(args(files, "--out", str(files / "nowhere" / "r.json"))) != 0
    assert "nowhere" in capsys.readouterr().err


def test_cli_exit_codes(files, capsys):
    assert main(args(files, "--property", "hamming")) == 2
    (files / "bad.json").write_text('{"input_dim": 2, "layers": [{"type": "conv"}]}')
    assert main(["verify", "--network", str(files / "bad.json"), "--data", str(files / "data.json")]) == 2
    assert "layer 0" in capsys.readouterr().err
    assert main(args(files, "--norm", "2")) == 3
    assert main(args(files, "--norm", "2", "--method", "indiv", "--out", str(files / "o.json"))) == 0
    assert main(args(files, "--k0", "2", "--k1", "3")) == 2


def test_cli_check_dominance_and_stdout(files, capsys):
    assert main(args(files, "--check-dominance", "--method", "io", "--no-timings")) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["method"] == "io"


def test_cli_no_elimination_agrees(files):
    a, b = files / "a.json", files / "b.json"
    assert main(args(files, "--out", str(a), "--no-timings")) == 0
    assert main(args(files, "--out", str(b), "--no-timings", "--no-elimination")) == 0
    assert json.loads(a.read_text())["bound"] == json.loads(b.read_text())["bound"]


def test_run_instance_single_method():
    rng = np.random.default_rng(4)
    net = random_net(rng, n_out=2)
    inst = random_instance(rng, net, kind="hamming", k=4, eps_range=(0.3, 0.6))
    full = run_all(net, inst)
    for method in METHODS:
        assert run_instance(net, inst, method).bound == full[method].bound
