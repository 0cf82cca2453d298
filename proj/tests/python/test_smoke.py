import json
import math
import os
import pathlib

import pytest

import eqflow

CONFIGS = pathlib.Path(os.environ.get("EQFLOW_CONFIG_DIR", pathlib.Path(__file__).parents[2] / "configs"))


def test_permutation_action():
    p = eqflow.Permutation.parse_cycles(3, "(1 2 3)")
    assert p.images() == [2, 3, 1]
    assert p.act([10.0, 20.0, 30.0]) == [20.0, 30.0, 10.0]
    q = eqflow.Permutation.transposition(3, 1, 2)
    x = [1.0, 2.0, 3.0]
    assert (p * q).act(x) == q.act(p.act(x))
    assert (p * p.inverse()) == eqflow.Permutation.identity(3)


def test_group_and_transversal():
    g = eqflow.PermGroup("translation_1d 3")
    assert len(g) == 3
    reps = g.right_transversal()
    assert len(reps) * len(g) == math.factorial(3)
    assert len(eqflow.PermGroup("symmetric 4").stabilizer(1)) == 6


def test_layer_and_flow_equivariance():
    n = 4
    params = [[0.3, -0.2, 0.1, 0.5, 0.7, -0.1], [0.2, 0.2, -0.4, 0.1, -0.3, 0.05]]
    x = [0.1, -0.5, 0.9, 0.3]
    shift = eqflow.Permutation.parse_cycles(n, "(1 2 3 4)")
    y = eqflow.integrate("conv1", [n], params, x, integrator="rk4", steps_per_unit_time=50)
    ys = eqflow.integrate("conv1", [n], params, shift.act(x), integrator="rk4", steps_per_unit_time=50)
    assert max(abs(a - b) for a, b in zip(ys, shift.act(y))) < 1e-12
    back = eqflow.inverse_integrate("conv1", [n], params, y, integrator="rk4", steps_per_unit_time=50)
    assert max(abs(a - b) for a, b in zip(back, x)) < 1e-9


def test_bad_inputs_raise():
    with pytest.raises(ValueError):
        eqflow.ControlLayer("conv1", [3], [1.0])
    with pytest.raises(ValueError):
        eqflow.PermGroup("nonsense 3")
    with pytest.raises(eqflow.FlowBlowUp):
        eqflow.integrate("linear", [2], [[40.0]] * 10, [1.0, 1.0], steps_per_unit_time=1)


def test_checkers_return_reports():
    r = eqflow.check_resolves("conv1", [3], "translation_1d 3", seed=1)
    assert r["verdict"] == "pass"
    assert r["metrics"]["transversal_size"] == 2.0
    assert eqflow.check_resolves("gamma1", [3], "translation_1d 3")["verdict"] == "fail"
    t3 = eqflow.target("t3_antisym", [3])
    assert eqflow.check_invariance(t3, "translation_1d 3")["verdict"] == "pass"
    assert eqflow.check_invariance(t3, "symmetric 3")["verdict"] == "fail"
    assert eqflow.check_family_equivariance("fs2", [3], samples=20)["violations"] == 0


def test_cli_round_trip(tmp_path):
    code, out, _ = eqflow.run_cli(["partition", "--config", str(CONFIGS / "partition.json"),
                                   "--out", str(tmp_path), "--no-timestamp"])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["violations"] == 0
    assert eqflow.run_cli(["report", str(tmp_path / "missing")])[0] == 2
