import csv
import json

import numpy as np
import pytest

from pocontrol.cli import (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_SUITE, EXIT_VALIDATION, main,
                           parse_model)
from pocontrol.hjb import tampered
from pocontrol.lqsolve import read_solution_csv, solve_backward, write_solution_csv


def _arr(a):
    a = np.asarray(a, float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


SCALAR = {"n": 1, "m": 1, "d": 1, "q": 1, "T": 1.0, "B": _arr([[-0.5]]), "C": _arr([[1.0]]),
          "gamma_v": _arr([[0.3]]), "gamma_w": _arr([[0.4]]), "F_w": _arr([[[0.2]]]),
          "Q": _arr([[1.0]]), "P": _arr([[1.0]]), "N": _arr([[1.0]]), "x0": _arr([1.0])}


def _cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_solve_zero_model(tmp_path):
    zero = {"n": 1, "m": 1, "d": 1, "q": 1, "T": 1.0, "N": _arr([[1.0]])}
    cfg = _cfg(tmp_path, {"model": zero, "solver": {"dt": 0.01}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["v0"] == 0.0
    assert summary["lambda0_eigs"] == [0.0]


def test_solve_writes_affine_k_column(tmp_path):
    static = {"n": 1, "m": 1, "d": 1, "q": 1, "T": 2.0, "Q": _arr([[0.7]]), "P": _arr([[1.3]]),
              "N": _arr([[1.0]])}
    cfg = _cfg(tmp_path, {"model": static, "solver": {"dt": 0.01}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "solution.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["t", "K_00"]
    t = np.array([float(r[0]) for r in rows[1:]])
    K = np.array([float(r[1]) for r in rows[1:]])
    np.testing.assert_allclose(K, 1.3 + 0.7 * (2.0 - t), rtol=1e-13)
    assert t[0] == 0.0 and t[-1] == 2.0 and t.size == 201


def test_solution_round_trip_is_exact(tmp_path):
    cfg = _cfg(tmp_path, {"model": SCALAR, "solver": {"dt": 0.01}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    model = parse_model(SCALAR)
    back = read_solution_csv(tmp_path / "solution.csv", model)
    sol = solve_backward(model, 0.01)
    for name in ("grid", "K", "Lambda", "Y", "chi"):
        np.testing.assert_array_equal(getattr(back, name), getattr(sol, name))


def test_evaluate_is_byte_reproducible(tmp_path):
    cfg = _cfg(tmp_path, {"model": SCALAR, "mc": {"n_outer": 40, "n_inner": 5, "dt": 0.1, "seed": 3}})
    outs = []
    for k, threads in enumerate(("1", "2")):
        out = tmp_path / f"e{k}"
        assert main(["evaluate", "optimal", "--config", cfg, "--out", str(out), "--threads", threads]) == 0
        outs.append((out / "evaluate_optimal.csv").read_bytes())
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert lines[0] == "policy_id,estimate,stderr,n_outer,n_inner,dt,seed"
    assert lines[1].startswith("optimal,") and lines[1].endswith(",40,5,0.10000000000000001,3")


@pytest.mark.parametrize("policy", ["zero", "gain_scaled", "constant"])
def test_evaluate_other_policies(tmp_path, policy):
    cfg = _cfg(tmp_path, {"model": SCALAR, "mc": {"n_outer": 10, "n_inner": 3, "dt": 0.25, "seed": 1},
                          "experiment": {"gain_scale": 0.5, "action": _arr([0.2])}})
    assert main(["evaluate", policy, "--config", cfg, "--out", str(tmp_path), "--seed", "9"]) == 0
    row = (tmp_path / f"evaluate_{policy}.csv").read_text().splitlines()[1].split(",")
    assert row[0] == policy and row[-1] == "9" and float(row[1]) > 0


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"model": dict(SCALAR, R=_arr([[1.0]]))})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    err = _err(capsys)
    assert err["code"] == EXIT_CONFIG and "R" in err["message"]
    cfg = _cfg(tmp_path, {"model": SCALAR, "solver": {"dt": 0.01, "method": "rk4"}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_shape_and_bad_inputs_are_config_errors(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"model": dict(SCALAR, B=_arr([[1.0, 0.0]]))})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "shape" in _err(capsys)["message"]
    cfg = _cfg(tmp_path, {"model": dict(SCALAR, B={"shape": [1, 1], "data": [1.0, 2.0]})})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg = _cfg(tmp_path, {"model": SCALAR, "solver": {"dt": 0.3}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg = _cfg(tmp_path, {"model": SCALAR})
    assert main(["evaluate", "zero", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--config", cfg, "--out", str(tmp_path), "--threads", "0"]) == EXIT_CONFIG


def test_invalid_model_exit_code(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"model": dict(SCALAR, N=_arr([[-1.0]]))})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert _err(capsys)["error"] == "validation"


def test_numerical_failure_exit_code(tmp_path, capsys):
    blowup = dict(SCALAR, B=_arr([[400.0]]), T=10.0)
    cfg = _cfg(tmp_path, {"model": blowup, "solver": {"dt": 0.01}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_NUMERICAL
    assert _err(capsys)["error"] == "numerical"


def test_verify_flow_passes(tmp_path, capsys):
    cfg = _cfg(tmp_path, {})
    assert main(["verify", "flow", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "verify_flow.json").read_text())
    assert report
    assert "PASS" in capsys.readouterr().out


def test_verify_hjb_accepts_true_solution_and_rejects_tampered(tmp_path, capsys):
    model = parse_model(SCALAR)
    sol = solve_backward(model, model.T / 2000)
    write_solution_csv(sol, tmp_path / "good.csv")
    write_solution_csv(tampered(sol, 1.1), tmp_path / "bad.csv")
    cfg = _cfg(tmp_path, {"model": SCALAR, "experiment": {"suite_options": {"n_points": 20}}})
    assert main(["verify", "hjb", "--config", cfg, "--out", str(tmp_path / "g"),
                 "--solution", str(tmp_path / "good.csv")]) == EXIT_OK
    assert main(["verify", "hjb", "--config", cfg, "--out", str(tmp_path / "b"),
                 "--solution", str(tmp_path / "bad.csv")]) == EXIT_SUITE
    assert "FAIL" in capsys.readouterr().out


def test_solution_flag_needs_hjb(tmp_path):
    cfg = _cfg(tmp_path, {"model": SCALAR})
    model = parse_model(SCALAR)
    write_solution_csv(solve_backward(model, 0.01), tmp_path / "s.csv")
    assert main(["verify", "lqg", "--config", cfg, "--out", str(tmp_path),
                 "--solution", str(tmp_path / "s.csv")]) == EXIT_CONFIG
