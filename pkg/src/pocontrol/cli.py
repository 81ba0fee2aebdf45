"""Command-line front end: ``pocontrol {solve,verify,evaluate}``.

Configuration is one JSON document::

    {
      "model":  {"n": 1, "m": 1, "d": 1, "q": 1, "T": 1.0,
                 "B": {"shape": [1, 1], "data": [0.5]}, ...},
      "solver": {"dt": 0.0005},
      "mc":     {"n_outer": 2000, "n_inner": 500, "dt": 0.02, "seed": 7},
      "experiment": {"gain_scale": 1.5}
    }

Arrays are ``{"shape": [...], "data": [...]}`` with row-major data; model
arrays that are omitted default to zero.  Unknown keys are rejected.

Exit codes: 0 success, 2 configuration error, 3 model validation failure,
4 numerical failure, 5 verification-suite failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import filter as flt
from .errors import ConfigError, GammaSingular, NonFinite, ValidationError
from .lqsolve import (optimal_action, optimal_cost, read_solution_csv, solve_backward,
                      write_solution_csv)
from .model import LqModel, validate_lq
from .montecarlo import MCParams, evaluate_policy
from .suites import SUITES, write_report

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_SUITE = 0, 2, 3, 4, 5

_ARRAY_FIELDS = ("b0", "B", "C", "gamma_v", "D_v", "F_v", "gamma_w", "D_w", "F_w", "Q", "P", "N", "x0")
_MODEL_KEYS = {"n", "m", "d", "q", "T", *_ARRAY_FIELDS}
_TOP_KEYS = {"model", "solver", "mc", "experiment"}
_SOLVER_KEYS = {"dt"}
_MC_KEYS = {"n_outer", "n_inner", "dt", "seed"}
_EXPERIMENT_KEYS = {"gain_scale", "action", "suite_options"}
_SUITE_OPTIONS = {"seed", "n_outer", "n_inner", "n_paths", "n_points", "n_kappa", "dt"}


def _reject_unknown(block: dict, allowed: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(block) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _array(spec, name: str) -> np.ndarray:
    if not isinstance(spec, dict):
        raise ConfigError(f"{name} must be an object with 'shape' and 'data'")
    _reject_unknown(spec, {"shape", "data"}, name)
    if "shape" not in spec or "data" not in spec:
        raise ConfigError(f"{name} needs both 'shape' and 'data'")
    shape = tuple(int(s) for s in spec["shape"])
    data = np.asarray(spec["data"], dtype=float).ravel()
    if data.size != int(np.prod(shape)):
        raise ConfigError(f"{name}: {data.size} values do not fill shape {list(shape)}")
    return data.reshape(shape)


def parse_model(block: dict) -> LqModel:
    """Build an :class:`LqModel` from the ``model`` block of a configuration."""
    _reject_unknown(block, _MODEL_KEYS, "model")
    try:
        n, m, d, q = (int(block[k]) for k in ("n", "m", "d", "q"))
        T = float(block["T"])
    except KeyError as exc:
        raise ConfigError(f"model block is missing {exc.args[0]!r}") from None
    expected = dict(b0=(n,), B=(n, n), C=(n, q), gamma_v=(m, n), D_v=(m, n, n), F_v=(m, n, q),
                    gamma_w=(d, n), D_w=(d, n, n), F_w=(d, n, q), Q=(n, n), P=(n, n), N=(q, q), x0=(n,))
    fields = {}
    for name, shape in expected.items():
        if name in block:
            arr = _array(block[name], f"model.{name}")
            if arr.shape != shape:
                raise ConfigError(f"model.{name} has shape {list(arr.shape)}, expected {list(shape)}")
            fields[name] = arr
        else:
            fields[name] = np.zeros(shape)
    try:
        return LqModel(T=T, **fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    _reject_unknown(cfg, _TOP_KEYS, "config")
    _reject_unknown(cfg.get("solver", {}), _SOLVER_KEYS, "solver")
    _reject_unknown(cfg.get("mc", {}), _MC_KEYS, "mc")
    _reject_unknown(cfg.get("experiment", {}), _EXPERIMENT_KEYS, "experiment")
    _reject_unknown(cfg.get("experiment", {}).get("suite_options", {}), _SUITE_OPTIONS,
                    "experiment.suite_options")
    return cfg


def _mc_params(cfg: dict, args, model: LqModel) -> MCParams:
    mc = dict(cfg.get("mc", {}))
    if args.seed is not None:
        mc["seed"] = args.seed
    if args.dt is not None:
        mc["dt"] = args.dt
    try:
        p = MCParams(n_outer=int(mc["n_outer"]), n_inner=int(mc["n_inner"]), dt=float(mc["dt"]),
                     seed=int(mc["seed"]))
        p.steps(model.T)
    except KeyError as exc:
        raise ConfigError(f"mc block is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return p


def _require_valid(model: LqModel) -> None:
    rep = validate_lq(model)
    if not rep.ok:
        raise ValidationError(f"c1_holds={rep.c1_holds}, c2_branch={rep.c2_branch.value}, "
                              f"min_eigenvalues={rep.min_eigenvalues}")


def _solver_dt(cfg, args, model) -> float:
    dt = args.dt if args.dt is not None else cfg.get("solver", {}).get("dt", model.T / 2000)
    try:
        dt = float(dt)
    except (TypeError, ValueError):
        raise ConfigError("solver.dt must be a number") from None
    M = round(model.T / dt) if dt > 0 else 0
    if M < 1 or abs(M * dt - model.T) > 1e-9 * model.T:
        raise ConfigError(f"T / dt must be a positive integer, got T={model.T}, dt={dt}")
    return dt


def cmd_solve(cfg: dict, args) -> int:
    if "model" not in cfg:
        raise ConfigError("solve needs a model block")
    model = parse_model(cfg["model"])
    _require_valid(model)
    dt = _solver_dt(cfg, args, model)
    sol = solve_backward(model, dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_solution_csv(sol, out / "solution.csv")
    summary = {
        "v0": optimal_cost(sol),
        "lambda0_eigs": [float(v) for v in np.linalg.eigvalsh(sol.Lambda[0])],
        "gamma_min_over_grid": float(np.min(sol.gamma_min)),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_verify(cfg: dict, args) -> int:
    which = args.suite
    kwargs = dict(cfg.get("experiment", {}).get("suite_options", {}))
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if "model" in cfg and which != "flow":
        model = parse_model(cfg["model"])
        _require_valid(model)
        kwargs["model"] = model
        if args.solution:
            kwargs["solution"] = read_solution_csv(args.solution, model)
    elif args.solution:
        raise ConfigError("--solution needs a model block in the config")
    if args.solution and which != "hjb":
        raise ConfigError("--solution applies to the hjb suite only")
    out = Path(args.out)
    res = SUITES[which](out_dir=out, threads=args.threads, **kwargs)
    write_report([res], out / f"verify_{which}.json")
    for c in res.checks:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.label}: {c.value:.6g} (bound {c.bound:.6g})")
    return EXIT_OK if res.passed else EXIT_SUITE


POLICY_IDS = ("optimal", "zero", "gain_scaled", "constant")


def cmd_evaluate(cfg: dict, args) -> int:
    if "model" not in cfg:
        raise ConfigError("evaluate needs a model block")
    model = parse_model(cfg["model"])
    _require_valid(model)
    mc = _mc_params(cfg, args, model)
    exp = cfg.get("experiment", {})
    pid = args.policy
    if pid == "zero":
        pol = flt.ZeroPolicy(model.q)
    else:
        sol = solve_backward(model, cfg.get("solver", {}).get("dt", model.T / 2000))
        if pid == "optimal":
            pol = flt.FeedbackPolicy(sol)
        elif pid == "gain_scaled":
            pol = flt.FeedbackPolicy(sol, float(exp.get("gain_scale", 1.0)))
        else:
            a = (_array(exp["action"], "experiment.action").ravel() if "action" in exp
                 else optimal_action(sol, 0.0, model.x0))
            if a.size != model.q:
                raise ConfigError(f"experiment.action must have {model.q} entries")
            pol = flt.ConstantPolicy(a)
    est = evaluate_policy(model, pol, mc, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"evaluate_{pid}.csv", "w") as fh:
        fh.write("policy_id,estimate,stderr,n_outer,n_inner,dt,seed\n")
        fh.write(f"{pid},{est.estimate:.17g},{est.stderr:.17g},{est.n_outer},{est.n_inner},"
                 f"{est.dt:.17g},{est.seed}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pocontrol", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the run seed (u64)")
        sp.add_argument("--dt", type=float, default=None, help="override the time step")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")

    common(sub.add_parser("solve", help="solve the ODE system and write the solution"))
    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.add_argument("--solution", default=None, help="solution CSV to verify (hjb suite)")
    common(v)
    e = sub.add_parser("evaluate", help="Monte Carlo cost of a policy")
    e.add_argument("policy", choices=POLICY_IDS)
    common(e)
    return p


def _fail(kind: str, code: int, msg: str) -> int:
    print(json.dumps({"error": kind, "code": code, "message": msg}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail("config", EXIT_CONFIG, "--threads must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        return _fail("config", EXIT_CONFIG, "--seed must fit in 64 unsigned bits")
    try:
        cfg = load_config(args.config)
        handler = {"solve": cmd_solve, "verify": cmd_verify, "evaluate": cmd_evaluate}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, str(exc))
    except ValidationError as exc:
        return _fail("validation", EXIT_VALIDATION, str(exc))
    except (GammaSingular, NonFinite) as exc:
        return _fail("numerical", EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
