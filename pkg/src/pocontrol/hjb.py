"""Bellman equation on the space of measures, evaluated on the quadratic family.

For ``w(t, pi) = Var(pi, K) + mean' Lambda mean + Y' mean + chi`` the lifted
derivatives are explicit:

    d_pi w(x)      = 2 K (x - mean) + 2 Lambda mean + Y
    d_x d_pi w     = 2 K
    d2_pi w(x, x') = 2 (Lambda - K)

and the Bellman operator in cost form reads

    d_t w + inf_a { pi[x'Qx + a'Na] + pi[L^a w] + (pi x pi)[M^a w] } = 0

with ``L^a w(x) = d_pi w(x) . b(x, a) + tr(d_x d_pi w sigma sigma'(x, a)) / 2`` and
``M^a w(x, x') = tr(d2_pi w sigma_W(x, a) sigma_W(x', a)') / 2``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, replace

import numpy as np

from .lqsolve import LqSolution, eval_at, ode_rhs, optimal_action, value, value_batch
from .measures import EmpiricalMeasure, mean as measure_mean, quad_var
from .model import LqModel
from .montecarlo import MCParams, coupled_pair, cost_observer, initial_ensemble
from .filter import Policy, propagate


@dataclass(frozen=True)
class LiftedDerivatives:
    d_pi: np.ndarray
    dx_dpi: np.ndarray
    d2_pi: np.ndarray
    dt_w: float


def _dt_finite_diff(sol: LqSolution, t: float, pi: EmpiricalMeasure, h: float) -> float:
    T = sol.model.T
    if t - h >= 0.0 and t + h <= T:
        return (value(sol, t + h, pi) - value(sol, t - h, pi)) / (2 * h)
    if t - h < 0.0:
        return (-3 * value(sol, t, pi) + 4 * value(sol, t + h, pi) - value(sol, t + 2 * h, pi)) / (2 * h)
    return (3 * value(sol, t, pi) - 4 * value(sol, t - h, pi) + value(sol, t - 2 * h, pi)) / (2 * h)


def lifted_derivatives(sol: LqSolution, t: float, pi: EmpiricalMeasure, dt_mode: str = "ode_rhs",
                       h: float | None = None) -> LiftedDerivatives:
    """Analytic lifted derivatives of the quadratic value at ``(t, pi)``.

    ``dt_mode="ode_rhs"`` assembles ``d_t w`` from the right-hand sides of
    the ODE system at the interpolated ``(K, Lambda, Y)``;
    ``dt_mode="finite_diff"`` differentiates :func:`value` numerically with
    step ``h`` (default: the solution grid step), central where possible and
    second-order one-sided at the ends.
    """
    K, L, Y, _ = eval_at(sol, t)
    m = measure_mean(pi)
    d_pi = 2.0 * (pi.atoms - m) @ K.T + 2.0 * L @ m + Y
    if dt_mode == "ode_rhs":
        Kp, Lp, Yp, chip = ode_rhs(sol.model, K, L, Y)
        dt_w = quad_var(pi, Kp) + m @ Lp @ m + Yp @ m + chip
    elif dt_mode == "finite_diff":
        dt_w = _dt_finite_diff(sol, t, pi, sol.dt if h is None else h)
    else:
        raise ValueError(f"unknown dt_mode {dt_mode!r}")
    return LiftedDerivatives(d_pi=d_pi, dx_dpi=2.0 * K, d2_pi=2.0 * (L - K), dt_w=float(dt_w))


def generator_L(model: LqModel, deriv: LiftedDerivatives, pi: EmpiricalMeasure, a) -> float:
    """Atom average of ``d_pi . b + tr(d_x d_pi sigma sigma') / 2``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    x = pi.atoms
    b = model.drift(x, a)
    sig = np.concatenate([model.diffusion_v(x, a), model.diffusion_w(x, a)], axis=-1)
    first = np.einsum("pi,pi->p", deriv.d_pi, b)
    second = 0.5 * np.einsum("pic,ij,pjc->p", sig, deriv.dx_dpi, sig)
    return float(np.mean(first + second))


def generator_M(model: LqModel, deriv: LiftedDerivatives, pi: EmpiricalMeasure, a,
                pairwise: bool = False) -> float:
    """Double atom average of ``tr(d2_pi sigma_W(x) sigma_W(x')') / 2``.

    Since ``d2_pi`` does not depend on ``(x, x')`` the double average
    factorizes through the mean diffusion ``s = pi[sigma_W]``; ``pairwise``
    evaluates the O(N^2) double sum instead.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    sw = model.diffusion_w(pi.atoms, a)
    if pairwise:
        tot = np.einsum("pic,ij,qjc->", sw, deriv.d2_pi, sw)
        return float(0.5 * tot / pi.size**2)
    s = sw.mean(axis=0)
    return float(0.5 * np.einsum("ic,ij,jc->", s, deriv.d2_pi, s))


def hamiltonian(model: LqModel, deriv: LiftedDerivatives, pi: EmpiricalMeasure, a) -> float:
    """``pi[x'Qx + a'Na] + L^a + M^a`` at action ``a``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    run = float(np.mean(np.einsum("pi,ij,pj->p", pi.atoms, model.Q, pi.atoms)) + a @ model.N @ a)
    return run + generator_L(model, deriv, pi, a) + generator_M(model, deriv, pi, a)


@dataclass(frozen=True)
class ResidualResult:
    residual: float
    action: np.ndarray
    w: float


def hjb_residual(model: LqModel, sol: LqSolution, t: float, pi: EmpiricalMeasure,
                 action_search: str = "closed_form", dt_mode: str = "ode_rhs",
                 grid_points: int = 21, half_width: float = 5.0, center=None) -> ResidualResult:
    """Bellman residual ``d_t w + inf_a H(a)`` at ``(t, pi)``.

    ``action_search="closed_form"`` uses the optimal feedback; ``"grid"``
    searches a tensor grid of ``grid_points`` per coordinate over
    ``[center - half_width, center + half_width]`` (``center`` defaults to
    the optimal feedback).
    """
    if not 0.0 <= t < model.T:
        raise ValueError("t must lie in [0, T)")
    deriv = lifted_derivatives(sol, t, pi, dt_mode)
    a_hat = optimal_action(sol, t, measure_mean(pi))
    if action_search == "closed_form":
        a_best, H = a_hat, hamiltonian(model, deriv, pi, a_hat)
    elif action_search == "grid":
        mid = a_hat if center is None else np.broadcast_to(np.asarray(center, float), a_hat.shape)
        axes = [np.linspace(c - half_width, c + half_width, grid_points) for c in mid]
        H, a_best = np.inf, a_hat
        for a in itertools.product(*axes):
            v = hamiltonian(model, deriv, pi, np.array(a))
            if v < H:
                H, a_best = v, np.array(a)
    else:
        raise ValueError(f"unknown action_search {action_search!r}")
    return ResidualResult(residual=float(deriv.dt_w + H), action=np.asarray(a_best),
                          w=value(sol, t, pi))


def tampered(sol: LqSolution, factor: float = 1.1) -> LqSolution:
    """Copy of ``sol`` with ``Lambda`` scaled by ``factor`` at every node."""
    return replace(sol, Lambda=sol.Lambda * factor)


def write_residual_csv(rows, path) -> None:
    """Rows of ``(t, n_atoms, residual, mode)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "n_atoms", "residual", "mode"])
        for t, n_atoms, r, mode in rows:
            w.writerow([format(float(t), ".17g"), int(n_atoms), format(float(r), ".17g"), mode])


# ---------------------------------------------------------------------------
# Verification by martingale property


def value_observer(sol: LqSolution):
    return lambda t, X, a: value_batch(sol, t, X)


def z_paths(model: LqModel, sol: LqSolution, policy: Policy, mc: MCParams, threads: int = 1):
    """``Z_k = sum_{j<k} cost_j dt + w(t_k, rho_k)`` per path, shape ``(R, K + 1)``."""
    ens = initial_ensemble(model, mc)
    traj = propagate(ens, model, policy, ens.steps, threads=threads,
                     observers={"cost": cost_observer(model), "value": value_observer(sol)})
    c = traj.observations["cost"][:, :-1] * ens.dt
    run = np.concatenate([np.zeros((c.shape[0], 1)), np.cumsum(c, axis=1)], axis=1)
    return run + traj.observations["value"], traj.times


@dataclass(frozen=True)
class MartingaleReport:
    """Drift ``E[Z_k] - Z_0`` at the checkpoints with standard errors.

    ``envelope`` is the Richardson bias bound ``2 |d drift| + 3 se(d drift)``
    from a coupled run at ``(dt / 2, 2 n_inner)``; zero if not calibrated.
    """

    times: np.ndarray
    drift: np.ndarray
    stderr: np.ndarray
    envelope: np.ndarray

    def within(self, k: float = 3.0) -> np.ndarray:
        return np.abs(self.drift) <= k * self.stderr + self.envelope

    @property
    def max_abs_drift(self) -> float:
        return float(np.max(np.abs(self.drift)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "drift", "stderr", "envelope"])
            for row in zip(self.times, self.drift, self.stderr, self.envelope):
                w.writerow([format(float(v), ".17g") for v in row])


def _drift_stats(Z, idx):
    D = Z[:, idx] - Z[:, :1]
    n = Z.shape[0]
    se = D.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(idx))
    return D, D.mean(axis=0), se


def martingale_check(model: LqModel, sol: LqSolution, policy: Policy, mc: MCParams,
                     threads: int = 1, calibrate: bool = True) -> MartingaleReport:
    """Drift of ``Z`` along the closed loop of ``policy`` at ``mc.checkpoints``.

    Under the optimal feedback ``Z`` is a martingale; under any other policy
    it drifts upward (cost convention).
    """
    idx = mc.checkpoint_indices(model.T) or [mc.steps(model.T)]
    if not calibrate:
        Z, times = z_paths(model, sol, policy, mc, threads)
        _, drift, se = _drift_stats(Z, idx)
        return MartingaleReport(times[idx], drift, se, np.zeros(len(idx)))
    (Zc, times), (Zf, _) = coupled_pair(lambda p: z_paths(model, sol, policy, p, threads), mc)
    Dc, drift, se = _drift_stats(Zc, idx)
    Df, _, _ = _drift_stats(Zf, [2 * k for k in idx])
    diff = Df - Dc
    env = 2.0 * np.abs(diff.mean(axis=0)) + 3.0 * diff.std(axis=0, ddof=1) / np.sqrt(diff.shape[0])
    return MartingaleReport(times[idx], drift, se, env)
