"""Closed-form solution of the partially observed LQ problem.

The value function is sought in the quadratic family

    w(t, pi) = Var(pi, K(t)) + v2(pi, Lambda(t)) + v1(pi, Y(t)) + chi(t)

where ``K`` solves a linear matrix ODE, ``Lambda`` a Riccati equation,
``Y`` a linear vector ODE and ``chi`` a quadrature, all with terminal data
``K(T) = Lambda(T) = P``, ``Y(T) = 0``, ``chi(T) = 0``.  The optimal action
is the minimizer of the quadratic Hamiltonian in ``a``,

    a_hat(t, pi) = -Gamma^{-1} (U' mean(pi) + R / 2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import GammaSingular, NonFinite, ValidationError
from .measures import EmpiricalMeasure, mean as measure_mean, quad_var, v1, v2
from .model import LqModel, validate_lq

#: Relative eigenvalue floor below which Gamma counts as singular.
GAMMA_FLOOR = 1e-10


@dataclass(frozen=True)
class FeedbackCoefficients:
    """Quadratic-in-action coefficients ``a'Gamma a + a'(2U'x + R)``."""

    Gamma: np.ndarray
    U: np.ndarray
    R: np.ndarray


def gain_coefficients(k, ell, y, model: LqModel) -> FeedbackCoefficients:
    """Action coefficients Gamma, U, R at ``(K, Lambda, Y) = (k, ell, y)``."""
    k = np.asarray(k, dtype=float)
    ell = np.asarray(ell, dtype=float)
    y = np.asarray(y, dtype=float)
    n, q = model.n, model.q
    if k.shape != (n, n) or ell.shape != (n, n) or y.shape != (n,):
        raise ValueError(f"expected k, ell of shape {(n, n)} and y of shape {(n,)}")
    Fv, Fw, Dv, Dw = model.F_v, model.F_w, model.D_v, model.D_w
    Gamma = (model.N + np.einsum("iak,ab,ibl->kl", Fv, k, Fv)
             + np.einsum("iak,ab,ibl->kl", Fw, ell, Fw))
    U = (np.einsum("iak,ab,ibl->kl", Dv, k, Fv) + np.einsum("iak,ab,ibl->kl", Dw, ell, Fw)
         + ell @ model.C)
    R = (2.0 * np.einsum("iak,ab,ib->k", Fv, k, model.gamma_v)
         + 2.0 * np.einsum("iak,ab,ib->k", Fw, ell, model.gamma_w) + model.C.T @ y)
    return FeedbackCoefficients(Gamma=0.5 * (Gamma + Gamma.T), U=U, R=R)


def gamma_inverse(Gamma: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric Gamma by eigendecomposition.

    Raises :class:`GammaSingular` when the smallest eigenvalue is below
    ``GAMMA_FLOOR`` times the spectral norm.
    """
    if Gamma.size == 0:
        return np.zeros_like(Gamma)
    w, V = np.linalg.eigh(Gamma)
    scale = np.max(np.abs(w))
    if not np.all(np.isfinite(w)):
        raise NonFinite("Gamma has non-finite entries")
    if scale == 0.0 or w[0] < GAMMA_FLOOR * scale:
        raise GammaSingular(f"lambda_min(Gamma) = {w[0]:.3e} with |Gamma| = {scale:.3e}")
    return (V / w) @ V.T


def ode_rhs(model: LqModel, K, Lam, Y):
    """Forward-time derivatives ``(K', Lambda', Y', chi')`` of the ODE system."""
    B, b0 = model.B, model.b0
    Dv, Dw, gv, gw = model.D_v, model.D_w, model.gamma_v, model.gamma_w
    co = gain_coefficients(K, Lam, Y, model)
    Gi = gamma_inverse(co.Gamma)
    DvKDv = np.einsum("iak,ab,ibl->kl", Dv, K, Dv)
    Kp = -(model.Q + DvKDv + np.einsum("iak,ab,ibl->kl", Dw, K, Dw) + K @ B + B.T @ K)
    Lp = -(model.Q + DvKDv + np.einsum("iak,ab,ibl->kl", Dw, Lam, Dw) + Lam @ B + B.T @ Lam
           - co.U @ Gi @ co.U.T)
    Yp = -(B.T @ Y + 2.0 * np.einsum("iak,ab,ib->k", Dv, K, gv)
           + 2.0 * np.einsum("iak,ab,ib->k", Dw, Lam, gw) + 2.0 * Lam @ b0 - co.U @ Gi @ co.R)
    chip = -(Y @ b0 + np.einsum("ia,ab,ib->", gv, K, gv) + np.einsum("ia,ab,ib->", gw, Lam, gw)
             - 0.25 * co.R @ Gi @ co.R)
    return Kp, Lp, Yp, float(chip)


@dataclass(frozen=True)
class LqSolution:
    """Solved ODE system on the uniform grid ``t_i = i * dt``, ``i = 0..M``."""

    grid: np.ndarray
    K: np.ndarray
    Lambda: np.ndarray
    Y: np.ndarray
    chi: np.ndarray
    model: LqModel = field(repr=False)
    #: Smallest eigenvalue of Gamma(K, Lambda) at each node.
    gamma_min: np.ndarray = field(default=None, repr=False)

    @property
    def dt(self) -> float:
        return self.model.T / (self.grid.size - 1)

    @property
    def steps(self) -> int:
        return self.grid.size - 1


def _steps_for(T: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    M = int(round(T / dt))
    if M < 1 or abs(M * dt - T) > 1e-9 * T:
        raise ValueError(f"T / dt must be an integer, got {T / dt}")
    return M


def _sym(M):
    return 0.5 * (M + M.T)


def solve_backward(model: LqModel, dt: float | None = None) -> LqSolution:
    """Integrate the ODE system backward from T with classical RK4.

    ``K``, ``Lambda`` and ``Y`` are advanced together in reversed time
    ``tau = T - t``; the system is triangular, so each RK4 stage evaluates
    ``K`` first and feeds it to the ``Lambda`` and ``Y`` right-hand sides at
    the same stage point.  ``chi`` is the Simpson quadrature of its
    closed-form integrand at the nodes.
    """
    report = validate_lq(model)
    if not report.ok:
        raise ValidationError(f"model fails validation: c1_holds={report.c1_holds}, "
                              f"c2_branch={report.c2_branch.value}")
    T = model.T
    dt = T / 2000 if dt is None else float(dt)
    M = _steps_for(T, dt)
    h = T / M
    n = model.n
    K = np.empty((M + 1, n, n))
    L = np.empty((M + 1, n, n))
    Y = np.empty((M + 1, n))
    K[M], L[M], Y[M] = model.P, model.P, 0.0

    def f(k, lam, y):
        # Reversed-time derivatives.
        kp, lp, yp, _ = ode_rhs(model, k, lam, y)
        return -kp, -lp, -yp

    with np.errstate(over="raise", invalid="raise"):
        try:
            for i in range(M, 0, -1):
                k, lam, y = K[i], L[i], Y[i]
                k1 = f(k, lam, y)
                s2 = (_sym(k + 0.5 * h * k1[0]), _sym(lam + 0.5 * h * k1[1]), y + 0.5 * h * k1[2])
                k2 = f(*s2)
                s3 = (_sym(k + 0.5 * h * k2[0]), _sym(lam + 0.5 * h * k2[1]), y + 0.5 * h * k2[2])
                k3 = f(*s3)
                s4 = (_sym(k + h * k3[0]), _sym(lam + h * k3[1]), y + h * k3[2])
                k4 = f(*s4)
                K[i - 1] = _sym(k + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]))
                L[i - 1] = _sym(lam + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))
                Y[i - 1] = y + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
                if not (np.all(np.isfinite(K[i - 1])) and np.all(np.isfinite(L[i - 1]))
                        and np.all(np.isfinite(Y[i - 1]))):
                    raise NonFinite(f"ODE solution not finite at t = {(i - 1) * h}")
        except FloatingPointError as exc:
            if isinstance(exc, NonFinite):
                raise
            raise NonFinite(f"overflow while integrating: {exc}") from exc

    integrand = np.empty(M + 1)
    gmin = np.empty(M + 1)
    for i in range(M + 1):
        integrand[i] = -ode_rhs(model, K[i], L[i], Y[i])[3]
        G = gain_coefficients(K[i], L[i], Y[i], model).Gamma
        gmin[i] = np.linalg.eigvalsh(G)[0] if G.size else np.inf
    # chi(t_i) = int_{t_i}^T integrand; accumulate from T backwards.
    if M >= 2:
        acc = cumulative_simpson(integrand[::-1], dx=h, initial=0.0)
    else:
        acc = np.array([0.0, 0.5 * h * (integrand[0] + integrand[1])])
    chi = acc[::-1].copy()
    chi[M] = 0.0
    grid = np.arange(M + 1) * h
    grid[M] = T
    for a in (grid, K, L, Y, chi, gmin):
        a.setflags(write=False)
    return LqSolution(grid=grid, K=K, Lambda=L, Y=Y, chi=chi, model=model, gamma_min=gmin)


def _locate(sol: LqSolution, t: float):
    T = sol.model.T
    if not (0.0 <= t <= T):
        raise ValueError(f"t = {t} outside [0, {T}]")
    M = sol.steps
    x = t / T * M
    i = min(int(np.floor(x)), M)
    if sol.grid[i] == t or i == M:
        return i, 0.0
    if i + 1 <= M and sol.grid[i + 1] == t:
        return i + 1, 0.0
    return i, (t - sol.grid[i]) / (sol.grid[i + 1] - sol.grid[i])


def eval_at(sol: LqSolution, t: float):
    """``(K, Lambda, Y, chi)`` at time ``t``; linear between nodes, exact at nodes."""
    i, w = _locate(sol, float(t))
    if w == 0.0:
        return sol.K[i].copy(), sol.Lambda[i].copy(), sol.Y[i].copy(), float(sol.chi[i])
    u = 1.0 - w
    return (u * sol.K[i] + w * sol.K[i + 1], u * sol.Lambda[i] + w * sol.Lambda[i + 1],
            u * sol.Y[i] + w * sol.Y[i + 1], float(u * sol.chi[i] + w * sol.chi[i + 1]))


def feedback_gains(sol: LqSolution, t: float):
    """Affine feedback ``a_hat = -(G @ mean + h)``; returns ``(G, h)``.

    ``G = Gamma^{-1} U'`` has shape ``(q, n)`` and ``h = Gamma^{-1} R / 2``.
    """
    K, L, Y, _ = eval_at(sol, t)
    co = gain_coefficients(K, L, Y, sol.model)
    Gi = gamma_inverse(co.Gamma)
    return Gi @ co.U.T, 0.5 * Gi @ co.R


def optimal_action(sol: LqSolution, t: float, mean) -> np.ndarray:
    """Minimizer of the Hamiltonian at conditional mean ``mean`` (shape ``(..., n)``)."""
    G, h = feedback_gains(sol, t)
    m = np.asarray(mean, dtype=float)
    return -(m @ G.T + h)


def value(sol: LqSolution, t: float, pi: EmpiricalMeasure) -> float:
    """Quadratic value function (minimized cost) at ``(t, pi)``."""
    K, L, Y, chi = eval_at(sol, t)
    return quad_var(pi, K) + v2(pi, L) + v1(pi, Y) + chi


def value_batch(sol: LqSolution, t: float, atoms: np.ndarray) -> np.ndarray:
    """Value for a batch of equal-size clouds ``atoms`` of shape ``(R, N, n)``."""
    K, L, Y, chi = eval_at(sol, t)
    m = atoms.mean(axis=1)
    c = atoms - m[:, None, :]
    var = np.einsum("rni,ij,rnj->r", c, K, c) / atoms.shape[1]
    return var + np.einsum("ri,ij,rj->r", m, L, m) + m @ Y + chi


def optimal_cost(sol: LqSolution) -> float:
    """Optimal cost at time 0 from the initial state ``x0``."""
    x0 = sol.model.x0
    return float(x0 @ sol.Lambda[0] @ x0 + sol.Y[0] @ x0 + sol.chi[0])


def _header(n: int):
    cols = ["t"]
    cols += [f"K_{r}{c}" for r in range(n) for c in range(n)]
    cols += [f"Lambda_{r}{c}" for r in range(n) for c in range(n)]
    cols += [f"Y_{r}" for r in range(n)]
    return cols + ["chi"]


def write_solution_csv(sol: LqSolution, path) -> None:
    """One row per node: t, K row-major, Lambda row-major, Y, chi (17 digits)."""
    n = sol.model.n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(n))
        for i in range(sol.grid.size):
            row = np.concatenate([[sol.grid[i]], sol.K[i].ravel(), sol.Lambda[i].ravel(),
                                  sol.Y[i], [sol.chi[i]]])
            w.writerow([format(v, ".17g") for v in row])


def read_solution_csv(path, model: LqModel) -> LqSolution:
    """Inverse of :func:`write_solution_csv`; the model must be supplied."""
    n = model.n
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != _header(n):
        raise ValueError("solution CSV header does not match the model dimension")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    grid = data[:, 0]
    K = data[:, 1:1 + n * n].reshape(-1, n, n)
    L = data[:, 1 + n * n:1 + 2 * n * n].reshape(-1, n, n)
    Y = data[:, 1 + 2 * n * n:1 + 2 * n * n + n]
    chi = data[:, -1]
    gmin = np.array([np.linalg.eigvalsh(gain_coefficients(K[i], L[i], Y[i], model).Gamma)[0]
                     if model.q else np.inf for i in range(grid.size)])
    return LqSolution(grid=grid, K=K, Lambda=L, Y=Y, chi=chi, model=model, gamma_min=gmin)
