"""Common-noise particle representation of the controlled filter.

``N`` particles share one observation-noise path ``W`` and each carries its
own unobserved noise ``V``.  Conditionally on ``W`` (and on any jump-driven
control), the empirical law of the cloud approximates the filter, i.e. the
conditional law of the state given the observations.  The control applied
at step ``k`` is computed from the cloud mean at ``t_k`` and is shared by all
particles, so it is adapted to the observation filtration.

Several independent outer replicates (W-paths) are simulated in one batch of
shape ``(R, N, n)``.  Replicates are processed in fixed-size chunks, possibly
on several threads; each chunk is an independent computation, so results do
not depend on the thread count.

Noise layout
------------
Step ``k`` of a grid with ``M`` steps may be built from ``refine`` finer
sub-steps.  The unobserved increment of particle ``p`` at step ``k`` sums the
fine normals ``(k * refine + l) * m + i`` (``l < refine``) of the stream
``(v_seed, TAG_V, replicate, p)`` scaled by ``sqrt(dt / refine)``; the
observed increments use the stream ``(w_seed, TAG_W, replicate, 0)`` the same
way.  Running with ``(M, refine=2)`` and ``(2M, refine=1)`` therefore uses
the same Brownian paths at two resolutions.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np
from numba import njit

from . import _kernels
from .errors import NonFinite
from .measures import EmpiricalMeasure
from .model import GeneralModel, LqModel, lq_as_general
from .rng import TAG_INIT, TAG_V, TAG_W, normals, split_seed, uniforms

#: Replicates per work unit.  Fixed so results never depend on the thread count.
CHUNK = 64


def grid_times(T: float, steps: int) -> np.ndarray:
    """Uniform grid ``t_k = k T / steps`` with the last node exactly ``T``."""
    t = np.arange(steps + 1) * (T / steps)
    t[-1] = T
    return t


# ---------------------------------------------------------------------------
# Noise


@dataclass(frozen=True)
class NoisePath:
    """Gaussian increments of one Brownian path, ``increments[k]`` for step ``k``."""

    dt: float
    steps: int
    dim: int
    seed: int
    increments: np.ndarray
    replicate: int = 0
    refine: int = 1
    tag: int = TAG_W

    def suffix(self, theta: int) -> "NoisePath":
        """Increments from step ``theta`` on."""
        if not 0 <= theta <= self.steps:
            raise ValueError(f"theta = {theta} outside 0..{self.steps}")
        return replace(self, steps=self.steps - theta, increments=self.increments[theta:])

    def path(self) -> np.ndarray:
        """Cumulative path ``W_{t_k}`` starting at zero, shape ``(steps + 1, dim)``."""
        return np.concatenate([np.zeros((1, self.dim)), np.cumsum(self.increments, axis=0)])


def brownian_increments(seed: int, replicates, steps: int, dim: int, dt: float,
                        refine: int = 1, start_step: int = 0, tag: int = TAG_W) -> np.ndarray:
    """Increments for several replicates, shape ``(R, steps, dim)``."""
    reps = np.atleast_1d(np.asarray(replicates, dtype=np.int64))
    z = normals(seed, tag, reps, [0], start_step * refine * dim, steps * refine * dim)
    z = z.reshape(reps.size, steps, refine, dim)
    acc = z[:, :, 0, :].copy()
    for l in range(1, refine):
        acc += z[:, :, l, :]
    return acc * np.sqrt(dt / refine)


def sample_noise(dim: int, dt: float, steps: int, seed: int, replicate: int = 0,
                 refine: int = 1, tag: int = TAG_W) -> NoisePath:
    """Reproducible ``N(0, dt I)`` increments keyed by ``(seed, tag, replicate)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    inc = brownian_increments(seed, [replicate], steps, dim, dt, refine, tag=tag)[0]
    inc.setflags(write=False)
    return NoisePath(dt=float(dt), steps=int(steps), dim=int(dim), seed=int(seed),
                     increments=inc, replicate=int(replicate), refine=int(refine), tag=tag)


# ---------------------------------------------------------------------------
# Ensembles


@dataclass(frozen=True)
class ParticleEnsemble:
    """A batch of particle clouds at grid index ``t_index``.

    ``states[r]`` is the cloud of replicate ``replicates[r]``.  ``w[r, k]`` is
    the observed increment of step ``t_index + k``; the private noise of
    particle ``p`` is the stream keyed by ``(v_seed, particle_ids[p])``.
    """

    states: np.ndarray
    replicates: np.ndarray
    particle_ids: np.ndarray
    v_seed: int
    w: np.ndarray
    T: float
    steps: int
    t_index: int = 0
    refine: int = 1

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def t(self) -> float:
        return float(grid_times(self.T, self.steps)[self.t_index])

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    def law(self, r: int = 0) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[r])


def make_ensemble(pi: EmpiricalMeasure, n_particles: int, replicates, v_seed: int,
                  w_seed: int, T: float, steps: int, d: int, refine: int = 1,
                  particle_ids=None) -> ParticleEnsemble:
    """Fresh ensembles started from ``pi``.

    If ``n_particles`` equals the atom count the atoms are used as they are;
    otherwise each particle draws an atom uniformly from its own stream.
    """
    reps = np.atleast_1d(np.asarray(replicates, dtype=np.int64))
    pids = (np.arange(n_particles, dtype=np.int64) if particle_ids is None
            else np.asarray(particle_ids, dtype=np.int64))
    if pids.size != n_particles:
        raise ValueError("particle_ids must have n_particles entries")
    if pi.size == 1:
        X = np.broadcast_to(pi.atoms[0], (reps.size, n_particles, pi.n)).copy()
    elif pi.size == n_particles:
        X = np.broadcast_to(pi.atoms, (reps.size, n_particles, pi.n)).copy()
    else:
        u = uniforms(v_seed, TAG_INIT, reps, pids, 0, 1)[:, :, 0]
        X = pi.atoms[np.minimum((u * pi.size).astype(np.int64), pi.size - 1)]
    w = brownian_increments(w_seed, reps, steps, d, T / steps, refine)
    return ParticleEnsemble(states=X, replicates=reps, particle_ids=pids, v_seed=int(v_seed),
                            w=w, T=float(T), steps=int(steps), t_index=0, refine=int(refine))


def conditional_law(ens: ParticleEnsemble, r: int = 0) -> EmpiricalMeasure:
    """Empirical law of the cloud of the ``r``-th replicate."""
    return EmpiricalMeasure(ens.states[r])


def restart(ens: ParticleEnsemble) -> ParticleEnsemble:
    """Fresh ensemble started from the current states of ``ens``.

    The private streams continue where they were (they are indexed by the
    absolute step) and the observed noise is the remaining suffix.
    """
    return replace(ens, states=ens.states.copy(), w=ens.w.copy())


# ---------------------------------------------------------------------------
# Policies


class Policy:
    """Action rule applied to every cloud.

    Subclasses implement :meth:`action`; policies with per-path state (such
    as jump-driven controls) also override :meth:`begin`, :meth:`finish` and
    :meth:`results`.  ``means`` has shape ``(R, n)``, the return ``(R, q)``.
    """

    kind = "abstract"

    def begin(self, replicates: np.ndarray, t0: float, T: float):
        return None

    def action(self, ctx, k: int, t: float, means: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def finish(self, ctx, t: float, means: np.ndarray) -> None:
        return None

    def results(self, ctx) -> dict:
        return {}


@dataclass(frozen=True)
class ZeroPolicy(Policy):
    q: int
    kind = "zero"

    def action(self, ctx, k, t, means):
        return np.zeros((means.shape[0], self.q))


@dataclass(frozen=True)
class ConstantPolicy(Policy):
    a: np.ndarray
    kind = "constant_action"

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))

    def action(self, ctx, k, t, means):
        return np.broadcast_to(self.a, (means.shape[0], self.a.size)).copy()


@dataclass(frozen=True)
class FeedbackPolicy(Policy):
    """Optimal LQ feedback on the conditional mean, optionally with a scaled gain.

    The action is ``-(gain_scale * G(t) mean + h(t))`` where ``-(G mean + h)``
    is the minimizer of the Hamiltonian.
    """

    sol: object
    gain_scale: float = 1.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)
    kind = "feedback_on_conditional_mean"

    def gains(self, t: float):
        hit = self._cache.get(t)
        if hit is None:
            from .lqsolve import feedback_gains
            hit = feedback_gains(self.sol, t)
            self._cache[t] = hit
        return hit

    def action(self, ctx, k, t, means):
        G, h = self.gains(t)
        return -(self.gain_scale * (means @ G.T) + h)


# ---------------------------------------------------------------------------
# Propagation


@dataclass
class Trajectory:
    """Result of :func:`propagate` over grid indices ``start .. stop``.

    ``means``/``var`` have shape ``(R, K + 1, n)``, ``actions`` ``(R, K, q)``;
    ``states`` (only if requested) has shape ``(K + 1, R, N, n)``.
    ``observations[name]`` stacks the observer outputs ``(R, K + 1, ...)``.
    """

    times: np.ndarray
    start: int
    means: np.ndarray
    var: np.ndarray
    actions: np.ndarray
    w: np.ndarray
    final: ParticleEnsemble
    states: Optional[np.ndarray] = None
    observations: dict = field(default_factory=dict)
    policy_results: dict = field(default_factory=dict)

    def ensemble_at(self, k: int) -> ParticleEnsemble:
        """Ensemble at absolute grid index ``k`` (needs stored states)."""
        if self.states is None:
            raise ValueError("trajectory was propagated without keep_states")
        j = k - self.start
        if not 0 <= j < self.times.size:
            raise ValueError(f"step {k} outside the stored range")
        full_w = np.concatenate([self.w, self.final.w], axis=1)
        return replace(self.final, states=self.states[j].copy(), t_index=k, w=full_w[:, j:].copy())


Observer = Callable[[float, np.ndarray, Optional[np.ndarray]], np.ndarray]


@njit(cache=True, nogil=True)
def _affine_consts(a, b0, C, gv, Fv, gw, Fw):
    R, q = a.shape
    n = b0.shape[0]
    m = gv.shape[0]
    d = gw.shape[0]
    drift0 = np.empty((R, n))
    cv = np.empty((R, m, n))
    cw = np.empty((R, d, n))
    for r in range(R):
        for k in range(n):
            s = b0[k]
            for l in range(q):
                s += C[k, l] * a[r, l]
            drift0[r, k] = s
            for i in range(m):
                s = gv[i, k]
                for l in range(q):
                    s += Fv[i, k, l] * a[r, l]
                cv[r, i, k] = s
            for j in range(d):
                s = gw[j, k]
                for l in range(q):
                    s += Fw[j, k, l] * a[r, l]
                cw[r, j, k] = s
    return drift0, cv, cw


def _as_general(model) -> GeneralModel:
    return lq_as_general(model) if isinstance(model, LqModel) else model


def _run_chunk(ens: ParticleEnsemble, sl: slice, model: GeneralModel, policy: Policy,
               K: int, observers: Mapping[str, Observer], keep_states: bool):
    X = np.array(ens.states[sl], dtype=float, copy=True)
    reps = ens.replicates[sl]
    pids = ens.particle_ids
    Rc, N, n = X.shape
    q, m = model.q, model.m
    W = ens.w[sl]
    dt = ens.dt
    refine = ens.refine
    sq_dtf = np.sqrt(dt / refine)
    times = grid_times(ens.T, ens.steps)
    k0, k1 = split_seed(ens.v_seed)
    lq = model.affine
    means = np.empty((Rc, K + 1, n))
    var = np.empty((Rc, K + 1, n))
    acts = np.empty((Rc, K, q))
    states = np.empty((K + 1, Rc, N, n)) if keep_states else None
    obs = {name: [] for name in observers}
    ctx = policy.begin(reps, float(times[ens.t_index]), ens.T)
    for k in range(K + 1):
        kabs = ens.t_index + k
        t = float(times[kabs])
        mu, vr = _kernels.cloud_moments(X)
        means[:, k], var[:, k] = mu, vr
        if keep_states:
            states[k] = X
        if k == K:
            policy.finish(ctx, t, mu)
            for name, fn in observers.items():
                obs[name].append(fn(t, X, None))
            break
        a = np.ascontiguousarray(policy.action(ctx, kabs, t, mu), dtype=float).reshape(Rc, q)
        acts[:, k] = a
        for name, fn in observers.items():
            obs[name].append(fn(t, X, a))
        dW = np.ascontiguousarray(W[:, k])
        if lq is not None:
            drift0, cv, cw = _affine_consts(a, lq.b0, lq.C, lq.gamma_v, lq.F_v, lq.gamma_w, lq.F_w)
            _kernels.affine_step(X, drift0, cv, cw, lq.B, lq.D_v, lq.D_w, dW, dt, sq_dtf, refine,
                                 k0, k1, TAG_V, reps, pids, kabs * refine)
        else:
            z = _kernels.fine_normals(k0, k1, TAG_V, reps, pids, kabs * refine * m, refine * m).reshape(Rc, N, refine, m)
            dV = z[:, :, 0, :].copy()
            for l in range(1, refine):
                dV += z[:, :, l, :]
            dV *= sq_dtf
            aa = a[:, None, :]
            X = (X + model.drift(X, aa) * dt
                 + np.einsum("rpki,rpi->rpk", model.diffusion_v(X, aa), dV)
                 + np.einsum("rpkj,rj->rpk", model.diffusion_w(X, aa), dW))
        if not np.all(np.isfinite(X)):
            raise NonFinite(f"particle states not finite after step {kabs}")
    out_obs = {name: np.stack(v, axis=1) for name, v in obs.items()}
    return X, means, var, acts, states, out_obs, policy.results(ctx)


def propagate(ens: ParticleEnsemble, model, policy: Policy, to_step: int, threads: int = 1,
              observers: Optional[Mapping[str, Observer]] = None,
              keep_states: bool = False) -> Trajectory:
    """Euler-Maruyama propagation of every cloud from ``ens.t_index`` to ``to_step``.

    At each step the action is computed from the cloud mean and shared by
    all particles of that cloud.  ``observers`` are called at every node as
    ``fn(t, X, a)`` (``a`` is ``None`` at the last node) and must return an
    array with one row per replicate.
    """
    model = _as_general(model)
    K = int(to_step) - ens.t_index
    if not 0 <= K <= ens.w.shape[1]:
        raise ValueError(f"to_step = {to_step} outside the noise range")
    observers = dict(observers or {})
    R = ens.states.shape[0]
    slices = [slice(s, min(s + CHUNK, R)) for s in range(0, R, CHUNK)]

    def work(sl):
        return _run_chunk(ens, sl, model, policy, K, observers, keep_states)

    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, slices))
    else:
        parts = [work(sl) for sl in slices]

    X = np.concatenate([p[0] for p in parts])
    means = np.concatenate([p[1] for p in parts])
    var = np.concatenate([p[2] for p in parts])
    acts = np.concatenate([p[3] for p in parts])
    states = np.concatenate([p[4] for p in parts], axis=1) if keep_states else None
    obs = {name: np.concatenate([p[5][name] for p in parts]) for name in observers}
    pres = {}
    for p in parts:
        for key, v in p[6].items():
            pres.setdefault(key, []).append(v)
    pres = {key: (np.concatenate(v) if isinstance(v[0], np.ndarray) else sum(v, []))
            for key, v in pres.items()}
    final = replace(ens, states=X, t_index=int(to_step), w=ens.w[:, K:])
    times = grid_times(ens.T, ens.steps)[ens.t_index:int(to_step) + 1]
    return Trajectory(times=times, start=ens.t_index, means=means, var=var, actions=acts,
                      w=ens.w[:, :K], final=final, states=states, observations=obs,
                      policy_results=pres)


def write_trajectory_csv(traj: Trajectory, path, replicate: int = 0) -> None:
    """Columns t, conditional mean, conditional variance diagonal, action."""
    n = traj.means.shape[2]
    q = traj.actions.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"mean_{i}" for i in range(n)] + [f"var_{i}" for i in range(n)]
                   + [f"action_{j}" for j in range(q)])
        for k, t in enumerate(traj.times):
            a = traj.actions[replicate, k] if k < traj.actions.shape[1] else np.full(q, np.nan)
            row = [t, *traj.means[replicate, k], *traj.var[replicate, k], *a]
            w.writerow([format(float(v), ".17g") for v in row])


# ---------------------------------------------------------------------------
# Kalman-Bucy oracle


def kalman_bucy(model: LqModel, w, action=None, m0=None, cov0=None):
    """Exact conditional law for additive noise, on the grid of ``w``.

    ``w`` is a :class:`NoisePath` or an array of increments ``(..., S, d)``.
    The mean follows the Euler recursion driven by the same increments; the
    covariance solves ``P' = BP + PB' + sum_i gamma_v[i] gamma_v[i]'`` by RK4.
    Returns ``(means (..., S + 1, n), covs (S + 1, n, n))``.
    """
    if not model.additive:
        raise ValueError("Kalman-Bucy oracle needs additive noise (all D and F zero)")
    if isinstance(w, NoisePath):
        inc, dt = w.increments, w.dt
    else:
        inc = np.asarray(w, dtype=float)
        dt = model.T / inc.shape[-2]
    S = inc.shape[-2]
    a = np.zeros(model.q) if action is None else np.asarray(action, dtype=float)
    m = np.broadcast_to(model.x0 if m0 is None else np.asarray(m0, float),
                        inc.shape[:-2] + (model.n,)).copy()
    const = model.b0 + model.C @ a
    Gw = model.gamma_w.T
    means = np.empty(inc.shape[:-2] + (S + 1, model.n))
    means[..., 0, :] = m
    for k in range(S):
        m = m + (const + m @ model.B.T) * dt + inc[..., k, :] @ Gw.T
        means[..., k + 1, :] = m
    SV = model.gamma_v.T @ model.gamma_v
    B = model.B

    def f(P):
        return B @ P + P @ B.T + SV

    P = np.zeros((model.n, model.n)) if cov0 is None else np.asarray(cov0, float)
    covs = np.empty((S + 1, model.n, model.n))
    covs[0] = P
    for k in range(S):
        k1 = f(P)
        k2 = f(P + 0.5 * dt * k1)
        k3 = f(P + 0.5 * dt * k2)
        k4 = f(P + dt * k3)
        P = P + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        covs[k + 1] = P
    return means, covs


# ---------------------------------------------------------------------------
# Zakai weak-form residual


@dataclass(frozen=True)
class TestFunction:
    """Quadratic test function ``phi(x) = x'Hx / 2 + g'x + c``."""

    H: np.ndarray
    g: np.ndarray
    c: float = 0.0

    __test__ = False  # not a pytest class

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "g", np.atleast_1d(np.asarray(self.g, dtype=float)))

    def __call__(self, x):
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.H, x) + x @ self.g + self.c

    def grad(self, x):
        return x @ self.H + self.g


def zakai_terms(model, phi: TestFunction, X: np.ndarray, a: Optional[np.ndarray]) -> np.ndarray:
    """Cloud averages ``[rho(phi), rho(L^a phi), rho(M^a phi)_1..d]``, shape ``(R, 2 + d)``.

    ``L^a phi = b . grad phi + tr(sigma sigma' Hess phi) / 2`` and
    ``M^a phi = grad phi' sigma_W``.  At the last node (``a is None``) the
    operator columns are zero.
    """
    model = _as_general(model)
    R = X.shape[0]
    out = np.zeros((R, 2 + model.d))
    out[:, 0] = phi(X).mean(axis=1)
    if a is None:
        return out
    aa = np.asarray(a, dtype=float)[:, None, :]
    grad = phi.grad(X)
    sig = model.sigma(X, aa)
    Lphi = (np.einsum("rpi,rpi->rp", grad, model.drift(X, aa))
            + 0.5 * np.einsum("rpic,ij,rpjc->rp", sig, phi.H, sig))
    Mphi = np.einsum("rpi,rpij->rpj", grad, model.diffusion_w(X, aa))
    out[:, 1] = Lphi.mean(axis=1)
    out[:, 2:] = Mphi.mean(axis=1)
    return out


def zakai_observer(model, phi: TestFunction) -> Observer:
    """Observer for :func:`propagate` collecting :func:`zakai_terms`."""
    model = _as_general(model)
    return lambda t, X, a: zakai_terms(model, phi, X, a)


def residual_from_terms(terms: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
    """Residual path ``(R, K + 1)`` from stacked terms ``(R, K + 1, 2 + d)``."""
    rho = terms[..., 0]
    drift = terms[:, :-1, 1] * dt
    mart = np.einsum("rkj,rkj->rk", terms[:, :-1, 2:], w)
    acc = np.concatenate([np.zeros((rho.shape[0], 1)), np.cumsum(drift + mart, axis=1)], axis=1)
    return rho - rho[:, :1] - acc


def zakai_residual(traj: Trajectory, model, phi: TestFunction) -> np.ndarray:
    """Weak-form Zakai residual along a stored trajectory, shape ``(R, K + 1)``.

    ``r_k = rho_k(phi) - rho_0(phi) - sum_{j<k} rho_j(L phi) dt - sum_{j<k} rho_j(M phi) dW_j``
    with the actions and observed increments recorded in ``traj``.
    """
    if traj.states is None:
        raise ValueError("trajectory was propagated without keep_states")
    K = traj.actions.shape[1]
    terms = np.stack([zakai_terms(model, phi, traj.states[k],
                                  traj.actions[:, k] if k < K else None)
                      for k in range(K + 1)], axis=1)
    dt = traj.final.dt
    return residual_from_terms(terms, traj.w, dt)
