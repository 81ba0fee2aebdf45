"""Poisson-randomized controls and the change of intensity.

The control is replaced by a pure-jump process ``I`` driven by a marked
Poisson random measure with compensator ``lambda(da) ds`` on a finite action
support.  Changing the intensity to ``nu(s, a) lambda(da) ds`` is an
equivalent change of measure whose density is the Doleans exponential

    kappa_T = exp(-int_t^T sum_a (nu_r(a) - 1) lambda(a) dr) * prod_n nu_{T_n}(A_n).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .filter import Policy, make_ensemble, propagate
from .measures import EmpiricalMeasure
from .model import GeneralModel, LqModel, lq_as_general
from .montecarlo import MCParams
from .rng import TAG_JUMP, _stream, derive_seed, split_seed


@dataclass(frozen=True)
class ActionMeasure:
    """Finite intensity measure ``lambda = sum_a weights[a] delta_{support[a]}``."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.shape != (s.shape[0],) or not np.all(w > 0):
            raise ValueError("weights must be positive, one per support point")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def size(self) -> int:
        return self.weights.size

    def scaled(self, factor: float) -> "ActionMeasure":
        return ActionMeasure(self.support, self.weights * factor)


@dataclass(frozen=True)
class JumpTrajectory:
    """Initial mark and marked jump points ``(T_n, A_n)`` on the window ``[t, T]``.

    ``marks`` index into ``support``.
    """

    initial_mark: np.ndarray
    jump_times: np.ndarray
    marks: np.ndarray
    t: float
    T: float
    support: np.ndarray

    def __post_init__(self):
        tt = np.asarray(self.jump_times, dtype=float)
        if tt.size and (np.any(np.diff(tt) <= 0) or tt[0] <= self.t or tt[-1] > self.T):
            raise ValueError("jump times must be strictly increasing inside (t, T]")
        object.__setattr__(self, "jump_times", tt)
        object.__setattr__(self, "marks", np.asarray(self.marks, dtype=np.int64))
        object.__setattr__(self, "initial_mark", np.atleast_1d(np.asarray(self.initial_mark, float)))

    def truncate(self, theta: float) -> "JumpTrajectory":
        """Restart at ``theta`` with initial mark ``I_theta`` and the remaining jumps."""
        keep = self.jump_times > theta
        return JumpTrajectory(jump_value(self, theta), self.jump_times[keep], self.marks[keep],
                              theta, self.T, self.support)


def jump_value(traj: JumpTrajectory, s: float) -> np.ndarray:
    """``I_s``: the initial mark before the first jump, then the latest mark."""
    if not traj.t <= s <= traj.T:
        raise ValueError(f"s = {s} outside [{traj.t}, {traj.T}]")
    j = int(np.searchsorted(traj.jump_times, s, side="right"))
    return traj.initial_mark.copy() if j == 0 else traj.support[traj.marks[j - 1]].copy()


# ---------------------------------------------------------------------------
# Intensity controls


class IntensityControl:
    """Bounded positive intensity ``nu(s, a)`` with declared bounds.

    ``values(s, means)`` returns an array ``(R, A)``; ``means`` (the cloud
    means, shape ``(R, n)``) is only used by state-dependent controls.
    """

    nu_min: float
    nu_max: float
    state_dependent = False

    def values(self, s: float, means: Optional[np.ndarray] = None, size: int = 1) -> np.ndarray:
        raise NotImplementedError

    def compensator_excess(self, lam: ActionMeasure, t: float, T: float) -> float:
        """``int_t^T sum_a (nu_r(a) - 1) lambda(a) dr`` for deterministic controls."""
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantIntensity(IntensityControl):
    """``nu(s, a) = level[a]`` (a scalar applies to every action)."""

    level: object
    n_actions: int

    def __post_init__(self):
        v = np.broadcast_to(np.asarray(self.level, dtype=float), (self.n_actions,)).copy()
        if not np.all(v > 0):
            raise ValueError("intensity must be positive")
        object.__setattr__(self, "level", v)

    @property
    def nu_min(self):
        return float(self.level.min())

    @property
    def nu_max(self):
        return float(self.level.max())

    def values(self, s, means=None, size=1):
        return np.broadcast_to(self.level, (size, self.n_actions)).copy()

    def compensator_excess(self, lam, t, T):
        return float(((self.level - 1.0) * lam.weights).sum() * (T - t))


@dataclass(frozen=True)
class PiecewiseIntensity(IntensityControl):
    """``nu(s, a) = levels[i, a]`` for ``breaks[i] <= s < breaks[i + 1]``."""

    breaks: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        v = np.atleast_2d(np.asarray(self.levels, dtype=float))
        if b.size != v.shape[0] + 1 or np.any(np.diff(b) <= 0) or not np.all(v > 0):
            raise ValueError("need increasing breaks and positive levels, one row per piece")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "levels", v)

    @property
    def nu_min(self):
        return float(self.levels.min())

    @property
    def nu_max(self):
        return float(self.levels.max())

    def _piece(self, s):
        return int(np.clip(np.searchsorted(self.breaks, s, side="right") - 1, 0, self.levels.shape[0] - 1))

    def values(self, s, means=None, size=1):
        return np.broadcast_to(self.levels[self._piece(s)], (size, self.levels.shape[1])).copy()

    def compensator_excess(self, lam, t, T):
        lo = np.clip(self.breaks[:-1], t, T)
        hi = np.clip(self.breaks[1:], t, T)
        return float(((self.levels - 1.0) @ lam.weights) @ (hi - lo))


@dataclass(frozen=True)
class FeedbackIntensity(IntensityControl):
    """Intensity concentrated on the support point nearest the optimal feedback.

    At time ``s`` with cloud mean ``m`` the action nearest to
    ``a_hat(s, m)`` gets intensity ``c`` and every other action ``1 / c``.
    Inside the particle engine ``s`` and ``m`` are the left grid point of
    the current step, so the control is piecewise constant and predictable.
    """

    sol: object
    lam: ActionMeasure
    c: float
    _cache: dict = field(default_factory=dict, compare=False, repr=False)
    state_dependent = True

    def __post_init__(self):
        if not self.c >= 1.0:
            raise ValueError("concentration c must be >= 1")

    @property
    def nu_min(self):
        return 1.0 / self.c

    @property
    def nu_max(self):
        return float(self.c)

    def values(self, s, means=None, size=1):
        if means is None:
            raise TypeError("FeedbackIntensity needs the cloud means")
        hit = self._cache.get(s)
        if hit is None:
            from .lqsolve import feedback_gains
            hit = feedback_gains(self.sol, s)
            self._cache[s] = hit
        G, h = hit
        a_hat = -(means @ G.T + h)
        dist = np.sum((a_hat[:, None, :] - self.lam.support[None, :, :]) ** 2, axis=-1)
        near = np.argmin(dist, axis=1)
        out = np.full((means.shape[0], self.lam.size), 1.0 / self.c)
        out[np.arange(means.shape[0]), near] = self.c
        return out


# ---------------------------------------------------------------------------
# Sampling


_BATCH = 64


@njit(cache=True, nogil=True)
def _pick_nb(cum, u):
    j = np.searchsorted(cum, u * cum[-1], side="right")
    return min(j, cum.size - 1)


@njit(cache=True, nogil=True)
def _next_candidate(k0, k1, rep, rate, buf, idx, pos, clock, r):
    """Next candidate ``(time, u_accept, u_mark)`` of the stream held in slot ``r``."""
    if idx[r] >= buf.shape[0]:
        u = _stream(k0, k1, TAG_JUMP, np.array([rep], dtype=np.int64), np.zeros(1, dtype=np.int64),
                    3 * pos[r], 3 * buf.shape[0], False)
        buf[:, :] = u[0, 0].reshape(buf.shape[0], 3)
        pos[r] += buf.shape[0]
        idx[r] = 0
    i = idx[r]
    clock[r] += -np.log1p(-buf[i, 0]) / rate
    idx[r] = i + 1
    return clock[r], buf[i, 1], buf[i, 2]


class _Candidates:
    """Homogeneous Poisson candidates with three uniforms each, drawn lazily.

    Candidate ``j`` uses uniforms ``3j .. 3j + 2`` of the stream
    ``(seed, TAG_JUMP, replicate)``: the first sets the exponential gap, the
    second the acceptance test, the third the mark.
    """

    def __init__(self, seed: int, replicate: int, t0: float, rate: float):
        self.k0, self.k1 = split_seed(seed)
        self.replicate, self.rate = int(replicate), float(rate)
        self.buf = np.zeros((_BATCH, 3))
        self.idx = np.full(1, _BATCH, dtype=np.int64)
        self.pos = np.zeros(1, dtype=np.int64)
        self.clock = np.full(1, float(t0))

    def next(self):
        return _next_candidate(self.k0, self.k1, self.replicate, self.rate, self.buf, self.idx,
                               self.pos, self.clock, 0)


@njit(cache=True, nogil=True)
def _prime(k0, k1, reps, rate, bufs, idx, pos, clock, pend):
    for r in range(reps.size):
        pend[r, 0], pend[r, 1], pend[r, 2] = _next_candidate(k0, k1, reps[r], rate, bufs[r], idx,
                                                             pos, clock, r)


@njit(cache=True, nogil=True)
def _scan(k0, k1, reps, rate, bufs, idx, pos, clock, pend, t_end, inclusive, direct,
          tilt_sum, tilt_cum, lw_cum, log_nu, logk, mark):
    """Consume the candidates of one grid step for every replicate.

    Returns the accepted jump times and marks in replicate order and the
    number of jumps per replicate.
    """
    R = reps.size
    counts = np.zeros(R, dtype=np.int64)
    times = np.empty(64)
    marks = np.empty(64, dtype=np.int64)
    cnt = 0
    for r in range(R):
        s, ua, um = pend[r, 0], pend[r, 1], pend[r, 2]
        while s < t_end or (inclusive and s <= t_end):
            a = -1
            if direct:
                if ua * rate < tilt_sum[r]:
                    a = _pick_nb(tilt_cum[r], um)
            else:
                a = _pick_nb(lw_cum, um)
                logk[r] += log_nu[r, a]
            if a >= 0:
                if cnt == times.size:
                    times = np.concatenate((times, np.empty(cnt)))
                    marks = np.concatenate((marks, np.empty(cnt, dtype=np.int64)))
                times[cnt] = s
                marks[cnt] = a
                cnt += 1
                counts[r] += 1
                mark[r] = a
            s, ua, um = _next_candidate(k0, k1, reps[r], rate, bufs[r], idx, pos, clock, r)
        pend[r, 0], pend[r, 1], pend[r, 2] = s, ua, um
    return times[:cnt], marks[:cnt], counts


def _pick(cum: np.ndarray, u: float) -> int:
    return int(min(np.searchsorted(cum, u * cum[-1], side="right"), cum.size - 1))


def sample_jump_process(lam: ActionMeasure, nu: IntensityControl, t: float, T: float, a0,
                        seed: int, replicate: int = 0) -> JumpTrajectory:
    """Sample the marked point process under the intensity ``nu lambda`` by thinning.

    Candidates arrive at rate ``nu_max * total``; a candidate at ``s`` is
    kept with probability ``sum_a nu(s, a) lambda(a) / (nu_max * total)`` and
    its mark is drawn proportionally to ``nu(s, .) lambda(.)``.
    """
    if nu.state_dependent:
        raise TypeError("state-dependent intensities are sampled inside the particle engine")
    rate = nu.nu_max * lam.total
    cand = _Candidates(seed, replicate, t, rate)
    times, marks = [], []
    while True:
        s, ua, um = cand.next()
        if s > T:
            break
        w = nu.values(s)[0] * lam.weights
        if ua * rate < w.sum():
            times.append(s)
            marks.append(_pick(np.cumsum(w), um))
    return JumpTrajectory(np.atleast_1d(np.asarray(a0, float)), np.array(times), np.array(marks, int),
                          t, T, lam.support)


def doleans_weight(traj: JumpTrajectory, nu: IntensityControl, lam: ActionMeasure,
                   t: float, T: float) -> float:
    """Closed-form Doleans exponential of the intensity change on ``[t, T]``."""
    if nu.state_dependent:
        raise TypeError("state-dependent intensities are weighted inside the particle engine")
    logk = -nu.compensator_excess(lam, t, T)
    for s, a in zip(traj.jump_times, traj.marks):
        if t < s <= T:
            v = nu.values(s)[0, a]
            if not v > 0:
                raise ValueError("nonpositive intensity at a jump")
            logk += np.log(v)
    return float(np.exp(logk))


# ---------------------------------------------------------------------------
# Jump-driven policies


@dataclass(frozen=True)
class JumpPolicy(Policy):
    """Control ``I_s`` read from a fixed jump trajectory per replicate."""

    trajectories: dict
    kind = "jump_driven"

    def begin(self, replicates, t0, T):
        return [self.trajectories[int(r)] for r in replicates]

    def action(self, ctx, k, t, means):
        return np.stack([jump_value(tr, t) for tr in ctx])


class _DriverState:
    """Candidate streams of every replicate, held as arrays for :func:`_scan`."""

    def __init__(self, reps, t0, rate, seed):
        self.k0, self.k1 = split_seed(seed)
        self.reps = np.ascontiguousarray(np.asarray(reps, dtype=np.int64))
        R = self.reps.size
        self.bufs = np.zeros((R, _BATCH, 3))
        self.idx = np.full(R, _BATCH, dtype=np.int64)
        self.pos = np.zeros(R, dtype=np.int64)
        self.clock = np.full(R, float(t0))
        self.pend = np.empty((R, 3))
        _prime(self.k0, self.k1, self.reps, float(rate), self.bufs, self.idx, self.pos, self.clock,
               self.pend)
        self.mark = np.full(R, -1, dtype=np.int64)
        self.logk = np.zeros(R)
        self.chunks = []
        self.t_prev = None
        self.nu_prev = None
        self.t0 = t0


@dataclass(frozen=True)
class RandomizedPolicy(Policy):
    """Jump-driven control sampled online while the clouds are propagated.

    ``mode="direct"`` samples the jumps under the tilted intensity
    ``nu lambda`` by thinning.  ``mode="reference"`` samples them under
    ``lambda`` and accumulates ``log kappa``.  In both modes ``nu`` is frozen
    on each grid step at its value at the left endpoint, computed from the
    cloud mean there.
    """

    lam: ActionMeasure
    nu: IntensityControl
    a0: np.ndarray
    seed: int
    mode: str = "direct"
    kind = "jump_driven"

    def __post_init__(self):
        if self.mode not in ("direct", "reference"):
            raise ValueError("mode must be 'direct' or 'reference'")
        object.__setattr__(self, "a0", np.atleast_1d(np.asarray(self.a0, dtype=float)))

    def _rate(self):
        return (self.nu.nu_max if self.mode == "direct" else 1.0) * self.lam.total

    def begin(self, replicates, t0, T):
        return _DriverState(replicates, t0, self._rate(), self.seed)

    def _advance(self, st: _DriverState, t_end: float, inclusive: bool):
        if st.t_prev is None:
            return
        lw = self.lam.weights
        nu = np.ascontiguousarray(st.nu_prev, dtype=float)
        tilt = nu * lw
        out = _scan(st.k0, st.k1, st.reps, self._rate(), st.bufs, st.idx, st.pos, st.clock, st.pend,
                    float(t_end), inclusive, self.mode == "direct", tilt.sum(axis=1),
                    np.cumsum(tilt, axis=1), np.cumsum(lw), np.log(nu), st.logk, st.mark)
        st.chunks.append(out)
        st.logk -= ((nu - 1.0) @ lw) * (t_end - st.t_prev)

    def _current(self, st):
        out = np.empty((st.mark.size, self.a0.size))
        for r, a in enumerate(st.mark):
            out[r] = self.a0 if a < 0 else self.lam.support[a]
        return out

    def action(self, st, k, t, means):
        self._advance(st, t, inclusive=False)
        st.nu_prev = self.nu.values(t, means, size=means.shape[0])
        st.t_prev = t
        return self._current(st)

    def finish(self, st, t, means):
        self._advance(st, t, inclusive=True)
        st.t_prev = t

    def results(self, st):
        R = st.reps.size
        if st.chunks:
            times = np.concatenate([c[0] for c in st.chunks])
            marks = np.concatenate([c[1] for c in st.chunks])
            owner = np.concatenate([np.repeat(np.arange(R), c[2]) for c in st.chunks])
            order = np.argsort(owner, kind="stable")
            splits = np.cumsum(np.bincount(owner, minlength=R))[:-1]
            per_t = np.split(times[order], splits)
            per_m = np.split(marks[order], splits)
        else:
            per_t = [np.zeros(0)] * R
            per_m = [np.zeros(0, dtype=np.int64)] * R
        trajs = [JumpTrajectory(self.a0, tt, mm, st.t0, st.t_prev, self.lam.support)
                 for tt, mm in zip(per_t, per_m)]
        return {"log_kappa": st.logk.copy(), "jumps": trajs}


# ---------------------------------------------------------------------------
# Randomized gain


@dataclass(frozen=True)
class GainEstimate:
    estimator: str
    estimate: float
    stderr: float


@dataclass(frozen=True)
class RandomizedGain:
    direct: GainEstimate
    weighted: GainEstimate

    @property
    def combined_stderr(self) -> float:
        return float(np.hypot(self.direct.stderr, self.weighted.stderr))


def gain_observer(model: GeneralModel):
    def obs(t, X, a):
        if a is None:
            return model.terminal_gain(X).mean(axis=1)
        return model.running_gain(X, a[:, None, :]).mean(axis=1)
    return obs


def _payoffs(model: GeneralModel, pi, policy, mc: MCParams, salt: int, threads: int):
    s = derive_seed(int(mc.seed), salt)
    sub = mc.with_(seed=s)
    w_seed, v_seed, _ = sub.stream_seeds()
    M = sub.steps(model.T)
    ens = make_ensemble(pi, mc.n_inner, np.arange(mc.n_outer), v_seed, w_seed, model.T, M,
                        model.d, refine=mc.refine)
    traj = propagate(ens, model, policy, M, threads=threads, observers={"gain": gain_observer(model)})
    g = traj.observations["gain"]
    return g[:, :-1].sum(axis=1) * ens.dt + g[:, -1], traj


def _mean_se(x):
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def randomized_gain(model, pi: EmpiricalMeasure, a0, lam: ActionMeasure, nu: IntensityControl,
                    mc: MCParams, threads: int = 1) -> RandomizedGain:
    """Direct (thinned) and Doleans-weighted estimates of the randomized gain.

    Both estimate ``E^nu[int f(X_s, I_s) ds + g(X_T)]`` from ``(0, pi, a0)``;
    they use independent noise so their standard errors combine in
    quadrature.  ``model`` is in gain convention (an :class:`LqModel` is
    converted with :func:`lq_as_general`).
    """
    if isinstance(model, LqModel):
        model = lq_as_general(model)
    jump_d = derive_seed(int(mc.seed), TAG_JUMP, 1)
    jump_w = derive_seed(int(mc.seed), TAG_JUMP, 2)
    direct = RandomizedPolicy(lam, nu, a0, jump_d, mode="direct")
    ref = RandomizedPolicy(lam, nu, a0, jump_w, mode="reference")
    Jd, _ = _payoffs(model, pi, direct, mc, 1, threads)
    Jw, traj = _payoffs(model, pi, ref, mc, 2, threads)
    Jw = Jw * np.exp(traj.policy_results["log_kappa"])
    return RandomizedGain(GainEstimate("direct", *_mean_se(Jd)),
                          GainEstimate("weighted", *_mean_se(Jw)))


def write_gain_csv(rows, path) -> None:
    """Rows of ``(nu_id, RandomizedGain, MCParams)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nu_id", "estimator", "estimate", "stderr", "n_outer", "n_inner", "seed"])
        for nu_id, res, mc in rows:
            for est in (res.direct, res.weighted):
                w.writerow([nu_id, est.estimator, format(est.estimate, ".17g"),
                            format(est.stderr, ".17g"), mc.n_outer, mc.n_inner, int(mc.seed)])
