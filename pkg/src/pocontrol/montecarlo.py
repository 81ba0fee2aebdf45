"""Nested Monte Carlo evaluation of the LQ cost for arbitrary policies.

An outer replicate is one observation path ``W``; inside it a cloud of
``n_inner`` particles represents the filter, so the conditional expectation
given ``W`` is a particle average and the outer average estimates the cost.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .filter import Policy, ParticleEnsemble, Trajectory, make_ensemble, propagate
from .measures import EmpiricalMeasure
from .model import LqModel
from .rng import TAG_JUMP, TAG_V, TAG_W, derive_seed


@dataclass(frozen=True)
class MCParams:
    """Monte Carlo sizes.  ``refine`` builds each step from finer sub-steps."""

    n_outer: int
    n_inner: int
    dt: float
    seed: int
    checkpoints: tuple = ()
    refine: int = 1

    def __post_init__(self):
        if self.n_outer < 1 or self.n_inner < 1 or not self.dt > 0 or self.refine < 1:
            raise ValueError("n_outer, n_inner, dt and refine must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        object.__setattr__(self, "checkpoints", tuple(float(c) for c in self.checkpoints))

    def steps(self, T: float) -> int:
        M = int(round(T / self.dt))
        if M < 1 or abs(M * self.dt - T) > 1e-9 * T:
            raise ValueError(f"T / dt must be an integer, got {T / self.dt}")
        return M

    def checkpoint_indices(self, T: float) -> list:
        M = self.steps(T)
        out = []
        for c in self.checkpoints:
            k = int(round(c / T * M))
            if abs(k * T / M - c) > 1e-9 * T or not 0 <= k <= M:
                raise ValueError(f"checkpoint {c} is not a grid time")
            out.append(k)
        return out

    def stream_seeds(self) -> tuple:
        """``(w_seed, v_seed, jump_seed)`` derived from the run seed."""
        s = int(self.seed)
        return derive_seed(s, TAG_W), derive_seed(s, TAG_V), derive_seed(s, TAG_JUMP)

    def with_(self, **changes) -> "MCParams":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return MCParams(**d)


@dataclass(frozen=True)
class CostEstimate:
    estimate: float
    stderr: float
    n_outer: int
    n_inner: int
    dt: float
    seed: int
    samples: np.ndarray = field(default=None, repr=False, compare=False)


def _estimate(samples: np.ndarray, mc: MCParams) -> CostEstimate:
    se = float(samples.std(ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0
    return CostEstimate(estimate=float(samples.mean()), stderr=se, n_outer=mc.n_outer,
                        n_inner=mc.n_inner, dt=mc.dt, seed=int(mc.seed), samples=samples)


def initial_ensemble(model, mc: MCParams, pi: EmpiricalMeasure | None = None,
                     T: float | None = None) -> ParticleEnsemble:
    """Ensembles for replicates ``0 .. n_outer - 1`` started from ``pi`` (default Dirac x0)."""
    T = model.T if T is None else T
    if pi is None:
        pi = EmpiricalMeasure.dirac(model.x0)
    w_seed, v_seed, _ = mc.stream_seeds()
    return make_ensemble(pi, mc.n_inner, np.arange(mc.n_outer), v_seed, w_seed, T,
                         mc.steps(T), model.d, refine=mc.refine)


def cost_observer(model: LqModel):
    """Particle average of ``x'Qx + a'Na`` (or ``x'Px`` at the last node)."""
    Q, N, P = model.Q, model.N, model.P

    def obs(t, X, a):
        if a is None:
            return np.einsum("rpi,ij,rpj->rp", X, P, X).mean(axis=1)
        return np.einsum("rpi,ij,rpj->rp", X, Q, X).mean(axis=1) + np.einsum("ri,ij,rj->r", a, N, a)

    return obs


def path_costs(model: LqModel, policy: Policy, mc: MCParams, threads: int = 1,
               particle_ids=None) -> tuple:
    """Per-path realized cost (left-endpoint rule) and the trajectory."""
    ens = initial_ensemble(model, mc)
    if particle_ids is not None:
        from dataclasses import replace
        ens = replace(ens, particle_ids=np.asarray(particle_ids, dtype=np.int64))
    traj = propagate(ens, model, policy, ens.steps, threads=threads,
                     observers={"cost": cost_observer(model)})
    c = traj.observations["cost"]
    J = c[:, :-1].sum(axis=1) * ens.dt + c[:, -1]
    return J, traj


def evaluate_policy(model: LqModel, policy: Policy, mc: MCParams, threads: int = 1) -> CostEstimate:
    """Nested Monte Carlo estimate of the expected cost of ``policy`` from ``x0``."""
    J, _ = path_costs(model, policy, mc, threads)
    return _estimate(J, mc)


@dataclass(frozen=True)
class BiasEnvelope:
    """Richardson calibration: ``envelope = 2 |dJ| + 3 se(dJ)``.

    ``base`` is the estimate at ``(dt, n_inner)`` built from half-steps,
    ``fine`` the estimate at ``(dt / 2, 2 n_inner)`` on the same Brownian
    paths and the same first ``n_inner`` particle streams.
    """

    base: CostEstimate
    fine: CostEstimate
    delta: float
    delta_stderr: float

    @property
    def envelope(self) -> float:
        return 2.0 * abs(self.delta) + 3.0 * self.delta_stderr


def coupled_pair(fn, mc: MCParams):
    """Run ``fn(mc)`` at ``(dt, n_inner, refine=2)`` and ``(dt/2, 2 n_inner, refine=1)``."""
    coarse = fn(mc.with_(refine=2))
    fine = fn(mc.with_(dt=mc.dt / 2, n_inner=2 * mc.n_inner, refine=1))
    return coarse, fine


def calibrate_bias(model: LqModel, policy: Policy, mc: MCParams, threads: int = 1) -> BiasEnvelope:
    """Calibrate the discretization and particle bias of :func:`evaluate_policy`."""
    Jc, Jf = coupled_pair(lambda p: path_costs(model, policy, p, threads)[0], mc)
    d = Jf - Jc
    se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0
    return BiasEnvelope(base=_estimate(Jc, mc.with_(refine=2)),
                        fine=_estimate(Jf, mc.with_(dt=mc.dt / 2, n_inner=2 * mc.n_inner)),
                        delta=float(d.mean()), delta_stderr=se)


@dataclass(frozen=True)
class GapRow:
    policy_id: str
    estimate: float
    stderr: float
    gap: float
    ok: bool


@dataclass(frozen=True)
class GapReport:
    optimal_cost: float
    envelope: float
    rows: list
    mc: MCParams

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy_id", "estimate", "stderr", "gap", "dt", "n_outer", "n_inner", "seed"])
            for r in self.rows:
                w.writerow([r.policy_id, format(r.estimate, ".17g"), format(r.stderr, ".17g"),
                            format(r.gap, ".17g"), format(self.mc.dt, ".17g"), self.mc.n_outer,
                            self.mc.n_inner, int(self.mc.seed)])


def optimality_gap(model: LqModel, sol, perturbations: dict, mc: MCParams, envelope: float = 0.0,
                   threads: int = 1) -> GapReport:
    """Cost of each policy against the closed-form optimum.

    A row is ``ok`` when ``gap >= -3 stderr - envelope``, i.e. the policy does
    not beat the optimum beyond Monte Carlo noise and the calibrated bias.
    """
    from .lqsolve import optimal_cost
    v0 = optimal_cost(sol)
    rows = []
    for pid, pol in perturbations.items():
        est = evaluate_policy(model, pol, mc, threads)
        gap = est.estimate - v0
        rows.append(GapRow(pid, est.estimate, est.stderr, gap, gap >= -3 * est.stderr - envelope))
    return GapReport(optimal_cost=v0, envelope=envelope, rows=rows, mc=mc)


def trajectory_of(model, policy, mc, threads=1, observers=None) -> Trajectory:
    """Closed-loop trajectory batch from Dirac ``x0`` with custom observers."""
    ens = initial_ensemble(model, mc)
    return propagate(ens, model, policy, ens.steps, threads=threads, observers=observers)
