"""Model specifications: the general controlled diffusion and the LQ instance.

Conventions
-----------
The general model is stated in *gain* form (maximize ``E[int f + g]``); the
LQ model is stated in *cost* form (minimize ``E[int x'Qx + a'Na + x_T'Px_T]``).
:func:`lq_as_general` is the single place where the sign is flipped.

All coefficient callables are vectorized: ``x`` has shape ``(..., n)`` and
``a`` has shape ``(..., q)``; leading axes broadcast.  Diffusion blocks are
returned column-wise, ``(..., n, m)`` and ``(..., n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class GeneralModel:
    """Controlled diffusion ``dX = b dt + sigma_V dV + sigma_W dW`` with gains.

    Lipschitz and growth conditions on the coefficients are assumed by the
    caller, not checked.
    """

    n: int
    m: int
    d: int
    q: int
    drift: Callable[[Array, Array], Array]
    diffusion_v: Callable[[Array, Array], Array]
    diffusion_w: Callable[[Array, Array], Array]
    running_gain: Callable[[Array, Array], Array]
    terminal_gain: Callable[[Array], Array]
    T: float
    #: The LQ model this was built from, if any; enables the fused Euler kernel.
    affine: Optional["LqModel"] = field(default=None, compare=False)

    def sigma(self, x: Array, a: Array) -> Array:
        """Full diffusion matrix ``(sigma_V sigma_W)`` of shape ``(..., n, m + d)``."""
        return np.concatenate([self.diffusion_v(x, a), self.diffusion_w(x, a)], axis=-1)


def _sym(M: Array) -> Array:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


@dataclass(frozen=True)
class LqModel:
    """Linear dynamics and quadratic costs.

    Shapes: ``b0 (n,)``, ``B (n, n)``, ``C (n, q)``, ``gamma_v (m, n)``,
    ``D_v (m, n, n)``, ``F_v (m, n, q)`` and the ``w`` analogues with ``d``
    in place of ``m``; ``Q, P (n, n)``, ``N (q, q)``, ``x0 (n,)``.
    Column ``i`` of the unobserved diffusion is
    ``gamma_v[i] + D_v[i] @ x + F_v[i] @ a``.
    """

    b0: Array
    B: Array
    C: Array
    gamma_v: Array
    D_v: Array
    F_v: Array
    gamma_w: Array
    D_w: Array
    F_w: Array
    Q: Array
    P: Array
    N: Array
    x0: Array
    T: float

    def __post_init__(self):
        b0 = np.array(self.b0, dtype=float).reshape(-1)
        n = b0.size
        B = np.array(self.B, dtype=float).reshape(n, n)
        C = np.array(self.C, dtype=float)
        C = C.reshape(n, C.size // n if n else 0)
        q = C.shape[1]
        arrs = {}
        for side in ("v", "w"):
            g = np.array(getattr(self, "gamma_" + side), dtype=float)
            k = g.size // n if n else 0
            g = g.reshape(k, n)
            D = np.array(getattr(self, "D_" + side), dtype=float).reshape(k, n, n)
            F = np.array(getattr(self, "F_" + side), dtype=float).reshape(k, n, q)
            arrs["gamma_" + side], arrs["D_" + side], arrs["F_" + side] = g, D, F
        Q = _sym(np.array(self.Q, dtype=float).reshape(n, n))
        P = _sym(np.array(self.P, dtype=float).reshape(n, n))
        N = _sym(np.array(self.N, dtype=float).reshape(q, q))
        x0 = np.array(self.x0, dtype=float).reshape(n)
        T = float(self.T)
        if not T > 0:
            raise ValueError(f"horizon T must be positive, got {T}")
        vals = dict(b0=b0, B=B, C=C, Q=Q, P=P, N=N, x0=x0, T=T, **arrs)
        for name, v in vals.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")
            if isinstance(v, np.ndarray):
                v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.b0.size

    @property
    def q(self) -> int:
        return self.C.shape[1]

    @property
    def m(self) -> int:
        return self.gamma_v.shape[0]

    @property
    def d(self) -> int:
        return self.gamma_w.shape[0]

    @classmethod
    def zeros(cls, n: int, m: int, d: int, q: int, T: float = 1.0, **overrides) -> "LqModel":
        """All-zero model of the given dimensions with selected fields overridden."""
        base = dict(
            b0=np.zeros(n), B=np.zeros((n, n)), C=np.zeros((n, q)),
            gamma_v=np.zeros((m, n)), D_v=np.zeros((m, n, n)), F_v=np.zeros((m, n, q)),
            gamma_w=np.zeros((d, n)), D_w=np.zeros((d, n, n)), F_w=np.zeros((d, n, q)),
            Q=np.zeros((n, n)), P=np.zeros((n, n)), N=np.zeros((q, q)),
            x0=np.zeros(n), T=T,
        )
        for key, v in overrides.items():
            if key not in base:
                raise TypeError(f"unknown LqModel field {key!r}")
            base[key] = np.asarray(v, dtype=float).reshape(np.shape(base[key])) \
                if key != "T" else float(v)
        return cls(**base)

    def replace(self, **changes) -> "LqModel":
        """Copy with some fields replaced."""
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return LqModel(**fields)

    @property
    def additive(self) -> bool:
        """True when no diffusion column depends on the state or the action."""
        return not (self.D_v.any() or self.F_v.any() or self.D_w.any() or self.F_w.any())

    # Affine coefficient evaluation, vectorized over leading axes.
    def drift(self, x: Array, a: Array) -> Array:
        return self.b0 + x @ self.B.T + a @ self.C.T

    def diffusion_v(self, x: Array, a: Array) -> Array:
        return _columns(self.gamma_v, self.D_v, self.F_v, x, a)

    def diffusion_w(self, x: Array, a: Array) -> Array:
        return _columns(self.gamma_w, self.D_w, self.F_w, x, a)


def _columns(gamma: Array, D: Array, F: Array, x: Array, a: Array) -> Array:
    # result[..., k, i] = gamma[i, k] + (D[i] x)_k + (F[i] a)_k
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    out = gamma.T + np.einsum("ikl,...l->...ki", D, x) + np.einsum("ikl,...l->...ki", F, a)
    return out


def lq_as_general(model: LqModel) -> GeneralModel:
    """Embed the LQ model in the general gain-maximization form.

    Running and terminal gains are the negated quadratic costs, so the gain
    value of the general problem is minus the LQ optimal cost.
    """
    Q, N, P = model.Q, model.N, model.P

    def running_gain(x, a):
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        return -(np.einsum("...i,ij,...j->...", x, Q, x) + np.einsum("...i,ij,...j->...", a, N, a))

    def terminal_gain(x):
        x = np.asarray(x, dtype=float)
        return -np.einsum("...i,ij,...j->...", x, P, x)

    return GeneralModel(n=model.n, m=model.m, d=model.d, q=model.q,
                        drift=model.drift, diffusion_v=model.diffusion_v,
                        diffusion_w=model.diffusion_w, running_gain=running_gain,
                        terminal_gain=terminal_gain, T=model.T, affine=model)


class C2Branch(str, Enum):
    N_UNIFORM_POSITIVE = "N-uniform-positive"
    P_OR_Q_POSITIVE_FV_NONDEGENERATE = "P-or-Q-positive-with-Fv-nondegenerate"
    FAILS = "fails"


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_lq`.

    ``min_eigenvalues`` lists the smallest eigenvalues of Q, P and N, then
    the smallest singular value of each ``F_v[i]``.
    """

    c1_holds: bool
    c2_branch: C2Branch
    min_eigenvalues: list

    @property
    def ok(self) -> bool:
        return self.c1_holds and self.c2_branch is not C2Branch.FAILS


def _min_eig(M: Array) -> float:
    return float(np.linalg.eigvalsh(M)[0]) if M.size else np.inf


def _min_singular(F: Array) -> float:
    # Nondegeneracy of F (n x q) means |F a| >= c |a| for all a, which needs n >= q.
    n, q = F.shape
    if q == 0:
        return np.inf
    if n < q:
        return 0.0
    return float(np.linalg.svd(F, compute_uv=False)[-1])


def validate_lq(model: LqModel, eps: float = 1e-10) -> ValidationReport:
    """Check the nonnegativity condition and which invertibility branch holds.

    Never raises; an unusable model yields ``c2_branch = FAILS`` or
    ``c1_holds = False``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    lq, lp, ln = _min_eig(model.Q), _min_eig(model.P), _min_eig(model.N)
    sv = [_min_singular(F) for F in model.F_v]
    c1 = min(lq, lp, ln) >= -eps
    if ln >= eps:
        branch = C2Branch.N_UNIFORM_POSITIVE
    elif (lp >= eps or lq >= eps) and any(s >= eps for s in sv):
        branch = C2Branch.P_OR_Q_POSITIVE_FV_NONDEGENERATE
    else:
        branch = C2Branch.FAILS
    return ValidationReport(c1_holds=bool(c1), c2_branch=branch,
                            min_eigenvalues=[lq, lp, ln] + sv)
