"""Equal-weight empirical measures and the quadratic functionals on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

#: Largest atom count accepted by the assignment-based W2 in dimension >= 2.
W2_MATCHING_CAP = 512


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform probability measure on ``N`` atoms in R^n (rows of ``atoms``)."""

    atoms: np.ndarray

    def __post_init__(self):
        a = np.array(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValueError("atoms must be a non-empty (N, n) array")
        if not np.all(np.isfinite(a)):
            raise ValueError("atoms must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @property
    def n(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def second_moment(self) -> float:
        return float(np.mean(np.sum(self.atoms**2, axis=1)))

    @classmethod
    def dirac(cls, x) -> "EmpiricalMeasure":
        return cls(np.atleast_1d(np.asarray(x, dtype=float))[None, :])


def _check_dim(pi: EmpiricalMeasure, size: int, what: str):
    if size != pi.n:
        raise ValueError(f"{what} has dimension {size}, measure has {pi.n}")


def mean(pi: EmpiricalMeasure) -> np.ndarray:
    return pi.atoms.mean(axis=0)


def quad_var(pi: EmpiricalMeasure, k) -> float:
    """Average of ``(x - mean)' k (x - mean)`` over the atoms."""
    k = np.atleast_2d(np.asarray(k, dtype=float))
    _check_dim(pi, k.shape[0], "k")
    c = pi.atoms - mean(pi)
    return float(np.einsum("ni,ij,nj->", c, k, c) / pi.size)


def v2(pi: EmpiricalMeasure, ell) -> float:
    ell = np.atleast_2d(np.asarray(ell, dtype=float))
    _check_dim(pi, ell.shape[0], "ell")
    m = mean(pi)
    return float(m @ ell @ m)


def v1(pi: EmpiricalMeasure, y) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    _check_dim(pi, y.size, "y")
    return float(y @ mean(pi))


def wasserstein2(pi1: EmpiricalMeasure, pi2: EmpiricalMeasure) -> float:
    """Exact 2-Wasserstein distance between two empirical measures.

    In one dimension the monotone (quantile) coupling is optimal for any
    atom counts.  In higher dimension both measures must have the same
    number of atoms, at most :data:`W2_MATCHING_CAP`, and the optimal
    coupling is a permutation found by linear assignment.
    """
    if pi1.n != pi2.n:
        raise ValueError("measures live in different dimensions")
    if pi1.n == 1:
        return float(np.sqrt(_w2sq_1d(pi1.atoms[:, 0], pi2.atoms[:, 0])))
    if pi1.size != pi2.size:
        raise ValueError("W2 in dimension >= 2 needs equal atom counts")
    if pi1.size > W2_MATCHING_CAP:
        raise ValueError(f"atom count {pi1.size} exceeds the matching cap {W2_MATCHING_CAP}")
    return float(np.sqrt(_w2sq_matching(pi1.atoms, pi2.atoms)))


def _w2sq_matching(x: np.ndarray, y: np.ndarray) -> float:
    cost = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return max(float(cost[rows, cols].mean()), 0.0)


def _w2sq_1d(x: np.ndarray, y: np.ndarray) -> float:
    # Integrate |F^-1(u) - G^-1(u)|^2 over the merged quantile breakpoints.
    xs, ys = np.sort(x), np.sort(y)
    nx, ny = xs.size, ys.size
    if nx == ny:
        return float(np.mean((xs - ys) ** 2))
    cuts = np.union1d(np.arange(1, nx + 1) / nx, np.arange(1, ny + 1) / ny)
    lo = np.concatenate([[0.0], cuts[:-1]])
    mid = 0.5 * (lo + cuts)
    ix = np.minimum((mid * nx).astype(int), nx - 1)
    iy = np.minimum((mid * ny).astype(int), ny - 1)
    return float(np.sum((cuts - lo) * (xs[ix] - ys[iy]) ** 2))
