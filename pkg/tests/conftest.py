import numpy as np
import pytest

from pocontrol.model import LqModel


def random_lq(rng, n=2, m=2, d=2, q=2, scale=0.3, T=1.0):
    """Random full multiplicative-noise model with Q, P, N positive definite."""
    def r(*s):
        return scale * rng.standard_normal(s)
    return LqModel(b0=r(n), B=r(n, n), C=r(n, q), gamma_v=r(m, n), D_v=r(m, n, n), F_v=r(m, n, q),
                   gamma_w=r(d, n), D_w=r(d, n, n), F_w=r(d, n, q), Q=np.eye(n), P=np.eye(n),
                   N=np.eye(q), x0=rng.standard_normal(n), T=T)


@pytest.fixture
def lq_factory():
    return random_lq
