import numpy as np
import pytest


def random_rotation(rng, d):
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    return Q


def random_orthogonal(rng, d):
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def well_conditioned(rng, d, gamma_max):
    """det > 0 and all singular values in [exp(-gamma_max), exp(gamma_max)]."""
    s = np.exp(rng.uniform(-gamma_max, gamma_max, d))
    return random_rotation(rng, d) @ np.diag(s) @ random_rotation(rng, d).T


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
