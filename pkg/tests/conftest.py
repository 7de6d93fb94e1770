import numpy as np
import pytest

from colsfm.synthetic import generate


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def collinear_scene():
    return generate("collinear", n_cams=6, n_points=12, seed=3)


@pytest.fixture
def general_scene():
    return generate("general", n_cams=5, n_points=12, seed=5)


@pytest.fixture
def collinear_projective_scene():
    return generate("collinear", n_cams=5, n_points=12, seed=7, intrinsics_mode="varied")


def random_rotation(rng):
    A = rng.normal(size=(3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q @ np.diag(np.sign(np.diag(R)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q
