import numpy as np
import pytest

from eigenpool.hiermodel.schemas import GroupData
from eigenpool.hypergeo.schemas import ConcentrationParams
from eigenpool.hiermodel.simulation import generate_synthetic
from eigenpool.matcore.services import haar_orthonormal


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


@pytest.fixture
def orthogonal(rng):
    def make(p: int) -> np.ndarray:
        return haar_orthonormal(p, rng)

    return make


@pytest.fixture
def small_groups():
    """Three groups, p=3, drawn around a common frame."""
    p = 3
    v = haar_orthonormal(p, np.random.default_rng(5))
    dataset = generate_synthetic(
        k=3,
        p=p,
        n=[30, 20, 12],
        conc=ConcentrationParams.equally_spaced(p, 200.0),
        v=v,
        eigenvalues=np.array([4.0, 2.0, 1.0]),
        seed=11,
        sweeps=50,
    )
    return dataset.groups


@pytest.fixture
def two_groups_raw():
    """y-values small enough to center by hand."""
    return {
        "a": np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]]),
        "b": np.array([[0.0, 1.0], [2.0, -1.0]]),
    }


@pytest.fixture
def group_from_cov():
    def make(cov: np.ndarray, n: int, label: str = "") -> GroupData:
        return GroupData(n=n, s=(n - 1) * np.asarray(cov, dtype=float), label=label)

    return make
