import numpy as np
import pytest

from rbfield.mesh import build_field_mesh


@pytest.fixture(scope="session")
def mesh4():
    return build_field_mesh(4)


@pytest.fixture(scope="session")
def mesh8():
    return build_field_mesh(8)


@pytest.fixture(scope="session")
def mesh16():
    return build_field_mesh(16)


def dense_eig_oracle(C: np.ndarray, h2: float, k: int):
    """Independent reference for the generalised problem: numpy full symmetric
    eigendecomposition of C/h^2, descending."""
    vals, vecs = np.linalg.eigh(np.asarray(C) / h2)
    order = np.argsort(vals)[::-1][:k]
    return vals[order], vecs[:, order] / np.sqrt(h2)
