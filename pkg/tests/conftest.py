import numpy as np
import pytest

from kernelsynth.core import FrequencyGrid, Image


def rel_l2(a, b):
    a = getattr(a, "pixels", a)
    b = getattr(b, "pixels", b)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, n, dfov=10.0):
    return Image(rng.standard_normal((n, n)), dfov)


def dense_matrix(linear_map, n):
    """Build the N^2 x N^2 matrix of a map on n x n arrays from unit impulses."""
    cols = []
    for k in range(n * n):
        e = np.zeros(n * n)
        e[k] = 1.0
        cols.append(np.asarray(linear_map(e.reshape(n, n))).ravel())
    return np.stack(cols, axis=1)
