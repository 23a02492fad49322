import numpy as np
import pytest

from ganlab import autodiff as ad


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f(list_of_arrays)`` w.r.t. every entry."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(arrays)
            flat[i] = old - h
            down = f(arrays)
            flat[i] = old
            gf[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


@pytest.fixture
def graph():
    g = ad.Graph()
    with g:
        yield g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
