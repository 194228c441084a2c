import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def fd_gradient(loss_fn, param, h=1e-3):
    """Central finite differences of a scalar loss with respect to one tensor."""
    fd = np.zeros_like(param.data)
    it = np.nditer(param.data, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param.data[idx]
        param.data[idx] = orig + h
        lp = loss_fn().item()
        param.data[idx] = orig - h
        lm = loss_fn().item()
        param.data[idx] = orig
        fd[idx] = (lp - lm) / (2 * h)
    return fd


def grad_close(analytic, numeric, rel=1e-2, abs_tol=1e-4):
    """Per-element pass when relative error < rel OR absolute error < abs_tol."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(numeric), 1e-12)
    return bool(np.all((diff / denom < rel) | (diff < abs_tol)))
