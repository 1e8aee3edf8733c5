"""Shared numeric oracles for the test suite."""

import numpy as np


def finite_difference(f, x, step=1e-5):
    """Central-difference gradient of a scalar function of an ndarray.

    ``f`` is called with the (temporarily perturbed) array itself, so it
    must read ``x`` fresh on every call and must not cache it.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def max_rel_err(a, b, floor=1e-4):
    """Largest elementwise relative error, with a floor on the denominator
    so that near-zero entries are compared absolutely."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
