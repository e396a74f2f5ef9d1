"""Shared test oracles, kept independent of the code paths they check."""

import numpy as np


def numeric_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar f at array x, one entry at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        hi = float(f(x))
        flat[j] = orig - eps
        lo = float(f(x))
        flat[j] = orig
        gflat[j] = (hi - lo) / (2.0 * eps)
    return g


def rel_error(a, b):
    """Scale-free distance between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom
