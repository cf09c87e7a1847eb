"""Independent oracles used across the test suite.

Everything here is deliberately written the slow, obvious way (finite
differences, O(n^2) scans, explicit loops) and never calls back into the
code paths it is meant to check.
"""

import numpy as np


def finite_diff_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a, b):
    """Elementwise |a-b| / max(1, |a|, |b|), reduced to the maximum."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def brute_nn(query, points):
    """Exact nearest neighbors by full scan: (indices, squared distances)."""
    query = np.asarray(query, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    idx = np.empty(len(query), dtype=np.intp)
    d2 = np.empty(len(query), dtype=np.float64)
    for i, q in enumerate(query):
        dd = ((points - q) ** 2).sum(axis=1)
        idx[i] = int(np.argmin(dd))
        d2[i] = dd[idx[i]]
    return idx, d2


def brute_chamfer_l2(a, b):
    """Sum of mean squared nearest-neighbor distances, both directions."""
    _, d2a = brute_nn(a, b)
    _, d2b = brute_nn(b, a)
    return float(d2a.mean() + d2b.mean())


def brute_chamfer_l1(a, b):
    """Half the sum of mean nearest-neighbor distances, both directions."""
    _, d2a = brute_nn(a, b)
    _, d2b = brute_nn(b, a)
    return 0.5 * float(np.sqrt(d2a).mean() + np.sqrt(d2b).mean())
