"""NumPy implementations of the Monte Carlo rate kernels."""

import numpy as np


def fixed_rate_sums(x, a, c, w):
    """Per-trial weighted totals and per-user sums of ``log2(1 + x a / (x c + 1))``."""
    x = np.asarray(x, dtype=float)
    a, c, w = (np.asarray(v, dtype=float) for v in (a, c, w))
    if not (a.shape == c.shape == w.shape == (x.shape[1],)):
        raise ValueError("coefficient length does not match the number of users")
    r = np.log2(1.0 + x * a / (x * c + 1.0))
    return r @ w, r.sum(axis=0)


def rician_power(z, means, stds):
    """``|g|^2`` from standard normals laid out as ``[re_0..re_N, im_0..im_N]`` per row."""
    z = np.asarray(z, dtype=float)
    n = means.shape[0]
    if z.shape[1] != 2 * n:
        raise ValueError("need two normals per user")
    re = means + stds * z[:, :n]
    im = means + stds * z[:, n:]
    return re * re + im * im
