"""Kernel backend selection.

The compiled extension is used when it imports; setting ``LEOMIMO_PURE_PYTHON=1``
forces the NumPy implementations. ``BACKEND`` names the active one. Inputs
are converted to contiguous float64 before reaching either backend.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("LEOMIMO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from ._ext import ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"


def _c(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def fixed_rate_sums(x, a, c, w):
    """Per-trial weighted totals and per-user sums of ``log2(1 + x a / (x c + 1))``.

    Parameters
    ----------
    x : ndarray, shape (T, N)
        Channel power draws ``|g|^2``.
    a, c, w : ndarray, shape (N,)
        Signal coefficient, interference coefficient and rate weight per user.

    Returns
    -------
    totals : ndarray, shape (T,)
        ``sum_u w_u r_tu`` for every trial.
    user_sums : ndarray, shape (N,)
        ``sum_t r_tu`` for every user.
    """
    return _impl.fixed_rate_sums(_c(x), _c(a), _c(c), _c(w))


def rician_power(z, means, stds):
    """``|g|^2`` from rows of ``2N`` standard normals, real parts first."""
    return _impl.rician_power(_c(z), _c(means), _c(stds))


__all__ = ["BACKEND", "fixed_rate_sums", "rician_power"]
