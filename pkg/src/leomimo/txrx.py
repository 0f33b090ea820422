"""Closed-form DL precoders and UL receivers with their SLNR/SINR metrics.

Channel sets are passed as arrays of shape ``(K, M)``, one row per user. The
regularized covariance ``sum_i w_i x_i x_i^H + I/rho`` is Hermitian positive
definite, so every inverse below is a Cholesky solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import SpaceAngles, UpaConfig, UserChannelStats, upa_responses

__all__ = [
    "LinkBudget",
    "slnr_icsi_precoder",
    "slnr_of",
    "aslnr_precoder",
    "aslnr_precoders",
    "aslnr_of",
    "max_aslnr",
    "max_aslnr_values",
    "sinr_icsi_receiver",
    "sinr_of",
    "asinr_receiver",
    "asinr_receivers",
    "asinr_of",
    "max_asinr",
    "mf_limit",
    "dft_grid_index",
    "dft_fixed",
    "duality_gap",
    "directions_of",
]


@dataclass(frozen=True)
class LinkBudget:
    """Per-user DL SNRs and the shared UL SNR, all linear."""

    rho_dl: tuple
    rho_ul: float

    def __post_init__(self):
        rho_dl = tuple(float(r) for r in np.atleast_1d(self.rho_dl))
        if not rho_dl or not all(r > 0 and math.isfinite(r) for r in rho_dl):
            raise ValueError("DL SNRs must be positive and finite")
        if not (self.rho_ul > 0 and math.isfinite(self.rho_ul)):
            raise ValueError("UL SNR must be positive and finite")
        object.__setattr__(self, "rho_dl", rho_dl)
        object.__setattr__(self, "rho_ul", float(self.rho_ul))

    @classmethod
    def uniform(cls, n_users: int, snr_db: float) -> "LinkBudget":
        rho = 10.0 ** (snr_db / 10.0)
        return cls((rho,) * n_users, rho)


def directions_of(stats: Sequence[UserChannelStats], cfg: UpaConfig) -> np.ndarray:
    tx = [s.angles.theta_x for s in stats]
    ty = [s.angles.theta_y for s in stats]
    return upa_responses(cfg, tx, ty)


def _as_rows(x) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=complex))
    if not np.all(np.isfinite(arr)):
        raise ValueError("channel inputs must be finite")
    return arr


def _check_rho(rho: float) -> float:
    if not (rho > 0 and math.isfinite(rho)):
        raise ValueError(f"SNR must be positive and finite, got {rho!r}")
    return float(rho)


def _covariance_factor(rows: np.ndarray, weights: np.ndarray, rho: float):
    m = rows.shape[1]
    cov = rows.T @ (weights[:, None] * rows.conj())
    cov[np.diag_indices(m)] += 1.0 / rho
    return cho_factor(cov, lower=True, check_finite=False)


def _regularized_solve(rows, weights, rho, rhs) -> np.ndarray:
    """``(sum_i w_i x_i x_i^H + I/rho)^{-1} rhs`` with ``rhs`` of shape ``(M, n)``."""
    return cho_solve(_covariance_factor(rows, weights, rho), rhs, check_finite=False)


def _normalized_conj(x: np.ndarray) -> np.ndarray:
    return x.conj() / np.linalg.norm(x)


# -- iCSI ----------------------------------------------------------------------

def slnr_icsi_precoder(channels, k: int, rho_k: float) -> np.ndarray:
    """Unit-norm SLNR-maximizing precoder of user ``k`` from full channel vectors."""
    g = _as_rows(channels)
    rho_k = _check_rho(rho_k)
    sol = _regularized_solve(g, np.ones(g.shape[0]), rho_k, g[k][:, None])[:, 0]
    return _normalized_conj(sol)


def slnr_of(b, channels, k: int, rho_k: float) -> float:
    """SLNR of user ``k`` under precoder ``b``."""
    g = _as_rows(channels)
    proj = np.abs(g @ np.asarray(b)) ** 2
    leak = proj.sum() - proj[k]
    return float(proj[k] / (leak + 1.0 / rho_k))


def sinr_icsi_receiver(channels_ul, k: int, rho_ul: float) -> np.ndarray:
    """SINR-maximizing (MMSE) UL receiver of user ``k``; not normalized."""
    g = _as_rows(channels_ul)
    rho_ul = _check_rho(rho_ul)
    return _regularized_solve(g, np.ones(g.shape[0]), rho_ul, g[k][:, None])[:, 0].conj()


def sinr_of(w, channels_ul, k: int, rho_ul: float) -> float:
    """UL SINR of user ``k`` with receiver ``w``; invariant to scaling of ``w``."""
    g = _as_rows(channels_ul)
    w = np.asarray(w)
    proj = np.abs(g @ w) ** 2
    interf = proj.sum() - proj[k]
    return float(proj[k] / (interf + np.vdot(w, w).real / rho_ul))


# -- sCSI ----------------------------------------------------------------------

def aslnr_precoders(directions, gammas, rho) -> np.ndarray:
    """All ASLNR-maximizing precoders of a user set, one unit-norm row per user.

    ``rho`` is a scalar or one DL SNR per user; users sharing an SNR share one
    factorization.
    """
    v = _as_rows(directions)
    gammas = np.asarray(gammas, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), gammas.shape)
    out = np.empty_like(v)
    for value in np.unique(rho):
        idx = np.flatnonzero(rho == value)
        sol = _regularized_solve(v, gammas, _check_rho(value), v[idx].T)
        sol = sol / np.linalg.norm(sol, axis=0)
        out[idx] = sol.T.conj()
    return out


def asinr_receivers(directions, gammas, rho_ul: float) -> np.ndarray:
    """All ASINR-maximizing UL receivers, unnormalized rows."""
    v = _as_rows(directions)
    sol = _regularized_solve(v, np.asarray(gammas, dtype=float), _check_rho(rho_ul), v.T)
    return sol.T.conj()


def max_aslnr_values(directions, gammas, rho) -> np.ndarray:
    """Maximum ASLNR of every user, ``1/(1 - gamma_k v_k^H X^{-1} v_k) - 1``."""
    v = _as_rows(directions)
    gammas = np.asarray(gammas, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), gammas.shape)
    out = np.empty(gammas.shape)
    for value in np.unique(rho):
        idx = np.flatnonzero(rho == value)
        sol = _regularized_solve(v, gammas, _check_rho(value), v[idx].T)
        quad = np.einsum("ij,ji->i", v[idx].conj(), sol).real
        out[idx] = 1.0 / (1.0 - gammas[idx] * quad) - 1.0
    return out


def _stats_arrays(stats, cfg):
    return directions_of(stats, cfg), np.array([s.gamma for s in stats], dtype=float)


def aslnr_precoder(stats: Sequence[UserChannelStats], k: int, rho_k: float, cfg: UpaConfig) -> np.ndarray:
    """ASLNR-maximizing precoder of user ``k`` from statistical CSI only."""
    v, gammas = _stats_arrays(stats, cfg)
    sol = _regularized_solve(v, gammas, _check_rho(rho_k), v[k][:, None])[:, 0]
    return _normalized_conj(sol)


def aslnr_of(b, stats, k: int, rho_k: float, cfg: UpaConfig) -> float:
    v, gammas = _stats_arrays(stats, cfg)
    proj = gammas * np.abs(v @ np.asarray(b)) ** 2
    leak = proj.sum() - proj[k]
    return float(proj[k] / (leak + 1.0 / rho_k))


def max_aslnr(stats, k: int, rho_k: float, cfg: UpaConfig) -> float:
    v, gammas = _stats_arrays(stats, cfg)
    sol = _regularized_solve(v, gammas, _check_rho(rho_k), v[k][:, None])[:, 0]
    quad = np.vdot(v[k], sol).real
    return float(1.0 / (1.0 - gammas[k] * quad) - 1.0)


def asinr_receiver(stats, k: int, rho_ul: float, cfg: UpaConfig) -> np.ndarray:
    """ASINR-maximizing UL receiver of user ``k`` with the UL direction taken as ``v_k``."""
    u, gammas = _stats_arrays(stats, cfg)
    return _regularized_solve(u, gammas, _check_rho(rho_ul), u[k][:, None])[:, 0].conj()


def asinr_of(w, stats, k: int, rho_ul: float, cfg: UpaConfig) -> float:
    u, gammas = _stats_arrays(stats, cfg)
    w = np.asarray(w)
    proj = gammas * np.abs(u @ w) ** 2
    interf = proj.sum() - proj[k]
    return float(proj[k] / (interf + np.vdot(w, w).real / rho_ul))


def max_asinr(stats, k: int, rho_ul: float, cfg: UpaConfig) -> float:
    return max_aslnr(stats, k, rho_ul, cfg)


def mf_limit(stats, k: int, cfg: UpaConfig) -> tuple[np.ndarray, np.ndarray]:
    """Matched-filter limit: ``b = v_k^*`` and ``w = u_k^*``."""
    v = directions_of([stats[k]], cfg)[0].conj()
    return v, v.copy()


def dft_grid_index(angle: float, m: int) -> int:
    """Nearest node ``n`` of the grid ``-1 + 2n/m``, ``n`` in ``[0, m-1]``.

    Exact half-way points go to the lower node; angles past the last node clamp
    to it rather than wrapping to node 0.
    """
    x = (angle + 1.0) * m / 2.0
    n = math.ceil(x - 0.5)
    return min(max(n, 0), m - 1)


def dft_fixed(cfg: UpaConfig, angles: SpaceAngles):
    """DFT fixed precoder and receiver at the grid node nearest to ``angles``.

    Returns ``(b, w, (n_x, n_y))``.
    """
    n_x = dft_grid_index(angles.theta_x, cfg.m_x)
    n_y = dft_grid_index(angles.theta_y, cfg.m_y)
    grid = upa_responses(cfg, -1.0 + 2.0 * n_x / cfg.m_x, -1.0 + 2.0 * n_y / cfg.m_y)[0]
    b = grid.conj()
    return b, b.copy(), (n_x, n_y)


def duality_gap(stats, k: int, rho_dl_k: float, rho_ul: float, cfg: UpaConfig) -> float:
    """``1 - |<b_k, w_k/||w_k||>|`` between the ASLNR precoder and ASINR receiver."""
    b = aslnr_precoder(stats, k, rho_dl_k, cfg)
    w = asinr_receiver(stats, k, rho_ul, cfg)
    return float(1.0 - abs(np.vdot(b, w / np.linalg.norm(w))))
