"""Ergodic sum rates by Monte Carlo, with the interference-free upper bound
and the epsilon-based lower bound.

All SNRs are in ratio form (noise power 1). Gains are drawn per trial from a
substream keyed by ``(seed, trial)`` and indexed by user id, so every
strategy and both bounds evaluated with the same seed see the same draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .channel import SpaceAngles, UpaConfig, UserChannelStats, rician_moments, sample_gain, substream, upa_responses
from .grouping import GroupAssignment, epsilon_of
from .txrx import LinkBudget, aslnr_precoders, asinr_receivers, dft_grid_index, directions_of

__all__ = [
    "DL_STRATEGIES",
    "UL_STRATEGIES",
    "RateEstimate",
    "BoundConstants",
    "RateReport",
    "InequalityCheck",
    "DiagnosticReport",
    "gain_power_chunks",
    "evaluate_rates",
    "ergodic_sum_rate_mc",
    "rate_upper_bound_mc",
    "rate_lower_bound_mc",
    "ul_sum_rate_mc",
    "bound_constants",
    "appendix_diagnostics",
    "scsi_estimate",
    "estimate_population",
    "dft_directions",
]

DL_STRATEGIES = ("scsi", "scsi-est", "icsi", "mf", "dft")
UL_STRATEGIES = DL_STRATEGIES
_ALIASES = {
    "scsi-aslnr": "scsi",
    "icsi-slnr": "icsi",
    "scsi-asinr": "scsi",
    "icsi-sinr": "icsi",
    "dft-fixed": "dft",
    "fixed": "dft",
}

GAIN_STREAM = 0
ESTIMATE_STREAM = 1
CHUNK = 64


def _canonical(strategy: str) -> str:
    s = strategy.lower()
    s = _ALIASES.get(s, s)
    if s not in DL_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    return s


class RateEstimate(NamedTuple):
    mean: float
    stderr: float


@dataclass(frozen=True)
class BoundConstants:
    epsilon: float
    k_max: int
    rho_max_dl: float
    rho_min_dl: float
    gamma_max: float
    gamma_min: float
    delta_dl: float
    chi_dl: float
    xi_dl: float
    beta_dl: dict = field(repr=False)

    @property
    def lower_bound_valid(self) -> bool:
        return self.delta_dl < 1.0


@dataclass(frozen=True)
class RateReport:
    """Monte Carlo sum rate of one strategy with both bounds on the same draws."""

    strategy: str
    mode: str
    r_mc: float
    stderr: float
    r_ub: float
    r_ub_stderr: float
    r_lb: float
    r_lb_stderr: float
    lower_bound_valid: bool
    per_group: dict
    constants: BoundConstants | None
    trials: int
    seed: int
    totals: np.ndarray = field(repr=False)
    ub_totals: np.ndarray = field(repr=False)
    lb_totals: np.ndarray | None = field(repr=False, default=None)


def _mean_stderr(totals: np.ndarray) -> RateEstimate:
    n = totals.size
    mean = math.fsum(totals) / n
    if n < 2:
        return RateEstimate(mean, 0.0)
    var = math.fsum((totals - mean) ** 2) / (n - 1)
    return RateEstimate(mean, math.sqrt(var / n))


# -- random draws ----------------------------------------------------------------

def gain_power_chunks(stats: Sequence[UserChannelStats], seed: int, trials: int, chunk: int | None = None):
    """Yield ``(first_trial, |g|^2 array of shape (n, N))`` over all trials.

    Trial ``t`` draws ``2N`` normals from ``substream(seed, 0, t)``, so a trial's
    gains do not depend on the chunking. ``chunk`` defaults to the module-level
    ``CHUNK``.
    """
    chunk = CHUNK if chunk is None else chunk
    moments = np.array([rician_moments(s.gamma, s.kappa) for s in stats], dtype=float)
    means = np.ascontiguousarray(moments[:, 0])
    stds = np.ascontiguousarray(moments[:, 1])
    n = len(stats)
    for t0 in range(0, trials, chunk):
        t1 = min(t0 + chunk, trials)
        z = np.empty((t1 - t0, 2 * n))
        for t in range(t0, t1):
            z[t - t0] = substream(seed, GAIN_STREAM, t).standard_normal(2 * n)
        yield t0, kernels.rician_power(z, means, stds)


# -- per-group coefficients ----------------------------------------------------------

def dft_directions(angles: Sequence[SpaceAngles], cfg: UpaConfig) -> np.ndarray:
    """Grid-node directions ``v(theta_bar)`` for the DFT fixed precoder/receiver."""
    nx = np.array([dft_grid_index(a.theta_x, cfg.m_x) for a in angles])
    ny = np.array([dft_grid_index(a.theta_y, cfg.m_y) for a in angles])
    return upa_responses(cfg, -1.0 + 2.0 * nx / cfg.m_x, -1.0 + 2.0 * ny / cfg.m_y)


class _Group(NamedTuple):
    key: tuple
    idx: np.ndarray  # user ids
    v: np.ndarray  # (K, M) directions


def _groups(assignment: GroupAssignment, stats, cfg) -> list[_Group]:
    out = []
    for key, members in assignment.nonempty_groups():
        idx = np.asarray(members, dtype=int)
        out.append(_Group(key, idx, directions_of([stats[i] for i in idx], cfg)))
    return out


def _dl_precoders(strategy, grp: _Group, stats, design_stats, rho, cfg):
    if strategy == "mf":
        return grp.v.conj()
    if strategy == "dft":
        return dft_directions([stats[i].angles for i in grp.idx], cfg).conj()
    source = design_stats if strategy == "scsi-est" else stats
    gammas = np.array([source[i].gamma for i in grp.idx])
    return aslnr_precoders(grp.v, gammas, rho)


def _ul_receivers(strategy, grp: _Group, stats, design_stats, rho_ul, cfg):
    if strategy == "mf":
        return grp.v.conj()
    if strategy == "dft":
        return dft_directions([stats[i].angles for i in grp.idx], cfg).conj()
    source = design_stats if strategy == "scsi-est" else stats
    gammas = np.array([source[i].gamma for i in grp.idx])
    return asinr_receivers(grp.v, gammas, rho_ul)


def _dl_coefficients(v, precoders, rho):
    """Signal and interference coefficients: SINR_k = x a_k / (x c_k + 1)."""
    p = np.abs(v @ precoders.T) ** 2  # p[k, i] = |v_k^T b_i|^2
    weighted = p * rho[None, :]
    a = np.diag(weighted).copy()
    c = weighted.sum(axis=1) - a
    return a, c


# -- iCSI and UL batch formulas ---------------------------------------------------

def _batched_resolvent(gram, xs, c):
    """``T = (D G D + c I)^{-1}`` per trial, ``D = diag(sqrt(x))``."""
    d = np.sqrt(xs)
    s = d[:, :, None] * gram[None, :, :] * d[:, None, :]
    k = gram.shape[0]
    s[:, np.arange(k), np.arange(k)] += c
    return np.linalg.inv(s)


def _icsi_dl_rates(gram, xs, rho):
    """Per-trial DL rates of the SLNR precoders built from the drawn gains."""
    n, k = xs.shape
    sig = np.empty((n, k))
    cross = np.empty((n, k, k))  # cross[:, k, i]: power of precoder i at user k
    for value in np.unique(rho):
        cols = np.flatnonzero(rho == value)
        c = 1.0 / value
        t = _batched_resolvent(gram, xs, c)
        tc = t[:, :, cols]
        norm2 = np.real(t[:, cols, cols]) - c * np.sum(np.abs(tc) ** 2, axis=1)
        diag = np.real(t[:, cols, cols])
        sig[:, cols] = (1.0 - c * diag) ** 2 / norm2
        cross[:, :, cols] = (c * c) * np.abs(tc) ** 2 / norm2[:, None, :]
    rows = np.arange(k)
    cross[:, rows, rows] = 0.0
    interf = np.einsum("nki,i->nk", cross, rho)
    return np.log2(1.0 + rho * sig / (interf + 1.0))


def _icsi_ul_rates(gram, xs, rho_ul):
    """Per-trial UL rates of the SINR-maximizing receivers."""
    c = 1.0 / rho_ul
    t = _batched_resolvent(gram, xs, c)
    k = xs.shape[1]
    rows = np.arange(k)
    diag = np.real(t[:, rows, rows])
    sq = np.abs(t) ** 2
    norm2 = diag - c * sq.sum(axis=1)
    sig = (1.0 - c * diag) ** 2
    sq[:, rows, rows] = 0.0
    interf = (c * c) * sq.sum(axis=1) + c * norm2
    return np.log2(1.0 + sig / interf)


def _fixed_ul_rates(q, xs, rho_ul):
    """UL rates for receivers ``w`` with ``q[k, i] = |w_k^T v_i|^2``; noise from ``q`` norms."""
    sig_coef, cross, noise = q
    interf = xs @ cross.T + noise / rho_ul
    return np.log2(1.0 + xs * sig_coef / interf)


# -- bounds ----------------------------------------------------------------------

def bound_constants(assignment: GroupAssignment, stats, budget: LinkBudget, cfg: UpaConfig) -> BoundConstants:
    """Lower-bound constants from the measured in-group epsilon."""
    ids = [uid for uid in assignment.user_ids]
    rho = np.array([budget.rho_dl[i] for i in ids])
    gam = np.array([stats[i].gamma for i in ids])
    eps = epsilon_of(assignment, cfg)
    k_max = assignment.k_max
    return _constants(eps, k_max, rho, gam, assignment, stats, budget)


def _constants(eps, k_max, rho, gam, assignment, stats, budget) -> BoundConstants:
    rho_max, rho_min = float(rho.max()), float(rho.min())
    g_max, g_min = float(gam.max()), float(gam.min())
    km1 = k_max - 1
    chi = 1.0 / (1.0 / (rho_min * g_min) + 1.0 + km1 * eps)
    delta = (rho_max * g_max) ** 2 * km1**2 * eps**2 / chi
    xi = 1.0 / (1.0 / rho_min + g_max + g_max * km1 * eps) ** 2
    beta = {}
    if km1 > 0 and assignment is not None:
        scale = (rho_max * g_max) ** 4 * km1**2 * eps**2
        for key, members in assignment.nonempty_groups():
            if len(members) < 2:
                continue
            r = np.array([budget.rho_dl[i] for i in members])
            g = np.array([stats[i].gamma for i in members])
            b = scale / (r[:, None] * g[None, :] * g[:, None]) ** 2
            np.fill_diagonal(b, 0.0)
            beta[key] = b
    return BoundConstants(eps, k_max, rho_max, rho_min, g_max, g_min, delta, chi, xi, beta)


def _lb_coefficients(constants: BoundConstants, key, idx, budget):
    rho = np.array([budget.rho_dl[i] for i in idx])
    if not constants.lower_bound_valid:
        return np.zeros_like(rho), np.zeros_like(rho)
    a = (1.0 - constants.delta_dl) * rho
    beta = constants.beta_dl.get(key)
    if beta is None:
        return a, np.zeros_like(rho)
    c = (beta / constants.xi_dl) @ rho
    return a, c


# -- the evaluator ----------------------------------------------------------------

def evaluate_rates(
    assignment: GroupAssignment,
    stats: Sequence[UserChannelStats],
    budget: LinkBudget,
    cfg: UpaConfig,
    strategies: Sequence[str] = ("scsi",),
    trials: int = 2000,
    seed: int = 0,
    mode: str = "dl",
    design_stats: Sequence[UserChannelStats] | None = None,
    constants: BoundConstants | None = None,
    lower_bound: bool = True,
) -> dict[str, RateReport]:
    """Evaluate several strategies and both bounds on one set of gain draws.

    ``design_stats`` are the (estimated) statistics the ``scsi-est`` strategy
    designs with; rates are always evaluated on draws from ``stats``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if assignment.n_slots < 1:
        raise ValueError("assignment has no slots")
    if mode not in ("dl", "ul"):
        raise ValueError(f"mode must be 'dl' or 'ul', got {mode!r}")
    strategies = [_canonical(s) for s in strategies]
    if "scsi-est" in strategies and design_stats is None:
        raise ValueError("the scsi-est strategy needs design_stats")

    n = len(stats)
    groups = _groups(assignment, stats, cfg)
    weight = np.zeros(n)
    for grp in groups:
        weight[grp.idx] = assignment.prefactor
    rho_dl = np.asarray(budget.rho_dl, dtype=float)
    if rho_dl.size == 1:
        rho_dl = np.full(n, rho_dl[0])
    rho_ul = budget.rho_ul

    fixed = {}  # strategy -> (a, c) over all users
    ul_fixed = {}  # strategy -> per-group (sig, cross, noise)
    gram = {}
    if any(s == "icsi" for s in strategies):
        gram = {grp.key: grp.v.conj() @ grp.v.T for grp in groups}

    for s in strategies:
        if s == "icsi":
            continue
        if mode == "dl":
            a, c = np.zeros(n), np.zeros(n)
            for grp in groups:
                rho = rho_dl[grp.idx]
                pre = _dl_precoders(s, grp, stats, design_stats, rho, cfg)
                a[grp.idx], c[grp.idx] = _dl_coefficients(grp.v, pre, rho)
            fixed[s] = (a, c)
        else:
            per = {}
            for grp in groups:
                w = _ul_receivers(s, grp, stats, design_stats, rho_ul, cfg)
                q = np.abs(w @ grp.v.T) ** 2  # q[k, i] = |w_k^T v_i|^2
                sig = np.diag(q).copy()
                np.fill_diagonal(q, 0.0)
                per[grp.key] = (sig, q, np.sum(np.abs(w) ** 2, axis=1))
            ul_fixed[s] = per

    rho_bound = rho_dl if mode == "dl" else np.full(n, rho_ul)
    ub_coef = (np.where(weight > 0, rho_bound, 0.0), np.zeros(n))
    lb_coef = None
    if mode == "dl" and lower_bound:
        if constants is None:
            constants = bound_constants(assignment, stats, budget, cfg)
        a, c = np.zeros(n), np.zeros(n)
        for grp in groups:
            a[grp.idx], c[grp.idx] = _lb_coefficients(constants, grp.key, grp.idx, budget)
        lb_coef = (a, c)

    totals = {s: np.empty(trials) for s in strategies}
    user_sums = {s: np.zeros(n) for s in strategies}
    ub_totals = np.empty(trials)
    lb_totals = np.empty(trials) if lb_coef is not None else None

    for t0, x in gain_power_chunks(stats, seed, trials):
        sl = slice(t0, t0 + x.shape[0])
        ub_totals[sl], _ = kernels.fixed_rate_sums(x, *ub_coef, weight)
        if lb_coef is not None:
            lb_totals[sl], _ = kernels.fixed_rate_sums(x, *lb_coef, weight)
        for s in strategies:
            if s in fixed:
                tot, us = kernels.fixed_rate_sums(x, *fixed[s], weight)
                totals[s][sl] = tot
                user_sums[s] += us
                continue
            tot = np.zeros(x.shape[0])
            for grp in groups:
                xs = x[:, grp.idx]
                if s == "icsi" and mode == "dl":
                    r = _icsi_dl_rates(gram[grp.key], xs, rho_dl[grp.idx])
                elif s == "icsi":
                    r = _icsi_ul_rates(gram[grp.key], xs, rho_ul)
                else:
                    r = _fixed_ul_rates(ul_fixed[s][grp.key], xs, rho_ul)
                tot += r.sum(axis=1) * assignment.prefactor
                user_sums[s][grp.idx] += r.sum(axis=0)
            totals[s][sl] = tot

    ub = _mean_stderr(ub_totals)
    lb = _mean_stderr(lb_totals) if lb_totals is not None else RateEstimate(math.nan, math.nan)
    reports = {}
    for s in strategies:
        est = _mean_stderr(totals[s])
        per_group = {grp.key: float(user_sums[s][grp.idx].sum() / trials) for grp in groups}
        reports[s] = RateReport(
            strategy=s,
            mode=mode,
            r_mc=est.mean,
            stderr=est.stderr,
            r_ub=ub.mean,
            r_ub_stderr=ub.stderr,
            r_lb=lb.mean,
            r_lb_stderr=lb.stderr,
            lower_bound_valid=bool(constants.lower_bound_valid) if constants is not None else False,
            per_group=per_group,
            constants=constants,
            trials=trials,
            seed=seed,
            totals=totals[s],
            ub_totals=ub_totals,
            lb_totals=lb_totals,
        )
    return reports


def ergodic_sum_rate_mc(assignment, stats, budget, strategy, trials, seed, cfg, design_stats=None) -> RateReport:
    """DL ergodic sum rate of one strategy, bounds included, as a :class:`RateReport`."""
    s = _canonical(strategy)
    return evaluate_rates(assignment, stats, budget, cfg, [s], trials, seed, "dl", design_stats)[s]


def ul_sum_rate_mc(assignment, stats, budget, strategy, trials, seed, cfg, design_stats=None) -> RateReport:
    """UL ergodic sum rate of one receiver strategy."""
    s = _canonical(strategy)
    return evaluate_rates(assignment, stats, budget, cfg, [s], trials, seed, "ul", design_stats)[s]


def rate_upper_bound_mc(assignment, stats, budget, trials, seed) -> RateEstimate:
    """Interference-free bound: prefactor times the sum of ``E[log2(1 + rho_k |g_k|^2)]``."""
    n = len(stats)
    weight = np.zeros(n)
    rho = np.zeros(n)
    for _, members in assignment.nonempty_groups():
        idx = np.asarray(members)
        weight[idx] = assignment.prefactor
        rho[idx] = [budget.rho_dl[i] for i in idx]
    totals = np.empty(trials)
    for t0, x in gain_power_chunks(stats, seed, trials):
        totals[t0 : t0 + x.shape[0]], _ = kernels.fixed_rate_sums(x, rho, np.zeros(n), weight)
    return _mean_stderr(totals)


class LowerBoundEstimate(NamedTuple):
    mean: float
    stderr: float
    valid: bool


def rate_lower_bound_mc(assignment, stats, budget, constants: BoundConstants, trials, seed) -> LowerBoundEstimate:
    """Lower bound on the sCSI sum rate; 0 and ``valid=False`` when ``delta >= 1``."""
    n = len(stats)
    if not constants.lower_bound_valid:
        return LowerBoundEstimate(0.0, 0.0, False)
    weight, a, c = np.zeros(n), np.zeros(n), np.zeros(n)
    for key, members in assignment.nonempty_groups():
        idx = np.asarray(members)
        weight[idx] = assignment.prefactor
        a[idx], c[idx] = _lb_coefficients(constants, key, idx, budget)
    totals = np.empty(trials)
    for t0, x in gain_power_chunks(stats, seed, trials):
        totals[t0 : t0 + x.shape[0]], _ = kernels.fixed_rate_sums(x, a, c, weight)
    est = _mean_stderr(totals)
    return LowerBoundEstimate(est.mean, est.stderr, True)


# -- diagnostics -------------------------------------------------------------------

class InequalityCheck(NamedTuple):
    name: str
    passed: bool
    slack: float  # smallest (bound - measured); negative means violated


@dataclass(frozen=True)
class DiagnosticReport:
    checks: tuple
    epsilon: float
    k_max: int
    delta: float

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def lower_bound_flag(self) -> bool:
        """True when ``delta >= 1`` and the lower bound degenerates."""
        return self.delta >= 1.0

    def __getitem__(self, name) -> InequalityCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def appendix_diagnostics(
    group_stats: Sequence[UserChannelStats],
    rho_dl,
    cfg: UpaConfig,
    constants: BoundConstants | None = None,
    rtol: float = 1e-9,
) -> DiagnosticReport:
    """Check the eigenvalue and inverse-entry inequalities behind the lower bound.

    Works on ``B = Gamma^{-1}/rho_k + V^H V`` of one group. Without
    ``constants`` the epsilon, K_max and SNR/power extremes come from the group
    itself. Checks, each with its smallest slack:

    ``gersgorin``     every eigenvalue of B within (K_max-1)eps of a diagonal entry
    ``offdiag``       ``|[B^{-1}]_{k,i}| <= (rho_max gamma_max)^2 (K_max-1) eps``
    ``norm``          ``||b_k||^2 >= xi(eps)`` for the unnormalized precoder
    ``diag``          ``[B^{-1}]_{k,k} >= chi(eps)``
    ``alignment``     ``|v_k^H b_k|^2 / ||b_k||^2 >= 1 - delta(eps)``

    Violations are reported, never raised.
    """
    k = len(group_stats)
    v = directions_of(group_stats, cfg)
    gam = np.array([s.gamma for s in group_stats])
    rho = np.broadcast_to(np.asarray(rho_dl, dtype=float), gam.shape)
    gram = v.conj() @ v.T
    if constants is None:
        off = np.abs(gram - np.diag(np.diag(gram)))
        eps = float(off.max()) if k > 1 else 0.0
        constants = _constants(eps, k, rho, gam, None, None, None)
    eps, km1 = constants.epsilon, constants.k_max - 1
    radius = km1 * eps
    offdiag_bound = (constants.rho_max_dl * constants.gamma_max) ** 2 * km1 * eps

    def tol(x):
        return rtol * max(1.0, abs(x))

    slack = {"gersgorin": math.inf, "offdiag": math.inf, "norm": math.inf, "diag": math.inf, "alignment": math.inf}
    passed = dict.fromkeys(slack, True)

    def record(name, bound, measured, upper=True):
        s = bound - measured if upper else measured - bound
        slack[name] = min(slack[name], s)
        if s < -tol(bound):
            passed[name] = False

    for value in np.unique(rho):
        members = np.flatnonzero(rho == value)
        b = np.diag(1.0 / (value * gam)).astype(complex) + gram
        eig = np.linalg.eigvalsh(b)
        diag_b = np.real(np.diag(b))
        for lam in eig:
            record("gersgorin", radius, float(np.min(np.abs(lam - diag_b))))
        binv = np.linalg.inv(b)
        cov = v.T @ (gam[:, None] * v.conj())
        cov[np.diag_indices(cfg.m)] += 1.0 / value
        sol = cho_solve(cho_factor(cov, lower=True), v[members].T)
        for j, kk in enumerate(members):
            others = np.delete(np.abs(binv[kk]), kk)
            if others.size:
                record("offdiag", offdiag_bound, float(others.max()))
            record("diag", constants.chi_dl, float(np.real(binv[kk, kk])), upper=False)
            bk = sol[:, j]
            norm2 = float(np.vdot(bk, bk).real)
            record("norm", constants.xi_dl, norm2, upper=False)
            ratio = abs(np.vdot(v[kk], bk)) ** 2 / norm2
            record("alignment", 1.0 - constants.delta_dl, ratio, upper=False)

    checks = tuple(InequalityCheck(name, passed[name], float(slack[name])) for name in slack)
    return DiagnosticReport(checks, eps, constants.k_max, constants.delta_dl)


# -- sCSI estimation ----------------------------------------------------------------

KAPPA_CLIP = 1e6


def scsi_estimate(gain_samples, true_angles: SpaceAngles) -> UserChannelStats:
    """Sample-average channel power and moment-matched Rician factor.

    The angles are passed through unchanged.
    """
    g = np.asarray(gain_samples, dtype=complex).ravel()
    if g.size == 0:
        raise ValueError("need at least one gain sample")
    gamma_hat = float(np.mean(np.abs(g) ** 2))
    if not gamma_hat > 0:
        raise ValueError("estimated channel power is zero")
    mu2 = float(abs(np.mean(g)) ** 2)
    scatter = gamma_hat - mu2
    kappa_hat = KAPPA_CLIP if scatter <= 0 else min(max(mu2 / scatter, 0.0), KAPPA_CLIP)
    return UserChannelStats(true_angles, gamma_hat, kappa_hat)


def estimate_population(stats: Sequence[UserChannelStats], n_samples: int, seed: int) -> list[UserChannelStats]:
    """Estimated statistics for every user from ``n_samples`` independent gains each."""
    out = []
    for uid, s in enumerate(stats):
        rng = substream(seed, ESTIMATE_STREAM, uid)
        out.append(scsi_estimate(sample_gain(s, rng, n_samples), s.angles))
    return out
