import math

import numpy as np
import pytest
from scipy import integrate, stats as sps

from leomimo.channel import SpaceAngles, UpaConfig, UserChannelStats, sample_gain
from leomimo.grouping import CellIndex, GroupAssignment, GroupingConfig, saug_assign
from leomimo.rate import (
    appendix_diagnostics,
    bound_constants,
    ergodic_sum_rate_mc,
    estimate_population,
    evaluate_rates,
    gain_power_chunks,
    rate_lower_bound_mc,
    rate_upper_bound_mc,
    scsi_estimate,
    ul_sum_rate_mc,
)
from leomimo.txrx import (
    LinkBudget,
    aslnr_precoders,
    asinr_receivers,
    directions_of,
    sinr_icsi_receiver,
    sinr_of,
    slnr_icsi_precoder,
)


def manual_assignment(angles, groups, n_slots=1, bandwidth=1.0):
    """Assignment with an explicit membership, bypassing the cell rules."""
    slot_of, cell_of = {}, {}
    for (slot, g, r), members in groups.items():
        for u in members:
            slot_of[u] = slot
            cell_of[u] = CellIndex(g, r, 0, 0)
    order = tuple(sorted(slot_of))
    return GroupAssignment(
        g_x=1,
        g_y=1,
        n_slots=n_slots,
        groups={k: tuple(v) for k, v in groups.items()},
        cell_of=cell_of,
        slot_of=slot_of,
        overflow={},
        angles_of=dict(enumerate(angles)),
        bandwidth_factor=bandwidth,
        _order=order,
    )


def grid_population(cfg, nodes, gamma, kappa):
    angles = [SpaceAngles(-1 + 2 * nx / cfg.m_x, -1 + 2 * ny / cfg.m_y) for nx, ny in nodes]
    return angles, [UserChannelStats(a, gamma, kappa) for a in angles]


def uniform_population(seed, cfg, g, gamma=None, kappa=10.0, n=None):
    rng = np.random.default_rng(seed)
    n = n or g * g * cfg.m
    angles = [SpaceAngles(*rng.uniform(-1, 1, 2)) for _ in range(n)]
    stats = [UserChannelStats(a, gamma or float(cfg.m), kappa) for a in angles]
    return saug_assign(enumerate(angles), cfg, GroupingConfig(g, g)), stats


def test_single_user_deterministic_gain():
    cfg = UpaConfig(4, 4)
    angles, stats = grid_population(cfg, [(1, 2)], 4.0, math.inf)
    asg = manual_assignment(angles, {(0, 0, 0): (0,)})
    rep = ergodic_sum_rate_mc(asg, stats, LinkBudget.uniform(1, 0.0), "mf", 10, 0, cfg)
    assert rep.r_mc == pytest.approx(math.log2(5), abs=1e-6)
    assert rate_upper_bound_mc(asg, stats, LinkBudget.uniform(1, 0.0), 10, 0).mean == pytest.approx(math.log2(5), abs=1e-6)


def test_orthogonal_group_strategies_collapse():
    cfg = UpaConfig(8, 8)
    angles, stats = grid_population(cfg, [(0, 0), (3, 5), (7, 1), (4, 4)], 64.0, 10.0)
    asg = saug_assign(enumerate(angles), cfg, GroupingConfig(1, 1))
    reps = evaluate_rates(asg, stats, LinkBudget.uniform(4, 5.0), cfg, ["scsi", "mf", "dft"], 400, 2)
    base = reps["mf"]
    for s in ("scsi", "dft"):
        assert abs(reps[s].r_mc - base.r_mc) <= 2 * math.hypot(reps[s].stderr, base.stderr) + 1e-12
    # Interference-free: the upper bound is achieved on the same draws.
    assert base.r_mc == pytest.approx(base.r_ub, rel=1e-12)


def test_two_colocated_users_quadrature():
    cfg = UpaConfig(4, 4)
    a = SpaceAngles(0.3, -0.2)
    gamma, kappa, rho = 2.0, 3.0, 1.5
    stats = [UserChannelStats(a, gamma, kappa)] * 2
    asg = manual_assignment([a, a], {(0, 0, 0): (0, 1)})
    rep = ergodic_sum_rate_mc(asg, stats, LinkBudget.uniform(2, 10 * math.log10(rho)), "mf", 20000, 5, cfg)
    # |g|^2 = s2 * X with X noncentral chi-square (2 dof, noncentrality 2 kappa)
    s2 = gamma / (2 * (kappa + 1))
    law = sps.ncx2(2, 2 * kappa, scale=s2)
    per_user, _ = integrate.quad(lambda x: math.log2(1 + x * rho / (x * rho + 1)) * law.pdf(x), 0, np.inf, limit=200)
    assert rep.r_mc == pytest.approx(2 * per_user, rel=0.01)
    single = math.log2(1 + rho * gamma)  # Jensen cap on a lone user's rate
    assert rep.r_mc < 2 * single


def test_upper_bound_dominates_paired():
    cfg = UpaConfig(8, 8)
    for seed in range(20):
        asg, stats = uniform_population(seed, cfg, 2, n=60)
        reps = evaluate_rates(asg, stats, LinkBudget.uniform(len(stats), 5.0), cfg, ["scsi", "mf", "dft"], 50, seed)
        for r in reps.values():
            assert np.all(r.totals <= r.ub_totals + 1e-12)


def test_upper_bound_function_matches_evaluator():
    cfg = UpaConfig(8, 8)
    asg, stats = uniform_population(1, cfg, 2, n=80)
    budget = LinkBudget.uniform(80, 3.0)
    rep = ergodic_sum_rate_mc(asg, stats, budget, "scsi", 100, 4, cfg)
    ub = rate_upper_bound_mc(asg, stats, budget, 100, 4)
    assert ub.mean == pytest.approx(rep.r_ub, rel=1e-12)
    assert ub.stderr == pytest.approx(rep.r_ub_stderr, rel=1e-9)


def test_per_group_breakdown_sums_to_total():
    cfg = UpaConfig(8, 8)
    asg, stats = uniform_population(2, cfg, 2, n=120)
    rep = ergodic_sum_rate_mc(asg, stats, LinkBudget.uniform(120, 0.0), "scsi", 64, 1, cfg)
    assert sum(rep.per_group.values()) * asg.prefactor == pytest.approx(rep.r_mc, rel=1e-10)


def test_stderr_and_order_insensitive_reduction():
    cfg = UpaConfig(4, 4)
    asg, stats = uniform_population(3, cfg, 1, n=16)
    rep = ergodic_sum_rate_mc(asg, stats, LinkBudget.uniform(16, 0.0), "scsi", 300, 1, cfg)
    assert rep.stderr == pytest.approx(np.std(rep.totals, ddof=1) / math.sqrt(300), rel=1e-9)
    perm = np.random.default_rng(0).permutation(rep.totals)
    assert math.fsum(perm) / 300 == pytest.approx(rep.r_mc, rel=1e-12)


def test_gain_draws_independent_of_chunking():
    stats = [UserChannelStats(SpaceAngles(0, 0), 3.0, k) for k in (0.0, 1.0, 10.0)]
    a = np.vstack([x for _, x in gain_power_chunks(stats, 9, 50, chunk=7)])
    b = np.vstack([x for _, x in gain_power_chunks(stats, 9, 50, chunk=64)])
    np.testing.assert_array_equal(a, b)


def test_icsi_matches_direct_per_trial():
    cfg = UpaConfig(4, 4)
    asg, stats = uniform_population(4, cfg, 1, n=10, gamma=16.0)
    budget = LinkBudget.uniform(10, 5.0)
    rho = budget.rho_dl[0]
    trials = 5
    rep = ergodic_sum_rate_mc(asg, stats, budget, "icsi", trials, 11, cfg)
    xs = np.vstack([x for _, x in gain_power_chunks(stats, 11, trials)])
    phases = np.exp(2j * np.pi * np.random.default_rng(0).random(xs.shape))
    for t in range(trials):
        total = 0.0
        for _, members in asg.nonempty_groups():
            idx = list(members)
            v = directions_of([stats[i] for i in idx], cfg)
            g = v * (np.sqrt(xs[t, idx]) * phases[t, idx])[:, None]
            b = np.array([slnr_icsi_precoder(g, k, rho) for k in range(len(idx))])
            p = np.abs(g @ b.T) ** 2
            for k in range(len(idx)):
                total += math.log2(1 + rho * p[k, k] / (rho * (p[k].sum() - p[k, k]) + 1))
        assert rep.totals[t] == pytest.approx(total * asg.prefactor, rel=1e-9)


def test_ul_fixed_and_icsi_match_direct():
    cfg = UpaConfig(4, 4)
    asg, stats = uniform_population(5, cfg, 1, n=10, gamma=16.0)
    budget = LinkBudget.uniform(10, 3.0)
    rho = budget.rho_ul
    trials = 4
    reps = evaluate_rates(asg, stats, budget, cfg, ["scsi", "icsi"], trials, 6, mode="ul")
    xs = np.vstack([x for _, x in gain_power_chunks(stats, 6, trials)])
    for t in range(trials):
        tot_s = tot_i = 0.0
        for _, members in asg.nonempty_groups():
            idx = list(members)
            v = directions_of([stats[i] for i in idx], cfg)
            g = v * np.sqrt(xs[t, idx])[:, None]
            w = asinr_receivers(v, [stats[i].gamma for i in idx], rho)
            for k in range(len(idx)):
                tot_s += math.log2(1 + sinr_of(w[k], g, k, rho))
                tot_i += math.log2(1 + sinr_of(sinr_icsi_receiver(g, k, rho), g, k, rho))
        assert reps["scsi"].totals[t] == pytest.approx(tot_s * asg.prefactor, rel=1e-9)
        assert reps["icsi"].totals[t] == pytest.approx(tot_i * asg.prefactor, rel=1e-9)


def test_scsi_fixed_matches_direct():
    cfg = UpaConfig(4, 4)
    asg, stats = uniform_population(6, cfg, 1, n=12, gamma=16.0)
    budget = LinkBudget.uniform(12, 0.0)
    rep = ergodic_sum_rate_mc(asg, stats, budget, "scsi", 3, 2, cfg)
    xs = np.vstack([x for _, x in gain_power_chunks(stats, 2, 3)])
    for t in range(3):
        total = 0.0
        for _, members in asg.nonempty_groups():
            idx = list(members)
            v = directions_of([stats[i] for i in idx], cfg)
            b = aslnr_precoders(v, [stats[i].gamma for i in idx], 1.0)
            g = v * np.sqrt(xs[t, idx])[:, None]
            p = np.abs(g @ b.T) ** 2
            for k in range(len(idx)):
                total += math.log2(1 + p[k, k] / (p[k].sum() - p[k, k] + 1))
        assert rep.totals[t] == pytest.approx(total * asg.prefactor, rel=1e-10)


def test_ul_dl_symmetry():
    cfg = UpaConfig(8, 8)
    asg, stats = uniform_population(7, cfg, 2)
    budget = LinkBudget.uniform(len(stats), 10.0)
    dl = ergodic_sum_rate_mc(asg, stats, budget, "scsi", 400, 3, cfg)
    ul = ul_sum_rate_mc(asg, stats, budget, "scsi", 400, 3, cfg)
    assert abs(dl.r_mc - ul.r_mc) <= 2 * math.hypot(dl.stderr, ul.stderr)


def test_bound_constants_zero_epsilon():
    cfg = UpaConfig(8, 8)
    angles, stats = grid_population(cfg, [(0, 0), (2, 3), (5, 5)], 64.0, 10.0)
    asg = saug_assign(enumerate(angles), cfg, GroupingConfig(1, 1))
    budget = LinkBudget.uniform(3, 10.0)
    c = bound_constants(asg, stats, budget, cfg)
    assert c.epsilon < 1e-12
    assert c.delta_dl < 1e-20
    assert all(np.all(b < 1e-20) for b in c.beta_dl.values())
    assert c.chi_dl == pytest.approx(1 / (1 / (10.0 * 64.0) + 1 + 2 * c.epsilon))


def test_bound_constants_single_user_groups():
    cfg = UpaConfig(4, 4)
    # flat cells 0 and 1 on both axes: groups (0, 0) and (1, 1)
    angles = [SpaceAngles(-0.99, -0.99), SpaceAngles(-0.96, -0.96)]
    stats = [UserChannelStats(a, 16.0, 10.0) for a in angles]
    asg = saug_assign(enumerate(angles), cfg, GroupingConfig(4, 4))
    assert asg.group_of(0) != asg.group_of(1)
    c = bound_constants(asg, stats, LinkBudget.uniform(2, 0.0), cfg)
    assert c.k_max == 1 and c.delta_dl == 0.0 and c.beta_dl == {}


def test_bound_constants_monotone_in_epsilon():
    from leomimo.rate import _constants

    angles = [SpaceAngles(-0.5, 0.0), SpaceAngles(0.0, 0.0), SpaceAngles(0.5, 0.5)]
    stats = [UserChannelStats(a, g, 1.0) for a, g in zip(angles, (1.0, 2.0, 3.0))]
    asg = manual_assignment(angles, {(0, 0, 0): (0, 1, 2)})
    budget = LinkBudget((1.0, 2.0, 3.0), 1.0)
    rho, gam = np.array(budget.rho_dl), np.array([s.gamma for s in stats])
    prev = None
    for eps in np.linspace(0, 0.2, 41):
        c = _constants(eps, 3, rho, gam, asg, stats, budget)
        assert c.chi_dl > 0 and c.xi_dl > 0
        if prev is not None:
            assert c.delta_dl >= prev.delta_dl
            assert np.all(c.beta_dl[(0, 0, 0)] >= prev.beta_dl[(0, 0, 0)])
        prev = c


def test_lower_bound_equals_upper_at_zero_epsilon():
    cfg = UpaConfig(8, 8)
    angles, stats = grid_population(cfg, [(0, 0), (2, 3), (5, 5), (7, 0)], 64.0, 10.0)
    asg = saug_assign(enumerate(angles), cfg, GroupingConfig(1, 1))
    budget = LinkBudget.uniform(4, 10.0)
    c = bound_constants(asg, stats, budget, cfg)
    lb = rate_lower_bound_mc(asg, stats, budget, c, 300, 8)
    ub = rate_upper_bound_mc(asg, stats, budget, 300, 8)
    assert lb.valid
    assert abs(lb.mean - ub.mean) <= 2 * math.hypot(lb.stderr, ub.stderr)


def test_lower_bound_single_user_groups_identical():
    cfg = UpaConfig(4, 4)
    angles = [SpaceAngles(-0.99, -0.99), SpaceAngles(-0.96, -0.96), SpaceAngles(-0.93, -0.99)]
    stats = [UserChannelStats(a, 16.0, 10.0) for a in angles]
    asg = saug_assign(enumerate(angles), cfg, GroupingConfig(4, 4))
    assert asg.k_max == 1
    budget = LinkBudget.uniform(3, 5.0)
    c = bound_constants(asg, stats, budget, cfg)
    lb = rate_lower_bound_mc(asg, stats, budget, c, 100, 1)
    ub = rate_upper_bound_mc(asg, stats, budget, 100, 1)
    assert lb.mean == pytest.approx(ub.mean, rel=1e-14)


def test_lower_bound_flag_when_delta_large():
    cfg = UpaConfig(4, 4)
    asg, stats = uniform_population(8, cfg, 1)
    budget = LinkBudget.uniform(len(stats), 10.0)
    c = bound_constants(asg, stats, budget, cfg)
    assert c.delta_dl >= 1
    lb = rate_lower_bound_mc(asg, stats, budget, c, 10, 1)
    assert lb == (0.0, 0.0, False)
    rep = ergodic_sum_rate_mc(asg, stats, budget, "scsi", 10, 1, cfg)
    assert rep.r_lb == 0.0 and not rep.lower_bound_valid


def test_sandwich_small_instance():
    cfg = UpaConfig(8, 8)
    angles, stats = grid_population(cfg, [(0, 0), (3, 2), (6, 6)], 1.0, 10.0)
    # Nudge off the grid so epsilon is small but positive.
    angles = [SpaceAngles(a.theta_x + 0.004, a.theta_y) for a in angles]
    stats = [UserChannelStats(a, 1.0, 10.0) for a in angles]
    asg = saug_assign(enumerate(angles), cfg, GroupingConfig(1, 1))
    budget = LinkBudget.uniform(3, 0.0)
    rep = ergodic_sum_rate_mc(asg, stats, budget, "scsi", 2000, 1, cfg)
    assert rep.lower_bound_valid and 0 < rep.constants.delta_dl < 1
    se_lo = math.hypot(rep.stderr, rep.r_lb_stderr)
    se_hi = math.hypot(rep.stderr, rep.r_ub_stderr)
    assert rep.r_lb <= rep.r_mc + 3 * se_lo
    assert rep.r_mc <= rep.r_ub + 3 * se_hi


def test_diagnostics_orthogonal():
    cfg = UpaConfig(8, 8)
    _, stats = grid_population(cfg, [(0, 0), (2, 3), (5, 5)], 64.0, 10.0)
    d = appendix_diagnostics(stats, 10.0, cfg)
    assert d.all_passed and d.epsilon < 1e-12 and not d.lower_bound_flag


def test_diagnostics_random_group():
    cfg = UpaConfig(8, 8)
    asg, stats = uniform_population(9, cfg, 2)
    key, members = max(asg.nonempty_groups(), key=lambda kv: len(kv[1]))
    members = members[:9]
    group = [stats[i] for i in members]
    d = appendix_diagnostics(group, 10.0, cfg)
    assert len(members) == 9
    assert d.all_passed, d.checks


def test_diagnostics_near_collinear_stress():
    cfg = UpaConfig(8, 8)
    a, b = SpaceAngles(0.1, 0.1), SpaceAngles(0.1 + 0.02, 0.1)
    group = [UserChannelStats(a, 64.0, 10.0), UserChannelStats(b, 64.0, 10.0)]
    d = appendix_diagnostics(group, 10.0, cfg)
    assert d.epsilon > 0.85
    assert d.all_passed
    assert d.lower_bound_flag


def test_diagnostics_uses_given_constants():
    cfg = UpaConfig(8, 8)
    asg, stats = uniform_population(10, cfg, 2)
    budget = LinkBudget.uniform(len(stats), 10.0)
    c = bound_constants(asg, stats, budget, cfg)
    for _, members in asg.nonempty_groups():
        d = appendix_diagnostics([stats[i] for i in members], 10.0, cfg, constants=c)
        assert d.all_passed
        assert d["gersgorin"].slack >= -1e-9


def test_scsi_estimate_los():
    g = sample_gain(UserChannelStats(SpaceAngles(0, 0), 256.0, math.inf), np.random.default_rng(0), 50)
    est = scsi_estimate(g, SpaceAngles(0.2, 0.3))
    assert est.gamma == pytest.approx(256.0, abs=1e-6)
    assert est.angles == SpaceAngles(0.2, 0.3)
    assert est.kappa == 1e6


def test_scsi_estimate_coverage():
    s = UserChannelStats(SpaceAngles(0, 0), 256.0, 10.0)
    rng = np.random.default_rng(1)
    hits = sum(abs(scsi_estimate(sample_gain(s, rng, 50), s.angles).gamma - 256) / 256 < 0.1 for _ in range(1000))
    assert hits >= 950


def test_scsi_estimate_coverage_matches_normal_approximation():
    # Relative spread of the sample mean of |g|^2 is sqrt((1 + 2 kappa) / (1 + kappa)^2 / n).
    kappa, n = 10.0, 50
    spread = math.sqrt((1 + 2 * kappa) / (1 + kappa) ** 2 / n)
    expected = 2 * sps.norm.cdf(0.1 / spread) - 1
    s = UserChannelStats(SpaceAngles(0, 0), 256.0, kappa)
    rng = np.random.default_rng(2)
    hits = np.mean([abs(scsi_estimate(sample_gain(s, rng, n), s.angles).gamma - 256) / 256 < 0.1 for _ in range(4000)])
    assert hits == pytest.approx(expected, abs=0.02)


def test_scsi_estimate_consistency():
    s = UserChannelStats(SpaceAngles(0, 0), 1.0, 0.0)
    errs = {}
    for n in (100, 400, 1600):
        rng = np.random.default_rng(n)
        errs[n] = np.sqrt(np.mean([(scsi_estimate(sample_gain(s, rng, n), s.angles).gamma - 1) ** 2 for _ in range(400)]))
    assert errs[400] / errs[100] == pytest.approx(0.5, rel=0.2)
    assert errs[1600] / errs[400] == pytest.approx(0.5, rel=0.2)


def test_scsi_estimate_rejects():
    with pytest.raises(ValueError):
        scsi_estimate([], SpaceAngles(0, 0))
    with pytest.raises(ValueError):
        scsi_estimate([0j, 0j], SpaceAngles(0, 0))


def test_estimated_design_close_to_true():
    cfg = UpaConfig(8, 8)
    asg, stats = uniform_population(12, cfg, 1)
    est = estimate_population(stats, 50, 3)
    reps = evaluate_rates(asg, stats, LinkBudget.uniform(len(stats), 10.0), cfg, ["scsi", "scsi-est"], 200, 1, design_stats=est)
    assert abs(reps["scsi-est"].r_mc - reps["scsi"].r_mc) / reps["scsi"].r_mc < 0.02


def test_rejects_bad_arguments():
    cfg = UpaConfig(4, 4)
    asg, stats = uniform_population(13, cfg, 1, n=4)
    budget = LinkBudget.uniform(4, 0.0)
    with pytest.raises(ValueError):
        ergodic_sum_rate_mc(asg, stats, budget, "scsi", 0, 1, cfg)
    with pytest.raises(ValueError):
        ergodic_sum_rate_mc(asg, stats, budget, "zf", 1, 1, cfg)
    with pytest.raises(ValueError):
        ergodic_sum_rate_mc(asg, stats, budget, "scsi-est", 1, 1, cfg)


def test_same_seed_same_numbers():
    cfg = UpaConfig(8, 8)
    asg, stats = uniform_population(14, cfg, 2, n=100)
    budget = LinkBudget.uniform(100, 5.0)
    a = ergodic_sum_rate_mc(asg, stats, budget, "icsi", 70, 3, cfg)
    b = ergodic_sum_rate_mc(asg, stats, budget, "icsi", 70, 3, cfg)
    assert a.r_mc == b.r_mc and a.stderr == b.stderr
