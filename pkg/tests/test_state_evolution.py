import math

import numpy as np
import pytest

from amptune.problem_gen import SignalPrior
from amptune.shrinkage import scalar_risk
from amptune.state_evolution import (
    ExplicitSequence,
    FixedChi,
    NonConvergence,
    OptimalGreedy,
    SeConfig,
    active_fraction_quad,
    admissible_chi_grid,
    chi_for_lambda,
    greedy_fixed_point,
    greedy_optimal_taus,
    initial_sigma,
    joint_grid_search,
    lambda_path,
    maximin_chi,
    noiseless_fixed_points,
    phase_transition_rho,
    psi,
    se_fixed_point,
    se_recovers,
    se_step,
    se_trace,
)

PRIOR = SignalPrior.point_mass(1.0, 0.25 * 0.85)
CFG = SeConfig(PRIOR, 0.85, 0.2)


def test_se_step_identity_denoiser():
    s = 0.7
    assert se_step(s, 0.0, CFG) ** 2 == pytest.approx(0.04 + s * s / 0.85, rel=1e-14)


def test_se_step_kills_pure_noise():
    cfg = SeConfig(SignalPrior.zero(), 0.5, 0.0)
    assert se_step(1.0, 40.0, cfg) < 1e-100


def test_initial_sigma_conventions():
    assert initial_sigma(CFG, include_noise=False) == pytest.approx(math.sqrt(0.25))
    assert initial_sigma(CFG) == pytest.approx(math.sqrt(0.25 + 0.04))


def test_trace_bounded_below_by_noise():
    tr = se_trace(CFG.with_policy(FixedChi(1.5)), 30)
    assert all(s >= 0.2 for s in tr.sigmas)
    assert len(tr.taus) == 30 and tr.taus[0] == pytest.approx(1.5 * tr.sigmas[0])


def test_explicit_sequence_holds_last_value():
    pol = ExplicitSequence((0.5, 0.2))
    assert [pol.tau(t, 1.0) for t in range(4)] == [0.5, 0.2, 0.2, 0.2]
    with pytest.raises(ValueError):
        ExplicitSequence(())
    with pytest.raises(ValueError):
        FixedChi(-1.0)


def test_fixed_point_zero_prior():
    cal = se_fixed_point(SeConfig(SignalPrior.zero(), 0.5, 0.3), chi=8.0)
    assert cal.sigma_hat == pytest.approx(0.3, rel=1e-12)
    assert cal.mse < 1e-12


def test_chi_zero_diverges_below_delta_one():
    with pytest.raises(NonConvergence):
        se_fixed_point(CFG, chi=0.0)


def test_fixed_point_methods_agree_and_solve_the_equation():
    for chi in (0.8, 1.5, 3.0):
        a = se_fixed_point(CFG, chi)
        b = se_fixed_point(CFG, chi, method="bracket")
        assert a.sigma_hat == pytest.approx(b.sigma_hat, rel=1e-9)
        assert psi(a.sigma_hat**2, chi, CFG) == pytest.approx(a.sigma_hat**2, abs=1e-11)
        assert a.lam == pytest.approx(chi * a.sigma_hat * (1 - a.active_fraction / 0.85), rel=1e-12)


def test_fixed_point_unique_from_two_starts():
    from amptune.state_evolution import _fixed_point_iterate

    s0 = initial_sigma(CFG, include_noise=False) ** 2
    for chi in (1.0, 2.0):
        a = _fixed_point_iterate(chi, CFG, s0, 1e-14, 10_000)
        b = _fixed_point_iterate(chi, CFG, 100 * s0, 1e-14, 10_000)
        assert math.sqrt(a) == pytest.approx(math.sqrt(b), abs=1e-10)


def test_psi_midpoint_concave():
    s = np.linspace(1e-3, 3, 300)
    v = np.array([psi(x, 1.3, CFG) for x in s])
    mid = np.array([psi(x, 1.3, CFG) for x in 0.5 * (s[:-2] + s[2:])])
    assert np.all(mid >= 0.5 * (v[:-2] + v[2:]) - 1e-10)


def test_noiseless_fixed_points_include_zero():
    cfg = SeConfig(PRIOR, 0.85, 0.0)
    roots = noiseless_fixed_points(1.5, cfg)
    assert roots[0] == 0.0
    for r in roots[1:]:
        assert psi(r, 1.5, cfg) == pytest.approx(r, rel=1e-10)


def test_active_fraction_two_ways():
    for chi in (0.7, 1.4, 2.5):
        cal = se_fixed_point(CFG, chi)
        assert active_fraction_quad(CFG, cal) == pytest.approx(cal.active_fraction, abs=1e-10)


@pytest.mark.parametrize("cfg", [CFG, SeConfig(PRIOR, 0.85, 0.5), SeConfig(SignalPrior.point_mass(1.0, 0.02), 0.2, 0.1)])
def test_lambda_path_properties(cfg):
    path = lambda_path(cfg, admissible_chi_grid(cfg, 200))
    assert len(path.calibrations) == 200 and not path.excluded
    assert path.lambda_increasing()
    assert path.active_strictly_decreasing()
    assert np.all(path.active_fraction <= cfg.delta)
    assert path.mse_sign_changes() == 1


def test_lambda_path_flags_excluded_points():
    path = lambda_path(CFG, np.geomspace(1e-2, 10, 50))
    reasons = {r.split(":")[0] for _, r in path.excluded}
    assert path.excluded and reasons <= {"lambda <= 0", "nonconvergence"}
    assert np.all(path.lam > 0)


def test_calibration_round_trip():
    grid = admissible_chi_grid(CFG, 40)
    for chi in grid[5::7]:
        lam = se_fixed_point(CFG, chi).lam
        back = chi_for_lambda(CFG, lam, grid[0], grid[-1])
        assert back.chi == pytest.approx(chi, rel=1e-8)


def test_mse_minimum_moves_with_noise():
    best = {}
    for sw in (0.4, 2.0):
        cfg = SeConfig(PRIOR, 0.85, math.sqrt(sw))
        path = lambda_path(cfg, admissible_chi_grid(cfg, 100))
        best[sw] = path.lam[int(np.argmin(path.mse))]
    assert best[2.0] > best[0.4]


def test_greedy_beats_explicit_sequences():
    greedy = greedy_optimal_taus(CFG, 5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        seq = ExplicitSequence(tuple(rng.uniform(0, 2, 5)))
        tr = se_trace(CFG.with_policy(seq), 5)
        assert np.all(np.array(greedy.sigmas) <= np.array(tr.sigmas) + 1e-15)


def test_greedy_monotone_noiseless():
    tr = greedy_optimal_taus(SeConfig(PRIOR, 0.85, 0.0), 40)
    assert np.all(np.diff(tr.sigmas) <= 0)


def test_greedy_vs_small_joint_grid():
    grid = np.linspace(0.05, 2.0, 8)
    best, _ = joint_grid_search(CFG, [grid] * 2)
    assert greedy_optimal_taus(CFG, 2).sigmas[-1] <= best + 1e-12


def test_greedy_fixed_point_converges():
    tr = greedy_fixed_point(CFG)
    assert tr.converged
    s = tr.fixed_point_sigma
    assert s == pytest.approx(tr.sigmas[-1], rel=1e-6)
    assert OptimalGreedy().tau(0, s, PRIOR) > 0


def test_maximin_chi_and_transition():
    chi = maximin_chi(0.85)
    assert 0 < chi < 6
    rho_star = phase_transition_rho(chi, 0.85)
    for c in np.linspace(0.1, 4.0, 20):
        assert phase_transition_rho(c, 0.85) <= rho_star + 1e-12
    # the slope condition agrees with brute-force noiseless SE either side of the edge
    assert se_recovers(chi, 0.85, 0.97 * rho_star)
    assert not se_recovers(chi, 0.85, 1.03 * rho_star)


def test_phase_transition_limits():
    assert phase_transition_rho(0.0, 0.5) == 0.0
    assert phase_transition_rho(50.0, 0.5) < 1e-3


def test_scalar_risk_is_used_on_the_sigma_channel():
    cal = se_fixed_point(CFG, 1.2)
    assert cal.mse == pytest.approx(scalar_risk(PRIOR, cal.sigma_hat, 1.2 * cal.sigma_hat), rel=1e-14)
    assert cal.as_row()["lambda"] == cal.lam
