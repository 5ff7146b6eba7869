import csv
import math

import numpy as np
import pytest

from amptune.amp import (
    AmpRunConfig,
    PolicyFromSe,
    SureTuned,
    amp_init,
    amp_run,
    amp_step,
    trajectory_rows,
    write_trajectory_csv,
)
from amptune.problem_gen import GenConfig, ProblemInstance, generate
from amptune.state_evolution import ExplicitSequence, FixedChi, OptimalGreedy, SeConfig, greedy_fixed_point
from amptune.sure import TunerConfig


@pytest.fixture(scope="module")
def noisy():
    return generate(GenConfig(2000, 0.85, 0.25, sigma_w=0.2, seed=4))


def test_init_state(noisy):
    s = amp_init(noisy)
    assert s.t == 0 and s.matvecs == 1 and s.active_count == 0
    assert np.all(s.beta == 0) and np.array_equal(s.z, noisy.y)
    assert s.sigma_hat**2 == pytest.approx(noisy.y @ noisy.y / noisy.n, rel=1e-14)
    np.testing.assert_allclose(s.pseudo_data, noisy.X.T @ noisy.y, atol=1e-12)


def test_zero_measurements_are_terminal():
    cfg = GenConfig(100, 0.5, 0.0)
    inst = generate(cfg)
    assert np.all(inst.y == 0)
    s = amp_init(inst)
    assert s.sigma_hat == 0 and s.terminal
    assert len(amp_run(inst)) == 1


def test_init_matches_se_start():
    inst = generate(GenConfig(10_000, 0.85, 0.25, seed=0))
    assert amp_init(inst, track_mse=False).sigma_hat == pytest.approx(0.5, rel=0.03)


def test_full_kill_step(noisy):
    s0 = amp_init(noisy)
    s1 = amp_step(s0, noisy, float(np.abs(s0.pseudo_data).max()))
    assert s1.active_count == 0 and np.all(s1.beta == 0)
    np.testing.assert_array_equal(s1.z, noisy.y)
    assert s1.matvecs == 3


def test_identity_step_orthonormal_design():
    rng = np.random.default_rng(0)
    p = 40
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    cfg = GenConfig(p, 1.0, 0.2)
    beta_o = np.zeros(p)
    beta_o[:8] = 1.0
    y = q @ beta_o
    inst = ProblemInstance(cfg, beta_o, q, np.zeros(p), y)
    s1 = amp_step(amp_init(inst), inst, 0.0)
    np.testing.assert_allclose(s1.beta, q.T @ y, atol=1e-12)


def test_onsager_coefficient_uses_fresh_support(noisy):
    s0 = amp_init(noisy)
    s1 = amp_step(s0, noisy, 1.0 * s0.sigma_hat)
    manual = noisy.y - noisy.X @ s1.beta + (np.count_nonzero(s1.beta) / noisy.n) * s0.z
    np.testing.assert_allclose(s1.z, manual, atol=1e-12)
    assert s1.active_count == np.count_nonzero(s1.beta)
    assert s1.active_count / noisy.n <= noisy.p / noisy.n


def test_negative_tau_rejected(noisy):
    with pytest.raises(ValueError):
        amp_step(amp_init(noisy), noisy, -1.0)


def test_run_is_deterministic(noisy):
    cfg = AmpRunConfig(max_iters=8, threshold_source=PolicyFromSe(FixedChi(1.3)))
    a, b = amp_run(noisy, cfg), amp_run(noisy, cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.beta, y.beta) and np.array_equal(x.z, y.z)


def test_two_products_per_step(noisy):
    traj = amp_run(noisy, AmpRunConfig(max_iters=6))
    assert [s.matvecs for s in traj] == [1 + 2 * t for t in range(7)]


def test_policy_sources(noisy):
    for pol in (FixedChi(1.5), OptimalGreedy(), ExplicitSequence((0.5, 0.3))):
        traj = amp_run(noisy, AmpRunConfig(max_iters=3, threshold_source=PolicyFromSe(pol)))
        assert len(traj) == 4 and all(math.isfinite(s.tau_used) for s in traj[1:])


def test_explicit_sequence_thresholds_are_used(noisy):
    traj = amp_run(noisy, AmpRunConfig(max_iters=3, threshold_source=PolicyFromSe(ExplicitSequence((0.5, 0.3)))))
    assert [s.tau_used for s in traj[1:]] == [0.5, 0.3, 0.3]


def test_early_stops(noisy):
    # a fixed-chi run settles; the SURE-tuned threshold keeps jittering at the 1e-6 level
    traj = amp_run(noisy, AmpRunConfig(max_iters=200, stop_rel_change=1e-8, threshold_source=PolicyFromSe(FixedChi(1.5))))
    assert len(traj) < 201
    inst = generate(GenConfig(1000, 0.85, 0.25, seed=0))
    traj = amp_run(inst, AmpRunConfig(max_iters=200, mse_tolerance=1e-3))
    assert traj[-1].mse < 1e-3 and len(traj) < 201


def test_noiseless_sure_recovery():
    inst = generate(GenConfig(2000, 0.85, 0.25, seed=0))
    traj = amp_run(inst, AmpRunConfig(max_iters=200, threshold_source=SureTuned(TunerConfig())))
    assert traj[-1].mse < 1e-6


def test_pseudo_data_noise_level_matches_sigma_hat():
    inst = generate(GenConfig(10_000, 0.85, 0.25, sigma_w=0.2, seed=1))
    traj = amp_run(inst, AmpRunConfig(max_iters=5, threshold_source=PolicyFromSe(FixedChi(1.5))))
    for s in traj:
        resid = s.pseudo_data - inst.beta_o
        assert np.std(resid) == pytest.approx(s.sigma_hat, rel=0.05)


@pytest.mark.slow
def test_sure_run_reaches_se_optimum():
    inst = generate(GenConfig(10_000, 0.85, 0.25, sigma_w=0.2, seed=0))
    traj = amp_run(inst, AmpRunConfig(max_iters=60, threshold_source=SureTuned(TunerConfig())))
    se = greedy_fixed_point(SeConfig(inst.config.asymptotic_prior(), 0.85, 0.2))
    sig = se.fixed_point_sigma
    target = (sig * sig - 0.04) * 0.85  # mse on the sigma channel: delta (sigma^2 - sigma_w^2)
    assert traj[-1].mse == pytest.approx(target, rel=0.05)


def test_trajectory_export(tmp_path, noisy):
    traj = amp_run(noisy, AmpRunConfig(max_iters=2))
    rows = trajectory_rows(traj)
    assert list(rows[0]) == ["t", "tau", "sigma_hat", "active_count", "mse"]
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    back = list(csv.DictReader(path.open()))
    assert len(back) == 3 and float(back[2]["sigma_hat"]) == pytest.approx(traj[2].sigma_hat)


def test_run_config_validation():
    with pytest.raises(ValueError):
        AmpRunConfig(max_iters=0)
    assert isinstance(AmpRunConfig().threshold_source, SureTuned)
