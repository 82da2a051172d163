import numpy as np
import pytest

from imrilab import baseline, kspace, metrics, simdata
from imrilab.baseline import GraspConfig, grasp_reconstruct, soft_threshold_complex, temporal_tv_prox

import oracles


def phantom_frames(size=24, n_frames=3, n_spokes=None, seed=5):
    ph = simdata.generate_reference_phantom(seed, size)
    spokes = n_spokes or kspace.nyquist_spokes(size)
    frames = []
    for t in range(n_frames):
        traj = kspace.golden_angle_trajectory(spokes, 2 * size, start_index=t * spokes)
        frames.append(kspace.nudft_forward(ph, traj))
    return ph, frames


class TestSoftThreshold:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            z = complex(rng.standard_normal(), rng.standard_normal())
            t = float(rng.uniform(0, 2))
            got = soft_threshold_complex(np.array([z]), t)[0]
            want = oracles.soft_threshold_scalar(z, t)
            assert got == pytest.approx(want, abs=1e-14)

    def test_zero_threshold_is_identity(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        assert np.array_equal(soft_threshold_complex(z, 0.0), z)

    def test_phase_preserved(self):
        z = np.array([3.0 * np.exp(1j * 0.7)])
        out = soft_threshold_complex(z, 1.0)
        assert np.angle(out[0]) == pytest.approx(0.7)
        assert abs(out[0]) == pytest.approx(2.0)


class TestTemporalTvProx:
    def test_zero_threshold_identity(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 6, 6)) + 1j * rng.standard_normal((4, 6, 6))
        assert np.array_equal(temporal_tv_prox(x, 0.0), x)

    def test_single_frame_identity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 6, 6)) + 1j * rng.standard_normal((1, 6, 6))
        assert np.array_equal(temporal_tv_prox(x, 0.5), x)

    def test_pair_shrinks_difference_and_keeps_direction(self):
        a = np.full((4, 4), 1.0 + 1.0j)
        d = 0.6 * np.exp(1j * 1.1)
        x = np.stack([a, a + d])
        out = temporal_tv_prox(x, 0.25)
        diff = out[1][0, 0] - out[0][0, 0]
        want = oracles.soft_threshold_scalar(d, 0.25)
        assert diff == pytest.approx(want, abs=1e-14)
        assert np.angle(diff) == pytest.approx(np.angle(d), abs=1e-12)
        assert np.allclose(out.mean(axis=0), x.mean(axis=0), atol=1e-14)

    def test_huge_threshold_flattens_sequence_to_its_mean(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 4, 4)) + 1j * rng.standard_normal((5, 4, 4))
        out = temporal_tv_prox(x, 1e6)
        mean = x.mean(axis=0)
        for t in range(5):
            assert np.allclose(out[t], mean)

    def test_temporal_mean_preserved(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((4, 5, 5)) + 1j * rng.standard_normal((4, 5, 5))
        out = temporal_tv_prox(x, 0.3)
        assert np.allclose(out.mean(axis=0), x.mean(axis=0), atol=1e-12)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            temporal_tv_prox(np.zeros((2, 2, 2), dtype=complex), -1.0)


class TestGraspReconstruct:
    def test_objective_trace_non_increasing(self):
        ph, frames = phantom_frames(size=24, n_spokes=6)
        cfg = GraspConfig(lam=5e-3, n_iter=25)
        _, trace = grasp_reconstruct(frames, cfg, shape=ph.shape)
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
        assert len(trace) >= 2

    def test_lambda_zero_full_sampling_matches_cg_oracle(self):
        ph, frames = phantom_frames(size=24)
        cfg = GraspConfig(lam=0.0, n_iter=400)
        recs, trace = grasp_reconstruct(frames, cfg, shape=ph.shape)
        for rec, data in zip(recs, frames):
            n_ista = metrics.nmse(np.abs(rec), np.abs(ph))
            op = kspace.get_operator(data.trajectory, ph.shape)
            x_cg = oracles.cg_least_squares(op, data.samples, 400)
            n_cg = metrics.nmse(np.abs(x_cg), np.abs(ph))
            assert n_ista < 0.01
            assert abs(n_ista - n_cg) < 1e-3

    def test_strong_temporal_tv_flattens_static_sequence(self):
        # identical ground truth, rotating trajectories: with a huge lambda
        # the frames must agree to high precision
        ph, frames = phantom_frames(size=24, n_spokes=8)
        lam_typical = GraspConfig().lam
        cfg = GraspConfig(lam=1e3 * lam_typical, n_iter=40)
        recs, _ = grasp_reconstruct(frames, cfg, shape=ph.shape)
        worst = 0.0
        for t in range(len(recs) - 1):
            worst = max(worst, metrics.nmse(np.abs(recs[t + 1]), np.abs(recs[t])))
        assert worst < 1e-3

    def test_deterministic(self):
        ph, frames = phantom_frames(size=24, n_spokes=6)
        cfg = GraspConfig(lam=1e-3, n_iter=10)
        a, _ = grasp_reconstruct(frames, cfg, shape=ph.shape)
        b, _ = grasp_reconstruct(frames, cfg, shape=ph.shape)
        assert a.tobytes() == b.tobytes()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GraspConfig(lam=-1.0)
        with pytest.raises(ValueError):
            GraspConfig(n_iter=0)
        with pytest.raises(ValueError):
            GraspConfig(step_rule="magic")

    def test_fixed_step_rule_runs(self):
        ph, frames = phantom_frames(size=24, n_spokes=6, n_frames=2)
        cfg = GraspConfig(lam=1e-3, n_iter=5, step_rule="fixed")
        recs, trace = grasp_reconstruct(frames, cfg, shape=ph.shape)
        assert recs.shape == (2, 24, 24)
        assert len(trace) == 6
