import math

import numpy as np
import pytest

from imrilab import kspace, metrics, simdata
from imrilab.kspace import (
    GOLDEN_ANGLE_DEG,
    KSpaceError,
    RadialTrajectory,
    golden_angle_trajectory,
    nudft_adjoint,
    nudft_forward,
)

import oracles


def cartesian_trajectory(h, w):
    coords = oracles.cartesian_coords(h, w)
    return RadialTrajectory(np.zeros(h), w, coords, 0)


class TestGoldenAngleTrajectory:
    def test_single_spoke_at_zero_degrees(self):
        traj = golden_angle_trajectory(1, 8)
        assert traj.spoke_angles[0] == 0.0

    def test_second_spoke_is_golden_angle(self):
        # independent derivation: 180 * 2 / (1 + sqrt 5)
        expected = 180.0 * 2.0 / (1.0 + math.sqrt(5.0))
        traj = golden_angle_trajectory(2, 8)
        assert traj.spoke_angles[1] == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(111.2461179749, abs=1e-9)

    def test_full_nyquist_trajectory_for_256(self):
        traj = golden_angle_trajectory(402, 512)
        assert kspace.nyquist_spokes(256) == 402
        assert traj.n_samples == 402 * 512
        assert np.max(np.abs(traj.coords)) <= 0.5

    def test_consecutive_angle_increments_constant(self):
        traj = golden_angle_trajectory(50, 8, start_index=13)
        diffs = np.mod(np.diff(traj.spoke_angles), 180.0)
        assert np.allclose(diffs, GOLDEN_ANGLE_DEG % 180.0, atol=1e-9)

    def test_start_index_continues_sequence(self):
        a = golden_angle_trajectory(10, 8)
        b = golden_angle_trajectory(5, 8, start_index=5)
        assert np.allclose(a.spoke_angles[5:], b.spoke_angles, atol=1e-9)

    def test_spokes_collinear_and_centered(self):
        traj = golden_angle_trajectory(7, 16)
        coords = traj.coords.reshape(7, 16, 2)
        for s in range(7):
            spoke = coords[s]
            theta = np.deg2rad(traj.spoke_angles[s])
            normal = np.array([-np.sin(theta), np.cos(theta)])
            assert np.allclose(spoke @ normal, 0.0, atol=1e-12)
            # mirrored sample pairs i <-> n-i land at k and -k
            for i in range(1, 16):
                assert np.allclose(spoke[i], -spoke[16 - i], atol=1e-12)

    @pytest.mark.parametrize("n_spokes,n_readout", [(0, 8), (-3, 8), (4, 0), (4, 7), (4, -2)])
    def test_bad_counts_rejected(self, n_spokes, n_readout):
        with pytest.raises(KSpaceError):
            golden_angle_trajectory(n_spokes, n_readout)


class TestNudftForward:
    def test_zero_image_gives_zero_samples(self):
        traj = golden_angle_trajectory(4, 16)
        data = nudft_forward(np.zeros((8, 8), dtype=complex), traj)
        assert np.all(data.samples == 0)

    def test_center_impulse_has_unit_magnitude_everywhere(self):
        traj = golden_angle_trajectory(6, 16)
        img = np.zeros((12, 12), dtype=complex)
        img[6, 6] = 1.0
        data = nudft_forward(img, traj)
        assert np.allclose(np.abs(data.samples), 1.0, atol=1e-12)

    def test_matches_cartesian_dft_oracle(self):
        rng = np.random.default_rng(42)
        img = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        traj = cartesian_trajectory(8, 8)
        mine = nudft_forward(img, traj).samples.reshape(8, 8)
        want = oracles.dft2_centered(img)
        assert np.linalg.norm(mine - want) / np.linalg.norm(want) < 1e-9

    def test_matches_explicit_loop_oracle_off_grid(self):
        rng = np.random.default_rng(3)
        img = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        traj = golden_angle_trajectory(3, 6)
        mine = nudft_forward(img, traj).samples
        want = oracles.nudft_loops(img, traj.coords)
        assert np.linalg.norm(mine - want) / np.linalg.norm(want) < 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(7)
        traj = golden_angle_trajectory(5, 12)
        x = rng.standard_normal((10, 10)) + 1j * rng.standard_normal((10, 10))
        z = rng.standard_normal((10, 10)) + 1j * rng.standard_normal((10, 10))
        a, b = 1.7 - 0.3j, -0.4 + 2.2j
        lhs = nudft_forward(a * x + b * z, traj).samples
        rhs = a * nudft_forward(x, traj).samples + b * nudft_forward(z, traj).samples
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_dimension_mismatch_rejected(self):
        traj = golden_angle_trajectory(4, 16)
        op = kspace.get_operator(traj, (8, 8))
        with pytest.raises(KSpaceError):
            op.forward(np.zeros((6, 8), dtype=complex))


class TestNudftAdjoint:
    def test_adjoint_identity_random_cases(self):
        rng = np.random.default_rng(11)
        for case in range(20):
            traj = golden_angle_trajectory(8, 32, start_index=case)
            x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
            y = rng.standard_normal(traj.n_samples) + 1j * rng.standard_normal(traj.n_samples)
            ex = nudft_forward(x, traj).samples
            ehy = nudft_adjoint(y, traj, shape=(16, 16))
            lhs = np.vdot(y, ex)
            rhs = np.vdot(ehy, x)
            assert abs(lhs - rhs) / (np.linalg.norm(ex) * np.linalg.norm(y)) < 1e-10

    def test_zero_samples_give_zero_image(self):
        traj = golden_angle_trajectory(4, 16)
        img = nudft_adjoint(np.zeros(traj.n_samples, dtype=complex), traj)
        assert np.all(img == 0)
        assert img.shape == (8, 8)  # default grid from readout oversampling

    def test_matches_conjugate_transpose_oracle_on_cartesian_grid(self):
        rng = np.random.default_rng(5)
        traj = cartesian_trajectory(8, 8)
        y = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        mine = nudft_adjoint(y, traj, shape=(8, 8))
        want = oracles.idft2_centered_adjoint(y.reshape(8, 8))
        assert np.linalg.norm(mine - want) / np.linalg.norm(want) < 1e-9

    def test_weighted_adjoint_and_negative_weights(self):
        rng = np.random.default_rng(6)
        traj = golden_angle_trajectory(4, 16)
        y = rng.standard_normal(traj.n_samples) + 1j * rng.standard_normal(traj.n_samples)
        w = rng.uniform(0.1, 1.0, traj.n_samples)
        direct = nudft_adjoint(y * w, traj)
        weighted = nudft_adjoint(y, traj, weights=w)
        assert np.allclose(direct, weighted, atol=1e-12)
        with pytest.raises(KSpaceError):
            nudft_adjoint(y, traj, weights=-w)


class TestDensityCompensation:
    def test_weights_nonnegative(self):
        traj = golden_angle_trajectory(12, 32)
        w = kspace.density_compensation(traj)
        assert np.all(w >= 0)

    def test_weights_symmetric_under_k_negation_within_spoke(self):
        traj = golden_angle_trajectory(9, 24)
        w = kspace.density_compensation(traj).reshape(9, 24)
        for i in range(1, 24):
            assert np.allclose(w[:, i], w[:, 24 - i], atol=1e-15)

    def test_ramp_profile_proportional_to_radius(self):
        traj = golden_angle_trajectory(5, 16)
        w = kspace.density_compensation(traj).reshape(5, 16)
        radii = np.abs(kspace.spoke_radii(16))
        ratio = w[0, radii > 0] / radii[radii > 0]
        assert np.allclose(ratio, ratio[0], rtol=1e-12)

    def test_weighted_regridding_beats_uniform_at_full_sampling(self):
        size = 64
        phantom = simdata.generate_reference_phantom(3, size)
        traj = golden_angle_trajectory(kspace.nyquist_spokes(size), 2 * size)
        op = kspace.get_operator(traj, (size, size))
        data = op.forward(phantom)
        rec_w = kspace.regrid_reconstruct(data, traj, shape=(size, size))
        # uniform weights with the same constant-image calibration
        w_uni = np.full(traj.n_samples, 1.0 / traj.n_samples)
        ones = np.ones((size, size), dtype=complex)
        gain = float(np.mean(op.adjoint(op.forward(ones), w_uni).real))
        rec_u = op.adjoint(data, w_uni / gain)
        nmse_w = metrics.nmse(np.abs(rec_w), np.abs(phantom))
        nmse_u = metrics.nmse(np.abs(rec_u), np.abs(phantom))
        assert nmse_w < nmse_u

    def test_constant_image_approximately_returned(self):
        traj = golden_angle_trajectory(kspace.nyquist_spokes(32), 64)
        const = np.full((32, 32), 0.7, dtype=complex)
        rec = kspace.regrid_reconstruct(nudft_forward(const, traj), shape=(32, 32))
        assert rec.real.mean() == pytest.approx(0.7, rel=1e-6)
        assert np.abs(rec - 0.7).max() < 0.12


class TestRegridReconstruct:
    def test_zero_data_gives_zero_image(self):
        traj = golden_angle_trajectory(6, 16)
        rec = kspace.regrid_reconstruct(np.zeros(traj.n_samples, dtype=complex), traj)
        assert np.all(rec == 0)

    def test_full_nyquist_phantom_below_5_percent_error(self):
        size = 64
        phantom = simdata.generate_reference_phantom(3, size)
        traj = golden_angle_trajectory(kspace.nyquist_spokes(size), 2 * size)
        rec = kspace.regrid_reconstruct(nudft_forward(phantom, traj), shape=(size, size))
        assert metrics.nmse(np.abs(rec), np.abs(phantom)) < 0.05

    def test_heavy_undersampling_strictly_worse(self):
        size = 64
        phantom = simdata.generate_reference_phantom(3, size)
        full = golden_angle_trajectory(kspace.nyquist_spokes(size), 2 * size)
        few = golden_angle_trajectory(8, 2 * size)
        nmse_full = metrics.nmse(
            np.abs(kspace.regrid_reconstruct(nudft_forward(phantom, full), shape=(size, size))),
            np.abs(phantom),
        )
        nmse_few = metrics.nmse(
            np.abs(kspace.regrid_reconstruct(nudft_forward(phantom, few), shape=(size, size))),
            np.abs(phantom),
        )
        assert nmse_few > nmse_full


class TestOperatorNorm:
    def test_power_iteration_matches_dense_svd(self):
        traj = golden_angle_trajectory(8, 16)
        est = kspace.estimate_operator_norm(traj, (8, 8), n_iter=60)
        dense = oracles.dense_encoding_matrix(traj.coords, (8, 8))
        want = np.linalg.svd(dense, compute_uv=False)[0]
        assert est == pytest.approx(want, rel=1e-6)


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        traj = golden_angle_trajectory(5, 12, start_index=35)
        data = kspace.KSpaceData(
            rng.standard_normal(traj.n_samples) + 1j * rng.standard_normal(traj.n_samples), traj
        )
        path = tmp_path / "frame.ksp"
        kspace.save_kspace(path, data)
        back = kspace.load_kspace(path)
        assert back.trajectory.n_readout == 12
        assert back.trajectory.start_index == 35
        assert back.trajectory.spoke_angles.tobytes() == traj.spoke_angles.tobytes()
        assert back.samples.tobytes() == data.samples.tobytes()
        assert back.trajectory.coords.tobytes() == traj.coords.tobytes()
        # saving the loaded copy reproduces the file byte for byte
        path2 = tmp_path / "again.ksp"
        kspace.save_kspace(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ksp"
        path.write_bytes(b"NOPE" + bytes(32))
        with pytest.raises(KSpaceError):
            kspace.load_kspace(path)

    def test_sample_count_must_match_trajectory(self):
        traj = golden_angle_trajectory(2, 8)
        with pytest.raises(KSpaceError):
            kspace.KSpaceData(np.zeros(5, dtype=complex), traj)


class TestNoise:
    def test_zero_std_is_silent(self):
        rng = np.random.default_rng(0)
        assert np.all(kspace.complex_gaussian_noise(rng, 16, 0.0) == 0)

    def test_negative_std_rejected(self):
        with pytest.raises(KSpaceError):
            kspace.complex_gaussian_noise(np.random.default_rng(0), 4, -1.0)

    def test_power_matches_std(self):
        rng = np.random.default_rng(1)
        noise = kspace.complex_gaussian_noise(rng, 200_000, 0.5)
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(0.25, rel=0.02)
