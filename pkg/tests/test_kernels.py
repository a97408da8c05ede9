import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_volume, ramp
from mmssl.distortions import DistortionSpec, Family, apply, apply_array, sample_params
from mmssl.distortions import kernels as K
from mmssl.errors import ConstantVolume, InvalidConfig, NonPositiveScale, TooFewControlPoints

SPECTRAL = {Family.MOTION, Family.GHOST, Family.SPIKE}


@pytest.fixture(scope="module")
def rand64():
    return np.random.default_rng(0).random((64, 64, 64))


@pytest.mark.parametrize("family", list(Family), ids=lambda f: f.value)
def test_identity_point(family, head_volume):
    out = apply(DistortionSpec.identity(family, seed=5), head_volume)
    tol = 1e-4 if family in SPECTRAL else 1e-5
    np.testing.assert_allclose(out.data, head_volume.data, atol=tol, rtol=0)


def test_affine_defaults_are_identity(head_volume):
    out = apply(DistortionSpec(Family.AFFINE, seed=1), head_volume)
    np.testing.assert_array_equal(out.data, head_volume.data)


def test_unknown_param_rejected():
    with pytest.raises(InvalidConfig):
        DistortionSpec(Family.BLUR, {"sigma": (1, 1)})


def test_spec_json_round_trip():
    spec = DistortionSpec(Family.GHOST, {"intensity": (0.3, 0.3), "axis": 2}, seed=9)
    assert DistortionSpec.from_json(spec.to_json()) == spec


class TestAffine:
    def test_right_angle_matches_array_rotation(self):
        x = np.random.default_rng(1).random((16, 16, 16))
        out = K.affine(x, (1, 1, 1), (90, 0, 0), (0, 0, 0))
        np.testing.assert_allclose(out, np.rot90(x, 1, axes=(1, 2)), atol=1e-12)

    def test_scale_two_doubles_ball_radius(self):
        r = 8.0
        c = 31.5
        idx = np.indices((64, 64, 64)).astype(np.float64)
        ball = (((idx - c) ** 2).sum(0) <= r**2).astype(np.float64)
        out = K.affine(ball, (2, 2, 2), (0, 0, 0), (0, 0, 0))
        radius = (3 * (out > 0.5).sum() / (4 * np.pi)) ** (1 / 3)
        assert abs(radius - 2 * r) / (2 * r) < 0.10

    def test_translation_in_mm(self):
        x = np.zeros((16, 16, 16))
        x[5, 5, 5] = 1.0
        out = K.affine(x, (1, 1, 1), (0, 0, 0), (6.0, 0, 0), voxel_size=3.0)
        assert out[7, 5, 5] == pytest.approx(1.0)

    def test_non_positive_scale(self, rand64):
        with pytest.raises(NonPositiveScale):
            K.affine(rand64, (1, 0, 1), (0, 0, 0), (0, 0, 0))
        with pytest.raises(NonPositiveScale):
            apply_array(DistortionSpec(Family.AFFINE, {"scales": (-1, -0.5)}), rand64)


class TestElastic:
    def test_basis_rows_sum_to_one(self):
        b = K.bspline_basis(64, 7)
        np.testing.assert_allclose(b.sum(1), 1.0, atol=1e-12)
        assert np.all(b >= 0)

    def test_one_voxel_bound_on_ramp(self):
        x = ramp(axis=0)
        spec = DistortionSpec(Family.ELASTIC, {"max_displacement": 3.0}, seed=3)
        out = apply_array(spec, x, voxel_size=3.0)
        inner = (slice(2, -2),) * 3
        assert np.abs(out - x)[inner].max() <= 1.0 + 1e-9
        assert np.abs(out - x)[inner].max() > 0.05

    def test_locked_borders(self):
        coarse = K.sample_elastic(np.random.default_rng(0), 7, 5.0, locked_borders=2)["coarse"]
        assert not coarse[:, :2].any() and not coarse[:, -2:].any()
        assert not coarse[:, :, :2].any() and not coarse[:, :, :, -2:].any()
        assert coarse[:, 2:5, 2:5, 2:5].any()

    def test_too_few_control_points(self, rand64):
        with pytest.raises(TooFewControlPoints):
            apply_array(DistortionSpec(Family.ELASTIC, {"num_control_points": 3}), rand64)


class TestSpectral:
    def test_motion_large_translation_moves_further_than_identity(self, head_volume):
        x = head_volume.data.astype(np.float64)
        ident = apply_array(DistortionSpec(Family.MOTION, seed=2), x)
        moved = apply_array(DistortionSpec(Family.MOTION, {"translation": (30.0, 30.0)}, seed=2), x)
        assert np.linalg.norm(moved - x) > np.linalg.norm(ident - x) + 1.0

    def test_motion_bands_partition(self):
        bands = K.motion_bands(64, [0.5])
        assert set(bands.tolist()) == {0, 1}
        assert bands[0] == 1  # DC sits in the second half of centered k-space

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 4), st.floats(0.0, 1.0), st.integers(0, 2), st.integers(0, 2**31 - 1))
    def test_ghost_never_adds_energy(self, k, intensity, axis, seed):
        x = np.random.default_rng(seed).normal(size=(8, 8, 8))
        out = K.ghost(x, k, intensity, axis)
        assert (out**2).sum() <= (x**2).sum() * (1 + 1e-12)

    def test_ghost_keeps_dc_plane(self):
        assert not K.ghost_plane_mask(64, 2)[0]
        assert K.ghost_plane_mask(64, 2).sum() == 31

    def test_spike_stripe_at_spike_frequency(self):
        x = np.full((32, 32, 32), 10.0)
        out = K.spike(x, [[3, 0, 0]], 0.01)
        spec = np.abs(np.fft.fftn(out - x))
        spec[0, 0, 0] = 0
        peak = np.unravel_index(spec.argmax(), spec.shape)
        assert peak in {(3, 0, 0), (29, 0, 0)}

    def test_spike_draw_positions_in_range(self):
        d = K.sample_spike(np.random.default_rng(0), (5, 5), 1.0, (64, 64, 64))
        assert d["positions"].shape == (5, 3)
        assert d["positions"].min() >= 0 and d["positions"].max() < 64


class TestBlur:
    def test_mean_preserved(self, rand64):
        out = K.blur(rand64, (6.0, 3.0, 9.0))
        assert abs(out.mean() - rand64.mean()) < 1e-4

    def test_impulse_matches_gaussian(self):
        x = np.zeros((33, 33, 33))
        x[16, 16, 16] = 1.0
        out = K.blur(x, (6.0, 6.0, 6.0), voxel_size=3.0)

        def g(d):
            return np.exp(-(d**2) / 8.0) / np.sqrt(8.0 * np.pi)

        assert out[16, 16, 16] == pytest.approx(g(0) ** 3, rel=1e-3)
        for off in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]:
            p = tuple(16 + o for o in off)
            assert out[p] == pytest.approx(g(1) * g(0) ** 2, rel=1e-3)


class TestBias:
    def test_order_one_against_direct_polynomial(self):
        coefs = {(0, 0, 0): 0.1, (1, 0, 0): 0.3, (0, 1, 0): -0.2, (0, 0, 1): 0.05}
        out = K.bias(np.full((16, 16, 16), 2.0), coefs)
        t = np.linspace(-1, 1, 16)
        for i, j, k in [(0, 0, 0), (15, 3, 7), (8, 15, 0), (4, 9, 12)]:
            expected = 2.0 * np.exp(0.1 + 0.3 * t[i] - 0.2 * t[j] + 0.05 * t[k])
            assert out[i, j, k] == pytest.approx(expected, rel=1e-12)

    def test_sign_preserved(self):
        x = np.random.default_rng(4).normal(size=(16, 16, 16))
        out = apply_array(DistortionSpec(Family.BIAS, {"coefficients": (2, 2), "order": 5}, seed=1), x)
        np.testing.assert_array_equal(np.sign(out), np.sign(x))

    def test_monomial_count(self):
        assert len(K.monomials(3)) == 20
        assert len(K.monomials(1)) == 4


class TestNoise:
    def test_std_recovered(self, rand64):
        out = apply_array(DistortionSpec(Family.NOISE, seed=7), rand64)
        assert abs((out - rand64).std() - 0.25) / 0.25 < 0.05

    def test_pure_shift(self, rand64):
        out = apply_array(DistortionSpec(Family.NOISE, {"mean": (2, 2), "std": (0, 0)}), rand64)
        np.testing.assert_array_equal(out, rand64 + 2.0)


class TestGamma:
    def test_square_of_mid_intensity(self):
        x = np.zeros((4, 4, 4))
        x[0, 0, 0] = 1.0
        x[1, 1, 1] = 0.5
        out = K.gamma(x, np.log(2.0))
        assert out[1, 1, 1] == pytest.approx(0.25, abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-0.9, 0.9), st.integers(0, 2**31 - 1))
    def test_endpoints_fixed(self, log_gamma, seed):
        x = np.random.default_rng(seed).normal(size=(8, 8, 8))
        out = K.gamma(x, log_gamma)
        assert out.min() == x.min() and out.max() == x.max()

    def test_identity_tight(self, rand64):
        np.testing.assert_allclose(K.gamma(rand64, 0.0), rand64, atol=1e-6)

    def test_constant_volume(self):
        with pytest.raises(ConstantVolume):
            K.gamma(np.ones((4, 4, 4)), 0.3)


@pytest.mark.parametrize("family", list(Family), ids=lambda f: f.value)
def test_default_battery_deterministic_finite_no_mutation(family, head_volume):
    spec = DistortionSpec(family, seed=11)
    before = head_volume.data.copy()
    a = apply(spec, head_volume)
    b = apply(spec, head_volume)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(head_volume.data, before)
    assert a.data.shape == (64, 64, 64) and np.all(np.isfinite(a.data))
    assert a.modality is head_volume.modality


def test_kernels_do_not_mutate_arrays():
    x = np.random.default_rng(0).random((16, 16, 16))
    keep = x.copy()
    for family in Family:
        spec = DistortionSpec(family, seed=1)
        apply_array(spec, x)
        sample_params(spec, x.shape)
    np.testing.assert_array_equal(x, keep)


def test_seed_changes_draw(head_volume):
    a = apply(DistortionSpec(Family.NOISE, seed=1), head_volume)
    b = apply(DistortionSpec(Family.NOISE, seed=2), head_volume)
    assert not np.array_equal(a.data, b.data)
