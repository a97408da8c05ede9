import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fake_subject, make_volume, ramp
from mmssl.errors import ConstantVolume, DegenerateHistogram, InvalidConfig, ShapeMismatch, TooFewSubjects
from mmssl.volumes import (
    HOLDOUT,
    LANDMARK_PERCENTILES,
    SHIFT,
    Label,
    Modality,
    NormalizationStats,
    Population,
    Volume,
    apply_histogram_standardization,
    first_pair,
    fit_histogram_standardization,
    make_splits,
    normalize,
    pretraining_pairs,
    probe_pairs,
    znormalize,
)


def test_volume_is_immutable_float32():
    src = np.zeros((64, 64, 64))
    v = make_volume(src)
    assert v.data.dtype == np.float32
    src[0, 0, 0] = 5
    assert v.data[0, 0, 0] == 0
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


def test_volume_rejects_bad_shapes_and_nan():
    with pytest.raises(ShapeMismatch):
        Volume(np.zeros((64, 64, 32)), Modality.T1)
    bad = np.zeros((8, 8, 8))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Volume(bad, Modality.T1)


class TestZNormalize:
    def test_constant_volume_raises(self):
        with pytest.raises(ConstantVolume):
            znormalize(make_volume(np.zeros((64, 64, 64))))

    def test_idempotent_on_normalized_input(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(64, 64, 64))
        x = (x - x.mean()) / x.std()
        v = make_volume(x)
        np.testing.assert_allclose(znormalize(v).data, v.data, atol=1e-6)

    def test_counting_pattern_moments(self):
        v = make_volume(np.arange(64**3, dtype=np.float64).reshape(64, 64, 64) + 1)
        out = znormalize(v).data.astype(np.float64)
        assert abs(out.mean()) < 1e-5
        assert abs(out.std() - 1) < 1e-5
        assert out.shape == (64, 64, 64)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 100), st.floats(-50, 50), st.integers(0, 2**31 - 1))
    def test_twice_equals_once(self, scale, shift, seed):
        x = np.random.default_rng(seed).normal(size=(8, 8, 8)) * scale + shift
        once = znormalize(make_volume(x))
        np.testing.assert_allclose(znormalize(once).data, once.data, atol=1e-5)


class TestHistogramStandardization:
    def test_identical_volumes_give_own_percentiles(self):
        x = np.random.default_rng(1).gamma(2.0, size=(64, 64, 64))
        v = make_volume(x)
        stats = fit_histogram_standardization([v, v])
        expected = np.percentile(v.data.astype(np.float64), LANDMARK_PERCENTILES)
        np.testing.assert_allclose(stats.histogram_landmarks, expected)

    def test_single_volume(self):
        v = make_volume(np.random.default_rng(2).random((64, 64, 64)))
        stats = fit_histogram_standardization([v])
        np.testing.assert_allclose(
            stats.histogram_landmarks, np.percentile(v.data.astype(np.float64), LANDMARK_PERCENTILES)
        )

    def test_uniform_values_closed_form_quantiles(self):
        rng = np.random.default_rng(3)
        vols = [make_volume(rng.random((64, 64, 64))) for _ in range(3)]
        stats = fit_histogram_standardization(vols)
        for p, lm in zip(stats.landmark_percentiles, stats.histogram_landmarks):
            assert abs(lm - p / 100) < 0.02

    def test_constant_volume_is_degenerate(self):
        ok = make_volume(np.random.default_rng(0).random((8, 8, 8)))
        with pytest.raises(DegenerateHistogram):
            fit_histogram_standardization([ok, make_volume(np.ones((8, 8, 8)))])

    def test_mixed_modalities_rejected(self):
        a = make_volume(np.random.default_rng(0).random((8, 8, 8)))
        b = make_volume(np.random.default_rng(1).random((8, 8, 8)), Modality.FALFF)
        with pytest.raises(InvalidConfig):
            fit_histogram_standardization([a, b])

    def test_identity_when_percentiles_match_landmarks(self):
        v = make_volume(np.random.default_rng(4).normal(size=(64, 64, 64)))
        stats = fit_histogram_standardization([v])
        np.testing.assert_allclose(apply_histogram_standardization(v, stats).data, v.data, atol=1e-5)

    def test_shifted_ramp_against_interpolation_oracle(self):
        # Oracle: for a ramp the percentile map is a plain translation, and
        # np.interp through the two percentile tables reproduces it.
        x = ramp(axis=0) + ramp(axis=1) / 64 + ramp(axis=2) / 4096
        src = make_volume(x)
        shifted = make_volume(x + 10.0)
        stats = fit_histogram_standardization([shifted])
        out = apply_histogram_standardization(src, stats).data.astype(np.float64)

        xs = src.data.astype(np.float64)
        src_pct = np.percentile(xs, LANDMARK_PERCENTILES)
        inside = (xs >= src_pct[0]) & (xs <= src_pct[-1])
        oracle = np.interp(xs[inside], src_pct, np.asarray(stats.histogram_landmarks))
        np.testing.assert_allclose(out[inside], oracle, atol=1e-4)
        np.testing.assert_allclose(out, xs + 10.0, atol=1e-3)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_monotone(self, seed):
        rng = np.random.default_rng(seed)
        fit_vol = make_volume(rng.gamma(2.0, size=(8, 8, 8)))
        stats = fit_histogram_standardization([fit_vol, make_volume(rng.normal(size=(8, 8, 8)))])
        v = make_volume(rng.normal(size=(8, 8, 8)) * rng.uniform(0.1, 10))
        flat_in = v.data.ravel().astype(np.float64)
        flat_out = apply_histogram_standardization(v, stats).data.ravel().astype(np.float64)
        order = np.argsort(flat_in, kind="stable")
        assert np.all(np.diff(flat_out[order]) >= -1e-6)

    def test_pooled_percentiles_land_on_landmarks(self):
        rng = np.random.default_rng(5)
        vols = [make_volume(rng.gamma(2.0, size=(64, 64, 64)) * s) for s in (0.5, 1.0, 2.0)]
        stats = fit_histogram_standardization(vols)
        for v in vols:
            mapped = apply_histogram_standardization(v, stats).data.astype(np.float64)
            np.testing.assert_allclose(
                np.percentile(mapped, LANDMARK_PERCENTILES), stats.histogram_landmarks, rtol=1e-3, atol=1e-3
            )

    def test_modality_mismatch(self):
        v = make_volume(np.random.default_rng(0).random((8, 8, 8)))
        stats = fit_histogram_standardization([v])
        other = make_volume(np.random.default_rng(1).random((8, 8, 8)), Modality.FALFF)
        with pytest.raises(InvalidConfig):
            apply_histogram_standardization(other, stats)

    def test_stats_must_increase(self):
        with pytest.raises(DegenerateHistogram):
            NormalizationStats(Modality.T1, (0.0,) * len(LANDMARK_PERCENTILES))

    def test_zero_padded_volume_still_maps(self):
        rng = np.random.default_rng(6)
        stats = fit_histogram_standardization([make_volume(rng.random((8, 8, 8)))])
        x = np.zeros((8, 8, 8))
        x[:2] = rng.random((2, 8, 8))
        out = apply_histogram_standardization(make_volume(x), stats).data
        assert np.all(np.isfinite(out))

    def test_normalize_orders(self):
        rng = np.random.default_rng(7)
        vols = [make_volume(rng.gamma(2.0, size=(8, 8, 8))) for _ in range(3)]
        stats = fit_histogram_standardization(vols)
        out = normalize(vols[0], stats).data.astype(np.float64)
        assert abs(out.mean()) < 1e-5 and abs(out.std() - 1) < 1e-5


def _cohort(counts):
    subjects, i = [], 0
    for label, n in counts.items():
        for _ in range(n):
            subjects.append(fake_subject(f"s{i:04d}", label, seed=i))
            i += 1
    return subjects


class TestSplits:
    def test_exact_divisibility(self):
        cohort = _cohort({Label.HC: 5, Label.AD: 5})
        split = make_splits(cohort, fold_count=5, holdout_fraction=0.0, seed=0)
        labels = {s.subject_id: s.label for s in cohort}
        for fold in range(5):
            members = split.subjects_in(fold)
            assert sorted(labels[m] for m in members) == [Label.AD, Label.HC]

    def test_deterministic(self):
        cohort = _cohort({Label.HC: 12, Label.AD: 9, Label.OTHER: 7})
        a = make_splits(cohort, 5, 0.2, seed=11)
        b = make_splits(cohort, 5, 0.2, seed=11)
        assert a == b
        assert a != make_splits(cohort, 5, 0.2, seed=12)

    def test_paper_sized_cohort_stratification(self):
        # 826 subjects at 70/15/15, holdout ~100; proportions recounted after assignment.
        cohort = _cohort({Label.HC: 578, Label.AD: 124, Label.OTHER: 124})
        split = make_splits(cohort, 5, holdout_fraction=100 / 826, seed=0)
        labels = {s.subject_id: s.label for s in cohort}
        assert abs(len(split.subjects_in(HOLDOUT)) - 100) <= 5
        global_prop = {lab: sum(1 for s in cohort if s.label is lab) / len(cohort) for lab in Label}
        for fold in range(5):
            members = split.subjects_in(fold)
            for lab in Label:
                prop = sum(1 for m in members if labels[m] is lab) / len(members)
                assert abs(prop - global_prop[lab]) <= 0.05

    def test_partition_and_shift_isolation(self):
        cohort = _cohort({Label.HC: 10, Label.AD: 10})
        cohort += [fake_subject(f"x{i}", Label.HC, Population.SHIFT, seed=100 + i) for i in range(4)]
        split = make_splits(cohort, 5, 0.2, seed=0)
        assert set(split.fold_of_subject) == {s.subject_id for s in cohort}
        for i in range(4):
            assert split.fold_of_subject[f"x{i}"] == SHIFT
        assert not any(sid.startswith("x") for sid in split.training_subjects())

    def test_too_few_subjects(self):
        with pytest.raises(TooFewSubjects):
            make_splits(_cohort({Label.HC: 10, Label.AD: 3}), 5, 0.0, seed=0)

    def test_bad_inputs(self):
        with pytest.raises(InvalidConfig):
            make_splits([], 5, 0.1)
        with pytest.raises(InvalidConfig):
            make_splits(_cohort({Label.HC: 10}), 5, 1.0)

    def test_round_trip_dict(self):
        split = make_splits(_cohort({Label.HC: 10, Label.AD: 10}), 5, 0.2, seed=1)
        assert type(split).from_dict(split.to_dict()) == split


class TestPairs:
    def test_first_pair(self):
        s = fake_subject("a", n_scans=3)
        assert first_pair(s) is s.scans[0]
        one = fake_subject("b", n_scans=1)
        assert first_pair(one) is one.scans[0]

    def test_pretraining_vs_probe_enumeration(self):
        cohort = [fake_subject("a", n_scans=3), fake_subject("b", n_scans=2, seed=1)]
        assert len(pretraining_pairs(cohort)) == 5
        assert len(probe_pairs(cohort)) == 2
