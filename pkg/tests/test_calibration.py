import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from geosep import (
    CalibrationPair,
    IsotonicCalibrator,
    LogisticCalibrator,
    SeparationScore,
    collect_pairs,
    fit_isotonic,
    fit_logistic,
    load_calibrator,
    predict_confidence,
    save_calibrator,
)
from geosep.calibration import (
    CalibrationError,
    CalibratorFormatError,
    SeparationWarning,
    fit_curve_table,
    pava,
    slope_cap,
)


def pairs_from(targets, weights=None):
    weights = weights or [1.0] * len(targets)
    return [CalibrationPair(float(i), float(t), float(w)) for i, (t, w) in enumerate(zip(targets, weights))]


class TestCollectPairs:
    def test_groups_unique_scores(self):
        got = collect_pairs([1, 1, 2], [1, 0, 1])
        assert got == [CalibrationPair(1.0, 0.5, 2.0), CalibrationPair(2.0, 1.0, 1.0)]

    def test_accepts_separation_scores(self):
        got = collect_pairs([SeparationScore(0.25, "fast")], [1])
        assert got == [CalibrationPair(0.25, 1.0, 1.0)]

    def test_sorted_and_weight_preserved(self, rng):
        s = np.round(rng.normal(size=1000), 1)
        y = rng.integers(0, 2, 1000)
        got = collect_pairs(s, y)
        assert sum(p.weight for p in got) == 1000
        assert all(a.score < b.score for a, b in zip(got, got[1:]))
        assert sum(p.weight * p.correct for p in got) == pytest.approx(y.sum())

    def test_errors(self):
        with pytest.raises(CalibrationError):
            collect_pairs([1, 2], [1])
        with pytest.raises(CalibrationError):
            collect_pairs([], [])
        with pytest.raises(CalibrationError):
            collect_pairs([1.0], [2])

    def test_pair_invariants(self):
        with pytest.raises(CalibrationError):
            CalibrationPair(0.0, 1.0, 0.0)
        with pytest.raises(CalibrationError):
            CalibrationPair(0.0, 1.5)


class TestPava:
    def test_identity_when_monotone(self):
        np.testing.assert_array_equal(pava([0, 0.5, 1]), [0, 0.5, 1])

    def test_symmetric_pool(self):
        np.testing.assert_array_equal(pava([1, 0]), [0.5, 0.5])

    def test_unclamped_pool(self):
        np.testing.assert_array_equal(pava([1, 0, 2]), [0.5, 0.5, 2])

    def test_weighted(self):
        np.testing.assert_allclose(pava([1, 0], [3, 1]), [0.75, 0.75])

    def test_brute_force_small_weighted(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 7))
            y = list(rng.uniform(0, 1, n))
            w = list(rng.uniform(0.1, 3, n))
            expect, _ = oracles.isotonic_brute(y, w)
            np.testing.assert_allclose(pava(y, w), expect, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=30))
    def test_monotone_and_mean_preserving(self, y):
        fit = pava(y)
        assert np.all(np.diff(fit) >= -1e-12)
        assert fit.sum() == pytest.approx(sum(y), abs=1e-9)


class TestFitIsotonic:
    def test_clamped_to_unit_interval(self):
        cal = fit_isotonic(pairs_from([1, 0, 1]))
        assert np.all((cal.fitted_values >= 0) & (cal.fitted_values <= 1))
        np.testing.assert_allclose(cal.fitted_values, [0.5, 0.5, 1.0])

    def test_grid_oracle_length_six(self):
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
        for targets in itertools.product(grid, repeat=4):
            expect, _ = oracles.isotonic_brute(list(targets), [1.0] * 4)
            np.testing.assert_allclose(fit_isotonic(pairs_from(targets)).fitted_values, expect, atol=1e-9)

    def test_raw_equals_grouped(self, rng):
        s = np.round(rng.normal(size=400), 1)
        y = (rng.uniform(size=400) < 1 / (1 + np.exp(-2 * s))).astype(float)
        order = np.argsort(s, kind="stable")
        raw = [CalibrationPair(float(s[i]), float(y[i])) for i in order]
        grouped = collect_pairs(s, y)
        a, b = fit_isotonic(raw), fit_isotonic(grouped)
        np.testing.assert_array_equal(a.breakpoints, b.breakpoints)
        np.testing.assert_allclose(a.fitted_values, b.fitted_values, atol=1e-12)

    def test_unsorted_rejected(self):
        with pytest.raises(CalibrationError, match="sorted"):
            fit_isotonic([CalibrationPair(1.0, 1.0), CalibrationPair(0.0, 0.0)])
        with pytest.raises(CalibrationError):
            fit_isotonic([])

    def test_transition_near_zero(self, rng):
        s = rng.normal(scale=3, size=3000)
        y = (rng.uniform(size=3000) < 1 / (1 + np.exp(-1.5 * s))).astype(float)
        cal = fit_isotonic(collect_pairs(s, y))
        low, mid, high = predict_confidence(cal, [-8.0, 0.0, 8.0])
        assert low <= mid <= high
        assert low < 0.2 and high > 0.8


class TestPredict:
    cal = IsotonicCalibrator([0.0, 10.0], [0.2, 0.9])

    def test_knot(self):
        assert predict_confidence(self.cal, 10.0) == 0.9

    def test_clamps(self):
        assert predict_confidence(self.cal, -50.0) == 0.2
        assert predict_confidence(self.cal, 1e9) == 0.9

    def test_midpoint(self):
        assert predict_confidence(self.cal, 5.0) == pytest.approx(0.55, abs=1e-15)

    def test_nan(self):
        with pytest.raises(CalibrationError):
            predict_confidence(self.cal, math.nan)

    def test_array(self):
        np.testing.assert_allclose(predict_confidence(self.cal, [0.0, 5.0]), [0.2, 0.55])

    def test_monotone_and_bounded(self, rng):
        iso = fit_isotonic(collect_pairs(rng.normal(size=300), rng.integers(0, 2, 300)))
        log = LogisticCalibrator(2.0, -0.5)
        a, b = rng.normal(scale=5, size=(2, 1000))
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        for cal in (iso, log):
            pl, ph = predict_confidence(cal, lo), predict_confidence(cal, hi)
            assert np.all(pl <= ph)
            assert np.all((pl >= 0) & (ph <= 1))

    def test_invariants_enforced(self):
        with pytest.raises(CalibrationError):
            IsotonicCalibrator([0.0, 1.0], [0.5, 0.4])
        with pytest.raises(CalibrationError):
            IsotonicCalibrator([1.0, 0.0], [0.1, 0.4])
        with pytest.raises(CalibrationError):
            LogisticCalibrator(-1.0, 0.0)


class TestLogistic:
    def test_symmetric_offset_zero(self):
        pairs = [CalibrationPair(-1.0, 0.25, 4), CalibrationPair(1.0, 0.75, 4)]
        cal = fit_logistic(pairs)
        assert cal.offset == pytest.approx(0.0, abs=1e-9)
        assert cal.slope == pytest.approx(math.log(3), abs=1e-8)
        assert not cal.separated

    def test_separated_caps_slope(self):
        s = [-2.0, -1.0, 1.0, 2.0]
        with pytest.warns(SeparationWarning):
            cal = fit_logistic(collect_pairs(s, [0, 0, 1, 1]))
        assert cal.separated
        assert cal.slope == slope_cap(s)
        assert predict_confidence(cal, 0.0) == pytest.approx(0.5)

    def test_beats_grid_search(self, rng):
        for _ in range(5):
            s = rng.normal(size=200)
            y = (rng.uniform(size=200) < 1 / (1 + np.exp(-(1.3 * s + 0.4)))).astype(float)
            pairs = collect_pairs(s, y)
            cal = fit_logistic(pairs)
            ps, py, pw = zip(*[(p.score, p.correct, p.weight) for p in pairs])
            ours = oracles.bernoulli_loglik(cal.slope, cal.offset, ps, py, pw)
            grid = max(
                oracles.bernoulli_loglik(a, b, ps, py, pw)
                for a in np.linspace(0, 4, 41)
                for b in np.linspace(-2, 2, 41)
            )
            assert ours >= grid - 1e-9

    def test_decreasing_data_gives_flat_fit(self, rng):
        s = rng.normal(size=300)
        y = (rng.uniform(size=300) < 1 / (1 + np.exp(2 * s))).astype(float)
        cal = fit_logistic(collect_pairs(s, y))
        assert cal.slope == 0.0
        assert predict_confidence(cal, 0.0) == pytest.approx(y.mean())

    def test_preconditions(self):
        with pytest.raises(CalibrationError):
            fit_logistic([CalibrationPair(0.0, 0.5, 2)])
        with pytest.raises(CalibrationError):
            fit_logistic(collect_pairs([0.0, 1.0], [1, 1]))


class TestFormat:
    def test_isotonic_round_trip(self, tmp_path, rng):
        cal = IsotonicCalibrator([-1 / 3, 0.1, 7.25], [0.1, 1 / 7, 0.9])
        save_calibrator(cal, tmp_path / "c.txt")
        assert (tmp_path / "c.txt").read_text().splitlines()[0] == "geosep-isotonic v1"
        back = load_calibrator(tmp_path / "c.txt")
        probes = rng.uniform(-2, 9, 100)
        np.testing.assert_array_equal(predict_confidence(back, probes), predict_confidence(cal, probes))

    def test_logistic_round_trip(self, tmp_path):
        cal = LogisticCalibrator(math.pi, -math.e)
        save_calibrator(cal, tmp_path / "c.txt")
        text = (tmp_path / "c.txt").read_text()
        assert text.startswith("geosep-logistic v1\n")
        assert load_calibrator(tmp_path / "c.txt") == cal

    def test_tampered_values(self, tmp_path):
        (tmp_path / "c.txt").write_text("geosep-isotonic v1\n0\t0.6\n1\t0.4\n")
        with pytest.raises(CalibratorFormatError, match="non-decreasing"):
            load_calibrator(tmp_path / "c.txt")

    def test_empty(self, tmp_path):
        (tmp_path / "c.txt").write_text("")
        with pytest.raises(CalibratorFormatError, match="empty"):
            load_calibrator(tmp_path / "c.txt")

    def test_version_mismatch(self, tmp_path):
        (tmp_path / "c.txt").write_text("geosep-isotonic v2\n0\t0.5\n")
        with pytest.raises(CalibratorFormatError, match="version"):
            load_calibrator(tmp_path / "c.txt")


def test_fit_curve_table(rng):
    s = rng.normal(size=1000)
    y = (s > 0).astype(float)
    cal = fit_isotonic(collect_pairs(s, y))
    rows = fit_curve_table(s, y, cal, n_bins=50)
    assert len(rows) == 50
    assert sum(r[4] for r in rows) == 1000
    assert all(a[2] <= b[2] for a, b in zip(rows, rows[1:]))
    assert rows[0][3] == 0.0 and rows[-1][3] == 1.0
