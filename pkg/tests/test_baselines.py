import numpy as np
import pytest

from simdps.baselines import ArModel, ar_extrapolate, ar_fit, ar_inpaint, gap_metrics, sim_inpaint
from simdps.errors import DataError, ShapeError
from simdps.signal import AudioSignal, GapMask, apply_mask


def unit_circle_ar(rng, p, n):
    """Undamped AR(p) recursion: all poles on the unit circle, so it predicts itself exactly."""
    w = rng.uniform(0.05, 3.0, size=p // 2)
    poly = np.array([1.0])
    for wk in w:
        poly = np.convolve(poly, [1.0, -2 * np.cos(wk), 1.0])
    c = -poly[1:]
    x = list(rng.normal(size=p))
    for _ in range(n - p):
        x.append(float(np.dot(c, x[-1:-p - 1:-1])))
    return np.array(x)


class TestArFit:
    @pytest.mark.parametrize("w", [0.05, 0.3, 1.0, 2.5])
    def test_pure_sinusoid(self, w):
        x = np.sin(w * np.arange(2000) + 0.4)
        c = ar_fit(x, 2).coefficients
        np.testing.assert_allclose(c, [2 * np.cos(w), -1.0], atol=1e-6)

    def test_burg_lattice_is_close_but_biased(self):
        x = np.sin(0.3 * np.arange(2000) + 0.4)
        c = ar_fit(x, 2, method="burg").coefficients
        np.testing.assert_allclose(c, [2 * np.cos(0.3), -1.0], atol=1e-2)
        assert ArModel(c).is_stable()

    def test_white_noise(self):
        x = np.random.default_rng(0).normal(size=10_000)
        assert np.all(np.abs(ar_fit(x, 2).coefficients) < 0.1)

    def test_zero_signal(self):
        assert not ar_fit(np.zeros(100), 4).coefficients.any()

    def test_too_short(self):
        with pytest.raises(DataError):
            ar_fit(np.ones(10), 4)

    def test_unknown_method(self):
        with pytest.raises(DataError):
            ar_fit(np.ones(100), 2, method="yule")

    def test_extrapolation_follows_recursion(self):
        m = ArModel(np.array([1.5, -0.7]))
        out = ar_extrapolate(m, np.array([1.0, 2.0]), 3)
        np.testing.assert_allclose(out, [1.5 * 2 - 0.7, 1.5 * 2.3 - 0.7 * 2, 1.5 * 2.05 - 0.7 * 2.3])


class TestArInpaint:
    @pytest.mark.parametrize("rate", [16000, 44100])
    def test_sinusoid_tenth_second_gap(self, rate):
        n = rate
        x = 0.8 * np.sin(2 * np.pi * 440 * np.arange(n) / rate + 0.2)
        g = rate // 10
        mask = GapMask(n, n // 2, n // 2 + g - 1)
        out = ar_inpaint(apply_mask(AudioSignal(x, rate), mask), order=32)
        rmse = np.sqrt(np.mean((out.samples[mask.gap] - x[mask.gap]) ** 2))
        assert rmse < 1e-3

    @pytest.mark.parametrize("p", [4, 8, 16])
    def test_ar_process_is_filled_exactly(self, p):
        rng = np.random.default_rng(p)
        x = unit_circle_ar(rng, p, 3000)
        mask = GapMask(3000, 1500, 1549)
        out = ar_inpaint(apply_mask(AudioSignal(x, 1.0), mask), order=p, context=1000)
        assert np.max(np.abs(out.samples - x)) < 1e-6 * np.max(np.abs(x))

    def test_zero_context(self):
        mask = GapMask(400, 100, 199)
        out = ar_inpaint(apply_mask(AudioSignal(np.zeros(400), 1.0), mask), order=8)
        assert not out.samples.any()

    def test_one_sided(self):
        x = np.sin(0.2 * np.arange(300))
        mask = GapMask(300, 200, 299)
        out = ar_inpaint(apply_mask(AudioSignal(x, 1.0), mask), order=4)
        np.testing.assert_allclose(out.samples, x, atol=1e-8)

    def test_observed_samples_untouched(self, rng):
        x = rng.normal(size=2000)
        mask = GapMask(2000, 900, 1099)
        out = ar_inpaint(apply_mask(AudioSignal(x, 1.0), mask), order=16)
        np.testing.assert_array_equal(out.samples[:900], x[:900])
        np.testing.assert_array_equal(out.samples[1100:], x[1100:])
        assert np.all(np.isfinite(out.samples))


class TestSimInpaint:
    def test_oracle_guide(self, rng):
        x = AudioSignal(rng.normal(size=2000), 1000)
        mask = GapMask(2000, 500, 1499)
        out = sim_inpaint(apply_mask(x, mask), x.samples, fade_ms=10)
        np.testing.assert_allclose(out.samples, x.samples, atol=1e-15)

    def test_ramps_at_both_boundaries(self):
        rate, n = 1000, 200
        mask = GapMask(n, 80, 119)
        out = sim_inpaint(apply_mask(AudioSignal(np.zeros(n), rate), mask), np.ones(n), fade_ms=10).samples
        assert not out[:70].any() and not out[130:].any()
        assert np.all(out[80:120] == 1.0)
        assert np.all(np.diff(out[70:80]) > 0) and np.all(np.diff(out[120:130]) < 0)

    def test_fade_limited_by_context(self):
        mask = GapMask(100, 3, 96)
        out = sim_inpaint(apply_mask(AudioSignal(np.zeros(100), 1000), mask), np.ones(100), fade_ms=10)
        assert np.all(np.isfinite(out.samples)) and np.all(out.samples[3:97] == 1)

    def test_guide_length(self):
        mask = GapMask(100, 10, 20)
        with pytest.raises(ShapeError):
            sim_inpaint(apply_mask(AudioSignal(np.zeros(100), 1.0), mask), np.zeros(99))


class TestMetrics:
    def test_identical(self, rng):
        x = rng.normal(size=3000)
        m = gap_metrics(x, x, GapMask(3000, 500, 2499))
        assert m == {"gap_rmse": 0.0, "gap_lsd": 0.0, "boundary_jump": 0.0}

    def test_offset_in_gap(self, rng):
        x = rng.normal(size=100)
        mask = GapMask(100, 40, 59)
        y = x.copy()
        y[mask.gap] += 0.1
        m = gap_metrics(y, x, mask)
        assert m["gap_rmse"] == pytest.approx(0.1)
        assert m["gap_lsd"] is None
        assert m["boundary_jump"] == pytest.approx(0.1)

    def test_noise_fill_has_jump(self, rng):
        x = np.sin(0.01 * np.arange(1000))
        mask = GapMask(1000, 400, 599)
        y = x.copy()
        y[mask.gap] = rng.normal(size=200)
        assert gap_metrics(y, x, mask)["boundary_jump"] > 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gap_metrics(np.zeros(10), np.zeros(11), GapMask(10, 2, 3))
