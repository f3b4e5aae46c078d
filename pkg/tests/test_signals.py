import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize_scalar

from edacs.signals import (
    BaselineDiff,
    DifferencedConvolution,
    DimensionError,
    ImpulseResponse,
    ScrEvents,
    Signal,
    biexponential,
    build_impulse_response,
    convolve,
    difference_adjoint_apply,
    difference_apply,
    difference_matrix,
    downsample,
    keep_largest,
    power_iteration_norm,
    read_signal_csv,
    toeplitz_adjoint_apply,
    toeplitz_matrix,
    write_series_csv,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestImpulseResponse:
    def test_canonical_length(self, canonical_h):
        assert len(canonical_h.samples) == 160

    def test_starts_at_zero(self, canonical_h):
        assert canonical_h.samples[0] == 0.0

    def test_peak_matches_dense_evaluation(self, canonical_h):
        u = np.arange(160) / 4.0
        dense = 2.0 * (np.exp(-u / 10.0) - np.exp(-u))
        k = int(np.argmax(dense))
        assert int(np.argmax(canonical_h.samples)) == k
        assert canonical_h.samples[k] == pytest.approx(dense[k], abs=1e-15)
        # grid peak sits next to the continuous maximiser
        opt = minimize_scalar(lambda v: -biexponential(v, 10.0, 1.0), bounds=(0, 10), method="bounded",
                              options={"xatol": 1e-10})
        analytic = 10.0 * 1.0 / 9.0 * math.log(10.0)
        assert opt.x == pytest.approx(analytic, abs=1e-6)
        assert analytic == pytest.approx(2.558, abs=1e-3)
        assert abs(k / 4.0 - analytic) <= 0.125

    def test_nonnegative_on_grid(self, canonical_h):
        assert np.all(canonical_h.samples >= 0)

    @pytest.mark.parametrize("tau1,tau2", [(1.0, 1.0), (1.0, 2.0), (5.0, 0.0), (5.0, -1.0)])
    def test_invalid_time_constants(self, tau1, tau2):
        with pytest.raises(ValueError):
            build_impulse_response(tau1, tau2)

    def test_non_positive_rate_or_duration(self):
        with pytest.raises(ValueError):
            build_impulse_response(sample_rate_hz=0)
        with pytest.raises(ValueError):
            build_impulse_response(duration=-1)

    def test_read_only(self, canonical_h):
        with pytest.raises(ValueError):
            canonical_h.samples[0] = 1.0


class TestConvolution:
    def test_unit_impulse(self, small_h):
        x = np.zeros(7)
        x[0] = 1.0
        out = convolve(small_h, x)
        np.testing.assert_array_equal(out, np.concatenate([small_h.samples, np.zeros(6)]))

    def test_hand_example(self):
        np.testing.assert_array_equal(convolve([1.0, 1.0], [1.0, 2.0, 3.0]), [1.0, 3.0, 5.0, 3.0])

    def test_matches_dense(self, rng):
        h, x = rng.standard_normal(10), rng.standard_normal(15)
        np.testing.assert_allclose(convolve(h, x), toeplitz_matrix(h, 15) @ x, rtol=0, atol=1e-12)

    def test_empty_operand(self):
        with pytest.raises(DimensionError):
            convolve([], [1.0])

    def test_two_dimensional_rejected(self):
        with pytest.raises(DimensionError):
            convolve(np.ones((2, 2)), [1.0])

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 8, elements=finite), arrays(float, 12, elements=finite),
           arrays(float, 12, elements=finite), finite, finite)
    def test_linearity(self, h, x, z, a, b):
        lhs = convolve(h, a * x + b * z)
        rhs = a * convolve(h, x) + b * convolve(h, z)
        scale = np.abs(h).sum() * (abs(a) * np.abs(x).max() + abs(b) * np.abs(z).max()) + 1e-300
        assert np.abs(lhs - rhs).max() <= 1e-12 * scale

    def test_adjoint_identity_vector(self):
        r = np.arange(8.0)
        h = np.zeros(4)
        h[0] = 1.0
        np.testing.assert_array_equal(toeplitz_adjoint_apply(h, r), r[:5])

    def test_adjoint_short_residual(self):
        with pytest.raises(DimensionError):
            toeplitz_adjoint_apply(np.ones(5), np.ones(3))


class TestDifference:
    def test_constant_null_space(self):
        assert not np.any(difference_apply(np.full(17, 3.7)))

    def test_hand_example(self):
        np.testing.assert_array_equal(difference_apply([3.0, 1.0, 4.0]), [2.0, -3.0])

    def test_adjoint_first_column(self):
        np.testing.assert_array_equal(difference_adjoint_apply([1.0, 0.0, 0.0]), [1.0, -1.0, 0.0, 0.0])

    def test_dense_matrix(self, rng):
        v = rng.standard_normal(9)
        np.testing.assert_array_equal(difference_matrix(9) @ v, difference_apply(v))

    def test_too_short(self):
        with pytest.raises(DimensionError):
            difference_apply([1.0])
        with pytest.raises(DimensionError):
            difference_adjoint_apply([])

    @pytest.mark.parametrize("n", [10, 100, 500])
    def test_operator_norm_at_most_two(self, n):
        est = power_iteration_norm(difference_apply, difference_adjoint_apply, n, iters=300)
        exact = np.linalg.norm(difference_matrix(n), 2)
        assert est <= 2 + 1e-9
        assert exact <= 2 + 1e-9
        assert est == pytest.approx(exact, rel=1e-2)


class TestDifferencedConvolution:
    def test_matches_dense(self, small_h, rng):
        A = DifferencedConvolution(small_h, 13)
        M = A.to_dense()
        assert M.shape == A.shape == (20 + 13 - 2, 13)
        x, r = rng.standard_normal(13), rng.standard_normal(A.shape[0])
        np.testing.assert_allclose(A.matvec(x), M @ x, atol=1e-12)
        np.testing.assert_allclose(A.rmatvec(r), M.T @ r, atol=1e-12)
        np.testing.assert_allclose(A.columns([0, 4, 12]), M[:, [0, 4, 12]], atol=0)

    def test_wrong_lengths(self, small_h):
        A = DifferencedConvolution(small_h, 5)
        with pytest.raises(DimensionError):
            A.matvec(np.ones(4))
        with pytest.raises(DimensionError):
            A.rmatvec(np.ones(3))


class TestKeepLargest:
    def test_full_length(self, rng):
        v = rng.standard_normal(6)
        np.testing.assert_array_equal(keep_largest(v, 6), v)

    def test_zero(self, rng):
        assert not np.any(keep_largest(rng.standard_normal(6), 0))

    def test_tie_break_lowest_index(self):
        np.testing.assert_array_equal(keep_largest([-5.0, 3.0, 3.0, 1.0], 2), [-5.0, 3.0, 0.0, 0.0])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            keep_largest([1.0, 2.0], 3)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(1, 30), elements=finite))
    def test_tail_non_increasing(self, v):
        tails = [np.abs(v - keep_largest(v, k)).sum() for k in range(v.size + 1)]
        for k, out in enumerate(keep_largest(v, k) for k in range(v.size + 1)):
            assert np.count_nonzero(out) <= k
        assert all(b <= a for a, b in zip(tails, tails[1:]))


class TestContainers:
    def test_signal_validation(self):
        with pytest.raises(ValueError):
            Signal(np.array([]), 4.0)
        with pytest.raises(ValueError):
            Signal(np.array([1.0, np.nan]), 4.0)
        with pytest.raises(ValueError):
            Signal(np.array([1.0]), 0.0)

    def test_impulse_validation(self):
        with pytest.raises(ValueError):
            ImpulseResponse(np.array([]), 10, 1, 4)

    def test_event_membership(self):
        x = ScrEvents(np.array([3.0, 0.0, 0.01, -0.02]), s=1, delta=0.03)
        assert x.tail_l1() == pytest.approx(0.03)
        assert x.is_member()
        assert not ScrEvents(x.values, 1, 0.02).is_member()

    def test_baseline_bounds(self):
        with pytest.raises(ValueError):
            BaselineDiff(np.zeros(3), c=4, gamma=0.0)
        with pytest.raises(ValueError):
            BaselineDiff(np.zeros(3), c=1, gamma=-1.0)


class TestDownsample:
    def test_constant(self):
        out = downsample(Signal(np.full(64, 2.5), 32.0), 4.0)
        assert out.sample_rate_hz == 4.0
        np.testing.assert_array_equal(out.samples, np.full(8, 2.5))

    def test_block_means(self):
        out = downsample(Signal(np.array([1.0, 2.0, 3.0, 4.0]), 4.0), 2.0)
        np.testing.assert_array_equal(out.samples, [1.5, 3.5])

    def test_partial_block_dropped(self):
        out = downsample(Signal(np.arange(7.0), 4.0), 2.0)
        np.testing.assert_array_equal(out.samples, [0.5, 2.5, 4.5])

    def test_non_integer_ratio(self):
        with pytest.raises(ValueError):
            downsample(Signal(np.ones(10), 5.0), 2.0)


def test_csv_round_trip(tmp_path, rng):
    v = rng.standard_normal(11)
    write_series_csv(tmp_path / "a.csv", v, 4.0)
    sig = read_signal_csv(tmp_path / "a.csv", 4.0)
    np.testing.assert_array_equal(sig.samples, v)
    write_series_csv(tmp_path / "b.csv", v)
    np.testing.assert_array_equal(read_signal_csv(tmp_path / "b.csv", 4.0).samples, v)


def test_csv_bad_row(tmp_path):
    (tmp_path / "bad.csv").write_text("value\n1.0\nfoo\n")
    with pytest.raises(ValueError, match="row 3"):
        read_signal_csv(tmp_path / "bad.csv", 4.0)
