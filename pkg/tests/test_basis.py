"""Design-matrix construction: time standardization, Fourier columns,
local kernels, and their invariants."""

import math

import numpy as np
import pytest

from circafactor.basis import (
    NyquistViolationError,
    PeriodSet,
    fourier_design,
    local_design,
    make_designs,
    standardize_times,
)


class TestStandardizeTimes:
    def test_two_hour_grid_maps_affinely(self):
        grid = standardize_times(np.arange(0, 47, 2))
        assert grid.n_times == 24
        np.testing.assert_allclose(grid.unit_times, np.arange(0, 47, 2) / 46.0)
        assert grid.unit_times[0] == 0.0 and grid.unit_times[-1] == 1.0

    def test_thirteen_point_four_hour_grid(self):
        grid = standardize_times(np.arange(0, 49, 4))
        assert grid.n_times == 13
        np.testing.assert_allclose(grid.unit_times, np.arange(13) / 12.0)

    def test_single_time_rejected(self):
        with pytest.raises(ValueError):
            standardize_times([5.0])

    def test_duplicate_and_decreasing_rejected(self):
        with pytest.raises(ValueError):
            standardize_times([0.0, 2.0, 2.0, 4.0])
        with pytest.raises(ValueError):
            standardize_times([0.0, 4.0, 2.0])

    def test_original_hours_preserved(self):
        times = [1.0, 3.0, 7.0]
        grid = standardize_times(times)
        np.testing.assert_array_equal(grid.times_hours, times)


class TestFourierDesign:
    def test_time_zero_rows(self):
        grid = standardize_times([0.0, 2.0, 4.0])
        B = fourier_design(grid, PeriodSet(np.array([7.0, 24.0])))
        np.testing.assert_allclose(B[0], [0.0, 1.0, 0.0, 1.0], atol=1e-15)

    def test_quarter_period(self):
        grid = standardize_times([0.0, 6.0, 13.0])
        B = fourier_design(grid, PeriodSet(np.array([24.0])))
        np.testing.assert_allclose(B[1], [1.0, 0.0], atol=1e-12)

    def test_default_grid_column_norms_match_direct_evaluation(self):
        # Oracle: scalar re-evaluation of every entry with math.sin/cos.
        times = np.arange(0, 47, 2.0)
        periods = [4.0, 6.0, 8.0, 12.0, 24.0]
        B = fourier_design(standardize_times(times), PeriodSet(np.array(periods)))
        assert B.shape == (24, 10)
        expected = np.empty_like(B)
        for j, t in enumerate(times):
            for m, w in enumerate(periods):
                expected[j, 2 * m] = math.sin(2 * math.pi * t / w)
                expected[j, 2 * m + 1] = math.cos(2 * math.pi * t / w)
        np.testing.assert_allclose(B, expected, atol=0)
        np.testing.assert_allclose(
            np.linalg.norm(B, axis=0), np.linalg.norm(expected, axis=0), atol=0
        )

    def test_nyquist_boundary_allowed_strictly_below_rejected(self):
        grid = standardize_times(np.arange(0, 47, 2.0))
        fourier_design(grid, PeriodSet(np.array([4.0])))  # boundary 2x spacing is fine
        with pytest.raises(NyquistViolationError):
            fourier_design(grid, PeriodSet(np.array([3.9])))

    def test_period_set_validation(self):
        with pytest.raises(ValueError):
            PeriodSet(np.array([]))
        with pytest.raises(ValueError):
            PeriodSet(np.array([24.0, 12.0]))
        with pytest.raises(ValueError):
            PeriodSet(np.array([-4.0, 24.0]))

    def test_periodicity_in_raw_hours(self):
        # Columns for period w agree at t and t + w, whatever the grid.
        w = 11.0
        base = np.linspace(0.0, 30.0, 17)
        ps = PeriodSet(np.array([w]))
        B0 = fourier_design(standardize_times(base), ps)
        B1 = fourier_design(standardize_times(base + w), ps)
        np.testing.assert_allclose(B0, B1, atol=1e-9)

    def test_deterministic(self):
        grid = standardize_times(np.arange(0, 47, 2.0))
        ps = PeriodSet(np.array([4.0, 24.0]))
        np.testing.assert_array_equal(fourier_design(grid, ps), fourier_design(grid, ps))


class TestLocalDesign:
    def test_unit_value_at_knot(self):
        grid = standardize_times([0.0, 10.0, 46.0])
        C, knots = local_design(grid, 3, kind="gaussian", bandwidth=25.0)
        assert knots[0] == 0.0 and knots[-1] == 1.0
        assert C[0, 0] == 1.0 and C[-1, -1] == 1.0

    def test_kernel_value_at_known_distance(self):
        # unit distance 0.2 with bandwidth 25 gives exp(-1)
        grid = standardize_times([0.0, 0.2, 1.0])
        C, knots = local_design(grid, 2, kind="gaussian", bandwidth=25.0)
        assert knots[0] == 0.0
        np.testing.assert_allclose(C[1, 0], math.exp(-1.0), rtol=1e-12)

    def test_entries_in_unit_interval(self):
        grid = standardize_times(np.arange(0, 47, 2.0))
        C, _ = local_design(grid, 10, kind="gaussian", bandwidth=25.0)
        assert np.all(C > 0) and np.all(C <= 1.0)

    def test_invalid_bandwidth(self):
        grid = standardize_times([0.0, 1.0, 2.0])
        with pytest.raises(ValueError):
            local_design(grid, 3, kind="gaussian", bandwidth=0.0)
        with pytest.raises(ValueError):
            local_design(grid, 0, kind="gaussian", bandwidth=1.0)

    def test_bspline_partition_of_unity(self):
        grid = standardize_times(np.arange(0, 49, 4.0))
        C, _ = local_design(grid, 10, kind="bspline")
        assert C.shape == (13, 10)
        np.testing.assert_allclose(C.sum(axis=1), 1.0, atol=1e-12)

    def test_bspline_needs_enough_columns(self):
        grid = standardize_times([0.0, 1.0, 2.0])
        with pytest.raises(ValueError):
            local_design(grid, 3, kind="bspline")

    def test_kernels_invariant_to_hour_offset(self):
        # Gaussian kernels depend only on the unit-scaled times.
        a = standardize_times(np.arange(0, 47, 2.0))
        b = standardize_times(np.arange(100, 147, 2.0))
        Ca, _ = local_design(a, 10, bandwidth=25.0)
        Cb, _ = local_design(b, 10, bandwidth=25.0)
        np.testing.assert_array_equal(Ca, Cb)


class TestMakeDesigns:
    def test_shapes_and_metadata(self):
        d = make_designs(np.arange(0, 47, 2.0), (4, 6, 8, 12, 24), 10)
        assert d.B.shape == (24, 10)
        assert d.C.shape == (24, 10)
        assert d.n_pairs == 5 and d.n_local == 10
        assert d.kernel_kind == "gaussian"
