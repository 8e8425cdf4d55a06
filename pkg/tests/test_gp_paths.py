import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gphazard.errors import DomainError, NumericError
from gphazard.gp_paths import (
    DyadicGrid,
    GpPath,
    SupConstraint,
    TimeGrid,
    dyadic_sup_bound,
    h_weight,
    mc_event_probability,
    sample_path,
    sample_path_matrix,
    transform_hat,
)
from gphazard.kernels import StationaryKernel

H0_AT_1 = 1.8473195743340918   # 1/(1 + ln(1 - e^-1))
H0_AT_2 = 0.5392037401775174   # 1/(2 + ln(1 - e^-2))


class TestGrids:
    def test_dyadic_grid_shape(self):
        g = DyadicGrid(2.0, 3)
        assert len(g.points) == 9
        assert g.points[0] == 0.0
        assert g.points[-1] == 2.0
        assert g.tau == 2.0
        assert_allclose(np.diff(g.as_array()), 0.25)

    def test_dyadic_grid_validation(self):
        with pytest.raises(DomainError):
            DyadicGrid(0.0, 3)
        with pytest.raises(DomainError):
            DyadicGrid(1.0, -1)

    def test_time_grid_validation(self):
        with pytest.raises(DomainError):
            TimeGrid((0.5, 1.0))
        with pytest.raises(DomainError):
            TimeGrid((0.0, 1.0, 1.0))
        assert TimeGrid((0.0,)).tau == 0.0


class TestSampling:
    def test_deterministic_in_seed(self):
        k = StationaryKernel.se()
        g = DyadicGrid(1.0, 4)
        assert sample_path(k, g, seed=42).values == sample_path(k, g, seed=42).values
        assert sample_path(k, g, seed=42).values != sample_path(k, g, seed=43).values

    def test_single_point_grid_is_scaled_normal(self):
        k = StationaryKernel.se(variance=4.0)
        path = sample_path(k, TimeGrid((0.0,)), seed=9)
        z = np.random.default_rng(9).standard_normal(1)[0]
        assert_allclose(path.values[0], 2.0 * z, rtol=1e-9)

    def test_matrix_moments_match_kernel(self):
        k = StationaryKernel.se()
        g = DyadicGrid(1.0, 6)
        draws = sample_path_matrix(k, g, reps=10_000, seed=123)
        var = draws.var(axis=0)
        assert np.all(np.abs(var - 1.0) < 0.05)
        i1 = g.points.index(1.0)
        cov = np.cov(draws[:, 0], draws[:, i1])[0, 1]
        assert abs(cov - math.exp(-1.0)) < 0.02

    def test_matrix_deterministic(self):
        k = StationaryKernel.ou()
        g = DyadicGrid(1.0, 3)
        a = sample_path_matrix(k, g, reps=50, seed=5)
        b = sample_path_matrix(k, g, reps=50, seed=5)
        assert np.array_equal(a, b)

    def test_constant_kernel_needs_jitter_but_samples(self):
        # rank-one covariance: only the escalating jitter makes it factorizable
        path = sample_path(StationaryKernel.constant(), DyadicGrid(1.0, 3), seed=1)
        vals = np.asarray(path.values)
        assert np.all(np.isfinite(vals))
        assert np.max(np.abs(vals - vals[0])) < 1e-3

    def test_non_psd_table_raises_numeric_error(self):
        k = StationaryKernel("tabulated", table_t=(0.0, 1.0, 2.0), table_k=(1.0, 0.9, -0.9))
        with pytest.raises(NumericError, match="escalation"):
            sample_path(k, DyadicGrid(2.0, 1), seed=0)

    def test_path_refuses_extrapolation(self):
        path = sample_path(StationaryKernel.se(), DyadicGrid(1.0, 2), seed=0)
        with pytest.raises(DomainError):
            path.at(1.5)
        with pytest.raises(DomainError):
            path.at(-0.1)


class TestWeight:
    def test_frozen_values(self):
        assert_allclose(h_weight(0, 1.0), H0_AT_1, rtol=1e-12)
        assert_allclose(h_weight(0, 2.0), H0_AT_2, rtol=1e-12)
        assert_allclose(h_weight(1, 1.0), 2.0 * H0_AT_1, rtol=1e-12)
        assert_allclose(h_weight(3, 2.0), 4.0 * H0_AT_2, rtol=1e-12)

    def test_constant_below_one_continuous_at_one(self):
        t = np.linspace(0.0, 1.0, 50)
        assert_allclose(h_weight(0, t), H0_AT_1, rtol=1e-12)
        assert abs(h_weight(0, 1.0 + 1e-9) - H0_AT_1) < 1e-6

    def test_strictly_decreasing_beyond_one(self):
        t = np.linspace(1.0, 100.0, 500)
        vals = h_weight(2, t)
        assert np.all(np.diff(vals) < 0)

    def test_maximum_attained_at_one(self):
        t = np.linspace(0.0, 50.0, 1000)
        assert np.max(h_weight(0, t)) <= h_weight(0, 1.0) + 1e-15

    def test_large_t_ratio_tends_to_one(self):
        ratio = h_weight(4, 1e3) * 1e3 / 5.0
        assert abs(ratio - 1.0) < 0.01

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            h_weight(-1, 1.0)
        with pytest.raises(DomainError):
            h_weight(0, -0.5)


class TestTransformHat:
    def test_ones_on_unit_interval(self):
        g = DyadicGrid(1.0, 3)
        hat = transform_hat(GpPath(g, (1.0,) * 9), d=0)
        assert_allclose(hat.values, H0_AT_1, rtol=1e-12)

    def test_value_at_two(self):
        g = DyadicGrid(2.0, 1)
        hat = transform_hat(GpPath(g, (0.0, 0.0, 1.0)), d=0)
        assert_allclose(hat.values[2], H0_AT_2, rtol=1e-12)

    def test_linearity(self):
        g = DyadicGrid(3.0, 4)
        rng = np.random.default_rng(0)
        a = rng.standard_normal(17)
        b = rng.standard_normal(17)
        lhs = transform_hat(GpPath(g, tuple(a + b)), d=1)
        rhs_a = transform_hat(GpPath(g, tuple(a)), d=1)
        rhs_b = transform_hat(GpPath(g, tuple(b)), d=1)
        assert_allclose(lhs.values, np.asarray(rhs_a.values) + np.asarray(rhs_b.values), atol=1e-12)


class TestDyadicBound:
    def test_zero_path(self):
        assert dyadic_sup_bound(GpPath(DyadicGrid(1.0, 3), (0.0,) * 9)) == 0.0

    def test_linear_path_closed_form(self):
        # v(t) = t on [0,1]: bound = 0 + 1 + sum_{n<=4} 2^-n = 1.9375
        g = DyadicGrid(1.0, 4)
        path = GpPath(g, tuple(np.linspace(0, 1, 17)))
        assert_allclose(dyadic_sup_bound(path), 1.9375, rtol=1e-12)
        assert dyadic_sup_bound(path) <= 2.0

    def test_dominates_grid_sup_on_sampled_paths(self):
        k = StationaryKernel.se()
        g = DyadicGrid(2.0, 6)
        draws = sample_path_matrix(k, g, reps=1000, seed=77)
        for row in draws:
            path = GpPath(g, tuple(row))
            assert dyadic_sup_bound(path) >= path.sup_abs()

    def test_level_validation(self):
        path = GpPath(DyadicGrid(1.0, 3), (0.0,) * 9)
        with pytest.raises(DomainError):
            dyadic_sup_bound(path, max_level=4)
        plain = GpPath(TimeGrid((0.0, 0.3, 1.0)), (0.0, 0.0, 0.0))
        with pytest.raises(DomainError):
            dyadic_sup_bound(plain)


class TestEventProbability:
    def test_infinite_threshold_is_certain(self):
        rep = mc_event_probability(
            StationaryKernel.se(), 0, False,
            [SupConstraint((0.0, 1.0), math.inf, "le")],
            horizon=1.0, level=4, reps=200, seed=3,
        )
        assert rep.p_joint == 1.0
        assert rep.ci_halfwidth == 0.0

    def test_deterministic(self):
        args = (StationaryKernel.ou(), 0, False,
                [SupConstraint((0.0, 2.0), 1.0, "le")], 2.0, 5, 500, 21)
        assert mc_event_probability(*args).p_joint == mc_event_probability(*args).p_joint

    def test_joint_at_least_product_minus_ci(self):
        rep = mc_event_probability(
            StationaryKernel.se(), 0, False,
            [SupConstraint((0.0, 1.0), 1.0, "le"), SupConstraint((1.0, 3.0), 1.5, "le")],
            horizon=3.0, level=6, reps=4000, seed=101,
        )
        p1, p2 = rep.p_marginals
        assert rep.p_joint >= p1 * p2 - 3.0 * rep.ci_halfwidth

    def test_weighted_tail_monotone_in_tau(self):
        def prob(tau):
            return mc_event_probability(
                StationaryKernel.se(), 0, True,
                [SupConstraint((tau, tau + 20.0), 1.0, "ge")],
                horizon=tau + 20.0, level=7, reps=2000, seed=55,
            ).p_joint

        assert prob(20.0) <= prob(5.0)

    def test_validation(self):
        k = StationaryKernel.se()
        with pytest.raises(DomainError):
            mc_event_probability(k, 0, False, [], 1.0, 3, 200, 0)
        with pytest.raises(DomainError):
            mc_event_probability(k, 0, False,
                                 [SupConstraint((0.0, 2.0), 1.0, "le")], 1.0, 3, 200, 0)
        with pytest.raises(DomainError):
            mc_event_probability(k, 0, False,
                                 [SupConstraint((0.0, 1.0), 1.0, "le")], 1.0, 3, 50, 0)
        with pytest.raises(DomainError):
            mc_event_probability(k, 0, False,
                                 [SupConstraint((0.26, 0.30), 1.0, "le")], 1.0, 2, 200, 0)
        with pytest.raises(DomainError):
            SupConstraint((1.0, 0.5), 1.0, "le")
        with pytest.raises(DomainError):
            SupConstraint((0.0, 1.0), 1.0, "between")
