import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.cache import amplification_cache
from app.errors import BracketError, EstimateInvalidError, InputError
from app.lfa import (
    amplification_factor,
    angular_extent,
    assemble_eigenmatrix,
    beta_min,
    ellipse_rho_estimate,
    fit_ellipse,
    half_plane_condition,
    harmonics,
    hpc_min_beta,
    max_amplification,
    minimal_beta,
    numerical_smoother_beta_min,
    preconditioned_eigenmatrix,
    preconditioned_spectrum,
    regional_beta_min,
    resonance_frequency,
    sample_frequencies,
    smoother_beta_min,
    smoother_bounds,
)
from app.models import EllipseParams, Frequency, KGridPlan, LevelGeometry, ShiftedWavenumber


def direct_two_grid(plan: KGridPlan, members):
    """Two-grid eigenmatrix written out from the component symbols."""
    h = 1.0 / plan.finest_points
    sigma_tilde = plan.wavenumber.sigma_tilde
    d = plan.dimension
    members = np.asarray(members, dtype=float)
    a_fine = np.sum(2 - 2 * np.cos(members), axis=1) / h ** 2 + sigma_tilde
    a_coarse = np.sum(2 - 2 * np.cos(2 * members[0])) / (2 * h) ** 2 + sigma_tilde
    transfer = np.prod(0.5 * (np.cos(members) + 1), axis=1)
    smoother = 1 - plan.omega + 2 * plan.omega * np.sum(np.cos(members), axis=1) / (2 * d + sigma_tilde * h ** 2)
    cgc = np.eye(len(members)) - np.outer(transfer, transfer * a_fine) / a_coarse
    return np.diag(smoother ** plan.nu2) @ cgc @ np.diag(smoother ** plan.nu1)


class TestHarmonics:
    def test_one_dimensional(self):
        assert harmonics([math.pi / 4], 1).members == [(pytest.approx(math.pi / 4),),
                                                       (pytest.approx(-3 * math.pi / 4),)]

    def test_zero_uses_positive_sign(self):
        members = harmonics([0.0], 1).members
        assert members[0] == (0.0,)
        assert members[1][0] == pytest.approx(math.pi)

    def test_two_dimensional_order(self):
        q = math.pi / 4
        members = harmonics([q, -q], 2).members
        expected = [(q, -q), (-3 * q, -q), (q, 3 * q), (-3 * q, 3 * q)]
        for member, target in zip(members, expected):
            assert member == pytest.approx(target)

    def test_members_alias_on_coarse_grid(self):
        members = harmonics([0.3, -1.2], 2).members
        points = np.arange(0, 9, 2)
        x, y = np.meshgrid(points, points, indexing="ij")
        modes = [np.exp(1j * (t1 * x + t2 * y)) for t1, t2 in members]
        for mode in modes[1:]:
            np.testing.assert_allclose(mode, modes[0], atol=1e-12)

    def test_out_of_base_cell(self):
        with pytest.raises(InputError):
            harmonics([math.pi / 2 + 0.1], 1)

    def test_coarse_frequency(self):
        assert harmonics([0.25], 1).coarse == (0.5,)

    def test_accepts_frequency_model(self):
        frequency = Frequency(components=(0.3, -1.2))
        assert frequency.dimension == 2
        assert harmonics(frequency, 2).members == harmonics([0.3, -1.2], 2).members

    def test_frequency_outside_period(self):
        with pytest.raises(ValidationError):
            Frequency(components=(4.0,))


class TestEigenmatrix:
    @pytest.mark.parametrize("dimension,levels,size", [(1, 2, 2), (1, 3, 4), (1, 4, 8), (2, 2, 4),
                                                       (2, 3, 16), (2, 4, 64)])
    def test_dimensions(self, dimension, levels, size):
        plan = KGridPlan(dimension=dimension, levels=levels, finest_points=32, sigma=-200.0, beta=0.5)
        theta = [0.3] if dimension == 1 else [0.3, -0.2]
        assert assemble_eigenmatrix(plan, theta).shape == (size, size)

    @pytest.mark.parametrize("dimension", [1, 2])
    def test_two_grid_matches_direct_assembly(self, dimension):
        plan = KGridPlan(dimension=dimension, levels=2, finest_points=64, sigma=-500.0, beta=0.3,
                         nu1=2, nu2=1)
        theta = [0.4] if dimension == 1 else [0.4, -0.9]
        expected = direct_two_grid(plan, harmonics(theta, dimension).members)
        np.testing.assert_allclose(assemble_eigenmatrix(plan, theta), expected, rtol=0, atol=1e-12)

    def test_regularized_poisson_point(self):
        plan = KGridPlan(levels=2, finest_points=64, sigma=-1e-6)
        theta = [math.pi / 2]
        expected = direct_two_grid(plan, harmonics(theta, 1).members)
        assert amplification_factor(plan, theta) == pytest.approx(max(abs(np.linalg.eigvals(expected))))

    def test_regularized_poisson_two_grid_factor(self):
        plan = KGridPlan(levels=2, finest_points=64, sigma=-1e-6)
        assert max_amplification(plan).value < 0.4

    def test_no_smoothing_is_rejected(self):
        with pytest.raises(ValidationError):
            KGridPlan(nu1=0, nu2=0)


class TestAmplification:
    def test_small_shift_diverges_near_resonance(self, two_grid_1d):
        result = max_amplification(two_grid_1d.with_beta(0.02))
        assert result.value > 1.0
        assert abs(abs(result.theta[0]) - math.asin(math.sqrt(500 / 4096))) < 0.05

    def test_larger_shift_converges(self, two_grid_1d):
        assert max_amplification(two_grid_1d.with_beta(0.04)).value <= 1.0

    def test_huge_shift_is_damped(self, two_grid_1d):
        assert max_amplification(two_grid_1d.with_beta(10.0)).value < 1.0

    def test_threshold_stops_early(self, two_grid_1d):
        plan = two_grid_1d.with_beta(0.02)
        full = max_amplification(plan)
        early = max_amplification(plan, threshold=1.0)
        assert early.value > 1.0
        assert early.value <= full.value

    def test_results_are_cached(self, two_grid_1d):
        max_amplification(two_grid_1d.with_beta(0.5))
        hits = amplification_cache.get_stats()["hits"]
        max_amplification(two_grid_1d.with_beta(0.5))
        assert amplification_cache.get_stats()["hits"] == hits + 1


class TestSampling:
    def test_one_dimensional_folding(self, two_grid_1d):
        folded = sample_frequencies(two_grid_1d)
        assert folded.shape == (512, 1)
        assert np.all(folded > 0)
        assert sample_frequencies(two_grid_1d, fold=False).shape == (1024, 1)

    def test_two_dimensional_folding(self):
        plan = KGridPlan(dimension=2, finest_points=16, theta_samples=8)
        folded = sample_frequencies(plan)
        assert folded.shape == (10, 2)
        assert np.all(folded[:, 0] >= folded[:, 1])
        assert sample_frequencies(plan, fold=False).shape == (64, 2)

    def test_gauss_seidel_is_not_folded(self):
        plan = KGridPlan(smoother="gauss-seidel", finest_points=16, theta_samples=16)
        assert sample_frequencies(plan).shape == (16, 1)

    def test_odd_sample_count_rejected(self):
        with pytest.raises(ValidationError):
            KGridPlan(theta_samples=7)


class TestBisection:
    def test_zero_when_satisfied_unshifted(self):
        assert minimal_beta(lambda beta: True) == 0.0

    def test_finds_threshold(self):
        value = minimal_beta(lambda beta: beta >= 0.3)
        assert 0.3 <= value <= 0.3 + 5e-4

    def test_doubles_bracket(self):
        value = minimal_beta(lambda beta: beta >= 10.0)
        assert 10.0 <= value <= 10.0 + 5e-4

    def test_bracket_exhausted(self):
        with pytest.raises(BracketError):
            minimal_beta(lambda beta: False)

    def test_beta_min_between_known_shifts(self, two_grid_1d):
        value = beta_min(two_grid_1d)
        assert 0.02 < value <= 0.04 + 5e-4
        assert max_amplification(two_grid_1d.with_beta(value)).value <= 1.0

    def test_beta_min_requires_negative_sigma(self, two_grid_1d):
        with pytest.raises(InputError):
            beta_min(two_grid_1d.with_sigma(10.0))

    def test_sigma_h2_invariance(self):
        plan = KGridPlan(levels=2, finest_points=32)
        for sigma in (-150.0, -400.0, -900.0):
            coarse = beta_min(plan.with_sigma(sigma))
            fine = beta_min(plan.model_copy(update={"finest_points": 64, "sigma": 4 * sigma}))
            assert abs(coarse - fine) < 1e-3

    def test_regional_beta_min_takes_largest(self, two_grid_1d):
        beta, sigma = regional_beta_min(two_grid_1d, [-300.0, -500.0])
        assert beta == pytest.approx(max(beta_min(two_grid_1d.with_sigma(-300.0)),
                                         beta_min(two_grid_1d)))
        assert sigma in (-300.0, -500.0)


class TestSmootherBounds:
    def test_zero_bound_closed_form(self, geom64):
        omega = 2.0 / 3.0
        s = -100.0 / 64 ** 2
        expected = math.sqrt(4.0 / ((omega - 2.0) * s) - 1.0)
        bounds = smoother_bounds(geom64, -100.0, omega)
        assert bounds.zero_bound == pytest.approx(expected)
        assert smoother_beta_min(geom64, -100.0, omega) >= expected

    def test_diverges_towards_zero_wavenumber(self, geom64):
        assert smoother_beta_min(geom64, -1e-8, 2.0 / 3.0) > 1e3

    def test_rejects_non_negative_sigma(self, geom64):
        with pytest.raises(InputError):
            smoother_beta_min(geom64, 0.0, 2.0 / 3.0)

    def test_matches_numerical_bisection(self, geom64):
        closed = smoother_beta_min(geom64, -2000.0, 2.0 / 3.0)
        numerical = numerical_smoother_beta_min(geom64, -2000.0, 2.0 / 3.0)
        assert numerical == pytest.approx(closed, abs=1e-3)


class TestResonanceFrequency:
    def test_value(self, geom64):
        theta = resonance_frequency(ShiftedWavenumber(sigma=-500.0), geom64)
        assert theta[0] == pytest.approx(0.3576, abs=1e-4)
        assert theta[1] == pytest.approx(-theta[0])

    def test_edge_of_validity(self, geom64):
        theta = resonance_frequency(ShiftedWavenumber(sigma=-64.0 ** 2), geom64)
        assert theta[0] == pytest.approx(math.pi / 2)

    def test_outside_validity(self, geom64):
        assert resonance_frequency(ShiftedWavenumber(sigma=-2 * 64.0 ** 2), geom64) is None
        assert resonance_frequency(ShiftedWavenumber(sigma=10.0), geom64) is None


class TestPreconditioned:
    def test_unshifted_is_similar_to_cycle_complement(self):
        plan = KGridPlan(levels=2, finest_points=32, sigma=-200.0)
        theta = [0.7]
        K = preconditioned_eigenmatrix(plan, theta)
        M = assemble_eigenmatrix(plan, theta)
        np.testing.assert_allclose(np.poly(K), np.poly(np.eye(2) - M), atol=1e-10)

    def test_inner_cycles_power_the_eigenmatrix(self):
        plan = KGridPlan(levels=3, finest_points=32, sigma=-200.0)
        theta = [0.7]
        K = preconditioned_eigenmatrix(plan, theta, mu=3)
        M = assemble_eigenmatrix(plan, theta)
        expected = np.poly(np.eye(4) - np.linalg.matrix_power(M, 3))
        np.testing.assert_allclose(np.poly(K), expected, atol=1e-8)

    def test_mu_must_be_positive(self, two_grid_1d):
        with pytest.raises(InputError):
            preconditioned_eigenmatrix(two_grid_1d, [0.3], mu=0)


class TestHalfPlane:
    def test_positive_reals(self):
        assert half_plane_condition(np.array([0.5, 1.0, 3.0]))

    def test_opposite_points_fail(self):
        assert not half_plane_condition(np.array([1.0, -1.0]))

    def test_quarter_extent(self):
        assert angular_extent(np.array([1.0, 1j])) == pytest.approx(math.pi / 2)
        assert half_plane_condition(np.array([1.0, 1j]))

    def test_origin_fails(self):
        assert not half_plane_condition(np.array([1.0, 0.0]))

    def test_hpc_beta_satisfies_condition(self, two_grid_1d):
        beta = hpc_min_beta(two_grid_1d, mu=1)
        assert half_plane_condition(preconditioned_spectrum(two_grid_1d.with_beta(beta), 1))


class TestEllipse:
    def test_circle(self):
        ellipse = EllipseParams(center=2.0, focal=0.0, semi_major=0.5)
        assert ellipse_rho_estimate([2.0, 2.3 + 0.1j], ellipse) == pytest.approx(0.25)

    def test_origin_inside(self):
        with pytest.raises(EstimateInvalidError):
            ellipse_rho_estimate([0.5], EllipseParams(center=0.5, focal=0.0, semi_major=1.0))

    def test_spectrum_outside(self):
        with pytest.raises(InputError):
            ellipse_rho_estimate([5.0], EllipseParams(center=2.0, focal=0.0, semi_major=0.5))

    def test_exact_preconditioner_limit(self):
        ellipse = EllipseParams(center=1.0, focal=0.0, semi_major=1e-9)
        assert ellipse_rho_estimate([1.0], ellipse) == pytest.approx(1e-9)

    def test_fit_on_circle(self):
        angles = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
        spectrum = 2.0 + 0.5 * np.exp(1j * angles)
        ellipse = fit_ellipse(spectrum)
        assert ellipse.center == pytest.approx(2.0)
        assert ellipse_rho_estimate(spectrum, ellipse) <= 0.25 + 1e-9

    def test_fit_around_origin_is_invalid(self):
        with pytest.raises(EstimateInvalidError):
            fit_ellipse(np.array([-1.0, 2.0, 2.0j]))

    def test_confocal_estimate(self):
        ellipse = EllipseParams(center=2.0, focal=0.3, semi_major=0.5)
        assert ellipse.semi_minor == pytest.approx(0.4)
        expected = (0.5 + 0.4) / (2.0 + math.sqrt(4.0 - 0.09))
        assert ellipse_rho_estimate([2.0, 2.1 + 0.2j], ellipse) == pytest.approx(expected)

    def test_semi_major_not_below_focal(self):
        with pytest.raises(ValidationError):
            EllipseParams(center=1.0, focal=0.5, semi_major=0.4)


class TestBetaCurveStructure:
    def test_two_grid_minimum_where_coarse_grid_turns_negative_definite(self, two_grid_1d):
        # 4/h_2^2 with h_2 = 1/32
        edge = -4096.0
        at_edge = beta_min(two_grid_1d.with_sigma(edge))
        assert at_edge < beta_min(two_grid_1d.with_sigma(1.3 * edge))
        assert at_edge < beta_min(two_grid_1d.with_sigma(0.7 * edge))

    @pytest.mark.parametrize("levels", [2, 3])
    def test_extra_level_agrees_in_smoother_dominated_regime(self, levels):
        plan = KGridPlan(dimension=1, levels=levels, finest_points=64, sigma=-3.0 * 64 ** 2)
        deeper = plan.model_copy(update={"levels": levels + 1})
        assert abs(beta_min(plan) - beta_min(deeper)) < 0.02

    def test_half_plane_shift_not_above_beta_min(self):
        plan = KGridPlan(dimension=2, levels=2, finest_points=32, sigma=-1000.0, theta_samples=64)
        assert hpc_min_beta(plan, mu=1) <= beta_min(plan) + 5e-4
