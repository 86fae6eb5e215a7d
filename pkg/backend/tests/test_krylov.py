import numpy as np
import pytest

from app.errors import InputError
from app.krylov import (
    bicgstab,
    convergence_factor,
    gmres,
    iteration_minimum_beta,
    select_minimum,
    solve,
)
from app.models import (
    CycleSpec,
    GridFunction,
    HelmholtzOperator,
    KrylovSpec,
    LevelGeometry,
    PreconditionerSpec,
    SolveReport,
)
from app.multigrid import assemble_dense


@pytest.fixture
def system(rng):
    n = 20
    matrix = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) + 10.0 * np.eye(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return matrix, b


@pytest.fixture
def helmholtz():
    geometry = LevelGeometry(finest_points=32)
    return HelmholtzOperator(geometry=geometry, sigma=-200.0), GridFunction.ones(geometry)


def preconditioned(beta: float, mu: int = 1, **kwargs) -> KrylovSpec:
    return KrylovSpec(preconditioner=PreconditionerSpec(beta=beta, mu=mu, cycle=CycleSpec(levels=2)),
                      **kwargs)


class TestGmres:
    def test_scaled_identity_converges_in_one_step(self):
        b = np.arange(1.0, 6.0)
        report = gmres(lambda x: 3.0 * x, b)
        assert report.iterations == 1
        assert report.converged
        np.testing.assert_allclose(report.solution, b / 3.0)

    def test_matches_direct_solve(self, system):
        matrix, b = system
        report = gmres(lambda x: matrix @ x, b, tol=1e-12)
        assert report.converged
        np.testing.assert_allclose(report.solution, np.linalg.solve(matrix, b), atol=1e-8)

    def test_residuals_never_increase(self, system):
        matrix, b = system
        history = gmres(lambda x: matrix @ x, b, tol=1e-12).residual_history
        assert history[0] == 1.0
        assert np.all(np.diff(history) <= 1e-14)

    def test_exact_preconditioner(self, system):
        matrix, b = system
        inverse = np.linalg.inv(matrix)
        report = gmres(lambda x: matrix @ x, b, psolve=lambda r: inverse @ r)
        assert report.iterations == 1
        assert convergence_factor(report) == pytest.approx(0.0, abs=1e-10)

    def test_iteration_cap(self, helmholtz):
        op, rhs = helmholtz
        report = solve(op, rhs, KrylovSpec(maxiter=3))
        assert report.iterations == 3
        assert not report.converged
        assert len(report.residual_history) == 4


class TestBicgstab:
    def test_agrees_with_gmres(self, system):
        matrix, b = system
        report = bicgstab(lambda x: matrix @ x, b, tol=1e-10, maxiter=200)
        assert report.converged
        reference = gmres(lambda x: matrix @ x, b, tol=1e-12).solution
        np.testing.assert_allclose(report.solution, reference, atol=1e-6)

    def test_breakdown_is_reported(self):
        report = bicgstab(lambda x: np.zeros_like(x), np.ones(4))
        assert report.breakdown
        assert not report.converged
        assert report.iterations == 0

    def test_zero_rhs(self):
        report = bicgstab(lambda x: x, np.zeros(3))
        assert report.converged
        assert report.iterations == 0


class TestSolve:
    def test_preconditioned_solve_converges(self, helmholtz):
        op, rhs = helmholtz
        report = solve(op, rhs, preconditioned(0.5))
        assert report.converged
        assert report.iterations < op.geometry.interior
        assert report.true_residual_history[-1] < 1e-3
        reference = np.linalg.solve(assemble_dense(op), rhs.values)
        np.testing.assert_allclose(report.solution, reference, rtol=1e-2, atol=1e-2 * np.abs(reference).max())

    def test_bicgstab_solve(self, helmholtz):
        op, rhs = helmholtz
        report = solve(op, rhs, preconditioned(0.5, method="bicgstab", maxiter=200))
        assert report.method == "bicgstab"
        assert report.converged

    def test_outer_operator_is_unshifted(self):
        op = HelmholtzOperator(geometry=LevelGeometry(finest_points=16), sigma=-50.0, beta=0.3)
        with pytest.raises(InputError):
            solve(op, GridFunction.ones(op.geometry), KrylovSpec())

    def test_rhs_on_other_grid(self, helmholtz):
        op, _ = helmholtz
        with pytest.raises(InputError):
            solve(op, GridFunction.ones(LevelGeometry(finest_points=16)), KrylovSpec())


class TestIterationMinimum:
    def test_ties_go_to_smaller_beta(self):
        assert select_minimum([(0.5, 10), (0.3, 10), (0.7, 12)]) == (0.3, 10)

    def test_empty_grid(self):
        with pytest.raises(InputError):
            select_minimum([])

    def test_single_point_grid(self, helmholtz):
        op, rhs = helmholtz
        beta, iterations = iteration_minimum_beta(op, rhs, preconditioned(0.5), [0.5])
        assert beta == 0.5
        assert iterations == solve(op, rhs, preconditioned(0.5)).iterations

    def test_needs_preconditioner(self, helmholtz):
        op, rhs = helmholtz
        with pytest.raises(InputError):
            iteration_minimum_beta(op, rhs, KrylovSpec(), [0.5])


def test_convergence_factor():
    done = SolveReport(method="gmres", iterations=0, converged=True, final_residual=0.0)
    assert convergence_factor(done) == 0.0
    four = SolveReport(method="gmres", iterations=4, converged=True, final_residual=1e-4)
    assert convergence_factor(four) == pytest.approx(0.1)
