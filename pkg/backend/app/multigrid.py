"""Geometric multigrid for the shifted Helmholtz operator on the unit square/interval.

Grid functions hold the interior values of a level; the homogeneous Dirichlet
boundary is an implicit zero halo. Operators are rediscretized per level.
"""
import logging
import math
from typing import List, Optional

import numpy as np
import scipy.linalg

from config import config
from .cache import factorization_cache
from .errors import DimensionError, InputError, ResonanceError
from .lfa import minimal_beta
from .models import CycleSpec, GridFunction, HelmholtzOperator, LevelGeometry

logger = logging.getLogger(__name__)

# Coarsest dense systems above this size are refused; use a deeper cycle instead.
MAX_COARSE_UNKNOWNS = 4096


def _check_geometry(op: HelmholtzOperator, u: GridFunction) -> None:
    if u.geometry != op.geometry:
        raise DimensionError(
            f"grid function on level {u.geometry.level} (N={u.geometry.points}) does not match "
            f"operator on level {op.geometry.level} (N={op.geometry.points})"
        )


def apply_stencil(values: np.ndarray, op: HelmholtzOperator) -> np.ndarray:
    """(2d u - sum of neighbours)/h^2 + sigma_tilde u with a zero halo."""
    dimension = values.ndim
    padded = np.pad(values, 1)
    result = 2.0 * dimension * values
    center = [slice(1, -1)] * dimension
    for axis in range(dimension):
        lower, upper = list(center), list(center)
        lower[axis] = slice(0, -2)
        upper[axis] = slice(2, None)
        result = result - padded[tuple(lower)] - padded[tuple(upper)]
    return result / op.geometry.mesh_width ** 2 + op.sigma_tilde * values


def apply_operator(op: HelmholtzOperator, u: GridFunction) -> GridFunction:
    """Matrix-free application of the shifted Helmholtz stencil."""
    _check_geometry(op, u)
    return GridFunction(geometry=op.geometry, values=apply_stencil(u.values, op))


def assemble_dense(op: HelmholtzOperator) -> np.ndarray:
    """Dense matrix of the stencil in C (row-major) ordering of the interior points."""
    n = op.geometry.interior
    h2 = op.geometry.mesh_width ** 2
    laplace = (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h2
    if op.dimension == 1:
        matrix = laplace.astype(complex)
    else:
        identity = np.eye(n)
        matrix = (np.kron(laplace, identity) + np.kron(identity, laplace)).astype(complex)
    matrix[np.diag_indices_from(matrix)] += op.sigma_tilde
    return matrix


def _jacobi(op: HelmholtzOperator, u: np.ndarray, rhs: np.ndarray, omega: float) -> np.ndarray:
    h2 = op.geometry.mesh_width ** 2
    diagonal = 2.0 * op.dimension + op.sigma_tilde * h2
    if abs(diagonal) < float(config.get("resonance_tol", 1e-14)):
        raise ResonanceError(f"Jacobi diagonal vanishes on level {op.geometry.level}", abs(diagonal))
    return u + omega * h2 / diagonal * (rhs - apply_stencil(u, op))


def _gauss_seidel(op: HelmholtzOperator, u: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Forward lexicographic sweep as one lower-bidiagonal solve."""
    if op.dimension != 1:
        raise InputError("lexicographic Gauss-Seidel is only available in 1D")
    h2 = op.geometry.mesh_width ** 2
    diagonal = 2.0 / h2 + op.sigma_tilde
    if abs(diagonal * h2) < float(config.get("resonance_tol", 1e-14)):
        raise ResonanceError(f"Gauss-Seidel diagonal vanishes on level {op.geometry.level}")
    n = u.shape[0]
    banded = np.zeros((2, n), dtype=complex)
    banded[0] = diagonal
    banded[1, :-1] = -1.0 / h2
    upper = np.append(u[1:], 0.0) / h2
    return scipy.linalg.solve_banded((1, 0), banded, rhs + upper, check_finite=False)


def _smooth(op: HelmholtzOperator, u: np.ndarray, rhs: np.ndarray, spec: CycleSpec) -> np.ndarray:
    if spec.smoother == "jacobi":
        return _jacobi(op, u, rhs, spec.omega)
    return _gauss_seidel(op, u, rhs)


def smooth(op: HelmholtzOperator, u: GridFunction, rhs: GridFunction,
           spec: CycleSpec) -> GridFunction:
    """One sweep of the smoother selected by ``spec``."""
    _check_geometry(op, u)
    _check_geometry(op, rhs)
    return GridFunction(geometry=op.geometry, values=_smooth(op, u.values, rhs.values, spec))


def _restrict_axis(values: np.ndarray, axis: int) -> np.ndarray:
    values = np.moveaxis(values, axis, 0)
    coarse = 0.25 * values[0:-2:2] + 0.5 * values[1:-1:2] + 0.25 * values[2::2]
    return np.moveaxis(coarse, 0, axis)


def _prolong_axis(values: np.ndarray, axis: int) -> np.ndarray:
    values = np.moveaxis(values, axis, 0)
    n = values.shape[0]
    fine = np.zeros((2 * n + 1,) + values.shape[1:], dtype=complex)
    padded = np.pad(values, [(1, 1)] + [(0, 0)] * (values.ndim - 1))
    fine[1::2] = values
    fine[0::2] = 0.5 * (padded[:-1] + padded[1:])
    return np.moveaxis(fine, 0, axis)


def _restrict(values: np.ndarray) -> np.ndarray:
    for axis in range(values.ndim):
        values = _restrict_axis(values, axis)
    return values


def _prolong(values: np.ndarray) -> np.ndarray:
    for axis in range(values.ndim):
        values = _prolong_axis(values, axis)
    return values


def restrict(fine: GridFunction) -> GridFunction:
    """Full weighting, (1/4, 1/2, 1/4) per direction."""
    if fine.geometry.points < 4:
        raise InputError(f"level {fine.geometry.level} has no coarser grid")
    return GridFunction(geometry=fine.geometry.coarser(), values=_restrict(fine.values))


def prolong(coarse: GridFunction) -> GridFunction:
    """Linear interpolation, the transpose of full weighting up to 2^d."""
    if coarse.geometry.level < 2:
        raise InputError("the finest level has no finer grid")
    finer = LevelGeometry(finest_points=coarse.geometry.finest_points,
                          level=coarse.geometry.level - 1,
                          dimension=coarse.geometry.dimension)
    return GridFunction(geometry=finer, values=_prolong(coarse.values))


def cycle_depth(geometry: LevelGeometry, spec: CycleSpec) -> int:
    """Number of levels used by ``spec`` on a hierarchy starting at ``geometry``."""
    if spec.levels is None:
        # full V-cycle: coarsen until 3 interior points per direction remain
        return int(math.log2(geometry.points)) - 1
    if geometry.points >> (spec.levels - 1) < 4:
        raise InputError(
            f"N={geometry.points} cannot support a {spec.levels}-level cycle "
            "with at least 3 interior points on the coarsest grid"
        )
    return spec.levels


def build_hierarchy(op: HelmholtzOperator, spec: CycleSpec) -> List[HelmholtzOperator]:
    """Rediscretized operators from ``op`` down to the coarsest level of the cycle."""
    levels = cycle_depth(op.geometry, spec)
    operators = [op]
    for _ in range(levels - 1):
        operators.append(operators[-1].coarser())
    coarsest = operators[-1].geometry
    if coarsest.interior ** coarsest.dimension > MAX_COARSE_UNKNOWNS:
        raise InputError(
            f"coarsest grid has {coarsest.interior ** coarsest.dimension} unknowns; "
            "use more levels"
        )
    logger.debug(f"Hierarchy of {levels} levels, coarsest N={coarsest.points}")
    return operators


def _coarse_solve(op: HelmholtzOperator, rhs: np.ndarray) -> np.ndarray:
    key = f"lu|{op.dimension}|{op.geometry.points}|{op.sigma!r}|{op.beta!r}"
    factors = factorization_cache.get(key)
    if factors is None:
        factors = scipy.linalg.lu_factor(assemble_dense(op), check_finite=False)
        factorization_cache.set(key, factors)
    solution = scipy.linalg.lu_solve(factors, rhs.ravel(), check_finite=False)
    return solution.reshape(rhs.shape)


def run_cycle(operators: List[HelmholtzOperator], u: np.ndarray, rhs: np.ndarray,
              spec: CycleSpec, index: int = 0) -> np.ndarray:
    """One V-cycle on raw arrays, starting at ``operators[index]``."""
    op = operators[index]
    if index == len(operators) - 1:
        return _coarse_solve(op, rhs)
    u = np.asarray(u, dtype=complex)
    for _ in range(spec.nu1):
        u = _smooth(op, u, rhs, spec)
    residual = rhs - apply_stencil(u, op)
    coarse_rhs = _restrict(residual)
    correction = run_cycle(operators, np.zeros_like(coarse_rhs), coarse_rhs, spec, index + 1)
    u = u + _prolong(correction)
    for _ in range(spec.nu2):
        u = _smooth(op, u, rhs, spec)
    return u


def kgrid_cycle(operators: List[HelmholtzOperator], u0: GridFunction, rhs: GridFunction,
                spec: CycleSpec) -> GridFunction:
    """One k-grid cycle with an exact solve on ``operators[-1]``."""
    if not operators:
        raise InputError("a cycle needs at least one operator")
    _check_geometry(operators[0], u0)
    _check_geometry(operators[0], rhs)
    values = run_cycle(operators, u0.values, rhs.values, spec)
    return GridFunction(geometry=operators[0].geometry, values=values)


def asymptotic_factor(spec: CycleSpec, sigma: float, beta: float,
                      iterations: Optional[int] = None, seed: int = 0,
                      finest_points: int = 64, dimension: int = 1) -> float:
    """Measured asymptotic convergence factor by power iteration on the error.

    Cycles run with rhs = 0 on a seeded random error that is renormalized each
    step; the result is the geometric mean of the last quarter of the ratios.
    """
    iterations = iterations or int(config.get("asymptotic_iterations", 100))
    if iterations < 20:
        raise InputError(f"asymptotic_factor needs at least 20 iterations, got {iterations}")
    geometry = LevelGeometry(finest_points=finest_points, dimension=dimension)
    operators = build_hierarchy(HelmholtzOperator(geometry=geometry, sigma=sigma, beta=beta), spec)

    rng = np.random.default_rng(seed)
    error = rng.standard_normal(geometry.shape).astype(complex)
    error /= np.linalg.norm(error)
    rhs = np.zeros(geometry.shape, dtype=complex)
    ratios = []
    for _ in range(iterations):
        error = run_cycle(operators, error, rhs, spec)
        norm = float(np.linalg.norm(error))
        if norm == 0.0:
            return 0.0
        if not math.isfinite(norm):
            return math.inf
        ratios.append(norm)
        error /= norm
    tail = ratios[-max(1, iterations // 4):]
    factor = float(np.exp(np.mean(np.log(tail))))
    logger.debug(f"Asymptotic factor {factor:.4f} at sigma={sigma}, beta={beta}")
    return factor


def experimental_beta_min(spec: CycleSpec, sigma: float, finest_points: int = 64,
                          dimension: int = 1, seed: int = 0,
                          iterations: Optional[int] = None) -> float:
    """Smallest beta whose measured factor satisfies factor <= 1 + experimental_tol."""
    if sigma >= 0:
        raise InputError(f"experimental_beta_min needs sigma < 0, got {sigma}")
    limit = 1.0 + float(config.get("experimental_tol", 0.01))

    def converging(beta: float) -> bool:
        try:
            factor = asymptotic_factor(spec, sigma, beta, iterations, seed, finest_points, dimension)
        except ResonanceError as exc:
            logger.warning(f"Smoother resonance for sigma={sigma}, beta={beta}: {exc}")
            factor = math.inf
        return factor <= limit

    value = minimal_beta(converging, what="measured convergence criterion")
    logger.info(f"Experimental beta_min={value:.4f} for sigma={sigma}, N={finest_points}")
    return value
