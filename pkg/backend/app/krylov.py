"""GMRES and BiCGStab with left Complex Shifted Laplacian multigrid preconditioning."""
import logging
import math
import time
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import config
from .errors import InputError
from .models import (
    GridFunction,
    HelmholtzOperator,
    KrylovSpec,
    PreconditionerSpec,
    SolveReport,
)
from .multigrid import apply_stencil, build_hierarchy, run_cycle

logger = logging.getLogger(__name__)

LinearMap = Callable[[np.ndarray], np.ndarray]


class MultigridPreconditioner:
    """Approximate inverse of the shifted operator by mu cycles started from zero."""

    def __init__(self, op: HelmholtzOperator, spec: PreconditionerSpec):
        shifted = HelmholtzOperator(geometry=op.geometry, sigma=op.sigma, beta=spec.beta)
        self.operators = build_hierarchy(shifted, spec.cycle)
        self.spec = spec
        self.shape = op.geometry.shape

    def __call__(self, residual: np.ndarray) -> np.ndarray:
        rhs = residual.reshape(self.shape)
        z = np.zeros(self.shape, dtype=complex)
        for _ in range(self.spec.mu):
            z = run_cycle(self.operators, z, rhs, self.spec.cycle)
        return z.ravel()


def _identity(vector: np.ndarray) -> np.ndarray:
    return vector


def _givens(a: complex, b: complex) -> Tuple[float, complex, complex]:
    """Rotation [[c, s], [-conj(s), c]] mapping (a, b) to (r, 0)."""
    a_abs, b_abs = abs(a), abs(b)
    if b_abs == 0.0:
        return 1.0, 0.0j, a
    if a_abs == 0.0:
        return 0.0, np.conj(b) / b_abs, complex(b_abs)
    norm = math.hypot(a_abs, b_abs)
    phase = a / a_abs
    return a_abs / norm, phase * np.conj(b) / norm, phase * norm


def gmres(matvec: LinearMap, b: np.ndarray, psolve: Optional[LinearMap] = None,
          tol: float = 1e-6, maxiter: Optional[int] = None) -> SolveReport:
    """Full (unrestarted) GMRES on psolve(A) x = psolve(b) from x0 = 0.

    The stopping test uses the preconditioned relative residual; the relative
    residual of the original system is recorded alongside.
    """
    psolve = psolve or _identity
    b = np.asarray(b, dtype=complex).ravel()
    n = b.size
    maxiter = maxiter or n
    start = time.perf_counter()

    b_norm = float(np.linalg.norm(b))
    r0 = psolve(b)
    beta0 = float(np.linalg.norm(r0))
    if beta0 == 0.0 or b_norm == 0.0:
        return SolveReport(method="gmres", iterations=0, converged=True, final_residual=0.0,
                           residual_history=[0.0], true_residual_history=[0.0],
                           solution=np.zeros(n, dtype=complex))

    basis = np.zeros((maxiter + 1, n), dtype=complex)
    hessenberg = np.zeros((maxiter + 1, maxiter), dtype=complex)
    cosines = np.zeros(maxiter)
    sines = np.zeros(maxiter, dtype=complex)
    g = np.zeros(maxiter + 1, dtype=complex)
    g[0] = beta0
    basis[0] = r0 / beta0

    history = [1.0]
    true_history = [1.0]
    x = np.zeros(n, dtype=complex)
    converged = False
    iterations = 0
    for j in range(maxiter):
        w = psolve(matvec(basis[j]))
        # modified Gram-Schmidt
        for i in range(j + 1):
            hessenberg[i, j] = np.vdot(basis[i], w)
            w = w - hessenberg[i, j] * basis[i]
        h_next = float(np.linalg.norm(w))
        hessenberg[j + 1, j] = h_next
        happy = h_next <= 1e-14 * beta0
        if not happy:
            basis[j + 1] = w / h_next

        for i in range(j):
            upper = cosines[i] * hessenberg[i, j] + sines[i] * hessenberg[i + 1, j]
            hessenberg[i + 1, j] = -np.conj(sines[i]) * hessenberg[i, j] + cosines[i] * hessenberg[i + 1, j]
            hessenberg[i, j] = upper
        c, s, r = _givens(hessenberg[j, j], hessenberg[j + 1, j])
        cosines[j], sines[j] = c, s
        hessenberg[j, j] = r
        hessenberg[j + 1, j] = 0.0
        g[j + 1] = -np.conj(s) * g[j]
        g[j] = c * g[j]

        iterations = j + 1
        y = scipy.linalg.solve_triangular(hessenberg[:iterations, :iterations], g[:iterations],
                                          check_finite=False)
        x = basis[:iterations].T @ y
        residual = abs(g[iterations]) / beta0
        history.append(float(residual))
        true_history.append(float(np.linalg.norm(b - matvec(x)) / b_norm))
        logger.debug(f"GMRES iteration {iterations}: residual {residual:.3e}")
        if residual <= tol or happy:
            converged = True
            break

    return SolveReport(method="gmres", iterations=iterations, converged=converged,
                       final_residual=history[-1], residual_history=history,
                       true_residual_history=true_history,
                       wall_time=time.perf_counter() - start, solution=x)


def bicgstab(matvec: LinearMap, b: np.ndarray, psolve: Optional[LinearMap] = None,
             tol: float = 1e-6, maxiter: Optional[int] = None) -> SolveReport:
    """BiCGStab on the left-preconditioned system from x0 = 0."""
    psolve = psolve or _identity
    b = np.asarray(b, dtype=complex).ravel()
    n = b.size
    maxiter = maxiter or n
    small = float(config.get("breakdown_tol", 1e-30))
    start = time.perf_counter()

    def operator(vector: np.ndarray) -> np.ndarray:
        return psolve(matvec(vector))

    b_norm = float(np.linalg.norm(b))
    r = psolve(b)
    r0_norm = float(np.linalg.norm(r))
    x = np.zeros(n, dtype=complex)
    if r0_norm == 0.0 or b_norm == 0.0:
        return SolveReport(method="bicgstab", iterations=0, converged=True, final_residual=0.0,
                           residual_history=[0.0], true_residual_history=[0.0], solution=x)

    shadow = r.copy()
    p = np.zeros(n, dtype=complex)
    v = np.zeros(n, dtype=complex)
    rho = alpha = omega = 1.0 + 0.0j
    history = [1.0]
    true_history = [1.0]
    converged = breakdown = False
    iterations = 0

    def record(x_now: np.ndarray, residual_norm: float) -> None:
        history.append(residual_norm / r0_norm)
        true_history.append(float(np.linalg.norm(b - matvec(x_now)) / b_norm))

    for iteration in range(1, maxiter + 1):
        rho_next = np.vdot(shadow, r)
        if abs(rho_next) < small:
            breakdown = True
            break
        if iteration == 1:
            p = r.copy()
        else:
            p = r + (rho_next / rho) * (alpha / omega) * (p - omega * v)
        v = operator(p)
        denominator = np.vdot(shadow, v)
        if abs(denominator) < small:
            breakdown = True
            break
        alpha = rho_next / denominator
        s = r - alpha * v
        iterations = iteration
        s_norm = float(np.linalg.norm(s))
        if s_norm / r0_norm <= tol:
            x = x + alpha * p
            record(x, s_norm)
            converged = True
            break
        t = operator(s)
        t_norm2 = np.vdot(t, t)
        if abs(t_norm2) < small:
            breakdown = True
            break
        omega = np.vdot(t, s) / t_norm2
        x = x + alpha * p + omega * s
        r = s - omega * t
        rho = rho_next
        record(x, float(np.linalg.norm(r)))
        logger.debug(f"BiCGStab iteration {iteration}: residual {history[-1]:.3e}")
        if history[-1] <= tol:
            converged = True
            break
        if abs(omega) < small:
            breakdown = True
            break

    if breakdown:
        logger.warning(f"BiCGStab breakdown after {iterations} iterations")
    return SolveReport(method="bicgstab", iterations=iterations, converged=converged,
                       breakdown=breakdown, final_residual=history[-1],
                       residual_history=history, true_residual_history=true_history,
                       wall_time=time.perf_counter() - start, solution=x)


def solve(op: HelmholtzOperator, rhs: GridFunction, spec: KrylovSpec) -> SolveReport:
    """Solve the unshifted Helmholtz system with the configured Krylov method."""
    if op.beta != 0.0:
        raise InputError("the outer system is the unshifted Helmholtz operator (beta = 0)")
    if rhs.geometry != op.geometry:
        raise InputError("right-hand side does not live on the operator's grid")
    shape = op.geometry.shape

    def matvec(vector: np.ndarray) -> np.ndarray:
        return apply_stencil(vector.reshape(shape), op).ravel()

    psolve = MultigridPreconditioner(op, spec.preconditioner) if spec.preconditioner else None
    method = gmres if spec.method == "gmres" else bicgstab
    report = method(matvec, rhs.values.ravel(), psolve, spec.tol, spec.maxiter)
    beta = spec.preconditioner.beta if spec.preconditioner else None
    logger.info(f"{spec.method} at sigma={op.sigma}, beta={beta}: {report.iterations} iterations, "
                f"converged={report.converged}, residual={report.final_residual:.2e}")
    return report


def select_minimum(results: Iterable[Tuple[float, int]]) -> Tuple[float, int]:
    """(beta, iterations) pair with the fewest iterations; ties go to the smaller beta."""
    ordered = sorted(results, key=lambda item: (item[1], item[0]))
    if not ordered:
        raise InputError("the beta grid is empty")
    return ordered[0]


def iteration_minimum_beta(op: HelmholtzOperator, rhs: GridFunction, spec: KrylovSpec,
                           beta_grid: Sequence[float]) -> Tuple[float, int]:
    """The shift on ``beta_grid`` needing the fewest outer iterations."""
    if spec.preconditioner is None:
        raise InputError("iteration_minimum_beta needs a preconditioned KrylovSpec")
    results: List[Tuple[float, int]] = []
    for beta in beta_grid:
        report = solve(op, rhs, spec.with_beta(beta))
        results.append((float(beta), report.iterations))
    return select_minimum(results)


def convergence_factor(report: SolveReport) -> float:
    """Average residual reduction per iteration, (r_final / r_0)^(1/iterations)."""
    if report.iterations == 0:
        return 0.0
    return float(report.final_residual ** (1.0 / report.iterations))


def experimental_convergence_factor(op: HelmholtzOperator, rhs: GridFunction,
                                    spec: KrylovSpec) -> float:
    return convergence_factor(solve(op, rhs, spec))
