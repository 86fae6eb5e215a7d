"""Fourier symbols of the multigrid components for the shifted Helmholtz operator.

Every function is vectorized: ``theta`` is array-like with the frequency
components on its last axis, so a single 1D frequency is ``[theta]`` and a
batch of 2D frequencies has shape ``(..., 2)``.
"""
import logging
import math
from typing import List

import numpy as np

from config import config
from .errors import DimensionError, InputError, ResonanceError
from .models import LevelGeometry, ShiftedWavenumber, SmootherKind, SymbolSet

logger = logging.getLogger(__name__)


def _resonance_tol() -> float:
    return float(config.get("resonance_tol", 1e-14))


def _as_theta(theta, dimension: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0 or theta.shape[-1] != dimension:
        raise DimensionError(
            f"frequency with shape {theta.shape} does not match dimension {dimension}"
        )
    return theta


def discretization_symbol(theta, geom: LevelGeometry, sw: ShiftedWavenumber):
    """Symbol of the (2d+1)-point stencil: (2/h^2) * sum(1 - cos theta_i) + sigma_tilde."""
    theta = _as_theta(theta, geom.dimension)
    h2 = geom.mesh_width ** 2
    return np.sum(2.0 - 2.0 * np.cos(theta), axis=-1) / h2 + sw.sigma_tilde


def restriction_symbol(theta, geom: LevelGeometry):
    """Full weighting: (cos theta + 1)/2 per direction, multiplied over directions."""
    theta = _as_theta(theta, geom.dimension)
    return np.prod(0.5 * (np.cos(theta) + 1.0), axis=-1)


def interpolation_symbol(theta, geom: LevelGeometry):
    """Linear interpolation, dual to full weighting and sharing its symbol."""
    return restriction_symbol(theta, geom)


def jacobi_symbol(theta, geom: LevelGeometry, sw: ShiftedWavenumber, omega: float):
    if not 0.0 <= omega <= 1.0:
        raise InputError(f"Jacobi weight {omega} outside [0, 1]")
    theta = _as_theta(theta, geom.dimension)
    diagonal = 2.0 * geom.dimension + sw.sigma_tilde * geom.mesh_width ** 2
    if abs(diagonal) < _resonance_tol():
        raise ResonanceError(f"Jacobi diagonal vanishes on level {geom.level}", abs(diagonal))
    return 1.0 - omega + 2.0 * omega * np.sum(np.cos(theta), axis=-1) / diagonal


def gauss_seidel_symbol(theta, geom: LevelGeometry, sw: ShiftedWavenumber):
    """Lexicographic Gauss-Seidel, 1D only."""
    if geom.dimension != 1:
        raise InputError("the Gauss-Seidel symbol is only available in 1D")
    theta = _as_theta(theta, 1)[..., 0]
    denominator = 2.0 + sw.sigma_tilde * geom.mesh_width ** 2 - np.exp(-1j * theta)
    if np.any(np.abs(denominator) < _resonance_tol()):
        raise ResonanceError(f"Gauss-Seidel symbol has a pole on level {geom.level}")
    return np.exp(1j * theta) / denominator


def smoother_symbol(theta, geom: LevelGeometry, sw: ShiftedWavenumber,
                    smoother: SmootherKind = "jacobi", omega: float = 2.0 / 3.0):
    if smoother == "jacobi":
        return jacobi_symbol(theta, geom, sw, omega)
    if smoother == "gauss-seidel":
        return gauss_seidel_symbol(theta, geom, sw)
    raise InputError(f"unknown smoother {smoother!r}")


def symbol_set(theta, geom: LevelGeometry, sw: ShiftedWavenumber,
               smoother: SmootherKind = "jacobi", omega: float = 2.0 / 3.0) -> SymbolSet:
    """All component symbols at one frequency."""
    return SymbolSet(
        a_tilde=complex(discretization_symbol(theta, geom, sw)),
        r_tilde=complex(restriction_symbol(theta, geom)),
        p_tilde=complex(interpolation_symbol(theta, geom)),
        s_tilde=complex(smoother_symbol(theta, geom, sw, smoother, omega)),
    )


def optimal_jacobi_weight(sigma: float, geom: LevelGeometry) -> float:
    """Jacobi weight (2d + sigma h^2)/(2d + 1 + sigma h^2) of the Helmholtz smoother.

    It equalizes |S| at the two ends of the high-frequency range, where
    sum(cos theta) is d - 1 and -d; for sigma = 0 it gives 2/3 in 1D
    and 4/5 in 2D.
    """
    diagonal = 2.0 * geom.dimension + sigma * geom.mesh_width ** 2
    if abs(diagonal + 1.0) < _resonance_tol():
        raise ResonanceError(f"optimal Jacobi weight has a pole at sigma h^2 = {-(2 * geom.dimension + 1)}")
    return diagonal / (diagonal + 1.0)


def smoother_extrema(sigma: float, geom: LevelGeometry, omega: float) -> List[float]:
    """Stationary frequencies of |S(theta)| for the unshifted 1D Jacobi smoother."""
    extrema = [0.0, math.pi]
    if omega > 0.0:
        argument = -(1.0 - omega) * (2.0 + sigma * geom.mesh_width ** 2) / (2.0 * omega)
        if -1.0 <= argument <= 1.0:
            theta = math.acos(argument)
            extrema.extend([theta, -theta])
    return extrema
