"""Dense complex linear algebra for the small LFA eigenmatrices."""
from typing import Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import DimensionError, InputError

MAX_DENSE_SIZE = 256


class Spectrum(BaseModel):
    """Eigenvalues of a matrix and its spectral radius."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    eigenvalues: np.ndarray
    radius: float

    @model_validator(mode="after")
    def _consistent(self) -> "Spectrum":
        largest = float(np.max(np.abs(self.eigenvalues))) if self.eigenvalues.size else 0.0
        if not np.isclose(largest, self.radius, rtol=1e-12, atol=0.0):
            raise ValueError("radius does not match the eigenvalue moduli")
        return self


def as_cmatrix(m) -> np.ndarray:
    """Validate a square, finite matrix and return it as complex128."""
    matrix = np.asarray(m, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {matrix.shape}")
    if matrix.shape[0] > MAX_DENSE_SIZE:
        raise DimensionError(f"matrix of size {matrix.shape[0]} exceeds {MAX_DENSE_SIZE}")
    if not np.all(np.isfinite(matrix)):
        raise InputError("matrix has non-finite entries")
    return matrix


def eigenvalues(m) -> Spectrum:
    """All eigenvalues of a dense complex matrix."""
    matrix = as_cmatrix(m)
    if matrix.shape[0] == 0:
        return Spectrum(eigenvalues=np.zeros(0, dtype=complex), radius=0.0)
    values = scipy.linalg.eigvals(matrix, check_finite=False)
    return Spectrum(eigenvalues=values, radius=float(np.max(np.abs(values))))


def spectral_radius(m) -> float:
    return eigenvalues(m).radius


def batch_spectral_radius(stack: np.ndarray) -> np.ndarray:
    """Spectral radii of a stack of square matrices with shape (..., n, n).

    Matrices with non-finite entries get +inf.
    """
    stack = np.asarray(stack, dtype=complex)
    if stack.ndim < 2 or stack.shape[-1] != stack.shape[-2]:
        raise DimensionError(f"expected a stack of square matrices, got shape {stack.shape}")
    finite = np.all(np.isfinite(stack), axis=(-2, -1))
    radii = np.full(stack.shape[:-2], np.inf)
    if np.any(finite):
        values = np.linalg.eigvals(stack[finite])
        radii[finite] = np.max(np.abs(values), axis=-1)
    return radii


def batch_eigenvalues(stack: np.ndarray) -> np.ndarray:
    """Eigenvalues of a stack of finite square matrices, shape (..., n)."""
    stack = np.asarray(stack, dtype=complex)
    if not np.all(np.isfinite(stack)):
        raise InputError("matrix stack has non-finite entries")
    return np.linalg.eigvals(stack)


def guarded_reciprocal(values: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Reciprocal of symbol values, never dividing by a modulus below tol.

    Returns the reciprocals (zero where flagged) and the boolean resonance mask.
    """
    values = np.asarray(values, dtype=complex)
    resonant = np.abs(values) < tol
    safe = np.where(resonant, 1.0, values)
    return np.where(resonant, 0.0, 1.0 / safe), resonant
