"""ShiftScope: Local Fourier Analysis of the complex shifted Laplacian multigrid preconditioner."""

__version__ = "1.0.0"
