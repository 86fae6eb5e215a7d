"""k-grid Local Fourier Analysis of the Complex Shifted Laplacian multigrid cycle.

The eigenmatrix of a k-grid cycle acts on the 2^(k-1) (1D) or 4^(k-1) (2D)
fine-grid frequencies that alias onto one frequency of the coarsest grid.
The frequencies are generated coarse-to-fine: every level-(l+1) frequency f
has the level-l children f/2 + pi*offset, offset in {0, 1}^d, so the
transfer operators are block diagonal with blocks of size 2^d.
"""
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from config import config
from .cache import amplification_cache
from .errors import BracketError, DimensionError, EstimateInvalidError, InputError, ResonanceError
from .linalg import batch_eigenvalues, batch_spectral_radius, guarded_reciprocal
from .models import (
    AmplificationResult,
    BetaCurve,
    EllipseParams,
    Frequency,
    HarmonicSet,
    KGridPlan,
    LevelGeometry,
    ShiftedWavenumber,
    SmootherBounds,
)
from .symbols import (
    discretization_symbol,
    interpolation_symbol,
    restriction_symbol,
    smoother_symbol,
)

logger = logging.getLogger(__name__)

FrequencyLike = Union[Frequency, Sequence[float], float]


def _resonance_tol() -> float:
    return float(config.get("resonance_tol", 1e-14))


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


def _components(theta0: FrequencyLike) -> Tuple[float, ...]:
    if isinstance(theta0, Frequency):
        return theta0.components
    return tuple(float(t) for t in np.atleast_1d(np.asarray(theta0, dtype=float)))


def _offset_patterns(dimension: int) -> List[Tuple[int, ...]]:
    """Harmonic order 00, 10, 01, 11 (first component varies fastest)."""
    return [tuple((index >> axis) & 1 for axis in range(dimension))
            for index in range(2 ** dimension)]


def _check_base_cell(components: Tuple[float, ...], dimension: int) -> None:
    if len(components) != dimension:
        raise DimensionError(f"frequency {components} does not have {dimension} components")
    for theta in components:
        if not (-math.pi / 2 < theta <= math.pi / 2):
            raise InputError(f"low frequency component {theta} outside (-pi/2, pi/2]")


def harmonics(theta0: FrequencyLike, dimension: int) -> HarmonicSet:
    """The low frequency theta0 and its complementary frequencies.

    The complement of a component is theta - sign(theta)*pi with sign(0) = +1,
    normalized into (-pi, pi].
    """
    base = _components(theta0)
    _check_base_cell(base, dimension)
    members = []
    for flips in _offset_patterns(dimension):
        members.append(tuple(
            float(wrap_angle(theta - flip * math.copysign(math.pi, 1.0 if theta >= 0 else -1.0)))
            for theta, flip in zip(base, flips)
        ))
    return HarmonicSet(base=base, members=members)


def level_frequencies(theta0: np.ndarray, levels: int) -> List[np.ndarray]:
    """Frequencies of every level for a batch of base frequencies.

    ``theta0`` has shape (T, d); entry l-1 of the result has shape (T, n_l, d)
    with n_k = 1 on the coarsest level. The first level-1 frequency is theta0.
    """
    batch, dimension = theta0.shape
    offsets = np.pi * np.asarray(_offset_patterns(dimension), dtype=float)
    freqs: List[Optional[np.ndarray]] = [None] * levels
    freqs[levels - 1] = (2.0 ** (levels - 1) * theta0)[:, None, :]
    for index in range(levels - 2, -1, -1):
        coarse = freqs[index + 1]
        children = coarse[:, :, None, :] / 2.0 + offsets[None, None, :, :]
        freqs[index] = children.reshape(batch, -1, dimension)
    return freqs


def _eigenmatrix_batch(plan: KGridPlan, theta0: np.ndarray):
    """M_1^k for a batch of base frequencies.

    Returns the stack of eigenmatrices, the per-frequency resonance mask and
    the level frequencies.
    """
    freqs = level_frequencies(theta0, plan.levels)
    sw = plan.wavenumber
    tol = _resonance_tol()
    batch = theta0.shape[0]
    block = 2 ** plan.dimension
    resonant = np.zeros(batch, dtype=bool)

    M = None  # M_k^k = 0
    for level in range(plan.levels - 1, 0, -1):
        fine_geom = plan.geometry(level)
        coarse_geom = plan.geometry(level + 1)
        fine = freqs[level - 1]
        coarse = freqs[level]
        n_fine = fine.shape[1]
        n_coarse = coarse.shape[1]

        a_fine = discretization_symbol(fine, fine_geom, sw)
        s_fine = smoother_symbol(fine, fine_geom, sw, plan.smoother, plan.omega)
        a_coarse_inv, poles = guarded_reciprocal(discretization_symbol(coarse, coarse_geom, sw), tol)
        resonant |= poles.any(axis=1)

        owner = np.arange(n_fine) // block
        columns = np.arange(n_fine)
        restriction = np.zeros((batch, n_coarse, n_fine), dtype=complex)
        restriction[:, owner, columns] = restriction_symbol(fine, fine_geom)
        prolongation = np.zeros((batch, n_fine, n_coarse), dtype=complex)
        prolongation[:, columns, owner] = interpolation_symbol(fine, fine_geom)

        identity_coarse = np.eye(n_coarse, dtype=complex)
        inner = identity_coarse if M is None else identity_coarse - M
        correction = inner * a_coarse_inv[:, None, :]
        cgc = np.eye(n_fine, dtype=complex) - prolongation @ correction @ (restriction * a_fine[:, None, :])
        M = (s_fine ** plan.nu2)[:, :, None] * cgc * (s_fine ** plan.nu1)[:, None, :]
    return M, resonant, freqs


def assemble_eigenmatrix(plan: KGridPlan, theta0: FrequencyLike) -> np.ndarray:
    """Eigenmatrix of the k-grid error propagation at the low frequency theta0."""
    base = _components(theta0)
    _check_base_cell(base, plan.dimension)
    M, resonant, _ = _eigenmatrix_batch(plan, np.asarray([base], dtype=float))
    if resonant[0]:
        raise ResonanceError(f"coarse discretization symbol vanishes at theta={base}")
    return M[0]


def amplification_factor(plan: KGridPlan, theta0: FrequencyLike) -> float:
    """Spectral radius of the eigenmatrix; +inf at resonant frequencies."""
    base = _components(theta0)
    _check_base_cell(base, plan.dimension)
    return float(amplification_profile(plan, np.asarray([base], dtype=float))[0])


def amplification_profile(plan: KGridPlan, thetas: np.ndarray) -> np.ndarray:
    """Amplification factor at each row of ``thetas`` (shape (T, d))."""
    thetas = np.asarray(thetas, dtype=float).reshape(-1, plan.dimension)
    try:
        M, resonant, _ = _eigenmatrix_batch(plan, thetas)
    except ResonanceError as exc:
        logger.warning(f"Smoother resonance for sigma={plan.sigma}, beta={plan.beta}: {exc}")
        return np.full(thetas.shape[0], np.inf)
    radii = batch_spectral_radius(M)
    radii[resonant] = np.inf
    return radii


def _axis_samples(count: int) -> np.ndarray:
    step = math.pi / count
    return -math.pi / 2 + (np.arange(count) + 0.5) * step


def sample_frequencies(plan: KGridPlan, fold: bool = True) -> np.ndarray:
    """Uniform half-step-offset samples of the base cell (-pi/2, pi/2]^d.

    With the Jacobi smoother every symbol is even in each component and the 2D
    symbols are symmetric under swapping components, so folding keeps only the
    samples with theta_1 >= theta_2 > 0; the maximum is unchanged.
    """
    default = config.get("theta_samples_1d", 1024) if plan.dimension == 1 \
        else config.get("theta_samples_2d", 128)
    axis = _axis_samples(plan.theta_samples or int(default))
    folded = fold and plan.smoother == "jacobi"
    if folded:
        axis = axis[axis > 0]
    if plan.dimension == 1:
        return axis[:, None]
    first, second = np.meshgrid(axis, axis, indexing="ij")
    if folded:
        keep = first >= second
        return np.stack([first[keep], second[keep]], axis=-1)
    return np.stack([first.ravel(), second.ravel()], axis=-1)


def max_amplification(plan: KGridPlan, threshold: Optional[float] = None) -> AmplificationResult:
    """Maximum amplification factor over the sampled base cell.

    With a threshold the sweep stops at the first chunk exceeding it; the
    result is then flagged incomplete (its value is only a lower bound).
    """
    key = f"amplification|{plan.model_dump_json()}|{threshold}"
    cached = amplification_cache.get(key)
    if cached is not None:
        return cached

    thetas = sample_frequencies(plan)
    chunk = int(config.get("theta_chunk", 512))
    best = -1.0
    best_theta = tuple(thetas[0])
    any_resonant = False
    complete = True
    for start in range(0, thetas.shape[0], chunk):
        rows = thetas[start:start + chunk]
        radii = amplification_profile(plan, rows)
        index = int(np.argmax(radii))
        any_resonant |= bool(np.isinf(radii).any())
        if radii[index] > best:
            best = float(radii[index])
            best_theta = tuple(float(t) for t in rows[index])
        if threshold is not None and best > threshold:
            complete = start + chunk >= thetas.shape[0]
            break

    result = AmplificationResult(value=best, theta=best_theta, resonant=any_resonant,
                                 complete=complete)
    amplification_cache.set(key, result)
    return result


def converges(plan: KGridPlan) -> bool:
    """Convergence criterion: max over theta of G <= 1."""
    return max_amplification(plan, threshold=1.0).value <= 1.0


def minimal_beta(predicate: Callable[[float], bool], what: str = "criterion") -> float:
    """Smallest beta >= 0 satisfying ``predicate``, by bracketed bisection.

    The upper bracket starts at beta_hi_start and doubles at most
    beta_max_doublings times; bisection runs for at least bisection_min_steps
    steps and until the bracket is narrower than bisection_width. The returned
    value always satisfies the predicate.
    """
    if predicate(0.0):
        return 0.0
    lo, hi = 0.0, float(config.get("beta_hi_start", 1.0))
    max_doublings = int(config.get("beta_max_doublings", 6))
    doublings = 0
    while not predicate(hi):
        if doublings >= max_doublings:
            raise BracketError(f"no beta <= {hi} satisfies the {what}")
        lo, hi = hi, 2.0 * hi
        doublings += 1
        logger.debug(f"Doubling bracket for {what}: [{lo}, {hi}]")

    min_steps = int(config.get("bisection_min_steps", 10))
    width = float(config.get("bisection_width", 5e-4))
    steps = 0
    while steps < min_steps or hi - lo > width:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
        steps += 1
        logger.debug(f"Bisection step {steps} for {what}: [{lo:.6f}, {hi:.6f}]")
    return hi


def beta_min(plan: KGridPlan) -> float:
    """Smallest complex shift for which the k-grid cycle converges (plan.beta is ignored)."""
    if plan.sigma >= 0:
        raise InputError(f"beta_min needs sigma < 0, got {plan.sigma}")
    value = minimal_beta(lambda beta: converges(plan.with_beta(beta)),
                         what="k-grid convergence criterion")
    logger.info(f"beta_min={value:.4f} for sigma={plan.sigma}, k={plan.levels}, "
                f"N={plan.finest_points}, {plan.dimension}D")
    return value


def beta_curve(plan: KGridPlan, sigmas: Sequence[float]) -> BetaCurve:
    samples = [(float(sigma), beta_min(plan.with_sigma(sigma))) for sigma in sigmas]
    return BetaCurve(plan=plan.with_beta(0.0), samples=samples)


def regional_beta_min(plan: KGridPlan, sigmas: Sequence[float]) -> Tuple[float, float]:
    """Safe shift for a piecewise-constant wavenumber: the largest regional beta_min.

    Returns the shift and the wavenumber of the region that determines it.
    """
    if not sigmas:
        raise InputError("at least one regional wavenumber is required")
    curve = beta_curve(plan, sigmas)
    sigma, beta = max(curve.samples, key=lambda sample: sample[1])
    return beta, sigma


def smoother_bounds(geom: LevelGeometry, sigma: float, omega: float) -> SmootherBounds:
    """Closed-form smoother-only limits on beta from |S(0)| <= 1 and |S(pi)| <= 1 (1D Jacobi)."""
    if sigma >= 0:
        raise InputError(f"smoother bounds need sigma < 0, got {sigma}")
    if not 0.0 < omega <= 1.0:
        raise InputError(f"Jacobi weight {omega} outside (0, 1]")
    sh2 = sigma * geom.mesh_width ** 2
    zero_arg = 4.0 / ((omega - 2.0) * sh2) - 1.0
    pi_arg = -(omega * (4.0 + sh2) ** 2 - 2.0 * (2.0 + sh2) * (4.0 + sh2)) / ((omega - 2.0) * sh2 ** 2)
    return SmootherBounds(zero_bound=math.sqrt(max(zero_arg, 0.0)),
                          pi_bound=math.sqrt(max(pi_arg, 0.0)))


def smoother_beta_min(geom: LevelGeometry, sigma: float, omega: float) -> float:
    return smoother_bounds(geom, sigma, omega).beta_min


def numerical_smoother_beta_min(geom: LevelGeometry, sigma: float, omega: float,
                                samples: Optional[int] = None) -> float:
    """beta_min of the diagonal smoother eigenmatrix by bisection over sampled frequencies."""
    if sigma >= 0:
        raise InputError(f"smoother beta_min needs sigma < 0, got {sigma}")
    count = samples or int(config.get("theta_samples_1d", 1024))
    axis = _axis_samples(count)
    if geom.dimension == 1:
        base = axis[:, None]
    else:
        first, second = np.meshgrid(axis, axis, indexing="ij")
        base = np.stack([first.ravel(), second.ravel()], axis=-1)
    members = level_frequencies(base, 2)[0]

    def stable(beta: float) -> bool:
        sw = ShiftedWavenumber(sigma=sigma, beta=beta)
        try:
            symbol = smoother_symbol(members, geom, sw, "jacobi", omega)
        except ResonanceError:
            return False
        return float(np.max(np.abs(symbol))) <= 1.0

    return minimal_beta(stable, what="smoother criterion")


def resonance_frequency(sw: ShiftedWavenumber, geom: LevelGeometry) -> Optional[Tuple[float, float]]:
    """Approximate two-grid resonance +-arcsin(sqrt(-sigma h^2)), valid for |sigma| <= 1/h^2."""
    product = -sw.sigma * geom.mesh_width ** 2
    if product <= 0.0 or product > 1.0:
        return None
    theta = math.asin(math.sqrt(product))
    return theta, -theta


def _preconditioned_batch(plan: KGridPlan, theta0: np.ndarray, mu: int):
    """K = A(sigma) (I - M^mu) A(sigma_tilde)^-1 for a batch of base frequencies."""
    M, resonant, freqs = _eigenmatrix_batch(plan, theta0)
    geom = plan.geometry(1)
    fine = freqs[0]
    a_sigma = discretization_symbol(fine, geom, ShiftedWavenumber(sigma=plan.sigma))
    a_shift_inv, poles = guarded_reciprocal(discretization_symbol(fine, geom, plan.wavenumber),
                                            _resonance_tol())
    resonant = resonant | poles.any(axis=1)
    identity = np.eye(M.shape[-1], dtype=complex)
    K = a_sigma[:, :, None] * (identity - np.linalg.matrix_power(M, mu)) * a_shift_inv[:, None, :]
    return K, resonant


def preconditioned_eigenmatrix(plan: KGridPlan, theta0: FrequencyLike, mu: int = 1) -> np.ndarray:
    """Fourier representation of the right-preconditioned MG-Krylov operator."""
    if mu < 1:
        raise InputError("mu must be at least 1")
    base = _components(theta0)
    _check_base_cell(base, plan.dimension)
    K, resonant = _preconditioned_batch(plan, np.asarray([base], dtype=float), mu)
    if resonant[0]:
        raise ResonanceError(f"symbol to be inverted vanishes at theta={base}")
    return K[0]


def preconditioned_spectrum(plan: KGridPlan, mu: int = 1) -> np.ndarray:
    """Union over the sampled base cell of the eigenvalues of K."""
    if mu < 1:
        raise InputError("mu must be at least 1")
    thetas = sample_frequencies(plan)
    chunk = int(config.get("theta_chunk", 512))
    spectra = []
    for start in range(0, thetas.shape[0], chunk):
        K, resonant = _preconditioned_batch(plan, thetas[start:start + chunk], mu)
        if resonant.any():
            raise ResonanceError(f"resonant preconditioned symbol for sigma={plan.sigma}, beta={plan.beta}")
        spectra.append(batch_eigenvalues(K).ravel())
    return np.concatenate(spectra)


def angular_extent(eigenvalues: np.ndarray) -> float:
    """Smallest angle of a sector around the origin containing every eigenvalue."""
    eigenvalues = np.asarray(eigenvalues, dtype=complex).ravel()
    if eigenvalues.size == 0:
        return 0.0
    if not np.all(np.isfinite(eigenvalues)) or np.any(np.abs(eigenvalues) < _resonance_tol()):
        return 2.0 * math.pi
    angles = np.sort(np.angle(eigenvalues))
    gaps = np.diff(np.append(angles, angles[0] + 2.0 * math.pi))
    return float(2.0 * math.pi - gaps.max())


def half_plane_condition(eigenvalues: np.ndarray) -> bool:
    """True when all eigenvalues lie in one open half-plane through the origin."""
    return angular_extent(eigenvalues) < math.pi


def hpc_min_beta(plan: KGridPlan, mu: int = 1) -> float:
    """Smallest beta satisfying the half-plane condition for mu inner cycles."""
    if plan.sigma >= 0:
        raise InputError(f"hpc_min_beta needs sigma < 0, got {plan.sigma}")

    def satisfied(beta: float) -> bool:
        shifted = plan.with_beta(beta)
        key = f"hpc|{shifted.model_dump_json()}|{mu}"
        cached = amplification_cache.get(key)
        if cached is not None:
            return cached
        try:
            ok = half_plane_condition(preconditioned_spectrum(shifted, mu))
        except ResonanceError:
            ok = False
        amplification_cache.set(key, ok)
        return ok

    value = minimal_beta(satisfied, what="half-plane condition")
    logger.info(f"HPC beta={value:.4f} for sigma={plan.sigma}, mu={mu}")
    return value


def ellipse_rho_estimate(spectrum: Sequence[complex], ellipse: EllipseParams) -> float:
    """Convergence factor estimate (a + sqrt(a^2 - d^2)) / (c + sqrt(c^2 - d^2))."""
    points = np.asarray(spectrum, dtype=complex).ravel()
    if ellipse.contains(0.0):
        raise EstimateInvalidError("the ellipse contains the origin")
    slack = 1e-9 * max(1.0, ellipse.semi_major)
    if not all(ellipse.contains(z, slack) for z in points):
        raise InputError("the ellipse does not contain the whole spectrum")
    d, c = ellipse.focal, abs(ellipse.center)
    return (ellipse.semi_major + ellipse.semi_minor) / (c + math.sqrt(c * c - d * d))


def fit_ellipse(spectrum: Sequence[complex]) -> EllipseParams:
    """Smallest-estimate ellipse of the confocal family centered at the real midpoint.

    For a focal distance d the enclosing semi-major axis is the largest root
    over all points; d is chosen by bounded scalar minimization of the
    resulting estimate, with the circle d = 0 as fallback.
    """
    points = np.asarray(spectrum, dtype=complex).ravel()
    if points.size == 0:
        raise InputError("cannot fit an ellipse to an empty spectrum")
    center = 0.5 * (points.real.min() + points.real.max())
    reach = abs(center)
    if reach == 0.0:
        raise EstimateInvalidError("spectrum is centered on the origin")
    x2 = (points.real - center) ** 2
    y2 = points.imag ** 2

    def semi_major(focal: float) -> float:
        s = focal ** 2 + x2 + y2
        roots = 0.5 * (s + np.sqrt(np.maximum(s * s - 4.0 * x2 * focal ** 2, 0.0)))
        return max(math.sqrt(float(roots.max())), focal, 1e-12 * reach)

    def estimate(focal: float) -> float:
        a = semi_major(focal)
        if a >= reach:
            return math.inf
        return (a + math.sqrt(a * a - focal ** 2)) / (reach + math.sqrt(reach ** 2 - focal ** 2))

    candidates = [0.0]
    result = minimize_scalar(estimate, bounds=(0.0, 0.999 * reach), method="bounded")
    if np.isfinite(result.fun):
        candidates.append(float(result.x))
    focal = min(candidates, key=estimate)
    if not math.isfinite(estimate(focal)):
        raise EstimateInvalidError("every ellipse enclosing the spectrum contains the origin")
    return EllipseParams(center=float(center), focal=focal, semi_major=semi_major(focal))


def estimate_convergence_factor(spectrum: Sequence[complex]) -> float:
    """rho_TH: the ellipse estimate with the fitted ellipse."""
    return ellipse_rho_estimate(spectrum, fit_ellipse(spectrum))
