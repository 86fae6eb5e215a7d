"""Domain models shared by the analysis, solver and experiment modules."""
import hashlib
import math
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Dimension = Literal[1, 2]
SmootherKind = Literal["jacobi", "gauss-seidel"]
KrylovMethod = Literal["gmres", "bicgstab"]


class ShiftedWavenumber(BaseModel):
    """Squared wavenumber with its complex shift, sigma_tilde = sigma * (alpha + beta*i)."""
    model_config = ConfigDict(frozen=True)

    sigma: float = Field(..., description="Negatively signed squared wavenumber")
    beta: float = Field(0.0, ge=0.0, description="Complex shift parameter")
    alpha: Literal[1] = 1

    @property
    def sigma_tilde(self) -> complex:
        return complex(self.sigma * self.alpha, self.sigma * self.beta)


class Frequency(BaseModel):
    """One (1D) or two (2D) Fourier angles, each in (-pi, pi]."""
    model_config = ConfigDict(frozen=True)

    components: Tuple[float, ...]

    @field_validator("components")
    @classmethod
    def _in_range(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(value) not in (1, 2):
            raise ValueError("a frequency has one or two components")
        for theta in value:
            if not (-math.pi < theta <= math.pi):
                raise ValueError(f"frequency component {theta} outside (-pi, pi]")
        return value

    @property
    def dimension(self) -> int:
        return len(self.components)


class LevelGeometry(BaseModel):
    """Grid level l of a hierarchy whose finest grid has N intervals per direction."""
    model_config = ConfigDict(frozen=True)

    finest_points: int = Field(..., ge=2)
    level: int = Field(1, ge=1)
    dimension: Dimension = 1

    @field_validator("finest_points")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"finest_points must be a power of two, got {value}")
        return value

    @model_validator(mode="after")
    def _level_exists(self) -> "LevelGeometry":
        if self.points < 2:
            raise ValueError(f"level {self.level} does not exist for N={self.finest_points}")
        return self

    @property
    def points(self) -> int:
        """Intervals per direction on this level."""
        return self.finest_points >> (self.level - 1)

    @property
    def interior(self) -> int:
        """Interior points per direction (homogeneous Dirichlet boundary)."""
        return self.points - 1

    @property
    def mesh_width(self) -> float:
        return 2.0 ** (self.level - 1) / self.finest_points

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.interior,) * self.dimension

    def coarser(self) -> "LevelGeometry":
        return LevelGeometry(finest_points=self.finest_points, level=self.level + 1,
                             dimension=self.dimension)


class SymbolSet(BaseModel):
    """Fourier symbols of all cycle components at a single frequency."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    a_tilde: complex
    r_tilde: complex
    p_tilde: complex
    s_tilde: complex


class HarmonicSet(BaseModel):
    """A low frequency and the frequencies aliasing with it on the next coarser grid."""
    model_config = ConfigDict(frozen=True)

    base: Tuple[float, ...]
    members: List[Tuple[float, ...]]

    @property
    def coarse(self) -> Tuple[float, ...]:
        return tuple(2.0 * theta for theta in self.base)


class KGridPlan(BaseModel):
    """Everything a k-grid Local Fourier Analysis needs."""
    model_config = ConfigDict(frozen=True)

    dimension: Dimension = 1
    levels: int = Field(2, ge=2, le=4)
    nu1: int = Field(1, ge=0)
    nu2: int = Field(0, ge=0)
    smoother: SmootherKind = "jacobi"
    omega: float = Field(2.0 / 3.0, ge=0.0, le=1.0)
    finest_points: int = Field(64, ge=4)
    sigma: float = -500.0
    beta: float = Field(0.0, ge=0.0)
    theta_samples: Optional[int] = Field(None, ge=2)

    @field_validator("finest_points")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"finest_points must be a power of two, got {value}")
        return value

    @field_validator("theta_samples")
    @classmethod
    def _even_samples(cls, value: Optional[int]) -> Optional[int]:
        # odd counts would place a sample exactly on theta = 0
        if value is not None and value % 2:
            raise ValueError("theta_samples must be even")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "KGridPlan":
        if self.nu1 + self.nu2 < 1:
            raise ValueError("a cycle needs at least one smoothing step (nu1 + nu2 >= 1)")
        if self.smoother == "gauss-seidel" and self.dimension != 1:
            raise ValueError("the Gauss-Seidel symbol is only available in 1D")
        if self.finest_points >> (self.levels - 1) < 2:
            raise ValueError(f"N={self.finest_points} cannot support {self.levels} levels")
        return self

    @property
    def wavenumber(self) -> ShiftedWavenumber:
        return ShiftedWavenumber(sigma=self.sigma, beta=self.beta)

    @property
    def matrix_size(self) -> int:
        return (2 ** self.dimension) ** (self.levels - 1)

    def geometry(self, level: int = 1) -> LevelGeometry:
        return LevelGeometry(finest_points=self.finest_points, level=level,
                             dimension=self.dimension)

    def with_beta(self, beta: float) -> "KGridPlan":
        return self.model_copy(update={"beta": float(beta)})

    def with_sigma(self, sigma: float) -> "KGridPlan":
        return self.model_copy(update={"sigma": float(sigma)})


class AmplificationResult(BaseModel):
    """Maximum of the amplification factor over the sampled frequencies."""
    value: float
    theta: Tuple[float, ...]
    resonant: bool = False
    complete: bool = True


class BetaCurve(BaseModel):
    """beta_min sampled over a range of wavenumbers."""
    plan: KGridPlan
    samples: List[Tuple[float, float]] = Field(default_factory=list)

    @field_validator("samples")
    @classmethod
    def _non_negative(cls, value: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        for sigma, beta in value:
            if beta < 0:
                raise ValueError(f"negative beta_min {beta} at sigma={sigma}")
        return value


class SmootherBounds(BaseModel):
    """Closed-form smoother-only shift limits at theta = 0 and theta = pi."""
    zero_bound: float
    pi_bound: float

    @property
    def beta_min(self) -> float:
        return max(self.zero_bound, self.pi_bound)


class EllipseParams(BaseModel):
    """Ellipse E(c, d, a) with real center, focal distance d and major semi-axis a."""
    model_config = ConfigDict(frozen=True)

    center: float
    focal: float = Field(..., ge=0.0)
    semi_major: float = Field(..., gt=0.0)

    @model_validator(mode="after")
    def _axes(self) -> "EllipseParams":
        if self.semi_major < self.focal:
            raise ValueError("semi-major axis must not be smaller than the focal distance")
        return self

    @property
    def semi_minor(self) -> float:
        return math.sqrt(self.semi_major ** 2 - self.focal ** 2)

    def contains(self, z: complex, slack: float = 0.0) -> bool:
        foci = (complex(self.center - self.focal), complex(self.center + self.focal))
        return abs(z - foci[0]) + abs(z - foci[1]) <= 2.0 * self.semi_major + slack


class GridFunction(BaseModel):
    """Complex values at the interior points of a grid level."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    geometry: LevelGeometry
    values: np.ndarray

    @model_validator(mode="after")
    def _shape(self) -> "GridFunction":
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.geometry.shape:
            raise ValueError(f"values of shape {values.shape} do not fit grid {self.geometry.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function contains non-finite values")
        self.values = values
        return self

    @classmethod
    def zeros(cls, geometry: LevelGeometry) -> "GridFunction":
        return cls(geometry=geometry, values=np.zeros(geometry.shape, dtype=complex))

    @classmethod
    def ones(cls, geometry: LevelGeometry) -> "GridFunction":
        return cls(geometry=geometry, values=np.ones(geometry.shape, dtype=complex))


class HelmholtzOperator(BaseModel):
    """Rediscretized shifted Helmholtz stencil -Laplace + sigma_tilde on one level."""
    model_config = ConfigDict(frozen=True)

    geometry: LevelGeometry
    sigma: float
    beta: float = Field(0.0, ge=0.0)

    @property
    def wavenumber(self) -> ShiftedWavenumber:
        return ShiftedWavenumber(sigma=self.sigma, beta=self.beta)

    @property
    def sigma_tilde(self) -> complex:
        return self.wavenumber.sigma_tilde

    @property
    def dimension(self) -> int:
        return self.geometry.dimension

    def coarser(self) -> "HelmholtzOperator":
        return HelmholtzOperator(geometry=self.geometry.coarser(), sigma=self.sigma, beta=self.beta)


class CycleSpec(BaseModel):
    """Multigrid cycle settings; levels=None coarsens down to 3 interior points."""
    model_config = ConfigDict(frozen=True)

    levels: Optional[int] = Field(2, ge=2)
    nu1: int = Field(1, ge=0)
    nu2: int = Field(0, ge=0)
    smoother: SmootherKind = "jacobi"
    omega: float = Field(2.0 / 3.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _smoothing(self) -> "CycleSpec":
        if self.nu1 + self.nu2 < 1:
            raise ValueError("a cycle needs at least one smoothing step (nu1 + nu2 >= 1)")
        return self


class PreconditionerSpec(BaseModel):
    """Complex Shifted Laplacian preconditioner approximated by mu multigrid cycles."""
    model_config = ConfigDict(frozen=True)

    beta: float = Field(..., ge=0.0)
    mu: int = Field(1, ge=1)
    cycle: CycleSpec = Field(default_factory=CycleSpec)


class KrylovSpec(BaseModel):
    """Outer Krylov solver settings (left preconditioning)."""
    model_config = ConfigDict(frozen=True)

    method: KrylovMethod = "gmres"
    tol: float = Field(1e-6, gt=0.0, lt=1.0)
    maxiter: Optional[int] = Field(None, ge=1)
    preconditioner: Optional[PreconditionerSpec] = None

    def with_beta(self, beta: float) -> "KrylovSpec":
        if self.preconditioner is None:
            raise ValueError("an unpreconditioned solve has no shift")
        return self.model_copy(update={
            "preconditioner": self.preconditioner.model_copy(update={"beta": float(beta)})
        })


class SolveReport(BaseModel):
    """Outcome of a Krylov solve."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    method: KrylovMethod
    iterations: int
    converged: bool
    breakdown: bool = False
    final_residual: float
    residual_history: List[float] = Field(default_factory=list)
    true_residual_history: List[float] = Field(default_factory=list)
    wall_time: float = 0.0
    solution: Optional[np.ndarray] = Field(None, exclude=True)


class SweepRow(BaseModel):
    """One cell of an experiment: the inputs, one metric and its value."""
    sigma: float
    beta: Optional[float] = None
    metric: str
    value: float
    status: Literal["ok", "failed", "bound"] = "ok"
    reason: str = ""
    extra: Dict[str, Union[int, float, str]] = Field(default_factory=dict)


class SweepResult(BaseModel):
    """Rows produced by one run plus the provenance of the run."""
    kind: str
    rows: List[SweepRow] = Field(default_factory=list)
    provenance: Dict[str, Any] = Field(default_factory=dict)

    @property
    def failures(self) -> int:
        return sum(1 for row in self.rows if row.status == "failed")


ExperimentKind = Literal[
    "beta-curve",
    "smoother-curve",
    "amplification-profile",
    "heatmap",
    "iteration-minimum",
    "hpc-curve",
    "convfactor-table",
    "invariance-check",
]

# kinds whose cells are indexed by beta as well as sigma
BETA_KINDS = ("amplification-profile", "heatmap", "iteration-minimum", "convfactor-table")


class ValueRange(BaseModel):
    """Explicit values, or start/stop with either a count (num) or a step."""
    model_config = ConfigDict(extra="forbid")

    values: Optional[List[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    num: Optional[int] = Field(None, ge=1)
    step: Optional[float] = Field(None, gt=0.0)
    spacing: Literal["linear", "log"] = "linear"

    @model_validator(mode="after")
    def _complete(self) -> "ValueRange":
        if self.values is not None:
            if not self.values:
                raise ValueError("range is empty")
            return self
        if self.start is None or self.stop is None:
            raise ValueError("range needs either values or start and stop")
        if (self.num is None) == (self.step is None):
            raise ValueError("range needs exactly one of num and step")
        if self.spacing == "log" and (self.num is None or self.start * self.stop <= 0):
            raise ValueError("log spacing needs num and endpoints of the same sign")
        return self

    def resolve(self) -> List[float]:
        if self.values is not None:
            return [float(v) for v in self.values]
        if self.step is not None:
            count = int(math.floor(abs(self.stop - self.start) / self.step + 1e-9)) + 1
            direction = 1.0 if self.stop >= self.start else -1.0
            return [round(self.start + direction * i * self.step, 12) for i in range(count)]
        if self.spacing == "log":
            return [float(v) for v in np.geomspace(self.start, self.stop, self.num)]
        return [float(v) for v in np.linspace(self.start, self.stop, self.num)]


class RunConfig(BaseModel):
    """One experiment recipe."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ExperimentKind
    comment: str = ""
    dimension: Dimension = 1
    finest_points: int = Field(64, ge=4)
    levels: int = Field(2, ge=2, le=4)
    cycle: Literal["kgrid", "full-v"] = "kgrid"
    nu1: int = Field(1, ge=0)
    nu2: int = Field(0, ge=0)
    nu_sweep: Optional[List[int]] = None
    omega: Union[float, Literal["optimal"]] = 2.0 / 3.0
    omega_sweep: Optional[List[float]] = None
    smoother: SmootherKind = "jacobi"
    sigma: Optional[ValueRange] = None
    beta: Optional[ValueRange] = None
    mu: List[int] = Field(default_factory=lambda: [1])
    method: KrylovMethod = "gmres"
    metric: Literal["iterations", "amplification"] = "iterations"
    krylov_tol: Optional[float] = Field(None, gt=0.0, lt=1.0)
    maxiter: Optional[int] = Field(None, ge=1)
    experimental: bool = False
    iterations: Optional[int] = Field(None, ge=20)
    seed: int = 0
    theta_samples: Optional[int] = Field(None, ge=2)
    jobs: Optional[int] = Field(None, ge=1)
    output: Optional[str] = None
    max_failed_fraction: Optional[float] = Field(None, ge=0.0, le=1.0)
    invariance_tol: float = Field(1e-3, gt=0.0)

    @field_validator("finest_points")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"finest_points must be a power of two, got {value}")
        return value

    @field_validator("omega")
    @classmethod
    def _omega_range(cls, value):
        if value != "optimal" and not 0.0 <= value <= 1.0:
            raise ValueError(f"omega {value} outside [0, 1]")
        return value

    @field_validator("mu")
    @classmethod
    def _mu_positive(cls, value: List[int]) -> List[int]:
        if not value or any(mu < 1 for mu in value):
            raise ValueError("mu must be a non-empty list of positive counts")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        problems = []
        if self.sigma is None:
            problems.append("missing sigma range")
        elif any(sigma >= 0 for sigma in self.sigma.resolve()):
            problems.append("sigma values must be strictly negative")
        if self.beta is None and self.kind in BETA_KINDS and self.kind != "heatmap":
            problems.append(f"kind {self.kind} needs a beta range")
        if self.beta is not None and any(beta < 0 for beta in self.beta.resolve()):
            problems.append("beta values must be non-negative")
        if self.nu_sweep is None and self.nu1 + self.nu2 < 1:
            problems.append("nu1 + nu2 must be at least 1")
        if self.nu_sweep is not None and any(nu < 1 for nu in self.nu_sweep):
            problems.append("nu_sweep entries must be at least 1")
        if self.omega_sweep is not None and any(not 0.0 <= w <= 1.0 for w in self.omega_sweep):
            problems.append("omega_sweep entries must lie in [0, 1]")
        if self.smoother == "gauss-seidel" and self.dimension != 1:
            problems.append("the Gauss-Seidel smoother is only available in 1D")
        if self.kind == "smoother-curve" and self.dimension != 1:
            problems.append("the closed-form smoother bounds are 1D only")
        if self.finest_points >> (self.levels - 1) < 2:
            problems.append(f"finest_points={self.finest_points} cannot support {self.levels} levels")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def sigmas(self) -> List[float]:
        return self.sigma.resolve()

    def betas(self) -> List[float]:
        if self.beta is None:
            # heatmap default: beta in [0, 1] with step 0.02
            return ValueRange(start=0.0, stop=1.0, step=0.02).resolve()
        return self.beta.resolve()

    def config_hash(self) -> str:
        return hashlib.md5(self.model_dump_json().encode("utf-8")).hexdigest()
