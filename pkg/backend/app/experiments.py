"""Experiment orchestration: recipes in, CSV and JSON artifacts out.

Every recipe expands into independent cells (one sigma, beta or mu
combination each). Cells run inline or on a process pool and always come back
in submission order, so reruns of the same recipe give identical CSV files.
"""
import json
import logging
import math
from datetime import datetime, timezone
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from config import Settings, config
from . import __version__
from .errors import ConfigError, EstimateInvalidError, ShiftScopeError
from .krylov import convergence_factor, select_minimum, solve
from .lfa import (
    amplification_profile,
    beta_min,
    estimate_convergence_factor,
    hpc_min_beta,
    max_amplification,
    numerical_smoother_beta_min,
    preconditioned_spectrum,
    resonance_frequency,
    sample_frequencies,
    smoother_bounds,
)
from .models import (
    CycleSpec,
    GridFunction,
    HelmholtzOperator,
    KGridPlan,
    KrylovSpec,
    LevelGeometry,
    PreconditionerSpec,
    RunConfig,
    ShiftedWavenumber,
    SolveReport,
    SweepResult,
    SweepRow,
)
from .multigrid import experimental_beta_min
from .symbols import jacobi_symbol, optimal_jacobi_weight, smoother_extrema

logger = logging.getLogger(__name__)

# Numerical failures that turn a cell into a NaN row instead of aborting the run
CELL_ERRORS = (ShiftScopeError, ValueError, ArithmeticError, np.linalg.LinAlgError)

# Largest kh for which a grid still resolves the wave
RESOLUTION_KH = 0.625

Cell = Tuple[str, RunConfig, Dict[str, Any]]

BASE_COLUMNS = ["kind", "sigma", "beta", "metric", "value", "status", "reason"]


def resolution_sigma(finest_points: int, kh: float = RESOLUTION_KH) -> float:
    """Most negative sigma satisfying the resolution rule kh <= 0.625."""
    return -(kh * finest_points) ** 2


def _warn_resolution(run_config: RunConfig) -> None:
    limit = resolution_sigma(run_config.finest_points)
    for sigma in run_config.sigmas():
        if sigma < limit:
            logger.warning(f"sigma={sigma} violates kh <= {RESOLUTION_KH} on N={run_config.finest_points} "
                           f"(limit {limit:.1f})")


def _resolve_omega(run_config: RunConfig, sigma: float, omega=None) -> float:
    value = run_config.omega if omega is None else omega
    if value == "optimal":
        geometry = LevelGeometry(finest_points=run_config.finest_points, dimension=run_config.dimension)
        return optimal_jacobi_weight(sigma, geometry)
    return float(value)


def _plan(run_config: RunConfig, sigma: float, beta: float = 0.0, nu: Optional[int] = None,
          omega=None, finest_points: Optional[int] = None) -> KGridPlan:
    nu1, nu2 = (nu, 0) if nu is not None else (run_config.nu1, run_config.nu2)
    return KGridPlan(
        dimension=run_config.dimension,
        levels=run_config.levels,
        nu1=nu1,
        nu2=nu2,
        smoother=run_config.smoother,
        omega=_resolve_omega(run_config, sigma, omega),
        finest_points=finest_points or run_config.finest_points,
        sigma=sigma,
        beta=beta,
        theta_samples=run_config.theta_samples,
    )


def _cycle_spec(run_config: RunConfig, omega: float, nu: Optional[int] = None) -> CycleSpec:
    nu1, nu2 = (nu, 0) if nu is not None else (run_config.nu1, run_config.nu2)
    return CycleSpec(
        levels=None if run_config.cycle == "full-v" else run_config.levels,
        nu1=nu1,
        nu2=nu2,
        smoother=run_config.smoother,
        omega=omega,
    )


def _guarded(compute: Callable[[], Any]) -> Tuple[Any, Optional[str]]:
    try:
        return compute(), None
    except CELL_ERRORS as exc:
        reason = " ".join(f"{type(exc).__name__}: {exc}".split())
        logger.error(f"Cell failed: {reason}", exc_info=True)
        return None, reason


def _row(metric: str, sigma: float, beta: Optional[float], value: Any,
         error: Optional[str] = None, **extra) -> SweepRow:
    if error is not None:
        return SweepRow(sigma=sigma, beta=beta, metric=metric, value=math.nan,
                        status="failed", reason=error, extra=extra)
    return SweepRow(sigma=sigma, beta=beta, metric=metric, value=float(value), extra=extra)


def _measure(metric: str, sigma: float, beta: Optional[float], compute: Callable[[], Any],
             **extra) -> SweepRow:
    value, error = _guarded(compute)
    return _row(metric, sigma, beta, value, error, **extra)


def _krylov_report(run_config: RunConfig, sigma: float, beta: float, mu: int) -> SolveReport:
    geometry = LevelGeometry(finest_points=run_config.finest_points, dimension=run_config.dimension)
    spec = KrylovSpec(
        method=run_config.method,
        tol=run_config.krylov_tol or float(config.get("krylov_tol", 1e-6)),
        maxiter=run_config.maxiter,
        preconditioner=PreconditionerSpec(
            beta=beta, mu=mu, cycle=_cycle_spec(run_config, _resolve_omega(run_config, sigma))),
    )
    return solve(HelmholtzOperator(geometry=geometry, sigma=sigma), GridFunction.ones(geometry), spec)


def _beta_curve_cell(run_config: RunConfig, sigma: float, nu: Optional[int], omega) -> List[SweepRow]:
    resolved, error = _guarded(lambda: _resolve_omega(run_config, sigma, omega))
    extra = {"nu": nu if nu is not None else run_config.nu1 + run_config.nu2,
             "omega": resolved if error is None else str(omega),
             "levels": run_config.levels, "N": run_config.finest_points}
    if error is not None:
        return [_row("beta_min", sigma, None, None, error, **extra)]
    rows = [_measure("beta_min", sigma, None,
                     lambda: beta_min(_plan(run_config, sigma, nu=nu, omega=resolved)), **extra)]
    if run_config.experimental:
        rows.append(_measure(
            "experimental_beta_min", sigma, None,
            lambda: experimental_beta_min(_cycle_spec(run_config, resolved, nu), sigma,
                                          run_config.finest_points, run_config.dimension,
                                          run_config.seed, run_config.iterations),
            cycle=run_config.cycle, **extra,
        ))
    return rows


def _binding_frequency(geometry: LevelGeometry, sigma: float, beta: float, omega: float) -> float:
    """Stationary frequency of the smoother symbol with the largest modulus."""
    extrema = smoother_extrema(sigma, geometry, omega)
    sw = ShiftedWavenumber(sigma=sigma, beta=beta)
    moduli = [abs(complex(jacobi_symbol([theta], geometry, sw, omega))) for theta in extrema]
    return extrema[int(np.argmax(moduli))]


def _smoother_cell(run_config: RunConfig, sigma: float, omega) -> List[SweepRow]:
    geometry = LevelGeometry(finest_points=run_config.finest_points, dimension=1)
    resolved, error = _guarded(lambda: _resolve_omega(run_config, sigma, omega))
    if error is not None:
        return [_row("smoother_beta_min", sigma, None, None, error, omega=str(omega))]
    bounds, error = _guarded(lambda: smoother_bounds(geometry, sigma, resolved))
    if error is not None:
        return [_row("smoother_beta_min", sigma, None, None, error, omega=resolved)]
    binding, binding_error = _guarded(
        lambda: _binding_frequency(geometry, sigma, bounds.beta_min, resolved))
    extra = {"omega": resolved,
             "binding_theta": binding if binding_error is None else math.nan}
    return [
        _row("zero_bound", sigma, None, bounds.zero_bound, omega=resolved),
        _row("pi_bound", sigma, None, bounds.pi_bound, omega=resolved),
        _row("smoother_beta_min", sigma, None, bounds.beta_min, **extra),
        _measure("numerical_smoother_beta_min", sigma, None,
                 lambda: numerical_smoother_beta_min(geometry, sigma, resolved), omega=resolved),
    ]


def _theta_extra(theta: Sequence[float]) -> Dict[str, float]:
    if len(theta) == 1:
        return {"theta": float(theta[0])}
    return {"theta1": float(theta[0]), "theta2": float(theta[1])}


def _profile_cell(run_config: RunConfig, sigma: float, beta: float) -> List[SweepRow]:
    plan, error = _guarded(lambda: _plan(run_config, sigma, beta))
    if error is not None:
        return [_row("max_amplification", sigma, beta, None, error)]
    thetas = sample_frequencies(plan, fold=False)
    values, error = _guarded(lambda: amplification_profile(plan, thetas))
    if error is not None:
        return [_row("max_amplification", sigma, beta, None, error)]
    rows = [_row("amplification", sigma, beta, value, **_theta_extra(theta))
            for theta, value in zip(thetas, values)]
    peak = int(np.argmax(values))
    rows.append(_row("max_amplification", sigma, beta, values[peak], **_theta_extra(thetas[peak])))
    resonance = resonance_frequency(plan.wavenumber, plan.geometry(1))
    if resonance is not None:
        rows.append(_row("resonance_theta", sigma, beta, resonance[0]))
    return rows


def _heatmap_cell(run_config: RunConfig, sigma: float, beta: float, mu: int) -> List[SweepRow]:
    if run_config.metric == "amplification":
        return [_measure("max_amplification", sigma, beta,
                         lambda: max_amplification(_plan(run_config, sigma, beta)).value)]
    return _krylov_cell(run_config, sigma, beta, mu)


def _krylov_cell(run_config: RunConfig, sigma: float, beta: float, mu: int) -> List[SweepRow]:
    report, error = _guarded(lambda: _krylov_report(run_config, sigma, beta, mu))
    if error is not None:
        return [_row("iterations", sigma, beta, None, error, mu=mu)]
    return [_row("iterations", sigma, beta, report.iterations, mu=mu,
                 converged=int(report.converged), final_residual=report.final_residual)]


def _convfactor_cell(run_config: RunConfig, sigma: float, beta: float, mu: int) -> List[SweepRow]:
    rows = []
    report, error = _guarded(lambda: _krylov_report(run_config, sigma, beta, mu))
    if error is not None:
        rows.append(_row("rho_ex", sigma, beta, None, error, mu=mu))
    else:
        rows.append(_row("rho_ex", sigma, beta, convergence_factor(report), mu=mu,
                         iterations=report.iterations, converged=int(report.converged)))

    spectrum, error = _guarded(lambda: preconditioned_spectrum(_plan(run_config, sigma, beta), mu))
    if error is not None:
        rows.append(_row("rho_th", sigma, beta, None, error, mu=mu))
        return rows
    try:
        rows.append(_row("rho_th", sigma, beta, estimate_convergence_factor(spectrum), mu=mu))
    except EstimateInvalidError as exc:
        # the origin is enclosed: the estimate can only say "no contraction"
        rows.append(SweepRow(sigma=sigma, beta=beta, metric="rho_th", value=1.0, status="bound",
                             reason=str(exc), extra={"mu": mu}))
    except CELL_ERRORS as exc:
        rows.append(_row("rho_th", sigma, beta, None, f"{type(exc).__name__}: {exc}", mu=mu))
    return rows


def _beta_min_cell(run_config: RunConfig, sigma: float) -> List[SweepRow]:
    return [_measure("beta_min", sigma, None, lambda: beta_min(_plan(run_config, sigma)))]


def _hpc_cell(run_config: RunConfig, sigma: float, mu: int) -> List[SweepRow]:
    return [_measure("hpc_beta_min", sigma, None,
                     lambda: hpc_min_beta(_plan(run_config, sigma), mu), mu=mu)]


def _invariance_cell(run_config: RunConfig, sigma: float) -> List[SweepRow]:
    n = run_config.finest_points
    base, error = _guarded(lambda: beta_min(_plan(run_config, sigma)))
    scaled, scaled_error = _guarded(lambda: beta_min(_plan(run_config, 4.0 * sigma, finest_points=2 * n)))
    rows = [
        _row("beta_min", sigma, None, base, error, N=n),
        _row("beta_min_scaled", 4.0 * sigma, None, scaled, scaled_error, N=2 * n),
    ]
    if error is None and scaled_error is None:
        rows.append(_row("delta", sigma, None, abs(scaled - base), N=n))
    else:
        rows.append(_row("delta", sigma, None, None, error or scaled_error, N=n))
    if (n // 2) >> (run_config.levels - 1) >= 2:
        rows.append(_measure("coarse_bound", sigma / 4.0, None,
                             lambda: beta_min(_plan(run_config, sigma / 4.0, finest_points=n // 2)),
                             N=n // 2))
    return rows


TASKS: Dict[str, Callable[..., List[SweepRow]]] = {
    "beta-curve": _beta_curve_cell,
    "smoother-curve": _smoother_cell,
    "amplification-profile": _profile_cell,
    "heatmap": _heatmap_cell,
    "iteration-minimum": _krylov_cell,
    "convfactor-table": _convfactor_cell,
    "beta-min": _beta_min_cell,
    "hpc": _hpc_cell,
    "invariance-check": _invariance_cell,
}


def build_cells(run_config: RunConfig) -> List[Cell]:
    """Independent units of work for a recipe, in output order."""
    sigmas = run_config.sigmas()
    kind = run_config.kind
    cells: List[Cell] = []
    if kind == "beta-curve":
        nus = run_config.nu_sweep or [None]
        omegas = run_config.omega_sweep or [run_config.omega]
        for nu in nus:
            for omega in omegas:
                cells.extend((kind, run_config, {"sigma": s, "nu": nu, "omega": omega}) for s in sigmas)
    elif kind == "smoother-curve":
        for omega in run_config.omega_sweep or [run_config.omega]:
            cells.extend((kind, run_config, {"sigma": s, "omega": omega}) for s in sigmas)
    elif kind == "amplification-profile":
        cells = [(kind, run_config, {"sigma": s, "beta": b})
                 for s in sigmas for b in run_config.betas()]
    elif kind in ("heatmap", "iteration-minimum", "convfactor-table"):
        cells = [(kind, run_config, {"sigma": s, "beta": b, "mu": mu})
                 for mu in run_config.mu for s in sigmas for b in run_config.betas()]
    elif kind == "hpc-curve":
        cells = [("beta-min", run_config, {"sigma": s}) for s in sigmas]
        cells.extend(("hpc", run_config, {"sigma": s, "mu": mu})
                     for mu in run_config.mu for s in sigmas)
    elif kind == "invariance-check":
        cells = [(kind, run_config, {"sigma": s}) for s in sigmas]
    return cells


def evaluate_cell(cell: Cell) -> List[SweepRow]:
    task, run_config, params = cell
    return TASKS[task](run_config, **params)


def _map_cells(cells: List[Cell], jobs: int) -> List[List[SweepRow]]:
    if jobs <= 1 or len(cells) <= 1:
        return [evaluate_cell(cell) for cell in cells]
    with Pool(processes=min(jobs, len(cells))) as pool:
        return pool.map(evaluate_cell, cells, chunksize=1)


def _iteration_minima(rows: List[SweepRow]) -> List[SweepRow]:
    groups: Dict[Tuple[float, int], List[Tuple[float, int]]] = {}
    for row in rows:
        if row.metric == "iterations" and row.status == "ok":
            groups.setdefault((row.sigma, int(row.extra["mu"])), []).append((row.beta, int(row.value)))
    minima = []
    for (sigma, mu), results in groups.items():
        beta, iterations = select_minimum(results)
        minima.append(_row("iteration_minimum_beta", sigma, beta, beta, mu=mu, iterations=iterations))
    return minima


def summarize(kind: str, rows: List[SweepRow]) -> Dict[str, Any]:
    """Kind-specific digest stored in the JSON sidecar."""
    if kind == "iteration-minimum":
        return {"minima": [{"sigma": r.sigma, "mu": r.extra["mu"], "beta": r.beta,
                            "iterations": r.extra["iterations"]}
                           for r in rows if r.metric == "iteration_minimum_beta"]}
    if kind == "convfactor-table":
        table: Dict[str, Dict[str, Any]] = {}
        for r in rows:
            if r.metric in ("rho_ex", "rho_th"):
                key = f"sigma={r.sigma:g},mu={r.extra.get('mu')},beta={r.beta:g}"
                table.setdefault(key, {})[r.metric] = None if math.isnan(r.value) else r.value
        return {"table": table}
    if kind == "invariance-check":
        deltas = [r.value for r in rows if r.metric == "delta" and r.status == "ok"]
        return {"max_delta": max(deltas) if deltas else None}
    if kind == "hpc-curve":
        reference = {r.sigma: r.value for r in rows if r.metric == "beta_min" and r.status == "ok"}
        violations = [r.sigma for r in rows if r.metric == "hpc_beta_min" and r.status == "ok"
                      and r.sigma in reference and r.value > reference[r.sigma]]
        return {"dominance_violations": violations}
    return {}


def run(run_config: RunConfig, output_dir: Optional[Path] = None, jobs: Optional[int] = None,
        write: bool = True) -> SweepResult:
    """Execute a recipe and, unless ``write`` is False, store its artifacts."""
    _warn_resolution(run_config)
    cells = build_cells(run_config)
    workers = jobs or run_config.jobs or int(config.get("jobs", 1))
    logger.info(f"Running {run_config.kind} with {len(cells)} cells on {workers} worker(s)")

    rows = [row for cell_rows in _map_cells(cells, workers) for row in cell_rows]
    if run_config.kind == "iteration-minimum":
        rows.extend(_iteration_minima(rows))

    provenance = {
        "config": run_config.model_dump(mode="json"),
        "config_hash": run_config.config_hash(),
        "version": __version__,
        "seed": run_config.seed,
        "cells": len(cells),
        "summary": summarize(run_config.kind, rows),
        "stopping_test": "preconditioned relative residual",
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if run_config.cycle == "full-v":
        provenance["coarsest_interior_points"] = 3

    result = SweepResult(kind=run_config.kind, rows=rows, provenance=provenance)
    failed = result.failures
    if failed:
        logger.warning(f"{failed} of {len(rows)} rows failed")
    if write:
        write_result(result, run_config, output_dir)
    logger.info(f"Finished {run_config.kind}: {len(rows)} rows")
    return result


def result_frame(result: SweepResult) -> pd.DataFrame:
    """Rows as a DataFrame with the base columns, the sorted extras and the config hash."""
    extras = sorted({key for row in result.rows for key in row.extra})
    records = []
    for row in result.rows:
        record = {"kind": result.kind, "sigma": row.sigma, "beta": row.beta, "metric": row.metric,
                  "value": row.value, "status": row.status, "reason": row.reason}
        record.update(row.extra)
        record["config_hash"] = result.provenance.get("config_hash", "")
        records.append(record)
    return pd.DataFrame(records, columns=BASE_COLUMNS + extras + ["config_hash"])


def output_directory(output_dir: Optional[Path] = None) -> Path:
    if output_dir is not None:
        return Path(output_dir)
    settings = Settings()
    if settings.output_dir is not None:
        return settings.output_dir
    return Path(config.get("output_dir", "results"))


def write_result(result: SweepResult, run_config: RunConfig,
                 output_dir: Optional[Path] = None) -> Tuple[Path, Path]:
    """Write ``<stem>.csv`` and the ``<stem>.json`` provenance sidecar."""
    directory = output_directory(output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    stem = run_config.output or run_config.kind
    csv_path = directory / f"{stem}.csv"
    json_path = directory / f"{stem}.json"
    digits = int(config.get("float_digits", 9))
    result_frame(result).to_csv(csv_path, index=False, float_format=f"%.{digits}g", na_rep="nan")
    with open(json_path, "w") as f:
        json.dump(result.provenance, f, indent=2, sort_keys=True, default=str)
    logger.info(f"Wrote {csv_path} and {json_path}")
    return csv_path, json_path


def exit_code(result: SweepResult, run_config: RunConfig) -> int:
    """0 on success, 1 when too many cells failed or the invariance tolerance is exceeded."""
    threshold = run_config.max_failed_fraction
    if threshold is None:
        threshold = float(config.get("max_failed_fraction", 0.5))
    if result.rows and result.failures / len(result.rows) > threshold:
        return 1
    if run_config.kind == "invariance-check":
        max_delta = result.provenance.get("summary", {}).get("max_delta")
        if max_delta is None or max_delta >= run_config.invariance_tol:
            return 1
    return 0


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``key=value`` overrides; dotted keys reach into nested blocks, values are YAML."""
    for item in overrides:
        key, separator, raw = item.partition("=")
        if not separator or not key:
            raise ConfigError([f"override {item!r} is not of the form key=value"])
        target = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                target[part] = {}
            target = target[part]
        target[parts[-1]] = yaml.safe_load(raw)
    return data


def _violations(exc: ValidationError) -> List[str]:
    messages = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"])
        message = error["msg"].removeprefix("Value error, ")
        for part in message.split("; "):
            messages.append(f"{location}: {part}" if location else part)
    return messages


def parse_run_config(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(["a recipe must be a mapping of keys to values"])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_violations(exc)) from exc


def load_run_config(path: Path, overrides: Sequence[str] = ()) -> RunConfig:
    """Read a YAML recipe and apply CLI overrides."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"recipe not found: {path}"])
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"invalid YAML in {path}: {exc}"]) from exc
    if isinstance(data, dict):
        data = apply_overrides(data, overrides)
    return parse_run_config(data)


def validate(path: Path) -> List[str]:
    """Violations of a recipe file; an empty list means it is well-formed."""
    try:
        load_run_config(path)
    except ConfigError as exc:
        return exc.violations
    return []
