"""
Core functionality for torus-lab: escape-time sweeps, scaling fits, the
end-to-end pipeline and plot data.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..utils.utils import ensure_dir, read_csv, run_tasks, spawn_seeds, write_csv, write_json, write_jsonl
from .birkhoff import NormalFormResult, bnf, gevrey_beta
from .config import ExperimentConfig
from .diophantine import gamma_estimate
from .dynamics import EscapeTimeRecord, escape_ensemble
from .errors import SmallDivisor, TorusLabError
from .series import FourierTaylorSeries
from .steepness import (
    auto_tune_check,
    double_exp_exponent,
    kam_exponent_bound,
    kolmogorov_check,
    m0,
    nekhoroshev_exponents,
    stably_steep_check,
)

LAWS = ('exp-law', 'double-exp-law')
STAGES = ('dio', 'bnf', 'steepness', 'exponent', 'sweep')

RECORDS_FILE = 'escape_records.jsonl'
SUMMARY_FILE = 'escape_summary.csv'
FITS_FILE = 'fits.json'
PIPELINE_FILE = 'pipeline_report.json'
PLOT_FILE = 'plot_data.csv'

SUMMARY_HEADER = [
    'r', 'log_inv_r', 'ensemble', 'escaped', 'censored',
    'median_log_T', 'median_censored', 'mean_log_T', 'min_log_T'
]
PLOT_HEADER = ['kind', 'r', 'log_inv_r', 'median_log_T', 'censored', 'fitted_log_T']
FIT_CURVE_POINTS = 50


@dataclass(frozen=True)
class ScalingPoint:
    """Censored-aware statistics of one ensemble; times are stored as log T."""

    r: float
    median_log_T: float
    median_censored: bool
    mean_log_T: float
    min_log_T: float
    ensemble: int
    escaped: int

    @property
    def censored(self) -> int:
        """Number of censored members."""
        return self.ensemble - self.escaped

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'r': self.r,
            'median_log_T': self.median_log_T,
            'median_censored': self.median_censored,
            'mean_log_T': self.mean_log_T,
            'min_log_T': self.min_log_T,
            'ensemble': self.ensemble,
            'escaped': self.escaped
        }


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _predict_log_T(law: str, u: float, C: float, r: float) -> float:
    inner = C * r ** (-u)
    if law == 'exp-law':
        return inner
    return math.exp(inner) if inner < 709.0 else math.inf


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit of a stability law to uncensored medians.

    exp-law: log log T = log C + u log(1/r).
    double-exp-law: log log log T = log C + u log(1/r).
    fit_kind is the law, or 'insufficient' with fewer than two usable points.
    """

    law: str
    fit_kind: str
    points: List[ScalingPoint]
    fitted_u: float
    fitted_C: float
    censored_count: int
    used_count: int
    residuals: List[float] = field(default_factory=list)
    extrapolative: bool = True
    consistent: bool = True
    censored_above_fit: List[bool] = field(default_factory=list)

    def predict_log_T(self, r: float) -> float:
        """log T of the fitted law at r; nan when the fit is insufficient."""
        if self.fit_kind == 'insufficient':
            return math.nan
        return _predict_log_T(self.law, self.fitted_u, self.fitted_C, r)

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'law': self.law,
            'fit_kind': self.fit_kind,
            'fitted_u': _finite_or_none(self.fitted_u),
            'fitted_C': _finite_or_none(self.fitted_C),
            'censored_count': self.censored_count,
            'used_count': self.used_count,
            'residuals': self.residuals,
            'extrapolative': self.extrapolative,
            'consistent': self.consistent,
            'censored_above_fit': self.censored_above_fit,
            'points': [p.to_dict() for p in self.points]
        }


def censored_median(records: Sequence[EscapeTimeRecord]) -> Tuple[float, bool]:
    """Median escape time and whether it is censored.

    Censored records sit at the budget time, which bounds every escape time
    from above, so sorting by stored time is sorting by true time. The median
    is censored when a censored record takes part in it.
    """
    if not records:
        raise ValueError('median of an empty ensemble')
    ordered = sorted(records, key=lambda rec: (rec.escape_time, rec.censored))
    size = len(ordered)
    middle = ordered[(size - 1) // 2: size // 2 + 1]
    value = float(np.mean([rec.escape_time for rec in middle]))
    return value, any(rec.censored for rec in middle)


def summarise_ensemble(r: float, records: Sequence[EscapeTimeRecord]) -> ScalingPoint:
    """ScalingPoint of the records of one radius."""
    median, censored = censored_median(records)
    logs = np.array([rec.log_time for rec in records])
    return ScalingPoint(
        r=r,
        median_log_T=math.log(median) if median > 0 else -math.inf,
        median_censored=censored,
        mean_log_T=float(np.mean(logs)),
        min_log_T=float(np.min(logs)),
        ensemble=len(records),
        escaped=sum(1 for rec in records if not rec.censored)
    )


def _law_transform(law: str, log_T: float) -> Optional[float]:
    if law == 'exp-law':
        return math.log(log_T) if log_T > 0 else None
    if log_T > 0 and math.log(log_T) > 0:
        return math.log(math.log(log_T))
    return None


def fit_scaling(points: Sequence[ScalingPoint], law: str = 'double-exp-law') -> ScalingFit:
    """Fit a stability law by ordinary least squares on uncensored medians.

    Args:
        points: One ScalingPoint per radius
        law: 'exp-law' or 'double-exp-law'

    Returns:
        ScalingFit: fit_kind 'insufficient' when fewer than two uncensored
            medians are in the domain of the law; extrapolative when fewer
            than three
    """
    if law not in LAWS:
        raise ValueError(f'unknown law {law!r}; expected one of {LAWS}')
    points = list(points)
    censored = [p for p in points if p.median_censored]
    xs: List[float] = []
    ys: List[float] = []
    for p in points:
        if p.median_censored:
            continue
        y = _law_transform(law, p.median_log_T)
        if y is not None:
            xs.append(math.log(1.0 / p.r))
            ys.append(y)
    if len(xs) < 2 or len(set(xs)) < 2:
        logging.info('%s fit: insufficient data (%d usable points)', law, len(xs))
        return ScalingFit(law, 'insufficient', points, math.nan, math.nan, len(censored), len(xs))
    x = np.array(xs)
    y = np.array(ys)
    slope, intercept = np.polyfit(x, y, 1)
    residuals = (y - (slope * x + intercept)).tolist()
    u, C = float(slope), float(math.exp(intercept))
    above = [p.median_log_T >= _predict_log_T(law, u, C, p.r) for p in censored]
    consistent = all(above)
    if not consistent:
        logging.warning('%s fit: censored medians fall below the fitted curve', law)
    logging.info('%s fit: u = %.4f, C = %.4g from %d points', law, u, C, len(xs))
    return ScalingFit(
        law, law, points, u, C, len(censored), len(xs),
        residuals=residuals, extrapolative=len(xs) < 3, consistent=consistent, censored_above_fit=above
    )


@dataclass(frozen=True)
class SweepResult:
    """Records, per-radius statistics and fits of an escape sweep."""

    records: List[EscapeTimeRecord]
    points: List[ScalingPoint]
    fits: Dict[str, ScalingFit]
    output_dir: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        """Summary without the individual records."""
        return {
            'points': [p.to_dict() for p in self.points],
            'fits': {law: fit.to_dict() for law, fit in self.fits.items()},
            'records': len(self.records),
            'output_dir': self.output_dir
        }


def _sweep_task(
        task: Tuple[FourierTaylorSeries, Tuple[float, ...], float, List[int], Optional[float], int, str, Optional[str], int]
    ) -> List[EscapeTimeRecord]:
    H, I_star, r, seeds, dt, budget, sampler, scheme, energy_every = task
    return escape_ensemble(H, I_star, r, seeds, dt, budget, sampler, scheme, energy_every)


def _chunks(items: List[int], count: int) -> List[List[int]]:
    size = math.ceil(len(items) / count)
    return [items[i:i + size] for i in range(0, len(items), size)]


def run_escape_sweep(cfg: ExperimentConfig, output_dir: Optional[str] = None) -> SweepResult:
    """Escape-time ensembles over cfg.r_grid, censored-aware medians and both fits.

    Every radius uses the same member seeds, spawned from cfg.seed. With an
    output directory the records, the per-radius summary and the fits are
    written there.
    """
    seeds = spawn_seeds(cfg.seed, cfg.ensemble_size)
    parts = _chunks(seeds, cfg.threads) if cfg.threads > 1 else [seeds]
    I_star = tuple(cfg.I_star or ())
    tasks = [
        (cfg.hamiltonian, I_star, r, part, cfg.dt, cfg.budget_steps, cfg.sampler, cfg.scheme, cfg.energy_every)
        for r in cfg.r_grid
        for part in parts
    ]
    logging.info(
        'Escape sweep %s: %d radii x %d members, budget %d steps',
        cfg.name, len(cfg.r_grid), cfg.ensemble_size, cfg.budget_steps
    )
    chunks = run_tasks(_sweep_task, tasks, cfg.threads)
    records: List[EscapeTimeRecord] = []
    points: List[ScalingPoint] = []
    for i, r in enumerate(cfg.r_grid):
        batch = [rec for chunk in chunks[i * len(parts):(i + 1) * len(parts)] for rec in chunk]
        records.extend(batch)
        point = summarise_ensemble(r, batch)
        points.append(point)
        logging.info(
            'r=%s: %d/%d escaped, median log T %.4g%s',
            r, point.escaped, point.ensemble, point.median_log_T, ' (censored)' if point.median_censored else ''
        )
    fits = {law: fit_scaling(points, law) for law in LAWS}
    if output_dir:
        write_sweep(output_dir, records, points, fits)
    return SweepResult(records, points, fits, output_dir)


def write_sweep(
        output_dir: str,
        records: Sequence[EscapeTimeRecord],
        points: Sequence[ScalingPoint],
        fits: Mapping[str, ScalingFit]
    ) -> None:
    """escape_records.jsonl, escape_summary.csv and fits.json."""
    ensure_dir(output_dir)
    write_jsonl(os.path.join(output_dir, RECORDS_FILE), records)
    rows = [
        [p.r, math.log(1.0 / p.r), p.ensemble, p.escaped, p.censored,
         p.median_log_T, int(p.median_censored), p.mean_log_T, p.min_log_T]
        for p in points
    ]
    write_csv(os.path.join(output_dir, SUMMARY_FILE), SUMMARY_HEADER, rows)
    write_json(os.path.join(output_dir, FITS_FILE), {law: fit.to_dict() for law, fit in fits.items()})


def load_sweep_points(path: str) -> List[ScalingPoint]:
    """ScalingPoints from an escape_summary.csv file or a sweep directory holding one."""
    if os.path.isdir(path):
        path = os.path.join(path, SUMMARY_FILE)
    points = []
    for row in read_csv(path):
        points.append(ScalingPoint(
            r=float(row['r']),
            median_log_T=float(row['median_log_T']),
            median_censored=bool(int(row['median_censored'])),
            mean_log_T=float(row['mean_log_T']),
            min_log_T=float(row['min_log_T']),
            ensemble=int(row['ensemble']),
            escaped=int(row['escaped'])
        ))
    return points


def emit_plot_data(points: Sequence[ScalingPoint], fit: Optional[ScalingFit], path: str) -> int:
    """Plot-ready CSV: one 'data' row per radius, then the fitted curve at 50 radii.

    Columns are kind, r, log(1/r), median log T, censored flag and the fitted
    log T. Empty input gives a header-only file. Returns the number of rows.
    """
    rows: List[List[object]] = []
    for p in points:
        fitted = fit.predict_log_T(p.r) if fit is not None else math.nan
        rows.append(['data', p.r, math.log(1.0 / p.r), p.median_log_T, int(p.median_censored), fitted])
    if points and fit is not None and fit.fit_kind != 'insufficient':
        radii = [p.r for p in points]
        for r in np.geomspace(max(radii), min(radii), FIT_CURVE_POINTS):
            r = float(r)
            rows.append(['fit', r, math.log(1.0 / r), '', '', fit.predict_log_T(r)])
    write_csv(path, PLOT_HEADER, rows)
    logging.info('Plot data written to %s (%d rows)', path, len(rows))
    return len(rows)


# Pipeline


@dataclass
class StageReport:
    """Outcome of one pipeline stage: status is ok, failed or skipped."""

    name: str
    status: str = 'skipped'
    detail: Dict[str, object] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {'name': self.name, 'status': self.status, 'detail': self.detail, 'error': self.error}


@dataclass
class PipelineReport:
    """Every stage with its status, plus predicted against fitted exponents."""

    config: Dict[str, object]
    stages: List[StageReport]
    predicted_u: Optional[float] = None
    fitted_u: Optional[float] = None
    fit_kind: Optional[str] = None
    extrapolative: Optional[bool] = None

    @property
    def ok(self) -> bool:
        """True when every stage finished."""
        return all(stage.status == 'ok' for stage in self.stages)

    @property
    def failed_stage(self) -> Optional[StageReport]:
        """The stage that stopped the pipeline, if any."""
        return next((stage for stage in self.stages if stage.status == 'failed'), None)

    def stage(self, name: str) -> StageReport:
        """Stage by name."""
        return next(stage for stage in self.stages if stage.name == name)

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        failed = self.failed_stage
        return {
            'config': self.config,
            'stages': [stage.to_dict() for stage in self.stages],
            'failed_stage': failed.name if failed is not None else None,
            'comparison': {
                'predicted_u': self.predicted_u,
                'fitted_u': self.fitted_u,
                'fit_kind': self.fit_kind,
                'extrapolative': self.extrapolative,
                'note': 'fitted constants are empirical; the theoretical constants are not computed'
            }
        }


def _stage_dio(cfg: ExperimentConfig, stage: StageReport) -> None:
    report = gamma_estimate(cfg.omega, float(cfg.tau), cfg.diophantine_depth, cfg.scan_budget)
    stage.detail = report.to_dict()


def _stage_bnf(cfg: ExperimentConfig, stage: StageReport) -> NormalFormResult:
    try:
        result = bnf(cfg.hamiltonian, cfg.omega, cfg.normal_form_order, cfg.budgets, cfg.tau)
    except SmallDivisor as exc:
        stage.detail = {'k': list(exc.k), 'divisor': exc.divisor, 'floor': exc.floor}
        raise
    stage.detail = {
        'order_m': result.order_m,
        'H_m': result.H_m.to_dict(),
        'residual': result.residual,
        'divisor_floor': result.divisor_floor,
        'frequency_shift': list(result.frequency_shift),
        'small_divisors': len(result.small_divisor_log)
    }
    return result


def _stage_steepness(cfg: ExperimentConfig, stage: StageReport, normal_form: NormalFormResult) -> bool:
    P0 = normal_form.H_m
    settings = cfg.steepness
    if settings.constants is not None:
        rho, C, delta = settings.constants
        verdict = stably_steep_check(P0, rho, C, delta, settings.sampling)
    else:
        verdict, _ = auto_tune_check(P0, settings.sampling)
    kolmogorov = kolmogorov_check(P0, [[0.0] * cfg.n], settings.det_floor)
    stage.detail = {
        'threshold_degree': m0(cfg.n),
        'verdict': verdict.to_dict(),
        'kolmogorov': kolmogorov.to_dict()
    }
    return verdict.accepted


def _stage_exponent(cfg: ExperimentConfig, stage: StageReport) -> float:
    tau = float(cfg.tau)
    u = double_exp_exponent(cfg.alpha, tau, cfg.n)
    exponents = nekhoroshev_exponents(cfg.n, m0(cfg.n) - 1, gevrey_beta(cfg.alpha, tau))
    stage.detail = {
        'predicted_u': u,
        'kam_exponent_bound': kam_exponent_bound(cfg.alpha, cfg.n),
        'nekhoroshev': exponents.to_dict()
    }
    return u


def run_pipeline(cfg: ExperimentConfig, output_dir: Optional[str] = None) -> PipelineReport:
    """Diophantine scan, normal form of order m0(n), stable steepness of H_m0,
    exponent prediction and escape sweep, in that order.

    A failing stage stops the chain; later stages are reported as skipped.
    """
    report = PipelineReport(cfg.to_dict(), [StageReport(name) for name in STAGES])
    normal_form: Optional[NormalFormResult] = None
    for stage in report.stages:
        logging.info('Pipeline stage %s', stage.name)
        try:
            if stage.name == 'dio':
                _stage_dio(cfg, stage)
            elif stage.name == 'bnf':
                normal_form = _stage_bnf(cfg, stage)
            elif stage.name == 'steepness':
                assert normal_form is not None
                if not _stage_steepness(cfg, stage, normal_form):
                    stage.status = 'failed'
                    stage.error = 'stable steepness refuted'
                    logging.error('Pipeline stage steepness refuted')
                    break
            elif stage.name == 'exponent':
                report.predicted_u = _stage_exponent(cfg, stage)
            else:
                sweep = run_escape_sweep(cfg, output_dir)
                fit = sweep.fits['double-exp-law']
                stage.detail = sweep.to_dict()
                report.fitted_u = _finite_or_none(fit.fitted_u)
                report.fit_kind = fit.fit_kind
                report.extrapolative = fit.extrapolative
        except (TorusLabError, ValueError) as exc:
            stage.status = 'failed'
            stage.error = str(exc)
            logging.error('Pipeline stage %s failed: %s', stage.name, exc)
            break
        stage.status = 'ok'
    if output_dir:
        write_json(os.path.join(output_dir, PIPELINE_FILE), report)
    return report
