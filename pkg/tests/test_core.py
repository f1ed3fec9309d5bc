"""Test the core functionality."""

import json
import math
import os
from dataclasses import replace
from typing import List

import pytest

from torus_lab.core.config import ExperimentConfig, load_preset
from torus_lab.core.core import (
    FITS_FILE,
    PIPELINE_FILE,
    PLOT_HEADER,
    RECORDS_FILE,
    STAGES,
    SUMMARY_FILE,
    ScalingPoint,
    StageReport,
    _stage_dio,
    _stage_exponent,
    censored_median,
    emit_plot_data,
    fit_scaling,
    load_sweep_points,
    run_escape_sweep,
    run_pipeline,
    summarise_ensemble,
)
from torus_lab.core.dynamics import EscapeTimeRecord, PhasePoint
from torus_lab.core.steepness import SamplingConfig
from torus_lab.utils.utils import read_csv, spawn_seeds

# pylint: disable=redefined-outer-name

QUICK = SamplingConfig(16, 8, 8, 16, multistarts=2, refine_top=1, refine_iterations=50)
RADII = (0.4, 0.2, 0.1, 0.05)


def record(time: float, censored: bool = False, seed: int = 0) -> EscapeTimeRecord:
    """A one-dimensional record with the given escape time."""
    return EscapeTimeRecord(
        r=0.1, I_star=(0.0,), initial=PhasePoint((0.0,), (0.1,)), escape_time=time, censored=censored,
        exit_norm=0.2, energy_drift=0.0, steps=100, dt=0.1, seed=seed, scheme='splitting'
    )


def point(r: float, log_T: float, censored: bool = False) -> ScalingPoint:
    """A ScalingPoint with every statistic at log_T."""
    return ScalingPoint(r, log_T, censored, log_T, log_T, 8, 0 if censored else 8)


@pytest.fixture
def double_exp_points() -> List[ScalingPoint]:
    """Medians of T = exp(exp(r^-1/2)) on the default grid."""
    return [point(r, math.exp(r ** -0.5)) for r in RADII]


def quick(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Config with cheap steepness sampling and the given changes."""
    return replace(cfg, steepness=replace(cfg.steepness, sampling=QUICK), **changes)


def test_censored_median_uncensored() -> None:
    """Test the median of fully observed times."""
    assert censored_median([record(3.0), record(1.0), record(2.0)]) == (2.0, False)


def test_censored_median_touching_budget() -> None:
    """Test that a median involving a censored record is flagged."""
    value, censored = censored_median([record(1.0), record(2.0), record(10.0, True), record(10.0, True)])
    assert value == 6.0
    assert censored
    assert censored_median([record(1.0), record(10.0, True), record(10.0, True)]) == (10.0, True)
    assert censored_median([record(1.0), record(2.0), record(10.0, True)]) == (2.0, False)
    with pytest.raises(ValueError):
        censored_median([])


def test_summarise_ensemble() -> None:
    """Test per-radius statistics in log T."""
    summary = summarise_ensemble(0.1, [record(math.e), record(math.e ** 2), record(math.e ** 3)])
    assert summary.median_log_T == pytest.approx(2.0)
    assert summary.mean_log_T == pytest.approx(2.0)
    assert summary.min_log_T == pytest.approx(1.0)
    assert summary.escaped == 3
    assert summary.censored == 0
    assert not summary.median_censored


def test_fit_recovers_double_exp_law(double_exp_points) -> None:
    """Test that log log log T = log C + u log(1/r) is fitted exactly."""
    fit = fit_scaling(double_exp_points, 'double-exp-law')
    assert fit.fit_kind == 'double-exp-law'
    assert fit.fitted_u == pytest.approx(0.5, abs=1e-9)
    assert fit.fitted_C == pytest.approx(1.0, abs=1e-9)
    assert fit.used_count == 4
    assert fit.censored_count == 0
    assert not fit.extrapolative
    assert max(abs(x) for x in fit.residuals) < 1e-9
    assert fit.predict_log_T(0.025) == pytest.approx(math.exp(0.025 ** -0.5), rel=1e-8)


def test_fit_exp_law(double_exp_points) -> None:
    """Test the single-exponential law on the same data."""
    exact = [point(r, 2.0 * r ** -0.5) for r in RADII]
    fit = fit_scaling(exact, 'exp-law')
    assert fit.fitted_u == pytest.approx(0.5)
    assert fit.fitted_C == pytest.approx(2.0)
    curved = fit_scaling(double_exp_points, 'exp-law')
    assert curved.fitted_u > 0.5
    assert abs(sum(curved.residuals) / len(curved.residuals)) < 1e-10


def test_fit_censored_points_checked_against_curve(double_exp_points) -> None:
    """Test that censored medians must lie on or above the fitted curve."""
    above = fit_scaling(double_exp_points + [point(0.025, 1000.0, censored=True)])
    assert above.consistent
    assert above.censored_above_fit == [True]
    assert above.censored_count == 1
    below = fit_scaling(double_exp_points + [point(0.025, 1.0, censored=True)])
    assert not below.consistent
    assert below.censored_above_fit == [False]
    assert below.fitted_u == pytest.approx(0.5, abs=1e-9)


def test_fit_insufficient_data() -> None:
    """Test that fewer than two usable medians give no fit."""
    fit = fit_scaling([point(0.4, 10.0), point(0.2, 50.0, censored=True)])
    assert fit.fit_kind == 'insufficient'
    assert math.isnan(fit.fitted_u)
    assert math.isnan(fit.predict_log_T(0.1))
    assert fit.to_dict()['fitted_u'] is None
    two = fit_scaling([point(0.4, 10.0), point(0.2, 20.0)])
    assert two.fit_kind == 'double-exp-law'
    assert two.extrapolative
    with pytest.raises(ValueError):
        fit_scaling([], 'power-law')


def test_integrable_sweep_is_censored(tmp_path) -> None:
    """Test a sweep where nothing escapes, and the files it writes."""
    cfg = replace(load_preset('integrable'), r_grid=(0.4, 0.2), ensemble_size=2, budget_steps=200)
    out = str(tmp_path)
    result = run_escape_sweep(cfg, out)
    assert len(result.records) == 4
    assert all(rec.censored for rec in result.records)
    assert all(rec.escape_time == pytest.approx(10.0) for rec in result.records)
    assert all(p.median_censored and p.escaped == 0 for p in result.points)
    assert {fit.fit_kind for fit in result.fits.values()} == {'insufficient'}

    with open(os.path.join(out, RECORDS_FILE), 'r', encoding='utf-8') as file:
        assert len(file.readlines()) == 4
    rows = read_csv(os.path.join(out, SUMMARY_FILE))
    assert [float(row['r']) for row in rows] == [0.4, 0.2]
    assert all(row['median_censored'] == '1' for row in rows)
    with open(os.path.join(out, FITS_FILE), 'r', encoding='utf-8') as file:
        fits = json.load(file)
    assert fits['double-exp-law']['fit_kind'] == 'insufficient'
    assert load_sweep_points(out) == result.points


def test_sweep_uses_same_seeds_per_radius() -> None:
    """Test that every radius samples the same member seeds and directions."""
    cfg = replace(load_preset('integrable'), r_grid=(0.4, 0.2), ensemble_size=3, budget_steps=10)
    result = run_escape_sweep(cfg)
    wide, narrow = result.records[:3], result.records[3:]
    assert [rec.seed for rec in wide] == [rec.seed for rec in narrow]
    for a, b in zip(wide, narrow):
        assert a.initial.theta == b.initial.theta
        assert a.initial.I == pytest.approx(tuple(2.0 * x for x in b.initial.I))


def test_sweep_is_deterministic(tmp_path) -> None:
    """Test that the same seed reproduces the records byte for byte."""
    cfg = replace(
        load_preset('strongly-perturbed'), r_grid=(0.4, 0.2), ensemble_size=3, budget_steps=5000, dt=0.01
    )
    first, second = os.path.join(str(tmp_path), 'a'), os.path.join(str(tmp_path), 'b')
    result = run_escape_sweep(cfg, first)
    run_escape_sweep(cfg, second)
    with open(os.path.join(first, RECORDS_FILE), 'rb') as a, open(os.path.join(second, RECORDS_FILE), 'rb') as b:
        assert a.read() == b.read()
    assert [rec.seed for rec in result.records[:3]] == spawn_seeds(cfg.seed, 3)
    other = run_escape_sweep(replace(cfg.with_overrides(seed=cfg.seed + 1), budget_steps=10))
    assert [rec.seed for rec in other.records[:3]] == spawn_seeds(cfg.seed + 1, 3)
    assert other.records[0].initial != result.records[0].initial


def test_sweep_with_workers_matches_serial() -> None:
    """Test that splitting the ensemble over processes keeps the records."""
    cfg = replace(
        load_preset('strongly-perturbed'), r_grid=(0.4,), ensemble_size=4, budget_steps=2000, dt=0.01
    )
    serial = run_escape_sweep(cfg).records
    parallel = run_escape_sweep(cfg.with_overrides(threads=2)).records
    assert [rec.seed for rec in parallel] == [rec.seed for rec in serial]
    for a, b in zip(serial, parallel):
        assert a.censored == b.censored
        assert a.escape_time == pytest.approx(b.escape_time, rel=1e-12)


def test_emit_plot_data(tmp_path, double_exp_points) -> None:
    """Test data rows followed by the fitted curve."""
    path = os.path.join(str(tmp_path), 'plot.csv')
    fit = fit_scaling(double_exp_points)
    assert emit_plot_data(double_exp_points, fit, path) == 54
    rows = read_csv(path)
    assert [row['kind'] for row in rows[:4]] == ['data'] * 4
    assert all(row['kind'] == 'fit' for row in rows[4:])
    assert float(rows[0]['fitted_log_T']) == pytest.approx(float(rows[0]['median_log_T']), rel=1e-9)
    assert float(rows[4]['r']) == pytest.approx(0.4)
    assert float(rows[-1]['r']) == pytest.approx(0.05)


def test_emit_plot_data_without_fit(tmp_path) -> None:
    """Test header-only output and data-only output."""
    path = os.path.join(str(tmp_path), 'empty.csv')
    assert emit_plot_data([], None, path) == 0
    with open(path, 'r', encoding='utf-8') as file:
        assert file.read().strip() == ','.join(PLOT_HEADER)
    points = [point(0.4, 10.0, censored=True), point(0.2, 20.0, censored=True)]
    assert emit_plot_data(points, fit_scaling(points), path) == 2


def test_pipeline_golden_convex(tmp_path) -> None:
    """Test that every stage passes on a convex golden-mean torus."""
    cfg = quick(load_preset('golden-convex'), ensemble_size=2, budget_steps=200)
    report = run_pipeline(cfg, str(tmp_path))
    assert [stage.name for stage in report.stages] == list(STAGES)
    assert report.ok
    assert report.failed_stage is None
    assert report.predicted_u == pytest.approx(0.5)
    assert report.stage('dio').detail['argmin_k'] == [1, 0]
    assert report.stage('bnf').detail['order_m'] == 4
    assert report.stage('steepness').detail['verdict']['accepted']
    assert report.stage('exponent').detail['kam_exponent_bound'] == pytest.approx(0.5)
    assert report.fit_kind == 'insufficient'
    with open(os.path.join(str(tmp_path), PIPELINE_FILE), 'r', encoding='utf-8') as file:
        written = json.load(file)
    assert written['failed_stage'] is None
    assert written['comparison']['predicted_u'] == pytest.approx(0.5)


def test_pipeline_stops_at_resonance() -> None:
    """Test that a resonant frequency stops the chain at the normal form."""
    report = run_pipeline(quick(load_preset('resonant')))
    assert not report.ok
    assert report.stage('dio').status == 'ok'
    assert report.stage('dio').detail['gamma_est'] == 0.0
    failed = report.failed_stage
    assert failed is not None and failed.name == 'bnf'
    assert failed.detail['k'] == [1, -1]
    assert [report.stage(name).status for name in ('steepness', 'exponent', 'sweep')] == ['skipped'] * 3
    assert report.to_dict()['failed_stage'] == 'bnf'


def test_pipeline_refutes_saddle() -> None:
    """Test that an indefinite integrable part stops at steepness."""
    report = run_pipeline(quick(load_preset('saddle')))
    failed = report.failed_stage
    assert failed is not None and failed.name == 'steepness'
    assert failed.error == 'stable steepness refuted'
    assert failed.detail['verdict']['witness'] is not None
    assert report.stage('sweep').status == 'skipped'
    assert report.predicted_u is None


def test_pipeline_stages_use_explicit_zero_tau() -> None:
    """Test that tau = 0 reaches the scan and the exponent unchanged."""
    cfg = replace(load_preset('pendulum'), tau=0.0)
    dio = StageReport('dio')
    _stage_dio(cfg, dio)
    assert dio.detail['tau'] == 0.0
    exponent = StageReport('exponent')
    assert _stage_exponent(cfg, exponent) == pytest.approx(1.0)
    assert exponent.detail['predicted_u'] == pytest.approx(1.0)


@pytest.mark.slow
def test_strongly_perturbed_medians_scale_like_inverse_radius() -> None:
    """Test that median escape times double when r halves."""
    cfg = replace(
        load_preset('strongly-perturbed'), r_grid=(0.4, 0.2, 0.1), ensemble_size=5, dt=0.002,
        budget_steps=5_000_000
    )
    points = run_escape_sweep(cfg).points
    assert not any(p.median_censored for p in points)
    for wide, narrow in zip(points, points[1:]):
        assert narrow.median_log_T - wide.median_log_T == pytest.approx(math.log(2.0), abs=0.05)


@pytest.mark.slow
def test_strongly_perturbed_preset_medians_non_decreasing() -> None:
    """Test the full preset sweep: medians grow as r decreases."""
    points = run_escape_sweep(load_preset('strongly-perturbed')).points
    medians = [p.median_log_T for p in points]
    assert medians == sorted(medians)
