#!/usr/bin/env python3
"""
Log-Periodic Crash Analyzer - Command Line Launcher
Fit, diagnose and simulate log-periodic pre-crash models into reproducible reports
"""
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
import numpy as np
import pandas as pd

from core.argarch import FullParams, fit_two_stage, full_bounds, standardized_residuals
from core.configs import RunConfig
from core.diagnostics import DiagnosticsReport, diagnose, ljung_box, unit_root_table
from core.errors import ConfigError, CrashModelError, DomainError, FitMismatchError, InferenceError, InputDataError
from core.inference import InferenceReport, crash_date_table, crash_window, infer
from core.logperiodic import LPParams, default_bounds, fitted_trend, residuals
from core.optimizer import FitResult, fit_logperiodic
from core.storage_manager import ReportStore, load_report, report_kind
from core.synth import MIN_STUDY_REPLICATIONS, recovery_study, simulate
from core.timeseries import PriceSeries, load_csv, series_checksum, slice_window, to_csv
from utils.performance_utils import Stopwatch, performance_profiler, resolve_thread_count
from utils.settings import load_app_config, load_json_config, merge_config, setup_logging

EXIT_OK = 0
EXIT_NOT_CONVERGED = 3
MIN_SIMULATION_LENGTH = 30

SECTION_FLAGS = {
    'gsa_iterations': ('gsa', 'max_iterations'),
    'gsa_restarts': ('gsa', 'restarts'),
    'gsa_qv': ('gsa', 'qv'),
    'gsa_qa': ('gsa', 'qa'),
    'gsa_t0': ('gsa', 't0'),
    'bfgs_gtol': ('bfgs', 'gradient_tolerance'),
    'bfgs_maxiter': ('bfgs', 'max_iterations'),
    'lags': ('diagnostics', 'lags'),
    'adf_lags': ('diagnostics', 'adf_lags'),
    'bds_replications': ('diagnostics', 'bds_replications'),
}


# ---------------------------------------------------------------- configuration

def _flatten_settings(data: Dict[str, Any]) -> Dict[str, Any]:
    """model_config layout ({"run": {...}, "gsa": {...}}) or an embedded run_config"""
    if 'run_config' in data:
        return dict(data['run_config'])
    flat = dict(data.get('run', {}))
    for section in ('gsa', 'bfgs', 'diagnostics'):
        if section in data:
            flat[section] = dict(data[section])
    for key, value in data.items():
        if key not in ('run', 'gsa', 'bfgs', 'diagnostics'):
            flat[key] = value
    return flat


def flags_to_overrides(flags: Dict[str, Any]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for key, value in flags.items():
        if value is None:
            continue
        if key in SECTION_FLAGS:
            section, field_name = SECTION_FLAGS[key]
            overrides.setdefault(section, {})[field_name] = value
        else:
            overrides[key] = value
    if 'seed' in overrides:
        for section in ('gsa', 'diagnostics'):
            overrides.setdefault(section, {})['seed'] = overrides['seed']
    return overrides


def build_run_config(config_path: Optional[str], flags: Dict[str, Any]) -> RunConfig:
    """Precedence: explicit flags > --config file > config/model_config.json"""
    settings = _flatten_settings(load_app_config('model_config'))
    if config_path:
        settings = merge_config(settings, _flatten_settings(load_json_config(config_path)))
    settings = merge_config(settings, flags_to_overrides(flags))
    return RunConfig.from_dict(settings)


def run_options(func):
    """Flags shared by fit, diagnose and simulate"""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                     help='JSON settings file, or a previous report to re-run'),
        click.option('--input', 'input_path', default=None, help='Price CSV file'),
        click.option('--date-column', default=None, help='Date column name'),
        click.option('--price-column', default=None, help='Price column name'),
        click.option('--from', 'window_start', default=None, help='Window start (YYYY-MM-DD)'),
        click.option('--to', 'window_end', default=None, help='Window end (YYYY-MM-DD)'),
        click.option('--model', type=click.Choice(['basic', 'extended']), default=None),
        click.option('--seed', type=int, default=None),
        click.option('--threads', type=int, default=None, help='Worker threads (env LPCRASH_THREADS)'),
        click.option('--output-dir', default=None),
        click.option('--format', 'output_format', type=click.Choice(['json', 'csv', 'xlsx']), default=None,
                     help='Extra table format next to the JSON report'),
        click.option('--level', 'confidence_level', type=float, default=None, help='Confidence level'),
        click.option('--origin', default=None, help='First date of simulated series'),
        click.option('--dump-series/--no-dump-series', default=None,
                     help='Write date,t,price,trend,residual CSV'),
        click.option('--timing/--no-timing', default=None, help='Record wall-clock time in reports'),
        click.option('--gsa-iterations', type=int, default=None),
        click.option('--gsa-restarts', type=int, default=None),
        click.option('--gsa-qv', type=float, default=None),
        click.option('--gsa-qa', type=float, default=None),
        click.option('--gsa-t0', type=float, default=None),
        click.option('--bfgs-gtol', type=float, default=None),
        click.option('--bfgs-maxiter', type=int, default=None),
        click.option('--lags', type=int, default=None, help='Ljung-Box lag'),
        click.option('--adf-lags', type=int, default=None, help='ADF lag order (default: AIC)'),
        click.option('--bds-replications', type=int, default=None),
        click.option('--verbose', is_flag=True, default=False),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def execute(verbose: bool, command: Callable[[], int]):
    """Run a command, mapping pipeline errors to exit codes"""
    setup_logging(load_app_config('app_config').get('logging'), verbose)
    try:
        code = command()
    except CrashModelError as e:
        logging.error(f"{type(e).__name__}: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(e.exit_code)
    if verbose:
        for row in performance_profiler.get_profile_report():
            logging.debug(f"profile {row['function']}: {row['call_count']} calls, "
                          f"{row['total_time_seconds']:.2f}s")
    sys.exit(code)


# ---------------------------------------------------------------- helpers

def load_input_series(config: RunConfig) -> PriceSeries:
    if not config.input_path:
        raise ConfigError("No input file given (--input or input_path in the config file)")
    series = load_csv(config.input_path, config.date_column, config.price_column)
    if config.window_start or config.window_end:
        series = slice_window(series, config.window_start, config.window_end)
    return series


def series_info(series: PriceSeries) -> Dict[str, Any]:
    return {
        'checksum': series_checksum(series),
        'n': len(series),
        'first_date': series.origin.isoformat(),
        'last_date': series.dates[-1].date().isoformat(),
        't_last': series.t_last
    }


def series_dump(series: PriceSeries, lp: LPParams) -> pd.DataFrame:
    trend = fitted_trend(lp, series)
    return pd.DataFrame({
        'date': series.dates.strftime('%Y-%m-%d'),
        't': series.t,
        'price': series.prices,
        'trend': trend,
        'residual': series.prices - trend
    })


def params_frame(fit: FitResult) -> pd.DataFrame:
    return pd.DataFrame({'value': fit.values}, index=pd.Index(fit.names, name='parameter'))


def load_params_file(path) -> FullParams:
    """Flat parameter JSON, or the params of a previous extended fit report"""
    path = Path(path)
    if not path.is_file():
        raise InputDataError(f"Parameter file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InputDataError(f"Parameter file {path} is not valid JSON: {e}") from e
    if isinstance(data, dict) and 'fit' in data:
        data = data['fit'].get('params', {})
    elif isinstance(data, dict) and 'params' in data:
        data = data['params']
    if not isinstance(data, dict):
        raise InputDataError(f"Parameter file {path} must hold a JSON object")
    theta = FullParams.from_dict(data)
    try:
        theta.ag.validate()
    except DomainError as e:
        raise InputDataError(f"Invalid parameters in {path}: {e}") from e
    return theta


# ---------------------------------------------------------------- commands

def cmd_fit(config: RunConfig) -> int:
    """Fit the chosen model and write the fit report"""
    series = load_input_series(config)
    threads = resolve_thread_count(config.threads)
    payload: Dict[str, Any] = {'kind': 'fit', 'model': config.model, 'series': series_info(series),
                               'run_config': config.to_dict()}
    tables: Dict[str, pd.DataFrame] = {}

    with Stopwatch() as watch:
        if config.model == 'basic':
            fit = fit_logperiodic(series, default_bounds(series), config.gsa, config.bfgs, threads=threads)
            u = residuals(fit.lp_params, series)
            roots = unit_root_table(u, config.diagnostics.adf_lags)
            payload['residual_screen'] = {
                'unit_root_p_values': roots.to_dict(orient='index'),
                'ljung_box_residuals': ljung_box(u, config.diagnostics.lags).to_dict(),
                'ljung_box_squared': ljung_box(u ** 2, config.diagnostics.lags).to_dict()
            }
            tables['unit_root'] = roots
        else:
            two_stage = fit_two_stage(series, full_bounds(series), config.gsa, config.bfgs, threads=threads)
            fit = two_stage.full
            payload['stage1'] = two_stage.stage1.to_dict(config.timing)
            payload['stage2'] = two_stage.stage2.to_dict()
            try:
                report = infer(two_stage.params, series, config.confidence_level, threads=threads)
            except InferenceError as e:
                logging.warning(f"Inference unavailable: {e}")
                payload['inference'] = {'error': str(e)}
            else:
                payload['inference'] = report.to_dict()
                tables['inference'] = report.to_frame()
                try:
                    payload['crash_window'] = crash_window(report, series.origin, series).to_dict()
                    crash_table = crash_date_table(report, series)
                except InferenceError as e:
                    logging.warning(f"No crash window: {e}")
                else:
                    payload['crash_dates'] = crash_table.reset_index().to_dict(orient='records')
                    tables['crash_dates'] = crash_table

    payload['fit'] = fit.to_dict(config.timing)
    if config.timing:
        payload['wall_time'] = watch.elapsed
    tables['params'] = params_frame(fit)

    name = f"fit_{config.model}"
    store = ReportStore(config.output_dir)
    with store.transaction():
        store.save_report(name, payload)
        store.save_text(name, render_report(payload))
        store.save_tables(name, tables, config.output_format)
        if config.dump_series:
            store.save_table(f"{name}_series", series_dump(series, fit.lp_params), index=False)

    click.echo(render_report(payload))
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_diagnose(config: RunConfig, fit_path) -> int:
    """Residual battery for a fit report against its own series"""
    fit_data = report_kind(load_report(fit_path), 'fit')
    fit = FitResult.from_dict(fit_data['fit'])
    series = load_input_series(config)
    if series_checksum(series) != fit_data['series']['checksum']:
        raise FitMismatchError(f"{fit_path} was fitted on a different series than {config.input_path}")

    if fit.model == 'extended':
        x = standardized_residuals(FullParams.from_fit(fit), series)
    else:
        x = residuals(fit.lp_params, series)

    with Stopwatch() as watch:
        report = diagnose(x, config.diagnostics, threads=resolve_thread_count(config.threads))

    payload = {'kind': 'diagnostics', 'model': fit.model, 'fit_checksum': fit_data['checksum'],
               'series': series_info(series), 'diagnostics': report.to_dict(),
               'run_config': config.to_dict()}
    if config.timing:
        payload['wall_time'] = watch.elapsed

    name = f"diagnostics_{fit.model}"
    tables = {'unit_root': report.unit_root_frame()}
    if report.bds is not None:
        tables['bds_p_values'] = report.bds
    store = ReportStore(config.output_dir)
    with store.transaction():
        store.save_report(name, payload)
        store.save_text(name, render_report(payload))
        store.save_tables(name, tables, config.output_format)

    click.echo(render_report(payload))
    return EXIT_OK


def cmd_simulate(config: RunConfig, params_path, n: int, replications: int) -> int:
    """One synthetic series, or a recovery study over many"""
    theta = load_params_file(params_path)
    if n < MIN_SIMULATION_LENGTH:
        raise InputDataError(f"Series length {n} is too short (minimum {MIN_SIMULATION_LENGTH})")
    if replications < 1 or 1 < replications < MIN_STUDY_REPLICATIONS:
        raise ConfigError(f"Use 1 replication (single series) or at least {MIN_STUDY_REPLICATIONS}")

    store = ReportStore(config.output_dir)
    payload: Dict[str, Any] = {'params': theta.to_dict(), 'n': n, 'replications': replications,
                               'run_config': config.to_dict()}
    if replications == 1:
        series = simulate(theta, n, np.random.default_rng([config.seed, 0]), config.origin)
        payload.update({'kind': 'simulation', 'series': series_info(series)})
        with store.transaction():
            store.save_file('simulated.csv',
                            lambda p: to_csv(series, p, config.date_column, config.price_column))
            store.save_report('simulation', payload)
        click.echo(f"Simulated {n} observations -> {store.output_dir / 'simulated.csv'}")
        return EXIT_OK

    with Stopwatch() as watch:
        study = recovery_study(theta, n, replications, config.gsa, config.bfgs, config.confidence_level,
                               seed=config.seed, threads=resolve_thread_count(config.threads),
                               origin=config.origin, lags=config.diagnostics.lags)
    payload.update({'kind': 'recovery', 'study': study.to_dict()})
    if config.timing:
        payload['wall_time'] = watch.elapsed

    with store.transaction():
        store.save_report('recovery', payload)
        store.save_table('recovery_estimates', study.to_frame(), index=False)
        store.save_text('recovery', render_report(payload))
        store.save_tables('recovery', {'summary': study.summary()}, config.output_format)

    click.echo(render_report(payload))
    return EXIT_OK


# ---------------------------------------------------------------- rendering

def _render_params(title: str, fit: Dict[str, Any]) -> list:
    lines = [title]
    for name in fit.get('names') or list(fit['params']):
        lines.append(f"{name:<8}{fit['params'][name]:>16.4f}")
    label = 'SSE' if fit['objective'] == 'sse' else 'ln L'
    lines.append(f"{label:<8}{fit['objective_value']:>16.4f}")
    lines.append(f"converged: {'yes' if fit['converged'] else 'no'}")
    if fit.get('boundary_contact'):
        lines.append(f"boundary contact: {', '.join(fit['boundary_contact'])}")
    return lines


def render_report(payload: Dict[str, Any]) -> str:
    """Aligned text tables for any report kind"""
    kind = payload.get('kind')
    if kind == 'fit':
        title = ('Log-periodic model (OLS)' if payload['model'] == 'basic'
                 else 'Log-periodic AR(1)-GARCH(1,1) model (ML)')
        lines = _render_params(title, payload['fit'])
        screen = payload.get('residual_screen')
        if screen:
            roots = pd.DataFrame.from_dict(screen['unit_root_p_values'], orient='index')
            lb, lb2 = screen['ljung_box_residuals'], screen['ljung_box_squared']
            lines += ["", "Unit-root tests on residuals (p-values)",
                      roots.to_string(float_format=lambda v: f"{v:.4f}"),
                      f"Q-Stat({lb['config']['lags']}) residuals {lb['statistic']:.3f} ({lb['p_value']:.3f})",
                      f"Q-Stat({lb2['config']['lags']}) squared   {lb2['statistic']:.3f} ({lb2['p_value']:.3f})"]
        inference = payload.get('inference')
        if inference and 'rows' in inference:
            lines += ["", InferenceReport.from_dict(inference).render()]
        elif inference:
            lines += ["", f"Inference unavailable: {inference.get('error')}"]
        if payload.get('crash_dates'):
            table = pd.DataFrame(payload['crash_dates']).set_index('event')
            lines += ["", "Crash dates", table.to_string(float_format=lambda v: f"{v:.3f}")]
        return "\n".join(lines)
    if kind == 'diagnostics':
        return DiagnosticsReport.from_dict(payload['diagnostics']).render()
    if kind == 'simulation':
        info = payload['series']
        return f"Simulated series: {info['n']} observations, {info['first_date']} to {info['last_date']}"
    if kind == 'recovery':
        study = payload['study']
        summary = pd.DataFrame.from_dict(study['summary'], orient='index')
        return "\n".join([
            f"Recovery study: n={study['n']}, {study['replications']} replications, "
            f"convergence rate {study['convergence_rate']:.2f}, {len(study['failures'])} failed",
            summary.to_string(float_format=lambda v: f"{v:.4f}") if not summary.empty else "(no converged replications)"
        ])
    raise InputDataError(f"Unknown report kind {kind!r}")


# ---------------------------------------------------------------- click surface

@click.group()
def cli():
    """Log-periodic crash model estimation, diagnostics and simulation"""


@cli.command('fit')
@run_options
def fit_command(config_path, verbose, **flags):
    """Estimate the basic or extended model on a price window"""
    execute(verbose, lambda: cmd_fit(build_run_config(config_path, flags)))


@cli.command('diagnose')
@click.option('--fit', 'fit_path', required=True, type=click.Path(dir_okay=False), help='Fit report JSON')
@run_options
def diagnose_command(fit_path, config_path, verbose, **flags):
    """Residual diagnostics for a fit (input and window default to the fit's own)"""
    def command():
        base = config_path
        if base is None:
            base = fit_path if Path(fit_path).is_file() else None
        return cmd_diagnose(build_run_config(base, flags), fit_path)
    execute(verbose, command)


@cli.command('simulate')
@click.option('--params', 'params_path', required=True, type=click.Path(dir_okay=False),
              help='Parameter JSON (flat, or a previous extended fit report)')
@click.option('--n', 'length', type=int, default=544, show_default=True)
@click.option('--replications', type=int, default=1, show_default=True)
@run_options
def simulate_command(params_path, length, replications, config_path, verbose, **flags):
    """Write a synthetic series (1 replication) or run a recovery study"""
    execute(verbose, lambda: cmd_simulate(build_run_config(config_path, flags), params_path,
                                          length, replications))


@cli.command('report')
@click.argument('path', type=click.Path(dir_okay=False))
@click.option('--verbose', is_flag=True, default=False)
def report_command(path, verbose):
    """Render a JSON report as text tables"""
    def command():
        click.echo(render_report(load_report(path)))
        return EXIT_OK
    execute(verbose, command)


if __name__ == "__main__":
    cli()
