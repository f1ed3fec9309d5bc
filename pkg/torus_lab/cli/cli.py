"""
CLI for torus-lab
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Any, Callable, Dict, List, NoReturn, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.birkhoff import NormalFormBudgets, bnf, gevrey_beta, linear_frequencies
from ..core.config import ExperimentConfig, load_config, load_preset, write_default_config
from ..core.core import (
    LAWS,
    PLOT_FILE,
    emit_plot_data,
    fit_scaling,
    load_sweep_points,
    run_escape_sweep,
    run_pipeline,
)
from ..core.diophantine import DEFAULT_SCAN_BUDGET, default_scan_depth, gamma_estimate, omega_set_membership
from ..core.errors import ConfigError, NumericalError
from ..core.series import ActionPolynomial, FourierTaylorSeries, taylor_polynomial
from ..core.steepness import (
    SCAN_SAMPLING,
    SamplingConfig,
    auto_tune_check,
    double_exp_exponent,
    genericity_scan,
    kam_exponent_bound,
    kolmogorov_check,
    m0,
    nekhoroshev_exponents,
    stability_time_prediction,
    stably_steep_check,
    steep_function_check,
)
from ..utils.utils import ensure_dir, setup_logging, timestamped_output_dir, to_json, write_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_REFUTED = 4

CONFIG_FILE = 'torus-lab.yaml'
GENERIC_SCAN_FILE = 'generic_scan.json'

Outcome = Tuple[Dict[str, Any], str]


def create_default_config_file(path: str = CONFIG_FILE) -> None:
    """Create a default torus-lab.yaml file."""
    write_default_config(path)
    print(f"Default {path} created.")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='Experiment YAML file')
    common.add_argument('--preset', type=str, help='Use a shipped preset as the experiment')
    common.add_argument('--seed', type=int, help='Master seed (overrides the config)')
    common.add_argument('--out', type=str, help='Output directory')
    common.add_argument('--threads', type=int, help='Worker processes')
    common.add_argument('--json', action='store_true', help='Machine-readable JSON on stdout')
    common.add_argument('--strict', action='store_true', help='Exit with code 4 when a check is refuted')
    common.add_argument('--debug', action='store_true', default=argparse.SUPPRESS, help='Enable debug logging')
    return common


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments.

    Returns:
        argparse.Namespace: Parsed command line arguments
    """
    common = _common_options()
    parser = argparse.ArgumentParser(
        description='Effective stability of Diophantine tori: normal forms, steepness, escape times'
    )
    parser.add_argument('--debug', action='store_true', help='Enable debug logging')
    parser.add_argument(
        '--create-config',
        '--init',
        dest='init',
        action='store_true',
        help=f'Create default {CONFIG_FILE} file'
    )
    sub = parser.add_subparsers(dest='command')

    dio = sub.add_parser('dio', parents=[common], help='Diophantine constant of a frequency vector')
    dio.add_argument('--omega', type=float, nargs='+', help='Frequency vector')
    dio.add_argument('--tau', type=float, help='Diophantine exponent (default max(n - 1, 1))')
    dio.add_argument('--K', type=int, help='Scan depth (l1 radius)')
    dio.add_argument('--gamma', type=float, help='Also test membership of the good frequency set')
    dio.add_argument('--box', type=float, nargs='+', help='Frequency box as lo1 hi1 lo2 hi2 ...')

    nf = sub.add_parser('bnf', parents=[common], help='Birkhoff normal form')
    nf.add_argument('--hamiltonian', type=str, help='Hamiltonian series JSON file')
    nf.add_argument('--omega', type=float, nargs='+', help='Frequency vector')
    nf.add_argument('--order', type=int, help='Normal-form order m (default m0(n))')
    nf.add_argument('--k-work', type=int, help='Fourier budget of the intermediate series')

    steep = sub.add_parser('steep-check', parents=[common], help='Stable steepness or steepness check')
    steep.add_argument('--polynomial', type=str, help='Polynomial JSON file (default: Taylor polynomial of H)')
    steep.add_argument('--rho', type=float, help='Perturbation radius')
    steep.add_argument('--C', type=float, help='Steepness coefficient')
    steep.add_argument('--delta', type=float, help='Largest radius xi')
    steep.add_argument('--function', action='store_true', help='Check the action part of H as a steep function')
    steep.add_argument('--points', type=str, help='JSON list of sample points for --function')
    steep.add_argument('--kappa', type=float, help='Gradient lower bound for --function')
    steep.add_argument('--p', type=float, nargs='+', help='Steepness indices for --function')

    kol = sub.add_parser('kolmogorov', parents=[common], help='Kolmogorov non-degeneracy check')
    kol.add_argument('--polynomial', type=str, help='Polynomial JSON file (default: action part of H)')
    kol.add_argument('--points', type=str, help='JSON list of sample points')
    kol.add_argument('--det-floor', type=float, help='Lower bound on |det Hessian|')

    exps = sub.add_parser('exponents', parents=[common], help='Stability exponents')
    exps.add_argument('--n', type=int, required=True, help='Dimension')
    exps.add_argument('--alpha', type=float, default=1.0, help='Gevrey exponent alpha')
    exps.add_argument('--tau', type=float, help='Diophantine exponent (default max(n - 1, 1))')
    exps.add_argument('--p', type=float, help='Steepness index (default m0(n) - 1)')
    exps.add_argument('--beta', type=float, help='Gevrey exponent beta (default alpha (1 + tau) + 1)')
    exps.add_argument('--C', type=float, help='Constant of the predicted stability time')
    exps.add_argument('--r', type=float, help='Radius of the predicted stability time')

    gen = sub.add_parser('generic-scan', parents=[common], help='Monte Carlo genericity of stable steepness')
    gen.add_argument('--n', type=int, help='Dimension (default from the config, else 2)')
    gen.add_argument('--m', type=int, help='Degree (default m0(n))')
    gen.add_argument('--trials', type=int, help='Number of random polynomials')
    gen.add_argument('--box', type=float, help='Coefficient box half-width')
    gen.add_argument('--base', type=str, help='Base polynomial JSON file')

    sub.add_parser('escape-sweep', parents=[common], help='Escape-time sweep over the radius grid')
    sub.add_parser('pipeline', parents=[common], help='Run every stage on one experiment')

    plot = sub.add_parser('plot-data', parents=[common], help='Plot-ready CSV of a finished sweep')
    plot.add_argument('results', help='Sweep directory or escape_summary.csv')
    plot.add_argument('--law', choices=LAWS, default='double-exp-law', help='Fitted law')

    args = parser.parse_args(argv)
    if not args.init and args.command is None:
        parser.error('a subcommand is required (or --init)')
    return args


def _read_json(path: str) -> Any:
    with open(path, 'r', encoding='utf-8') as file:
        try:
            return json.load(file)
        except json.JSONDecodeError as exc:
            raise ConfigError(f'cannot parse {path}: {exc}') from exc


def load_experiment(args: argparse.Namespace, required: bool = True) -> Optional[ExperimentConfig]:
    """Experiment from --config or --preset, with --seed/--threads/--out applied."""
    if getattr(args, 'config', None):
        cfg = load_config(args.config)
    elif getattr(args, 'preset', None):
        cfg = load_preset(args.preset)
    elif required:
        raise ConfigError('this command needs --config PATH or --preset NAME')
    else:
        return None
    return cfg.with_overrides(seed=args.seed, threads=args.threads, output_dir=args.out)


def _output_dir(args: argparse.Namespace, cfg: Optional[ExperimentConfig]) -> str:
    out = args.out or (cfg.output_dir if cfg is not None else None) or timestamped_output_dir()
    return ensure_dir(out)


def _omega_and_tau(args: argparse.Namespace, cfg: Optional[ExperimentConfig]) -> Tuple[List[float], float]:
    if args.omega:
        omega = list(args.omega)
    elif cfg is not None:
        omega = list(cfg.omega)
    else:
        raise ConfigError('no frequency vector: pass --omega, --config or --preset')
    tau = args.tau if getattr(args, 'tau', None) is not None else (
        cfg.tau if cfg is not None and cfg.tau is not None else float(max(len(omega) - 1, 1))
    )
    return omega, float(tau)


def run_dio(args: argparse.Namespace) -> Outcome:
    """dio subcommand."""
    cfg = load_experiment(args, required=False)
    omega, tau = _omega_and_tau(args, cfg)
    if args.K is not None:
        depth = args.K
    else:
        depth = cfg.diophantine_depth if cfg is not None else default_scan_depth(len(omega))
    budget = cfg.scan_budget if cfg is not None else DEFAULT_SCAN_BUDGET
    report = gamma_estimate(omega, tau, depth, budget)
    payload: Dict[str, Any] = report.to_dict()
    status = 'ok'
    if args.gamma is not None:
        if not args.box or len(args.box) != 2 * len(omega):
            raise ConfigError(f'--box needs {2 * len(omega)} numbers (lo hi per coordinate)')
        bounds = [(args.box[2 * j], args.box[2 * j + 1]) for j in range(len(omega))]
        membership = omega_set_membership(omega, bounds, args.gamma, tau, depth)
        payload['membership'] = membership.to_dict()
        status = 'ok' if membership.member else 'refuted'
    return payload, status


def run_bnf(args: argparse.Namespace) -> Outcome:
    """bnf subcommand."""
    cfg = load_experiment(args, required=not args.hamiltonian)
    if args.hamiltonian:
        H = FourierTaylorSeries.from_dict(_read_json(args.hamiltonian))
    else:
        assert cfg is not None
        H = cfg.hamiltonian
    if args.omega or cfg is not None:
        omega, tau = _omega_and_tau(args, cfg)
    else:
        omega, tau = linear_frequencies(H).tolist(), float(max(H.n - 1, 1))
    budgets = cfg.budgets if cfg is not None else NormalFormBudgets()
    if args.k_work is not None:
        budgets = replace(budgets, k_work=args.k_work)
    if args.order is not None:
        order = args.order
    else:
        order = cfg.normal_form_order if cfg is not None else m0(H.n)
    result = bnf(H, omega, order, budgets, tau)
    return result.to_dict(), 'ok'


def _points(args: argparse.Namespace, cfg: Optional[ExperimentConfig], n: int) -> np.ndarray:
    if args.points:
        return np.atleast_2d(np.asarray(_read_json(args.points), dtype=float))
    center = cfg.I_star if cfg is not None and cfg.I_star is not None else (0.0,) * n
    return np.atleast_2d(np.asarray(center, dtype=float))


def run_steep_check(args: argparse.Namespace) -> Outcome:
    """steep-check subcommand."""
    cfg = load_experiment(args, required=not args.polynomial)
    settings = cfg.steepness if cfg is not None else None
    sampling = settings.sampling if settings is not None else SamplingConfig()
    if args.seed is not None:
        sampling = replace(sampling, seed=args.seed)
    rho = args.rho if args.rho is not None else (settings.rho if settings else None)
    C = args.C if args.C is not None else (settings.C if settings else None)
    delta = args.delta if args.delta is not None else (settings.delta if settings else None)
    if args.function:
        if cfg is None:
            raise ConfigError('--function needs --config or --preset')
        if args.kappa is None or C is None or delta is None or not args.p:
            raise ConfigError('--function needs --kappa, --C, --delta and --p')
        points = _points(args, cfg, cfg.n)
        verdict = steep_function_check(cfg.hamiltonian, points, args.kappa, C, delta, args.p, sampling)
    else:
        if args.polynomial:
            P0 = ActionPolynomial.from_dict(_read_json(args.polynomial))
        else:
            assert cfg is not None
            P0 = taylor_polynomial(cfg.hamiltonian, cfg.I_star or (0.0,) * cfg.n, m0(cfg.n))
        if rho is not None and C is not None and delta is not None:
            verdict = stably_steep_check(P0, rho, C, delta, sampling)
        else:
            verdict, _ = auto_tune_check(P0, sampling)
    return verdict.to_dict(), 'ok' if verdict.accepted else 'refuted'


def run_kolmogorov(args: argparse.Namespace) -> Outcome:
    """kolmogorov subcommand."""
    cfg = load_experiment(args, required=not args.polynomial)
    h: Union[ActionPolynomial, FourierTaylorSeries]
    if args.polynomial:
        h = ActionPolynomial.from_dict(_read_json(args.polynomial))
    else:
        assert cfg is not None
        h = cfg.hamiltonian
    if args.det_floor is not None:
        det_floor = args.det_floor
    else:
        det_floor = cfg.steepness.det_floor if cfg is not None else 1e-8
    verdict = kolmogorov_check(h, _points(args, cfg, h.n), det_floor)
    return verdict.to_dict(), 'ok' if verdict.accepted else 'refuted'


def run_exponents(args: argparse.Namespace) -> Outcome:
    """exponents subcommand."""
    n = args.n
    tau = args.tau if args.tau is not None else float(max(n - 1, 1))
    p = args.p if args.p is not None else m0(n) - 1
    beta = args.beta if args.beta is not None else gevrey_beta(args.alpha, tau)
    u = double_exp_exponent(args.alpha, tau, n)
    payload: Dict[str, Any] = {
        'n': n,
        'm0': m0(n),
        'alpha': args.alpha,
        'tau': tau,
        'double_exp_exponent': u,
        'kam_exponent_bound': kam_exponent_bound(args.alpha, n),
        'nekhoroshev': nekhoroshev_exponents(n, p, beta).to_dict()
    }
    if args.C is not None and args.r is not None:
        payload['stability_time'] = stability_time_prediction(args.C, u, args.r)._asdict()
    return payload, 'ok'


def run_generic_scan(args: argparse.Namespace) -> Outcome:
    """generic-scan subcommand."""
    cfg = load_experiment(args, required=False)
    n = args.n if args.n is not None else (cfg.n if cfg is not None else 2)
    m = args.m if args.m is not None else m0(n)
    trials = args.trials if args.trials is not None else (cfg.steepness.trials if cfg is not None else 200)
    box = args.box if args.box is not None else (cfg.steepness.coeff_box if cfg is not None else 1.0)
    base = ActionPolynomial.from_dict(_read_json(args.base)) if args.base else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg is not None else 0)
    threads = args.threads if args.threads is not None else (cfg.threads if cfg is not None else 1)
    report = genericity_scan(base, n, m, trials, box, SCAN_SAMPLING, seed, threads)
    out = _output_dir(args, cfg)
    write_json(os.path.join(out, GENERIC_SCAN_FILE), report)
    payload = report.to_dict()
    payload['output_dir'] = out
    return payload, 'ok'


def run_escape_sweep_command(args: argparse.Namespace) -> Outcome:
    """escape-sweep subcommand."""
    cfg = load_experiment(args)
    assert cfg is not None
    result = run_escape_sweep(cfg, _output_dir(args, cfg))
    return result.to_dict(), 'ok'


def run_pipeline_command(args: argparse.Namespace) -> Outcome:
    """pipeline subcommand; a refuted steepness stage counts as refuted, any other stop as failed."""
    cfg = load_experiment(args)
    assert cfg is not None
    out = _output_dir(args, cfg)
    report = run_pipeline(cfg, out)
    payload = report.to_dict()
    payload['output_dir'] = out
    failed = report.failed_stage
    if failed is None:
        return payload, 'ok'
    return payload, 'refuted' if failed.name == 'steepness' else 'failed'


def run_plot_data(args: argparse.Namespace) -> Outcome:
    """plot-data subcommand."""
    points = load_sweep_points(args.results)
    fit = fit_scaling(points, args.law) if points else None
    if args.out:
        out = ensure_dir(args.out)
    elif os.path.isdir(args.results):
        out = args.results
    else:
        out = os.path.dirname(os.path.abspath(args.results))
    path = os.path.join(out, PLOT_FILE)
    rows = emit_plot_data(points, fit, path)
    return {'path': path, 'rows': rows, 'fit': fit.to_dict() if fit is not None else None}, 'ok'


COMMANDS: Dict[str, Callable[[argparse.Namespace], Outcome]] = {
    'dio': run_dio,
    'bnf': run_bnf,
    'steep-check': run_steep_check,
    'kolmogorov': run_kolmogorov,
    'exponents': run_exponents,
    'generic-scan': run_generic_scan,
    'escape-sweep': run_escape_sweep_command,
    'pipeline': run_pipeline_command,
    'plot-data': run_plot_data,
}


def _summary(command: str, payload: Dict[str, Any], status: str) -> str:
    if command == 'dio':
        return f"gamma_est = {payload['gamma_est']} at k = {payload['argmin_k']}"
    if command in ('steep-check', 'kolmogorov'):
        return f"{payload['kind']}: {'accepted' if status == 'ok' else 'refuted'}"
    if command == 'bnf':
        return f"order {payload['order_m']}: residual {payload['residual']:.3e}"
    if command == 'generic-scan':
        return f"accepted {payload['accepted']}/{payload['trials']} (fraction {payload['fraction']:.3f})"
    if command == 'plot-data':
        return f"{payload['rows']} rows written to {payload['path']}"
    if command == 'pipeline' and payload.get('failed_stage'):
        return f"Pipeline stopped at stage {payload['failed_stage']}; report in {payload['output_dir']}"
    if 'output_dir' in payload:
        return f"Results written to {payload['output_dir']}"
    return to_json(payload)


def main() -> NoReturn:
    """Main entry point for the CLI.

    Raises:
        SystemExit: 0 on success, 2 on configuration or file errors, 3 on
            numerical failures, 4 on a refuted check under --strict
    """
    args = parse_args()
    setup_logging(debug=args.debug)
    logging.debug('torus-lab started')

    try:
        if args.init:
            create_default_config_file()
            logging.debug('%s file created', CONFIG_FILE)
            sys.exit(EXIT_OK)
        payload, status = COMMANDS[args.command](args)
        print(to_json(payload) if args.json else _summary(args.command, payload, status))
        logging.debug('torus-lab finished')
        if status == 'failed':
            sys.exit(EXIT_NUMERICAL)
        if status == 'refuted' and args.strict:
            sys.exit(EXIT_REFUTED)
        sys.exit(EXIT_OK)
    except (ConfigError, ValueError) as e:
        logging.error('Error occurred: %s', str(e))
        sys.exit(EXIT_CONFIG)
    except NumericalError as e:
        logging.error('Error occurred: %s', str(e))
        sys.exit(EXIT_NUMERICAL)
    except (FileNotFoundError, FileExistsError, PermissionError, OSError) as e:
        logging.error('Error occurred: %s', str(e))
        sys.exit(EXIT_CONFIG)
