"""
Experiment configuration: YAML files with hyphenated keys, shipped presets and
the default config written by --init.
"""

import logging
import os
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from .birkhoff import NormalFormBudgets
from .diophantine import DEFAULT_SCAN_BUDGET, default_scan_depth
from .dynamics import SAMPLERS, SCHEMES
from .errors import ConfigError
from .series import FourierTaylorSeries, series_add
from .steepness import SamplingConfig, m0

PRESET_PACKAGE = 'torus_lab.presets'

TOP_LEVEL_KEYS = {
    'name', 'preset', 'hamiltonian', 'alpha', 'tau', 'I-star', 'r-grid', 'ensemble-size', 'dt',
    'budget-steps', 'sampler', 'scheme', 'energy-every', 'seed', 'threads',
    'diophantine', 'normal-form', 'steepness', 'output'
}
HAMILTONIAN_KEYS = {'omega', 'terms', 'file'}
DIOPHANTINE_KEYS = {'scan-depth', 'scan-budget'}
NORMAL_FORM_KEYS = {'order', 'k-work', 'm-work', 'divisor-floor', 'tol-hom', 'max-lie-terms', 'max-prenormal-sweeps'}
STEEPNESS_KEYS = {
    'rho', 'C', 'delta', 'det-floor', 'trials', 'coeff-box',
    'subspaces-per-dim', 'perturbations', 'xi-points', 'eta-points', 'multistarts',
    'boundary-fraction', 'refine-top', 'refine-iterations'
}
OUTPUT_KEYS = {'dir'}

DEFAULT_CONFIG = """\
# torus-lab experiment configuration
# Keys are hyphenated; unknown keys are rejected.

name: golden-convex
# preset: golden-convex        # start from a shipped preset and override below

hamiltonian:
  # H = omega.I + sum of terms; each term is (re cos(k.theta) + im sin(k.theta)) I^l
  omega: [1.0, 1.618033988749895]
  terms:
    - {k: [0, 0], l: [2, 0], re: 0.5}
    - {k: [0, 0], l: [0, 2], re: 0.5}
    - {k: [1, 1], l: [0, 0], re: 0.001}
  # file: hamiltonian.json     # complete series in JSON, instead of omega.I + terms

alpha: 1.0                     # Gevrey exponent
tau: 1.0                       # Diophantine exponent
I-star: [0.0, 0.0]             # centre of the escape neighbourhoods
r-grid: [0.4, 0.2, 0.1, 0.05]  # strictly decreasing
ensemble-size: 8
dt: null                       # null picks min(0.1, 0.01 / max |dH/dtheta|)
budget-steps: 20000
sampler: sphere                # sphere or ball
scheme: null                   # splitting, implicit-midpoint or null for automatic
energy-every: 100
seed: 0
threads: 1

diophantine:
  scan-depth: null             # null: 50 / 20 / 8 for n = 2 / 3 / 4
  scan-budget: 5000000

normal-form:
  order: null                  # null: m0(n) = floor(n^2 / 2 + 2)
  k-work: 8
  m-work: null
  divisor-floor: null          # null: gamma_est * k-work^-tau / 2
  tol-hom: 1.0e-10
  max-lie-terms: 60
  max-prenormal-sweeps: 60

steepness:
  rho: null                    # null auto-tunes (rho, C, delta) over geometric grids
  C: null
  delta: null
  det-floor: 1.0e-8
  trials: 200
  coeff-box: 1.0
  subspaces-per-dim: 256
  perturbations: 64
  xi-points: 32
  eta-points: 64
  multistarts: 8
  boundary-fraction: 0.5
  refine-top: 4
  refine-iterations: 200

output:
  dir: null                    # null: torus-lab_<UTC timestamp>
"""


@dataclass(frozen=True)
class SteepnessSettings:
    """Constants and sampling of the steepness checks; None constants are auto-tuned."""

    rho: Optional[float] = None
    C: Optional[float] = None
    delta: Optional[float] = None
    det_floor: float = 1e-8
    trials: int = 200
    coeff_box: float = 1.0
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    @property
    def constants(self) -> Optional[Tuple[float, float, float]]:
        """(rho, C, delta) when all three are fixed."""
        if self.rho is None or self.C is None or self.delta is None:
            return None
        return self.rho, self.C, self.delta


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment.

    Invariants: r_grid is strictly decreasing and positive; ensemble_size >= 1.
    """

    name: str
    hamiltonian: FourierTaylorSeries
    omega: Tuple[float, ...]
    alpha: float = 1.0
    tau: Optional[float] = None
    I_star: Optional[Tuple[float, ...]] = None
    r_grid: Tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    ensemble_size: int = 8
    dt: Optional[float] = None
    budget_steps: int = 20_000
    sampler: str = 'sphere'
    scheme: Optional[str] = None
    energy_every: int = 100
    seed: int = 0
    threads: int = 1
    scan_depth: Optional[int] = None
    scan_budget: int = DEFAULT_SCAN_BUDGET
    order: Optional[int] = None
    budgets: NormalFormBudgets = field(default_factory=NormalFormBudgets)
    steepness: SteepnessSettings = field(default_factory=SteepnessSettings)
    output_dir: Optional[str] = None

    def __post_init__(self) -> None:
        n = self.hamiltonian.n
        if len(self.omega) != n:
            raise ConfigError(f'omega has length {len(self.omega)}, Hamiltonian has dimension {n}')
        if self.I_star is None:
            object.__setattr__(self, 'I_star', (0.0,) * n)
        elif len(self.I_star) != n:
            raise ConfigError(f'I-star has length {len(self.I_star)}, expected {n}')
        if self.tau is None:
            object.__setattr__(self, 'tau', float(max(n - 1, 1)))
        if not self.r_grid:
            raise ConfigError('r-grid must not be empty')
        if any(r <= 0 for r in self.r_grid):
            raise ConfigError(f'r-grid entries must be positive, got {list(self.r_grid)}')
        if any(b >= a for a, b in zip(self.r_grid, self.r_grid[1:])):
            raise ConfigError(f'r-grid must be strictly decreasing, got {list(self.r_grid)}')
        if self.ensemble_size < 1:
            raise ConfigError(f'ensemble-size must be >= 1, got {self.ensemble_size}')
        if self.budget_steps < 1:
            raise ConfigError(f'budget-steps must be >= 1, got {self.budget_steps}')
        if self.dt is not None and self.dt <= 0:
            raise ConfigError(f'dt must be positive, got {self.dt}')
        if self.sampler not in SAMPLERS:
            raise ConfigError(f'sampler must be one of {SAMPLERS}, got {self.sampler!r}')
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ConfigError(f'scheme must be one of {SCHEMES}, got {self.scheme!r}')
        if self.threads < 1:
            raise ConfigError(f'threads must be >= 1, got {self.threads}')
        if self.alpha < 1:
            raise ConfigError(f'alpha must be >= 1, got {self.alpha}')
        if self.order is not None and self.order < 2:
            raise ConfigError(f'normal-form order must be >= 2, got {self.order}')

    @property
    def n(self) -> int:
        """Dimension."""
        return self.hamiltonian.n

    @property
    def normal_form_order(self) -> int:
        """Configured order, or m0(n)."""
        return self.order if self.order is not None else m0(self.n)

    @property
    def diophantine_depth(self) -> int:
        """Configured scan depth, or the default for n."""
        return self.scan_depth if self.scan_depth is not None else default_scan_depth(self.n)

    def with_overrides(
            self,
            seed: Optional[int] = None,
            threads: Optional[int] = None,
            output_dir: Optional[str] = None
        ) -> 'ExperimentConfig':
        """Copy with command-line overrides applied."""
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes['seed'] = seed
            changes['steepness'] = replace(
                self.steepness, sampling=replace(self.steepness.sampling, seed=seed)
            )
        if threads is not None:
            changes['threads'] = threads
        if output_dir is not None:
            changes['output_dir'] = output_dir
        return replace(self, **changes) if changes else self

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict for reports."""
        return {
            'name': self.name,
            'n': self.n,
            'omega': list(self.omega),
            'hamiltonian': self.hamiltonian.to_dict(),
            'alpha': self.alpha,
            'tau': self.tau,
            'I_star': list(self.I_star or ()),
            'r_grid': list(self.r_grid),
            'ensemble_size': self.ensemble_size,
            'dt': self.dt,
            'budget_steps': self.budget_steps,
            'sampler': self.sampler,
            'scheme': self.scheme,
            'energy_every': self.energy_every,
            'seed': self.seed,
            'scan_depth': self.diophantine_depth,
            'normal_form_order': self.normal_form_order,
            'budgets': asdict(self.budgets),
            'steepness': {
                'rho': self.steepness.rho,
                'C': self.steepness.C,
                'delta': self.steepness.delta,
                'det_floor': self.steepness.det_floor,
                'trials': self.steepness.trials,
                'coeff_box': self.steepness.coeff_box,
                'sampling': self.steepness.sampling.to_dict()
            }
        }


def _table(raw: Any, where: str, allowed: set) -> Dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f'{where} must be a table, got {type(raw).__name__}')
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f'unknown key(s) in {where}: {", ".join(map(str, unknown))}')
    return dict(raw)


def _number(table: Mapping[str, Any], key: str, where: str, default: Any = None, kind: type = float) -> Any:
    value = table.get(key, default)
    if value is None:
        return None
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError as exc:
            raise ConfigError(f'{where}.{key} must be a number, got {value!r}') from exc
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f'{where}.{key} must be a number, got {value!r}')
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f'{where}.{key} must be an integer, got {value!r}')
        return int(value)
    return float(value)


def _vector(value: Any, where: str) -> Tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f'{where} must be a non-empty list of numbers')
    try:
        return tuple(float(x) for x in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'{where} must be a list of numbers: {exc}') from exc


def _merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def build_hamiltonian(raw: Any, base_dir: str = '.') -> Tuple[FourierTaylorSeries, Tuple[float, ...]]:
    """Hamiltonian and omega from a `hamiltonian` table.

    Either omega plus terms (H = omega.I + terms) or omega plus file (a
    complete series in JSON).
    """
    table = _table(raw, 'hamiltonian', HAMILTONIAN_KEYS)
    if 'omega' not in table:
        raise ConfigError('hamiltonian.omega is required')
    omega = _vector(table['omega'], 'hamiltonian.omega')
    n = len(omega)
    if 'file' in table and 'terms' in table:
        raise ConfigError('hamiltonian takes either terms or file, not both')
    try:
        if 'file' in table:
            path = os.path.join(base_dir, str(table['file']))
            with open(path, 'r', encoding='utf-8') as file:
                payload = yaml.safe_load(file)
            H = FourierTaylorSeries.from_dict(payload)
            if H.n != n:
                raise ConfigError(f'{path} has dimension {H.n}, omega has length {n}')
            return H, omega
        terms = table.get('terms') or []
        if not isinstance(terms, list):
            raise ConfigError('hamiltonian.terms must be a list')
        H = FourierTaylorSeries.linear_action(omega)
        if terms:
            H = series_add(H, FourierTaylorSeries.from_dict({'n': n, 'terms': terms}))
        return H, omega
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f'invalid hamiltonian: {exc}') from exc


def config_from_mapping(raw: Any, base_dir: str = '.') -> ExperimentConfig:
    """Validate a parsed YAML document into an ExperimentConfig.

    A `preset` key loads that preset first; the document's keys then override
    it, nested tables key by key.
    """
    document = _table(raw, 'config', TOP_LEVEL_KEYS)
    if 'preset' in document:
        document = _merge(preset_mapping(str(document.pop('preset'))), document)
        document.pop('preset', None)
    if 'hamiltonian' not in document:
        raise ConfigError('config needs a hamiltonian table or a preset')
    H, omega = build_hamiltonian(document['hamiltonian'], base_dir)

    dio = _table(document.get('diophantine'), 'diophantine', DIOPHANTINE_KEYS)
    nf = _table(document.get('normal-form'), 'normal-form', NORMAL_FORM_KEYS)
    st = _table(document.get('steepness'), 'steepness', STEEPNESS_KEYS)
    out = _table(document.get('output'), 'output', OUTPUT_KEYS)

    budgets_defaults = NormalFormBudgets()
    try:
        budgets = NormalFormBudgets(
            k_work=_number(nf, 'k-work', 'normal-form', budgets_defaults.k_work, int),
            m_work=_number(nf, 'm-work', 'normal-form', None, int),
            divisor_floor=_number(nf, 'divisor-floor', 'normal-form'),
            tol_hom=_number(nf, 'tol-hom', 'normal-form', budgets_defaults.tol_hom),
            max_lie_terms=_number(nf, 'max-lie-terms', 'normal-form', budgets_defaults.max_lie_terms, int),
            max_prenormal_sweeps=_number(
                nf, 'max-prenormal-sweeps', 'normal-form', budgets_defaults.max_prenormal_sweeps, int
            )
        )
        sampling_defaults = SamplingConfig()
        sampling = SamplingConfig(
            subspaces_per_dim=_number(st, 'subspaces-per-dim', 'steepness', sampling_defaults.subspaces_per_dim, int),
            perturbations=_number(st, 'perturbations', 'steepness', sampling_defaults.perturbations, int),
            xi_points=_number(st, 'xi-points', 'steepness', sampling_defaults.xi_points, int),
            eta_points=_number(st, 'eta-points', 'steepness', sampling_defaults.eta_points, int),
            multistarts=_number(st, 'multistarts', 'steepness', sampling_defaults.multistarts, int),
            boundary_fraction=_number(st, 'boundary-fraction', 'steepness', sampling_defaults.boundary_fraction),
            refine_top=_number(st, 'refine-top', 'steepness', sampling_defaults.refine_top, int),
            refine_iterations=_number(st, 'refine-iterations', 'steepness', sampling_defaults.refine_iterations, int),
            seed=_number(document, 'seed', 'config', 0, int)
        )
        steepness = SteepnessSettings(
            rho=_number(st, 'rho', 'steepness'),
            C=_number(st, 'C', 'steepness'),
            delta=_number(st, 'delta', 'steepness'),
            det_floor=_number(st, 'det-floor', 'steepness', 1e-8),
            trials=_number(st, 'trials', 'steepness', 200, int),
            coeff_box=_number(st, 'coeff-box', 'steepness', 1.0),
            sampling=sampling
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    I_star = document.get('I-star')
    scheme = document.get('scheme')
    return ExperimentConfig(
        name=str(document.get('name', 'experiment')),
        hamiltonian=H,
        omega=omega,
        alpha=_number(document, 'alpha', 'config', 1.0),
        tau=_number(document, 'tau', 'config'),
        I_star=_vector(I_star, 'I-star') if I_star is not None else None,
        r_grid=_vector(document.get('r-grid', [0.4, 0.2, 0.1, 0.05]), 'r-grid'),
        ensemble_size=_number(document, 'ensemble-size', 'config', 8, int),
        dt=_number(document, 'dt', 'config'),
        budget_steps=_number(document, 'budget-steps', 'config', 20_000, int),
        sampler=str(document.get('sampler', 'sphere')),
        scheme=str(scheme) if scheme is not None else None,
        energy_every=_number(document, 'energy-every', 'config', 100, int),
        seed=_number(document, 'seed', 'config', 0, int),
        threads=_number(document, 'threads', 'config', 1, int),
        scan_depth=_number(dio, 'scan-depth', 'diophantine', None, int),
        scan_budget=_number(dio, 'scan-budget', 'diophantine', DEFAULT_SCAN_BUDGET, int),
        order=_number(nf, 'order', 'normal-form', None, int),
        budgets=budgets,
        steepness=steepness,
        output_dir=str(out['dir']) if out.get('dir') is not None else None
    )


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a YAML experiment file.

    Raises:
        FileNotFoundError: If path does not exist
        ConfigError: On YAML syntax errors or invalid contents
    """
    with open(path, 'r', encoding='utf-8') as file:
        try:
            raw = yaml.safe_load(file)
        except yaml.YAMLError as exc:
            raise ConfigError(f'cannot parse {path}: {exc}') from exc
    logging.debug('Loaded config from %s', path)
    return config_from_mapping(raw, os.path.dirname(os.path.abspath(path)))


def list_presets() -> List[str]:
    """Names of the shipped presets."""
    return sorted(
        entry.name[:-len('.yaml')]
        for entry in resources.files(PRESET_PACKAGE).iterdir()
        if entry.name.endswith('.yaml')
    )


def preset_mapping(name: str) -> Dict[str, Any]:
    """Parsed YAML of a shipped preset."""
    resource = resources.files(PRESET_PACKAGE).joinpath(f'{name}.yaml')
    if not resource.is_file():
        raise ConfigError(f'unknown preset {name!r}; available: {", ".join(list_presets())}')
    raw = yaml.safe_load(resource.read_text(encoding='utf-8'))
    if not isinstance(raw, Mapping):
        raise ConfigError(f'preset {name!r} is not a table')
    return dict(raw)


def load_preset(name: str) -> ExperimentConfig:
    """Validated ExperimentConfig of a shipped preset."""
    return config_from_mapping(preset_mapping(name))


def write_default_config(path: str = 'torus-lab.yaml') -> str:
    """Write the commented default config; refuses to overwrite.

    Raises:
        FileExistsError: If path already exists
    """
    if os.path.exists(path):
        raise FileExistsError(f'{path} already exists. Remove it before creating a new one.')
    with open(path, 'w', encoding='utf-8') as file:
        file.write(DEFAULT_CONFIG)
    logging.info('Default config written to %s', path)
    return path
