"""
Steepness, Kolmogorov non-degeneracy and the stability exponents built on them.

Verdicts are falsification based: subspaces, perturbations and radii are
sampled, the worst sampled triples are refined by Nelder-Mead over orthonormal
frames, and a verdict is refuted only with a stored witness that reproduces the
violated inequality. An accepted verdict means no counterexample was found under
the recorded sampling.
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    NamedTuple,
    Optional,
    Protocol,
    Sequence,
    Tuple,
    Union,
    runtime_checkable,
)

import numpy as np
from scipy import linalg, optimize

from ..utils.utils import run_tasks, spawn_seeds
from .errors import DimensionMismatch
from .series import ActionPolynomial, FourierTaylorSeries

GradientFn = Callable[[np.ndarray], np.ndarray]

RHO_GRID = (1e-3, 1e-2, 1e-1)
C_GRID = (1e-3, 1e-2, 1e-1, 1.0)
DELTA_GRID = (1e-2, 1e-1, 1.0)

GENERICITY_CAVEAT = (
    'acceptance means no counterexample was found under the recorded sampling; '
    'it does not prove stable steepness'
)


def m0(n: int) -> int:
    """Steepness threshold degree floor(n^2/2 + 2)."""
    if n < 1:
        raise ValueError(f'dimension must be >= 1, got {n}')
    return n * n // 2 + 2


# Functions of the actions


@runtime_checkable
class ActionFunction(Protocol):
    """A function of the actions with batched value, gradient and Hessian."""

    n: int

    def value(self, x: np.ndarray) -> np.ndarray:
        ...

    def gradient(self, x: np.ndarray) -> np.ndarray:
        ...

    def hessian(self, x: np.ndarray) -> np.ndarray:
        ...


class SeriesActionFunction:
    """Angle average of a series, as a function of the actions."""

    exact = True

    def __init__(self, series: FourierTaylorSeries) -> None:
        self.n = series.n
        self._average = series.angle_average()
        self._polynomial = ActionPolynomial.from_series(self._average, max(series.m_max, 2))

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._average.evaluator().value(np.zeros_like(x), x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._average.evaluator().grad_action(np.zeros_like(x), x)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return self._polynomial.hessian(x)


class CallableActionFunction:
    """Plain callable h(x) with finite-difference derivatives.

    The callable must accept points of shape (..., n) and return values of
    shape (...). Central differences use the step fd_step * (1 + ||x||).

    Args:
        func: The function
        n: Dimension
        gradient: Optional exact gradient with the same batching convention
        fd_step: Relative finite-difference step
    """

    exact = False

    def __init__(
            self,
            func: Callable[[np.ndarray], np.ndarray],
            n: int,
            gradient: Optional[GradientFn] = None,
            fd_step: float = 1e-5
        ) -> None:
        self.n = n
        self._func = func
        self._gradient = gradient
        self.fd_step = fd_step

    def _steps(self, x: np.ndarray) -> np.ndarray:
        return self.fd_step * (1.0 + np.linalg.norm(x, axis=-1))

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._func(np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._gradient is not None:
            return np.asarray(self._gradient(x), dtype=float)
        steps = self._steps(x)
        out = np.empty(x.shape)
        for j in range(self.n):
            shift = np.zeros(x.shape)
            shift[..., j] = steps
            out[..., j] = (self.value(x + shift) - self.value(x - shift)) / (2.0 * steps)
        return out

    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        steps = self._steps(x)
        out = np.empty(x.shape + (self.n,))
        for j in range(self.n):
            shift = np.zeros(x.shape)
            shift[..., j] = steps
            out[..., :, j] = (self.gradient(x + shift) - self.gradient(x - shift)) / (2.0 * steps[..., None])
        return 0.5 * (out + np.swapaxes(out, -1, -2))


def as_action_function(
        h: Union[ActionPolynomial, FourierTaylorSeries, ActionFunction, Callable[[np.ndarray], np.ndarray]],
        n: Optional[int] = None
    ) -> ActionFunction:
    """Adapt polynomials, series and callables to the ActionFunction protocol."""
    if isinstance(h, FourierTaylorSeries):
        return SeriesActionFunction(h)
    if isinstance(h, ActionFunction):
        return h
    if callable(h):
        if n is None:
            raise ValueError('dimension n is required for a plain callable')
        return CallableActionFunction(h, n)
    raise TypeError(f'cannot use {type(h).__name__} as a function of the actions')


def _derivative_kind(func: ActionFunction) -> Dict[str, object]:
    if getattr(func, 'exact', True):
        return {'derivatives': 'exact'}
    return {'derivatives': 'finite-difference', 'fd_step': getattr(func, 'fd_step', None)}


# Sampling configuration and verdicts


@dataclass(frozen=True)
class SamplingConfig:
    """Sampling effort of a steepness check; recorded in every verdict."""

    subspaces_per_dim: int = 256
    perturbations: int = 64
    xi_points: int = 32
    eta_points: int = 64
    multistarts: int = 8
    boundary_fraction: float = 0.5
    refine_top: int = 4
    refine_iterations: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ('subspaces_per_dim', 'perturbations', 'xi_points', 'eta_points', 'multistarts'):
            if getattr(self, name) < 1:
                raise ValueError(f'{name} must be >= 1, got {getattr(self, name)}')
        if self.eta_points < 2:
            raise ValueError(f'eta_points must be >= 2, got {self.eta_points}')
        if not 0.0 <= self.boundary_fraction <= 1.0:
            raise ValueError(f'boundary_fraction must lie in [0, 1], got {self.boundary_fraction}')
        if self.refine_top < 0 or self.refine_iterations < 0:
            raise ValueError('refinement settings must be >= 0')

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return asdict(self)


SCAN_SAMPLING = SamplingConfig(
    subspaces_per_dim=64, perturbations=16, xi_points=16, eta_points=32, multistarts=4, refine_top=2
)


@dataclass(frozen=True)
class SteepnessWitness:
    """A sampled counterexample.

    reason is 'maxmin' (value <= bound at radius xi on the subspace spanned by
    basis), 'gradient-norm' (||grad h(point)|| < kappa) or 'hessian-det'
    (|det Hess h(point)| < det_floor).
    """

    reason: str
    value: float
    bound: float
    xi: Optional[float] = None
    exponent: Optional[float] = None
    basis: Optional[Tuple[Tuple[float, ...], ...]] = None
    perturbation: Optional[ActionPolynomial] = None
    point: Optional[Tuple[float, ...]] = None
    refined: bool = False

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'reason': self.reason,
            'value': self.value,
            'bound': self.bound,
            'xi': self.xi,
            'exponent': self.exponent,
            'basis': [list(row) for row in self.basis] if self.basis is not None else None,
            'perturbation': self.perturbation.to_dict() if self.perturbation is not None else None,
            'point': list(self.point) if self.point is not None else None,
            'refined': self.refined
        }


@dataclass(frozen=True)
class SteepnessVerdict:
    """Accepted or refuted certificate with constants and sampling evidence.

    min_ratio is the smallest observed value/bound; refutation means min_ratio <= 1.
    """

    kind: str
    accepted: bool
    constants: Dict[str, object]
    witness: Optional[SteepnessWitness]
    samples: Dict[str, object]
    min_ratio: float

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'kind': self.kind,
            'accepted': self.accepted,
            'constants': self.constants,
            'witness': self.witness.to_dict() if self.witness is not None else None,
            'samples': self.samples,
            'min_ratio': self.min_ratio if math.isfinite(self.min_ratio) else None
        }


# Subspaces


def orthonormal_frame(basis: Union[np.ndarray, Sequence[Sequence[float]]]) -> np.ndarray:
    """Orthonormal rows spanning the same subspace as the rows of basis.

    Raises:
        ValueError: When the rows are linearly dependent
    """
    arr = np.atleast_2d(np.asarray(basis, dtype=float))
    l, n = arr.shape
    if not 1 <= l <= n:
        raise ValueError(f'basis of {l} vectors in dimension {n}')
    q, r = linalg.qr(arr.T, mode='economic')
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * max(1.0, diag.max()):
        raise ValueError('degenerate basis: vectors are linearly dependent')
    return q.T


def _structured_frames(n: int, l: int) -> List[np.ndarray]:
    eye = np.eye(n)
    if l == 1:
        frames = [eye[i:i + 1] for i in range(n)]
        for i, j in itertools.combinations(range(n), 2):
            frames.append(((eye[i] + eye[j]) / math.sqrt(2.0))[None, :])
            frames.append(((eye[i] - eye[j]) / math.sqrt(2.0))[None, :])
        return frames
    return [eye[list(c)] for c in itertools.combinations(range(n), l)]


def random_frame(n: int, l: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthonormal l-frame in R^n, as rows."""
    q, r = linalg.qr(rng.standard_normal((n, l)), mode='economic')
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return (q * signs).T


def sample_frames(n: int, l: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """count frames of dimension l: coordinate-aligned ones first, then random ones."""
    frames = _structured_frames(n, l)[:count]
    while len(frames) < count:
        frames.append(random_frame(n, l, rng))
    return np.stack(frames)


def xi_grid(delta: float, points: int) -> np.ndarray:
    """Geometric grid of points radii in (delta/100, delta]."""
    return np.geomspace(delta / 100.0, delta, points + 1)[1:]


# Max-min profiles


@lru_cache(maxsize=32)
def _sphere_directions(l: int, count: int) -> np.ndarray:
    if l == 2:
        phi = 2.0 * np.pi * np.arange(count) / count
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    else:
        rng = np.random.default_rng(l)
        cloud = rng.standard_normal((count, l))
        cloud /= np.linalg.norm(cloud, axis=1, keepdims=True)
        dirs = np.vstack([np.eye(l), -np.eye(l), cloud])
    dirs.flags.writeable = False
    return dirs


def _eta_table(xi: np.ndarray, eta_per_xi: int) -> np.ndarray:
    return xi[:, None] * np.linspace(0.0, 1.0, eta_per_xi)[None, :]


def _chunked_gradient(grad_fn: GradientFn, points: np.ndarray, chunk: int = 32768) -> np.ndarray:
    flat = points.reshape(-1, points.shape[-1])
    out = np.empty(flat.shape)
    for start in range(0, flat.shape[0], chunk):
        out[start:start + chunk] = grad_fn(flat[start:start + chunk])
    return out.reshape(points.shape)


def _line_profiles_polynomial(P: ActionPolynomial, lines: np.ndarray, xi: np.ndarray, eta_per_xi: int) -> np.ndarray:
    """Exact l = 1 profiles for a batch of unit lines, xi ascending.

    On a line through 0 the restricted gradient is d/deta P(eta b), a polynomial
    in eta whose coefficients are the homogeneous parts of P evaluated at b.
    """
    n_lines = lines.shape[0]
    if not P.coeffs:
        return np.zeros((n_lines, xi.size))
    ls = np.array(list(P.coeffs.keys()), dtype=float)
    cs = np.array(list(P.coeffs.values()), dtype=float)
    degrees = ls.sum(axis=1).astype(int)
    mono = np.prod(lines[:, None, :] ** ls[None, :, :], axis=-1)
    top = int(degrees.max())
    by_degree = np.zeros((n_lines, top + 1))
    for p in np.unique(degrees):
        by_degree[:, p] = mono[:, degrees == p] @ cs[degrees == p]
    powers = np.arange(1, top + 1)
    slope = by_degree[:, 1:] * powers
    etas = _eta_table(xi, eta_per_xi)
    eta_pow = etas[..., None] ** (powers - 1)
    forward = np.einsum('lp,xep->lxe', slope, eta_pow)
    backward = np.einsum('lp,xep->lxe', slope * (-1.0) ** powers, eta_pow)
    values = np.minimum(np.abs(forward), np.abs(backward)).max(axis=-1)
    return np.maximum.accumulate(values, axis=1)


def _line_profiles_generic(grad_fn: GradientFn, lines: np.ndarray, xi: np.ndarray, eta_per_xi: int) -> np.ndarray:
    """l = 1 profiles from a gradient field, xi ascending; the sphere is the two points +-eta b."""
    etas = _eta_table(xi, eta_per_xi)
    dirs = np.stack([lines, -lines], axis=1)
    points = etas[None, :, :, None, None] * dirs[:, None, None, :, :]
    grads = _chunked_gradient(grad_fn, points)
    proj = np.abs(np.einsum('lxesn,ln->lxes', grads, lines))
    values = proj.min(axis=-1).max(axis=-1)
    return np.maximum.accumulate(values, axis=1)


def _sphere_minimum(
        grad_fn: GradientFn,
        basis: np.ndarray,
        eta: float,
        starts: np.ndarray,
        half_width: float
    ) -> float:
    """Multi-start local minimisation of ||grad restricted|| over the sphere of radius eta."""
    l = basis.shape[0]

    def objective(u: np.ndarray) -> float:
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            return math.inf
        x = (eta / norm) * (u @ basis)
        return float(np.linalg.norm(basis @ grad_fn(x)))

    best = math.inf
    for start in starts:
        if l == 2:
            phi0 = math.atan2(start[1], start[0])
            res = optimize.minimize_scalar(
                lambda phi: objective(np.array([math.cos(phi), math.sin(phi)])),
                bounds=(phi0 - half_width, phi0 + half_width),
                method='bounded',
                options={'xatol': 1e-12}
            )
        else:
            res = optimize.minimize(
                objective, start, method='Nelder-Mead',
                options={'xatol': 1e-10, 'fatol': 1e-15, 'maxiter': 400 * l}
            )
        best = min(best, float(res.fun))
    return best


def _subspace_profile(
        grad_fn: GradientFn,
        basis: np.ndarray,
        xi: np.ndarray,
        eta_per_xi: int,
        multistarts: int
    ) -> np.ndarray:
    """Profile on a subspace of dimension >= 2, xi ascending.

    Sphere minima are first estimated on a fixed set of directions. Per radius
    only the eta values that could hold the maximum are refined, until the
    maximiser is a refined value.
    """
    l = basis.shape[0]
    count = max(32, 8 * multistarts) if l == 2 else 64 * l
    dirs = _sphere_directions(l, count)
    half_width = 2.0 * np.pi / count
    etas = _eta_table(xi, eta_per_xi)
    points = etas[..., None, None] * (dirs @ basis)[None, None, :, :]
    grid = np.linalg.norm(_chunked_gradient(grad_fn, points) @ basis.T, axis=-1)
    coarse = grid.min(axis=-1)
    refined = np.full(coarse.shape, np.nan)
    refined[etas == 0.0] = coarse[etas == 0.0]
    values = np.empty(xi.size)
    for i in range(xi.size):
        while True:
            current = np.where(np.isnan(refined[i]), coarse[i], refined[i])
            j = int(np.argmax(current))
            if not np.isnan(refined[i, j]):
                values[i] = current[j]
                break
            starts = dirs[np.argsort(grid[i, j], kind='stable')[:multistarts]]
            local = _sphere_minimum(grad_fn, basis, float(etas[i, j]), starts, half_width)
            refined[i, j] = min(coarse[i, j], local)
    return np.maximum.accumulate(values)


def _frame_profiles(
        grad_fn: GradientFn,
        polynomial: Optional[ActionPolynomial],
        frames: np.ndarray,
        xi: np.ndarray,
        eta_per_xi: int,
        multistarts: int
    ) -> np.ndarray:
    if frames.shape[1] == 1:
        lines = frames[:, 0, :]
        if polynomial is not None:
            return _line_profiles_polynomial(polynomial, lines, xi, eta_per_xi)
        return _line_profiles_generic(grad_fn, lines, xi, eta_per_xi)
    return np.stack([_subspace_profile(grad_fn, f, xi, eta_per_xi, multistarts) for f in frames])


def _sorted_profile(
        grad_fn: GradientFn,
        polynomial: Optional[ActionPolynomial],
        basis: np.ndarray,
        xi: np.ndarray,
        eta_per_xi: int,
        multistarts: int
    ) -> np.ndarray:
    order = np.argsort(xi, kind='stable')
    values = _frame_profiles(grad_fn, polynomial, basis[None], xi[order], eta_per_xi, multistarts)[0]
    out = np.empty_like(values)
    out[order] = values
    return out


def maxmin_profile(
        P: ActionPolynomial,
        basis: Union[np.ndarray, Sequence[Sequence[float]]],
        xi_values: Iterable[float],
        eta_per_xi: int = 64,
        multistarts: int = 8
    ) -> List[Tuple[float, float]]:
    """max over eta <= xi of min over ||x|| = eta, x in Lambda, of ||grad P_Lambda(x)||.

    The eta grid per xi is linspace(0, xi, eta_per_xi); values are made
    non-decreasing in xi by carrying the maximum over smaller radii.

    Args:
        P: Polynomial of P2(n, m)
        basis: Rows spanning Lambda, 1 <= l <= n - 1 (orthonormalised if needed)
        xi_values: Radii, all positive
        eta_per_xi: eta grid size per radius
        multistarts: Local minimisations per sphere (l >= 2)

    Returns:
        List[Tuple[float, float]]: (xi, maxmin) in the order given
    """
    xi = np.asarray(list(xi_values), dtype=float)
    if np.any(xi <= 0):
        raise ValueError('radii xi must be positive')
    frame = orthonormal_frame(basis)
    if frame.shape[1] != P.n:
        raise DimensionMismatch(P.n, frame.shape[1])
    if frame.shape[0] >= P.n:
        raise ValueError(f'subspace dimension must lie in 1..{P.n - 1}, got {frame.shape[0]}')
    values = _sorted_profile(P.gradient, P, frame, xi, eta_per_xi, multistarts)
    return list(zip(xi.tolist(), values.tolist()))


# Adversarial sampling


@dataclass
class _Triple:
    ratio: float
    source: int
    l: int
    basis: np.ndarray
    xi_index: int
    value: float
    refined: bool = False


def _sampled_triples(
        grad_fn: GradientFn,
        polynomial: Optional[ActionPolynomial],
        source: int,
        frames_by_l: Dict[int, np.ndarray],
        xi: np.ndarray,
        bounds_by_l: Dict[int, np.ndarray],
        sampling: SamplingConfig
    ) -> List[_Triple]:
    out: List[_Triple] = []
    for l, frames in frames_by_l.items():
        values = _frame_profiles(grad_fn, polynomial, frames, xi, sampling.eta_points, sampling.multistarts)
        ratios = values / bounds_by_l[l][None, :]
        worst = np.argmin(ratios, axis=1)
        for f, idx in enumerate(worst):
            out.append(_Triple(float(ratios[f, idx]), source, l, frames[f], int(idx), float(values[f, idx])))
        logging.debug('source %d, l=%d: worst sampled ratio %.3e', source, l, float(ratios.min()))
    return out


def _refine_triple(
        grad_fn: GradientFn,
        polynomial: Optional[ActionPolynomial],
        triple: _Triple,
        xi: np.ndarray,
        bounds: np.ndarray,
        sampling: SamplingConfig
    ) -> _Triple:
    """Nelder-Mead over frames of the triple's dimension, minimising the worst ratio over xi."""
    l, n = triple.basis.shape

    def profile(vec: np.ndarray) -> Optional[np.ndarray]:
        try:
            frame = orthonormal_frame(vec.reshape(l, n))
        except ValueError:
            return None
        return _frame_profiles(grad_fn, polynomial, frame[None], xi, sampling.eta_points, sampling.multistarts)[0]

    def objective(vec: np.ndarray) -> float:
        values = profile(vec)
        return math.inf if values is None else float(np.min(values / bounds))

    res = optimize.minimize(
        objective, triple.basis.ravel(), method='Nelder-Mead',
        options={'xatol': 1e-12, 'fatol': 1e-15, 'maxiter': sampling.refine_iterations * n * l}
    )
    values = profile(res.x)
    if values is None:
        return triple
    ratios = values / bounds
    idx = int(np.argmin(ratios))
    frame = orthonormal_frame(res.x.reshape(l, n))
    return _Triple(float(ratios[idx]), triple.source, l, frame, idx, float(values[idx]), refined=True)


def _adversarial_worst(
        triples: List[_Triple],
        refine: Callable[[_Triple], _Triple],
        refine_top: int
    ) -> Tuple[_Triple, List[Dict[str, object]]]:
    order = sorted(range(len(triples)), key=lambda i: triples[i].ratio)
    best = triples[order[0]]
    log: List[Dict[str, object]] = []
    for i in order[:refine_top]:
        sampled = triples[i]
        refined = refine(sampled)
        log.append({
            'source': sampled.source,
            'l': sampled.l,
            'ratio_sampled': sampled.ratio,
            'ratio_refined': refined.ratio
        })
        if refined.ratio < best.ratio:
            best = refined
    return best, log


def perturbation_draws(
        P0: ActionPolynomial,
        rho: float,
        count: int,
        rng: np.random.Generator,
        boundary_fraction: float = 0.5
    ) -> List[ActionPolynomial]:
    """P0 followed by count - 1 draws with ||P - P0|| < rho in the coefficient-sup norm.

    The first boundary_fraction of the random draws are scaled to sup norm
    rho * (1 - 1e-9); the rest are uniform in the open box.
    """
    monomials = P0.monomials()
    draws = [P0]
    boundary = int(round(boundary_fraction * (count - 1)))
    for i in range(1, count):
        q = rng.uniform(-rho, rho, size=len(monomials))
        if i <= boundary:
            q = q / np.max(np.abs(q)) * rho * (1.0 - 1e-9)
        draws.append(P0.add(ActionPolynomial(P0.n, P0.m, dict(zip(monomials, q.tolist())))))
    return draws


def _positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f'{name} must be positive, got {value}')


def _basis_tuple(basis: np.ndarray) -> Tuple[Tuple[float, ...], ...]:
    return tuple(tuple(float(x) for x in row) for row in basis)


def stably_steep_check(
        P0: ActionPolynomial,
        rho: float,
        C: float,
        delta: float,
        sampling: Optional[SamplingConfig] = None
    ) -> SteepnessVerdict:
    """Falsification check of (rho, C, delta)-stable steepness of P0 in P2(n, m).

    For every sampled subspace dimension l in 1..n-1, perturbation P with
    ||P - P0|| < rho and radius xi in (delta/100, delta], the check requires
    maxmin_profile(P, Lambda, xi) > C xi^(m-1).
    """
    sampling = sampling or SamplingConfig()
    _positive(rho=rho, C=C, delta=delta)
    n, m = P0.n, P0.m
    constants: Dict[str, object] = {'rho': rho, 'C': C, 'delta': delta, 'm': m, 'norm': 'coefficient-sup'}
    xi = xi_grid(delta, sampling.xi_points)
    bounds = C * xi ** (m - 1)
    samples: Dict[str, object] = dict(sampling.to_dict())
    samples['xi_range'] = [float(xi[0]), float(xi[-1])]
    if n == 1:
        samples['triples_checked'] = 0
        logging.info('Stable steepness is vacuous in dimension 1')
        return SteepnessVerdict('stably-steep-poly', True, constants, None, samples, math.inf)

    rng = np.random.default_rng(sampling.seed)
    frames_by_l = {l: sample_frames(n, l, sampling.subspaces_per_dim, rng) for l in range(1, n)}
    draws = perturbation_draws(P0, rho, sampling.perturbations, rng, sampling.boundary_fraction)
    bounds_by_l = {l: bounds for l in frames_by_l}
    triples: List[_Triple] = []
    for d, P in enumerate(draws):
        triples.extend(_sampled_triples(P.gradient, P, d, frames_by_l, xi, bounds_by_l, sampling))

    def refine(triple: _Triple) -> _Triple:
        P = draws[triple.source]
        return _refine_triple(P.gradient, P, triple, xi, bounds, sampling)

    best, refined_log = _adversarial_worst(triples, refine, sampling.refine_top)
    samples['triples_checked'] = len(triples) * xi.size
    samples['refined'] = refined_log
    accepted = best.ratio > 1.0
    witness = None
    if not accepted:
        witness = SteepnessWitness(
            reason='maxmin',
            value=best.value,
            bound=float(bounds[best.xi_index]),
            xi=float(xi[best.xi_index]),
            exponent=float(m - 1),
            basis=_basis_tuple(best.basis),
            perturbation=draws[best.source],
            refined=best.refined
        )
    logging.info(
        'Stably steep check (rho=%s, C=%s, delta=%s): %s, min ratio %.3e',
        rho, C, delta, 'accepted' if accepted else 'refuted', best.ratio
    )
    return SteepnessVerdict('stably-steep-poly', accepted, constants, witness, samples, best.ratio)


def steep_function_check(
        h: Union[ActionPolynomial, FourierTaylorSeries, ActionFunction, Callable[[np.ndarray], np.ndarray]],
        points: Union[np.ndarray, Sequence[Sequence[float]]],
        kappa: float,
        C: float,
        delta: float,
        p_list: Sequence[float],
        sampling: Optional[SamplingConfig] = None,
        n: Optional[int] = None
    ) -> SteepnessVerdict:
    """Falsification check of (kappa, C, delta, (p_l))-steepness of h at sample points.

    At each point I: ||grad h(I)|| >= kappa, and for each sampled subspace
    Lambda of dimension l the projected gradient variation
    ||grad h_lambda(I + x) - grad h_lambda(I)|| must have max-min above
    C xi^(p_l) on the affine subspace I + Lambda.
    """
    sampling = sampling or SamplingConfig()
    func = as_action_function(h, n)
    dim = func.n
    if len(p_list) != dim - 1:
        raise ValueError(f'p_list needs {dim - 1} entries, got {len(p_list)}')
    _positive(kappa=kappa, C=C, delta=delta)
    for p in p_list:
        _positive(p=p)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != dim:
        raise DimensionMismatch(dim, pts.shape[1])
    constants: Dict[str, object] = {'kappa': kappa, 'C': C, 'delta': delta, 'p': [float(p) for p in p_list]}
    xi = xi_grid(delta, sampling.xi_points)
    samples: Dict[str, object] = dict(sampling.to_dict())
    samples.update(_derivative_kind(func))
    samples['points'] = int(pts.shape[0])
    samples['xi_range'] = [float(xi[0]), float(xi[-1])]

    grads = func.gradient(pts)
    norms = np.linalg.norm(grads, axis=-1)
    weakest = int(np.argmin(norms))
    if norms[weakest] < kappa:
        witness = SteepnessWitness(
            reason='gradient-norm', value=float(norms[weakest]), bound=float(kappa),
            point=tuple(pts[weakest].tolist())
        )
        logging.info('Steep function check refuted: gradient norm %.3e < kappa', norms[weakest])
        return SteepnessVerdict('steep-function', False, constants, witness, samples, float(norms[weakest] / kappa))
    if dim == 1:
        return SteepnessVerdict('steep-function', True, constants, None, samples, math.inf)

    rng = np.random.default_rng(sampling.seed)
    frames_by_l = {l: sample_frames(dim, l, sampling.subspaces_per_dim, rng) for l in range(1, dim)}
    bounds_by_l = {l: C * xi ** float(p_list[l - 1]) for l in frames_by_l}

    def variation(i: int) -> GradientFn:
        center, g0 = pts[i], grads[i]
        return lambda x: func.gradient(center + x) - g0

    triples: List[_Triple] = []
    for i in range(pts.shape[0]):
        triples.extend(_sampled_triples(variation(i), None, i, frames_by_l, xi, bounds_by_l, sampling))

    def refine(triple: _Triple) -> _Triple:
        return _refine_triple(variation(triple.source), None, triple, xi, bounds_by_l[triple.l], sampling)

    best, refined_log = _adversarial_worst(triples, refine, sampling.refine_top)
    samples['refined'] = refined_log
    accepted = best.ratio > 1.0
    witness = None
    if not accepted:
        witness = SteepnessWitness(
            reason='maxmin',
            value=best.value,
            bound=float(bounds_by_l[best.l][best.xi_index]),
            xi=float(xi[best.xi_index]),
            exponent=float(p_list[best.l - 1]),
            basis=_basis_tuple(best.basis),
            point=tuple(pts[best.source].tolist()),
            refined=best.refined
        )
    logging.info('Steep function check: %s, min ratio %.3e', 'accepted' if accepted else 'refuted', best.ratio)
    return SteepnessVerdict('steep-function', accepted, constants, witness, samples, best.ratio)


def kolmogorov_check(
        h: Union[ActionPolynomial, FourierTaylorSeries, ActionFunction, Callable[[np.ndarray], np.ndarray]],
        points: Union[np.ndarray, Sequence[Sequence[float]]],
        det_floor: float,
        n: Optional[int] = None
    ) -> SteepnessVerdict:
    """Accept iff |det Hess h(I)| >= det_floor at every sample point; the witness is the worst point."""
    func = as_action_function(h, n)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != func.n:
        raise DimensionMismatch(func.n, pts.shape[1])
    dets = np.abs(np.linalg.det(func.hessian(pts)))
    worst = int(np.argmin(dets))
    accepted = bool(np.all(dets >= det_floor))
    samples: Dict[str, object] = {'points': int(pts.shape[0])}
    samples.update(_derivative_kind(func))
    constants: Dict[str, object] = {'det_floor': det_floor, 'min_abs_det': float(dets[worst])}
    witness = None
    if not accepted:
        witness = SteepnessWitness(
            reason='hessian-det', value=float(dets[worst]), bound=float(det_floor),
            point=tuple(pts[worst].tolist())
        )
    ratio = float(dets[worst] / det_floor) if det_floor > 0 else math.inf
    logging.info('Kolmogorov check: %s, min |det| %.3e', 'accepted' if accepted else 'refuted', dets[worst])
    return SteepnessVerdict('kolmogorov', accepted, constants, witness, samples, ratio)


def verify_witness(
        verdict: SteepnessVerdict,
        h: Optional[Union[ActionPolynomial, FourierTaylorSeries, ActionFunction, Callable[[np.ndarray], np.ndarray]]] = None,
        n: Optional[int] = None
    ) -> bool:
    """Re-evaluate a refuted verdict's witness; True when the violation reproduces.

    Stably-steep witnesses carry their polynomial; steep-function and
    Kolmogorov witnesses need the checked function h.
    """
    witness = verdict.witness
    if verdict.accepted or witness is None:
        raise ValueError('an accepted verdict has no witness')
    slack = 1e-12 * max(abs(witness.bound), 1e-300)
    eta_points = int(verdict.samples.get('eta_points', 64))  # type: ignore[arg-type]
    multistarts = int(verdict.samples.get('multistarts', 8))  # type: ignore[arg-type]
    if verdict.kind == 'stably-steep-poly':
        P = witness.perturbation
        if P is None or witness.basis is None or witness.xi is None:
            raise ValueError('incomplete stably-steep witness')
        value = maxmin_profile(P, witness.basis, [witness.xi], eta_points, multistarts)[0][1]
        return value <= witness.bound + slack
    if h is None:
        raise ValueError(f'verifying a {verdict.kind} witness needs the checked function')
    func = as_action_function(h, n)
    point = np.asarray(witness.point, dtype=float)
    if witness.reason == 'hessian-det':
        return float(abs(np.linalg.det(func.hessian(point)))) < witness.bound
    if witness.reason == 'gradient-norm':
        return float(np.linalg.norm(func.gradient(point))) < witness.bound
    g0 = func.gradient(point)
    frame = orthonormal_frame(witness.basis)  # type: ignore[arg-type]
    value = _sorted_profile(
        lambda x: func.gradient(point + x) - g0, None, frame,
        np.array([witness.xi]), eta_points, multistarts
    )[0]
    return float(value) <= witness.bound + slack


# Constants and exponents


class SteepConstants(NamedTuple):
    """Steepness constants (kappa, C, delta, p)."""

    kappa: float
    C: float
    delta: float
    p: int


def steep_constants_from_taylor(varpi: float, C_prime: float, r: float, n: int) -> SteepConstants:
    """(varpi/2, C'/2, r, m0(n) - 1): steepness on B_2r from a stably steep Taylor polynomial at 0."""
    _positive(varpi=varpi, C_prime=C_prime, r=r)
    return SteepConstants(varpi / 2.0, C_prime / 2.0, r, m0(n) - 1)


def steep_constants_on_compact(
        h: Union[ActionPolynomial, FourierTaylorSeries, ActionFunction, Callable[[np.ndarray], np.ndarray]],
        points: Union[np.ndarray, Sequence[Sequence[float]]],
        C_prime: float,
        r: float,
        n: Optional[int] = None
    ) -> SteepConstants:
    """Constants on the 2r-neighbourhood of a sampled compact set; varpi = min ||grad h|| over the samples."""
    func = as_action_function(h, n)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    varpi = float(np.min(np.linalg.norm(func.gradient(pts), axis=-1)))
    if varpi <= 0:
        raise ValueError('gradient vanishes at a sample point')
    return steep_constants_from_taylor(varpi, C_prime, r, func.n)


@dataclass(frozen=True)
class NekhoroshevExponents:
    """Exponents of the Nekhoroshev estimates for a (kappa, C, r, p)-steep h.

    a = 1 + p + ... + p^(n-1); confinement c' mu^radius_exponent for
    |t| <= exp(c'' mu^-time_exponent) under mu <= min(mu0, c r^threshold_exponent).
    """

    n: int
    p: float
    beta: float
    a: float
    radius_exponent: float
    time_exponent: float
    threshold_exponent: float

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return asdict(self)


def nekhoroshev_exponents(n: int, p: float, beta: float) -> NekhoroshevExponents:
    """Fill NekhoroshevExponents; a is an int when p is integral."""
    if n < 1:
        raise ValueError(f'dimension must be >= 1, got {n}')
    if p < 1:
        raise ValueError(f'steepness index must be >= 1, got {p}')
    if beta < 1:
        raise ValueError(f'Gevrey exponent must be >= 1, got {beta}')
    if float(p).is_integer():
        p_int = int(p)
        a: float = n if p_int == 1 else (p_int ** n - 1) // (p_int - 1)
    else:
        a = (p ** n - 1.0) / (p - 1.0)
    return NekhoroshevExponents(
        n=n, p=p, beta=beta, a=a,
        radius_exponent=1.0 / (2 * n * a),
        time_exponent=1.0 / (2 * n * beta * a),
        threshold_exponent=2 * n * a
    )


def nekhoroshev_threshold(mu0: float, c: float, r: float, exponents: NekhoroshevExponents) -> float:
    """Largest admissible perturbation size min(mu0, c r^(2na))."""
    _positive(mu0=mu0, c=c, r=r)
    return min(mu0, c * r ** exponents.threshold_exponent)


class NekhoroshevBounds(NamedTuple):
    """Confinement radius c' mu^(1/2na) and log stability time c'' mu^(-1/2n beta a)."""

    confinement_radius: float
    log_time: float


def nekhoroshev_bounds(mu: float, c_prime: float, c_dprime: float, exponents: NekhoroshevExponents) -> NekhoroshevBounds:
    """Nekhoroshev confinement radius and the logarithm of the stability time."""
    _positive(mu=mu, c_prime=c_prime, c_dprime=c_dprime)
    return NekhoroshevBounds(
        c_prime * mu ** exponents.radius_exponent,
        c_dprime * mu ** (-exponents.time_exponent)
    )


def double_exp_exponent(alpha: float, tau: float, n: Optional[int] = None) -> float:
    """Doubly exponential stability exponent 1/(alpha (1 + tau)) of a Diophantine torus."""
    if alpha < 1:
        raise ValueError(f'alpha must be >= 1, got {alpha}')
    if tau < 0 or (n is not None and tau < n - 1):
        raise ValueError(f'tau must be >= n - 1, got {tau}')
    return 1.0 / (alpha * (1.0 + tau))


def kam_exponent_bound(alpha: float, n: int) -> float:
    """Exclusive upper bound 1/(alpha n) on exponents valid for a family of KAM tori."""
    if alpha < 1:
        raise ValueError(f'alpha must be >= 1, got {alpha}')
    if n < 1:
        raise ValueError(f'dimension must be >= 1, got {n}')
    return 1.0 / (alpha * n)


class StabilityTime(NamedTuple):
    """T = exp(exp(C r^-u)) stored as log log T; T is inf when not representable."""

    loglog_T: float
    log_T: float
    T: float


def stability_time_prediction(C: float, u: float, r: float) -> StabilityTime:
    """Predicted stability time exp(exp(C r^-u)) in log-log form."""
    _positive(C=C, u=u, r=r)
    loglog = C * r ** (-u)
    log_t = math.exp(loglog) if loglog < 709.0 else math.inf
    t = math.exp(log_t) if log_t < 709.0 else math.inf
    return StabilityTime(loglog, log_t, t)


# Genericity


@dataclass(frozen=True)
class GenericityTrial:
    """One random Q of a genericity scan."""

    index: int
    seed: int
    accepted: bool
    constants: Optional[Dict[str, float]]
    checks: int
    Q: ActionPolynomial

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'index': self.index,
            'seed': self.seed,
            'accepted': self.accepted,
            'constants': self.constants,
            'checks': self.checks,
            'Q': self.Q.to_dict()
        }


@dataclass(frozen=True)
class GenericityReport:
    """Acceptance fraction of base + Q over random Q."""

    n: int
    m: int
    trials: int
    accepted: int
    fraction: float
    coeff_box: float
    seed: int
    sampling: SamplingConfig
    records: List[GenericityTrial] = field(default_factory=list)
    caveat: str = GENERICITY_CAVEAT

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'n': self.n,
            'm': self.m,
            'trials': self.trials,
            'accepted': self.accepted,
            'fraction': self.fraction,
            'coeff_box': self.coeff_box,
            'seed': self.seed,
            'sampling': self.sampling.to_dict(),
            'caveat': self.caveat,
            'records': [r.to_dict() for r in self.records]
        }


def candidate_constants() -> List[Tuple[float, float, float]]:
    """(rho, C, delta) candidates, most lenient first."""
    return [(rho, C, delta) for rho in RHO_GRID for delta in DELTA_GRID for C in C_GRID]


def auto_tune_check(
        P0: ActionPolynomial,
        sampling: SamplingConfig
    ) -> Tuple[SteepnessVerdict, int]:
    """Verdict of the first candidate triple that passes, else the most lenient refutation.

    A refuted triple's witness also refutes every triple with larger rho, C
    and delta, so those are skipped. Returns the verdict and the number of
    checks run.
    """
    failed: List[Tuple[float, float, float]] = []
    first_refuted: Optional[SteepnessVerdict] = None
    checks = 0
    for rho, C, delta in candidate_constants():
        if any(rho >= fr and C >= fc and delta >= fd for fr, fc, fd in failed):
            continue
        verdict = stably_steep_check(P0, rho, C, delta, sampling)
        checks += 1
        if verdict.accepted:
            return verdict, checks
        first_refuted = first_refuted or verdict
        failed.append((rho, C, delta))
    assert first_refuted is not None
    return first_refuted, checks


def _genericity_trial(task: Tuple[int, int, ActionPolynomial, float, SamplingConfig]) -> GenericityTrial:
    index, seed, base, box, sampling = task
    rng = np.random.default_rng(seed)
    Q = ActionPolynomial.random(base.n, base.m, box, rng)
    trial_sampling = replace(sampling, seed=int(rng.integers(0, 2 ** 63 - 1)))
    verdict, checks = auto_tune_check(base.add(Q), trial_sampling)
    constants = None
    if verdict.accepted:
        constants = {k: float(verdict.constants[k]) for k in ('rho', 'C', 'delta')}  # type: ignore[arg-type]
    logging.debug('genericity trial %d: %s after %d checks', index, 'accepted' if verdict.accepted else 'refuted', checks)
    return GenericityTrial(index, seed, verdict.accepted, constants, checks, Q)


def genericity_scan(
        base: Optional[ActionPolynomial],
        n: int,
        m: int,
        trials: int,
        coeff_box: float,
        sampling: Optional[SamplingConfig] = None,
        seed: int = 0,
        workers: int = 1
    ) -> GenericityReport:
    """Monte Carlo acceptance fraction of stable steepness of base + Q, Q uniform in the coefficient box.

    Args:
        base: Fixed part in P2(n, m), or None for zero
        n: Dimension
        m: Degree, m0(n) recommended
        trials: Number of random Q, at least 1
        coeff_box: Q coefficients are uniform in [-coeff_box, coeff_box]
        sampling: Per-check sampling (default SCAN_SAMPLING)
        seed: Master seed; trial seeds are spawned from it
        workers: Worker processes

    Returns:
        GenericityReport: Fraction, per-trial records and the falsification caveat
    """
    if trials < 1:
        raise ValueError(f'trials must be >= 1, got {trials}')
    _positive(coeff_box=coeff_box)
    sampling = sampling or SCAN_SAMPLING
    base_poly = ActionPolynomial.zero(n, m) if base is None else base.with_degree(m)
    if base_poly.n != n:
        raise DimensionMismatch(n, base_poly.n)
    if m < m0(n):
        logging.warning('degree %d is below the steepness threshold degree %d', m, m0(n))
    seeds = spawn_seeds(seed, trials)
    tasks = [(i, s, base_poly, coeff_box, sampling) for i, s in enumerate(seeds)]
    records = run_tasks(_genericity_trial, tasks, workers)
    accepted = sum(1 for r in records if r.accepted)
    fraction = accepted / trials
    logging.info('Genericity scan: %d/%d accepted (%.3f)', accepted, trials, fraction)
    return GenericityReport(n, m, trials, accepted, fraction, coeff_box, seed, sampling, records)
