"""
Truncated Fourier-Taylor series and action polynomials.

A series represents H(theta, I) = sum c_{k,l} exp(i k.theta) I^l with 2*pi-periodic
angles. Coefficients live in a dense complex array indexed by (k + K_max, l) and
masked to the l1 balls |k| <= K_max, |l| <= M_max; `coeffs` exposes the nonzero
entries as a sparse map in the order (|l|, |k|, l, k).
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import signal

from .errors import BudgetExceeded, DimensionMismatch

Index = Tuple[int, ...]

_EPS = float(np.finfo(float).eps)


class MultiIndexPair(NamedTuple):
    """Fourier index k and Taylor index l of one coefficient."""

    k: Index
    l: Index

    @property
    def fourier_weight(self) -> int:
        """|k| = |k_1| + ... + |k_n|."""
        return sum(abs(x) for x in self.k)

    @property
    def taylor_weight(self) -> int:
        """|l| = l_1 + ... + l_n."""
        return sum(self.l)


def canonical_k(k: Iterable[int]) -> Index:
    """Return k or -k, whichever has its first nonzero entry positive."""
    k = tuple(int(x) for x in k)
    for x in k:
        if x != 0:
            return k if x > 0 else tuple(-y for y in k)
    return k


def l1_indices(n: int, radius: int, signed: bool) -> List[Index]:
    """All integer vectors of length n with l1 norm <= radius.

    Signed vectors range over Z^n, unsigned ones over N^n. The order is by norm,
    then lexicographic.
    """
    values = range(-radius, radius + 1) if signed else range(0, radius + 1)
    out = [v for v in itertools.product(values, repeat=n) if sum(abs(x) for x in v) <= radius]
    out.sort(key=lambda v: (sum(abs(x) for x in v), v))
    return out


@lru_cache(maxsize=64)
def _mask(n: int, k_max: int, m_max: int) -> np.ndarray:
    grids = np.indices((2 * k_max + 1,) * n + (m_max + 1,) * n)
    k_norm = sum(np.abs(grids[j] - k_max) for j in range(n))
    l_norm = sum(grids[n + j] for j in range(n))
    mask = (k_norm <= k_max) & (l_norm <= m_max)
    mask.flags.writeable = False
    return mask


@lru_cache(maxsize=64)
def _k_grid(n: int, k_max: int, m_max: int, axis: int) -> np.ndarray:
    shape = [1] * (2 * n)
    shape[axis] = 2 * k_max + 1
    grid = (np.arange(2 * k_max + 1) - k_max).reshape(shape).astype(float)
    grid.flags.writeable = False
    return grid


def _realify(data: np.ndarray, n: int) -> np.ndarray:
    """Impose c(-k, l) = conj(c(k, l)) by symmetric averaging."""
    flipped = data[(slice(None, None, -1),) * n]
    return 0.5 * (data + np.conj(flipped))


def _resize(data: np.ndarray, n: int, k_from: int, m_from: int, k_to: int, m_to: int) -> np.ndarray:
    """Embed or crop a coefficient array into new truncation radii."""
    out = np.zeros((2 * k_to + 1,) * n + (m_to + 1,) * n, dtype=complex)
    src = []
    dst = []
    for _ in range(n):
        lo = max(k_from - k_to, 0)
        src.append(slice(lo, 2 * k_from + 1 - lo))
        lo_dst = max(k_to - k_from, 0)
        dst.append(slice(lo_dst, 2 * k_to + 1 - lo_dst))
    for _ in range(n):
        top = min(m_from, m_to) + 1
        src.append(slice(0, top))
        dst.append(slice(0, top))
    out[tuple(dst)] = data[tuple(src)]
    return out


class SeriesEvaluator:
    """Vectorised evaluation of a series and its gradients at batches of points.

    Points are arrays of shape (..., n); angles are in radians.
    """

    def __init__(self, ks: np.ndarray, ls: np.ndarray, cs: np.ndarray) -> None:
        self.ks = ks.astype(float)
        self.ls = ls.astype(float)
        self.cs = cs
        self.n = ks.shape[1] if ks.ndim == 2 else 0

    def _phase_mono(self, theta: np.ndarray, actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        phase = np.exp(1j * (theta @ self.ks.T))
        mono = np.prod(actions[..., None, :] ** self.ls, axis=-1)
        return phase, mono

    def value(self, theta: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """H at the given points."""
        theta = np.asarray(theta, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if self.cs.size == 0:
            return np.zeros(actions.shape[:-1])
        phase, mono = self._phase_mono(theta, actions)
        return np.real((phase * mono) @ self.cs)

    def grad_theta(self, theta: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """dH/dtheta at the given points."""
        theta = np.asarray(theta, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if self.cs.size == 0:
            return np.zeros(actions.shape)
        phase, mono = self._phase_mono(theta, actions)
        weights = (phase * mono) * self.cs
        return np.real(1j * (weights @ self.ks))

    def grad_action(self, theta: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """dH/dI at the given points."""
        theta = np.asarray(theta, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if self.cs.size == 0:
            return np.zeros(actions.shape)
        phase = np.exp(1j * (theta @ self.ks.T))
        out = np.empty(actions.shape)
        for j in range(actions.shape[-1]):
            lowered = self.ls.copy()
            lowered[:, j] = np.maximum(lowered[:, j] - 1.0, 0.0)
            mono = np.prod(actions[..., None, :] ** lowered, axis=-1)
            out[..., j] = np.real((phase * mono) @ (self.cs * self.ls[:, j]))
        return out


class FourierTaylorSeries:
    """Immutable truncated Fourier-Taylor series in n angles and n actions.

    Args:
        n: Dimension
        k_max: Fourier truncation radius (l1)
        m_max: Taylor truncation (total degree in I)
        data: Optional coefficient array of shape (2K+1,)*n + (M+1,)*n
    """

    __slots__ = ('n', 'k_max', 'm_max', '_data', '_evaluator')

    def __init__(self, n: int, k_max: int, m_max: int, data: Optional[np.ndarray] = None) -> None:
        if n < 1:
            raise ValueError(f'dimension must be >= 1, got {n}')
        if k_max < 0 or m_max < 0:
            raise ValueError(f'truncation radii must be >= 0, got K={k_max}, M={m_max}')
        shape = (2 * k_max + 1,) * n + (m_max + 1,) * n
        if data is None:
            arr = np.zeros(shape, dtype=complex)
        else:
            arr = np.asarray(data, dtype=complex)
            if arr.shape != shape:
                raise ValueError(f'coefficient array shape {arr.shape} != {shape}')
            arr = _realify(arr, n) * _mask(n, k_max, m_max)
        arr.flags.writeable = False
        self.n = n
        self.k_max = k_max
        self.m_max = m_max
        self._data = arr
        self._evaluator: Optional[SeriesEvaluator] = None

    # construction

    @classmethod
    def zero(cls, n: int, k_max: int = 0, m_max: int = 0) -> 'FourierTaylorSeries':
        """The zero series."""
        return cls(n, k_max, m_max)

    @classmethod
    def from_terms(
            cls,
            n: int,
            terms: Iterable[Tuple[Iterable[int], Iterable[int], complex]],
            k_max: Optional[int] = None,
            m_max: Optional[int] = None,
            reality_tol: float = 1e-12
        ) -> 'FourierTaylorSeries':
        """Build a series from exponential-basis terms (k, l, c).

        Repeated indices accumulate. Raises ValueError when the terms do not
        describe a real function (within reality_tol relative).
        """
        items = [(tuple(int(x) for x in k), tuple(int(x) for x in l), complex(c)) for k, l, c in terms]
        for k, l, _ in items:
            if len(k) != n or len(l) != n:
                raise DimensionMismatch(n, len(k) if len(k) != n else len(l))
            if any(x < 0 for x in l):
                raise ValueError(f'Taylor index must be nonnegative, got {list(l)}')
        need_k = max([sum(abs(x) for x in k) for k, _, _ in items], default=0)
        need_m = max([sum(l) for _, l, _ in items], default=0)
        k_max = need_k if k_max is None else k_max
        m_max = need_m if m_max is None else m_max
        if need_k > k_max or need_m > m_max:
            raise BudgetExceeded(
                f'terms need K={need_k}, M={need_m} but truncation is K={k_max}, M={m_max}'
            )
        arr = np.zeros((2 * k_max + 1,) * n + (m_max + 1,) * n, dtype=complex)
        for k, l, c in items:
            arr[tuple(x + k_max for x in k) + l] += c
        defect = np.max(np.abs(arr - np.conj(arr[(slice(None, None, -1),) * n])), initial=0.0)
        scale = max(np.max(np.abs(arr), initial=0.0), 1.0)
        if defect > reality_tol * scale:
            raise ValueError(f'terms do not define a real function (defect {defect:.3e})')
        return cls(n, k_max, m_max, arr)

    @classmethod
    def trig(
            cls,
            n: int,
            k: Iterable[int],
            l: Optional[Iterable[int]] = None,
            cos: float = 0.0,
            sin: float = 0.0
        ) -> 'FourierTaylorSeries':
        """The real term (cos * cos(k.theta) + sin * sin(k.theta)) * I^l."""
        k = tuple(int(x) for x in k)
        l = tuple(int(x) for x in l) if l is not None else (0,) * n
        if not any(k):
            return cls.from_terms(n, [(k, l, cos)])
        neg = tuple(-x for x in k)
        return cls.from_terms(n, [(k, l, complex(cos, -sin) / 2), (neg, l, complex(cos, sin) / 2)])

    @classmethod
    def monomial(cls, n: int, l: Iterable[int], coeff: float) -> 'FourierTaylorSeries':
        """coeff * I^l."""
        return cls.from_terms(n, [((0,) * n, tuple(l), coeff)])

    @classmethod
    def constant(cls, n: int, value: float) -> 'FourierTaylorSeries':
        """A constant function."""
        return cls.from_terms(n, [((0,) * n, (0,) * n, value)])

    @classmethod
    def linear_action(cls, omega: Iterable[float]) -> 'FourierTaylorSeries':
        """omega . I."""
        omega = [float(w) for w in omega]
        n = len(omega)
        unit = [tuple(1 if i == j else 0 for i in range(n)) for j in range(n)]
        return cls.from_terms(n, [((0,) * n, unit[j], omega[j]) for j in range(n)], m_max=1)

    # access

    @property
    def data(self) -> np.ndarray:
        """Read-only dense coefficient array."""
        return self._data

    def coeff(self, k: Iterable[int], l: Iterable[int]) -> complex:
        """Coefficient of exp(i k.theta) I^l; zero outside the truncation."""
        k = tuple(k)
        l = tuple(l)
        if sum(abs(x) for x in k) > self.k_max or sum(l) > self.m_max or any(x < 0 for x in l):
            return 0j
        return complex(self._data[tuple(x + self.k_max for x in k) + l])

    @property
    def coeffs(self) -> Dict[MultiIndexPair, complex]:
        """Nonzero coefficients as a sparse map in deterministic order."""
        out: Dict[MultiIndexPair, complex] = {}
        for pos in zip(*np.nonzero(self._data)):
            k = tuple(int(x) - self.k_max for x in pos[:self.n])
            l = tuple(int(x) for x in pos[self.n:])
            out[MultiIndexPair(k, l)] = complex(self._data[pos])
        return dict(sorted(out.items(), key=lambda kv: (kv[0].taylor_weight, kv[0].fourier_weight, kv[0].l, kv[0].k)))

    def max_abs(self) -> float:
        """Largest coefficient magnitude."""
        return float(np.max(np.abs(self._data), initial=0.0))

    def is_zero(self, tol: float = 0.0) -> bool:
        """True when every coefficient is at most tol in magnitude."""
        return self.max_abs() <= tol

    def reality_defect(self) -> float:
        """max |c(-k,l) - conj c(k,l)| over the table."""
        flipped = self._data[(slice(None, None, -1),) * self.n]
        return float(np.max(np.abs(self._data - np.conj(flipped)), initial=0.0))

    # structural operations

    def resized(self, k_max: int, m_max: int) -> 'FourierTaylorSeries':
        """Same function re-truncated to (k_max, m_max); terms outside are dropped."""
        data = _resize(self._data, self.n, self.k_max, self.m_max, k_max, m_max)
        return FourierTaylorSeries(self.n, k_max, m_max, data)

    def _order_weights(self) -> np.ndarray:
        grids = np.indices(self._data.shape)
        return sum(grids[self.n + j] for j in range(self.n))

    def _fourier_zero(self) -> np.ndarray:
        grids = np.indices(self._data.shape)
        return np.all([grids[j] == self.k_max for j in range(self.n)], axis=0)

    def angle_average(self) -> 'FourierTaylorSeries':
        """The k = 0 part."""
        return FourierTaylorSeries(self.n, self.k_max, self.m_max, self._data * self._fourier_zero())

    def oscillating_part(self) -> 'FourierTaylorSeries':
        """The k != 0 part."""
        return FourierTaylorSeries(self.n, self.k_max, self.m_max, self._data * ~self._fourier_zero())

    def order_part(self, order: int) -> 'FourierTaylorSeries':
        """Terms with |l| == order."""
        return FourierTaylorSeries(self.n, self.k_max, self.m_max, self._data * (self._order_weights() == order))

    def up_to_order(self, order: int) -> 'FourierTaylorSeries':
        """Terms with |l| <= order."""
        return FourierTaylorSeries(self.n, self.k_max, self.m_max, self._data * (self._order_weights() <= order))

    def max_abs_by_order(self, oscillating_only: bool = True) -> Dict[int, float]:
        """Largest coefficient magnitude per Taylor order."""
        data = self._data * ~self._fourier_zero() if oscillating_only else self._data
        weights = self._order_weights()
        return {
            j: float(np.max(np.abs(data[weights == j]), initial=0.0))
            for j in range(self.m_max + 1)
        }

    def scale(self, factor: float) -> 'FourierTaylorSeries':
        """factor * self."""
        return FourierTaylorSeries(self.n, self.k_max, self.m_max, self._data * factor)

    def d_theta(self, j: int) -> 'FourierTaylorSeries':
        """Partial derivative in theta_j."""
        grid = _k_grid(self.n, self.k_max, self.m_max, j)
        return FourierTaylorSeries(self.n, self.k_max, self.m_max, self._data * (1j * grid))

    def d_action(self, j: int) -> 'FourierTaylorSeries':
        """Partial derivative in I_j."""
        axis = self.n + j
        out = np.zeros_like(self._data)
        src = [slice(None)] * (2 * self.n)
        dst = [slice(None)] * (2 * self.n)
        src[axis] = slice(1, None)
        dst[axis] = slice(0, -1)
        shape = [1] * (2 * self.n)
        shape[axis] = self.m_max
        factors = np.arange(1, self.m_max + 1, dtype=float).reshape(shape)
        out[tuple(dst)] = self._data[tuple(src)] * factors
        return FourierTaylorSeries(self.n, self.k_max, self.m_max, out)

    # evaluation

    def evaluator(self) -> SeriesEvaluator:
        """Cached vectorised evaluator over the nonzero terms."""
        if self._evaluator is None:
            pos = np.nonzero(self._data)
            ks = np.stack([pos[j] - self.k_max for j in range(self.n)], axis=-1) if pos[0].size else np.zeros((0, self.n))
            ls = np.stack([pos[self.n + j] for j in range(self.n)], axis=-1) if pos[0].size else np.zeros((0, self.n))
            self._evaluator = SeriesEvaluator(np.asarray(ks), np.asarray(ls), self._data[pos].copy())
        return self._evaluator

    def evaluate(self, theta: Iterable[float], actions: Iterable[float]) -> float:
        """Value at one point (angles in radians)."""
        value = self.evaluator().value(np.asarray(theta, dtype=float), np.asarray(actions, dtype=float))
        return float(value)

    def is_decomposable(self) -> bool:
        """True when H = h(I) + f(theta): every k != 0 term has l = 0."""
        osc = self._data * ~self._fourier_zero()
        return not np.any(osc[self._order_weights() > 0])

    # serialization

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict; each +-k pair is written once as cosine/sine amplitudes."""
        terms = []
        for idx, c in self.coeffs.items():
            k = idx.k
            if canonical_k(k) != k:
                continue
            if any(k):
                re, im = 2.0 * c.real, -2.0 * c.imag
            else:
                re, im = c.real, 0.0
            terms.append({'k': list(k), 'l': list(idx.l), 're': re, 'im': im})
        return {'n': self.n, 'k_max': self.k_max, 'm_max': self.m_max, 'terms': terms}

    @classmethod
    def from_dict(cls, payload: Mapping[str, object]) -> 'FourierTaylorSeries':
        """Inverse of to_dict; k_max/m_max default to the smallest radii that fit."""
        n = int(payload['n'])  # type: ignore[arg-type]
        raw_terms = payload.get('terms', [])
        items: List[Tuple[Index, Index, complex]] = []
        for term in raw_terms:  # type: ignore[union-attr]
            k = tuple(int(x) for x in term.get('k', [0] * n))
            l = tuple(int(x) for x in term['l'])
            re = float(term.get('re', 0.0))
            im = float(term.get('im', 0.0))
            if any(k):
                neg = tuple(-x for x in k)
                items.append((k, l, complex(re, -im) / 2))
                items.append((neg, l, complex(re, im) / 2))
            else:
                items.append((k, l, complex(re, 0.0)))
        k_max = payload.get('k_max')
        m_max = payload.get('m_max')
        return cls.from_terms(
            n, items,
            k_max=int(k_max) if k_max is not None else None,  # type: ignore[arg-type]
            m_max=int(m_max) if m_max is not None else None  # type: ignore[arg-type]
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FourierTaylorSeries):
            return NotImplemented
        if self.n != other.n:
            return False
        k = max(self.k_max, other.k_max)
        m = max(self.m_max, other.m_max)
        return bool(np.array_equal(self.resized(k, m).data, other.resized(k, m).data))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f'FourierTaylorSeries(n={self.n}, K={self.k_max}, M={self.m_max}, terms={len(self.coeffs)})'


def _check_dims(a: FourierTaylorSeries, b: FourierTaylorSeries) -> None:
    if a.n != b.n:
        raise DimensionMismatch(a.n, b.n)


def series_add(a: FourierTaylorSeries, b: FourierTaylorSeries) -> FourierTaylorSeries:
    """Pointwise sum; the result carries the larger truncation radii."""
    _check_dims(a, b)
    k = max(a.k_max, b.k_max)
    m = max(a.m_max, b.m_max)
    data = a.resized(k, m).data + b.resized(k, m).data
    return FourierTaylorSeries(a.n, k, m, data)


def series_sub(a: FourierTaylorSeries, b: FourierTaylorSeries) -> FourierTaylorSeries:
    """a - b."""
    return series_add(a, b.scale(-1.0))


def _convolve(a: FourierTaylorSeries, b: FourierTaylorSeries, k_out: int, m_out: int) -> np.ndarray:
    """Cauchy product of coefficient tables, truncated to (k_out, m_out), unmasked."""
    n = a.n
    m_a = min(a.m_max, m_out)
    m_b = min(b.m_max, m_out)
    left = a.data[(slice(None),) * n + (slice(0, m_a + 1),) * n]
    right = b.data[(slice(None),) * n + (slice(0, m_b + 1),) * n]
    if not left.any() or not right.any():
        return np.zeros((2 * k_out + 1,) * n + (m_out + 1,) * n, dtype=complex)
    full = signal.convolve(left, right, mode='full', method='auto')
    return _resize(full, n, a.k_max + b.k_max, m_a + m_b, k_out, m_out)


def series_mul(a: FourierTaylorSeries, b: FourierTaylorSeries, k_out: int, m_out: int) -> FourierTaylorSeries:
    """Product a*b truncated to |k| <= k_out, |l| <= m_out."""
    _check_dims(a, b)
    return FourierTaylorSeries(a.n, k_out, m_out, _convolve(a, b, k_out, m_out))


def _half_bracket(a: FourierTaylorSeries, b: FourierTaylorSeries, k_out: int, m_out: int) -> np.ndarray:
    """sum_j d_theta_j a * d_I_j b, unmasked."""
    total = np.zeros((2 * k_out + 1,) * a.n + (m_out + 1,) * a.n, dtype=complex)
    for j in range(a.n):
        total = total + _convolve(a.d_theta(j), b.d_action(j), k_out, m_out)
    return total


def poisson_bracket(a: FourierTaylorSeries, b: FourierTaylorSeries, k_out: int, m_out: int) -> FourierTaylorSeries:
    """{a, b} = d_theta a . d_I b - d_I a . d_theta b, truncated to (k_out, m_out).

    Both halves are computed by the same routine, so {b, a} == -{a, b} and
    {a, a} == 0 hold exactly.
    """
    _check_dims(a, b)
    data = _half_bracket(a, b, k_out, m_out) - _half_bracket(b, a, k_out, m_out)
    return FourierTaylorSeries(a.n, k_out, m_out, data)


def _multi_factorial(index: Iterable[int]) -> float:
    return float(np.prod([math.factorial(int(x)) for x in index]))


@dataclass(frozen=True)
class ActionPolynomial:
    """Real polynomial in I of degrees 2..m (an element of P2(n, m)).

    Args:
        n: Dimension
        m: Maximal degree
        coeffs: Map from Taylor index l (2 <= |l| <= m) to the coefficient of I^l
    """

    n: int
    m: int
    coeffs: Mapping[Index, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f'dimension must be >= 1, got {self.n}')
        clean: Dict[Index, float] = {}
        for l, c in self.coeffs.items():
            l = tuple(int(x) for x in l)
            if len(l) != self.n:
                raise DimensionMismatch(self.n, len(l))
            if any(x < 0 for x in l) or not 2 <= sum(l) <= self.m:
                raise ValueError(f'Taylor index {list(l)} outside degrees 2..{self.m}')
            if c != 0.0:
                clean[l] = clean.get(l, 0.0) + float(c)
        ordered = dict(sorted(clean.items(), key=lambda kv: (sum(kv[0]), kv[0])))
        object.__setattr__(self, 'coeffs', ordered)

    @classmethod
    def zero(cls, n: int, m: int) -> 'ActionPolynomial':
        """The zero polynomial of P2(n, m)."""
        return cls(n, m, {})

    @classmethod
    def from_series(cls, series: FourierTaylorSeries, m: Optional[int] = None) -> 'ActionPolynomial':
        """Angle average of a series, restricted to degrees 2..m."""
        m = series.m_max if m is None else m
        coeffs = {
            idx.l: c.real for idx, c in series.coeffs.items()
            if not any(idx.k) and 2 <= idx.taylor_weight <= m
        }
        return cls(series.n, m, coeffs)

    @classmethod
    def random(cls, n: int, m: int, box: float, rng: np.random.Generator) -> 'ActionPolynomial':
        """Coefficients drawn uniformly from [-box, box] for every monomial of P2(n, m)."""
        monomials = [l for l in l1_indices(n, m, signed=False) if sum(l) >= 2]
        values = rng.uniform(-box, box, size=len(monomials))
        return cls(n, m, dict(zip(monomials, values.tolist())))

    def monomials(self) -> List[Index]:
        """Every monomial of P2(n, m) in canonical order."""
        return [l for l in l1_indices(self.n, self.m, signed=False) if sum(l) >= 2]

    def to_series(self, k_max: int = 0) -> FourierTaylorSeries:
        """The polynomial as an angle-independent series."""
        zero_k = (0,) * self.n
        return FourierTaylorSeries.from_terms(
            self.n, [(zero_k, l, c) for l, c in self.coeffs.items()], k_max=k_max, m_max=self.m
        )

    def _arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.coeffs:
            return np.zeros((0, self.n)), np.zeros(0)
        ls = np.array(list(self.coeffs.keys()), dtype=float)
        cs = np.array(list(self.coeffs.values()), dtype=float)
        return ls, cs

    def value(self, x: Union[np.ndarray, Iterable[float]]) -> np.ndarray:
        """P at points of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        ls, cs = self._arrays()
        if cs.size == 0:
            return np.zeros(x.shape[:-1])
        return np.prod(x[..., None, :] ** ls, axis=-1) @ cs

    def gradient(self, x: Union[np.ndarray, Iterable[float]]) -> np.ndarray:
        """grad P at points of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        ls, cs = self._arrays()
        out = np.zeros(x.shape)
        if cs.size == 0:
            return out
        for j in range(self.n):
            lowered = ls.copy()
            lowered[:, j] = np.maximum(lowered[:, j] - 1.0, 0.0)
            out[..., j] = np.prod(x[..., None, :] ** lowered, axis=-1) @ (cs * ls[:, j])
        return out

    def hessian(self, x: Union[np.ndarray, Iterable[float]]) -> np.ndarray:
        """Hessian of P at points of shape (..., n), returned as (..., n, n)."""
        x = np.asarray(x, dtype=float)
        ls, cs = self._arrays()
        out = np.zeros(x.shape + (self.n,))
        if cs.size == 0:
            return out
        for i in range(self.n):
            for j in range(i, self.n):
                lowered = ls.copy()
                if i == j:
                    factor = ls[:, i] * (ls[:, i] - 1.0)
                    lowered[:, i] = np.maximum(lowered[:, i] - 2.0, 0.0)
                else:
                    factor = ls[:, i] * ls[:, j]
                    lowered[:, i] = np.maximum(lowered[:, i] - 1.0, 0.0)
                    lowered[:, j] = np.maximum(lowered[:, j] - 1.0, 0.0)
                val = np.prod(x[..., None, :] ** lowered, axis=-1) @ (cs * factor)
                out[..., i, j] = val
                out[..., j, i] = val
        return out

    def coefficient_sup_norm(self) -> float:
        """max |coefficient|, the norm used for stable-steepness balls."""
        return max((abs(c) for c in self.coeffs.values()), default=0.0)

    def add(self, other: 'ActionPolynomial') -> 'ActionPolynomial':
        """Sum in P2(n, max(m, m'))."""
        if self.n != other.n:
            raise DimensionMismatch(self.n, other.n)
        coeffs = dict(self.coeffs)
        for l, c in other.coeffs.items():
            coeffs[l] = coeffs.get(l, 0.0) + c
        return ActionPolynomial(self.n, max(self.m, other.m), coeffs)

    def sub(self, other: 'ActionPolynomial') -> 'ActionPolynomial':
        """Difference in P2(n, max(m, m'))."""
        return self.add(other.scale(-1.0))

    def scale(self, factor: float) -> 'ActionPolynomial':
        """factor * P."""
        return ActionPolynomial(self.n, self.m, {l: c * factor for l, c in self.coeffs.items()})

    def truncate(self, m: int) -> 'ActionPolynomial':
        """Degrees 2..m only."""
        return ActionPolynomial(self.n, m, {l: c for l, c in self.coeffs.items() if sum(l) <= m})

    def with_degree(self, m: int) -> 'ActionPolynomial':
        """Same polynomial viewed in P2(n, m) for m >= current degree."""
        if any(sum(l) > m for l in self.coeffs):
            raise ValueError(f'polynomial has terms above degree {m}')
        return ActionPolynomial(self.n, m, self.coeffs)

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'n': self.n,
            'm': self.m,
            'terms': [{'l': list(l), 're': c} for l, c in self.coeffs.items()]
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, object]) -> 'ActionPolynomial':
        """Inverse of to_dict; m defaults to the largest degree present."""
        n = int(payload['n'])  # type: ignore[arg-type]
        terms = payload.get('terms', [])
        coeffs = {tuple(int(x) for x in t['l']): float(t['re']) for t in terms}  # type: ignore[union-attr]
        m = payload.get('m')
        m = int(m) if m is not None else max((sum(l) for l in coeffs), default=2)  # type: ignore[arg-type]
        return cls(n, m, coeffs)


@dataclass(frozen=True)
class TaylorResult:
    """A Taylor polynomial with the finite-difference steps used per degree (empty when exact)."""

    polynomial: ActionPolynomial
    steps: Dict[int, float]
    exact: bool


def _taylor_from_series(h: FourierTaylorSeries, center: np.ndarray, m: int) -> ActionPolynomial:
    averaged = h.angle_average()
    coeffs: Dict[Index, float] = {}
    for idx, c in averaged.coeffs.items():
        l = idx.l
        ranges = [range(x + 1) for x in l]
        for a in itertools.product(*ranges):
            if not 2 <= sum(a) <= m:
                continue
            factor = c.real
            for j in range(h.n):
                factor *= math.comb(l[j], a[j]) * center[j] ** (l[j] - a[j])
            coeffs[a] = coeffs.get(a, 0.0) + factor
    return ActionPolynomial(h.n, m, coeffs)


def _taylor_from_callable(
        h: Callable[[np.ndarray], float],
        center: np.ndarray,
        m: int
    ) -> Tuple[ActionPolynomial, Dict[int, float]]:
    n = center.size
    scale = 1.0 + float(np.linalg.norm(center))
    steps = {p: _EPS ** (1.0 / (p + 2)) * scale for p in range(2, m + 1)}
    coeffs: Dict[Index, float] = {}
    for a in l1_indices(n, m, signed=False):
        p = sum(a)
        if p < 2:
            continue
        step = steps[p]
        total = 0.0
        for s in itertools.product(*[range(x + 1) for x in a]):
            weight = 1.0
            offset = np.empty(n)
            for j in range(n):
                weight *= (-1) ** s[j] * math.comb(a[j], s[j])
                offset[j] = (a[j] / 2.0 - s[j]) * step
            total += weight * float(h(center + offset))
        coeffs[a] = total / step ** p / _multi_factorial(a)
    return ActionPolynomial(n, m, coeffs), steps


def taylor_expansion(
        h: Union[FourierTaylorSeries, Callable[[np.ndarray], float]],
        center: Iterable[float],
        m: int,
        radius: Optional[float] = None
    ) -> TaylorResult:
    """Taylor polynomial T_center^m h without constant and linear terms.

    Series are expanded exactly after averaging out the angles; callables are
    differentiated by central finite differences and the step per degree is
    reported.

    Args:
        h: A series or a scalar function of the actions
        center: Expansion point I0
        m: Degree, at least 2
        radius: Optional domain radius; the center must satisfy ||I0|| <= radius

    Returns:
        TaylorResult: Polynomial, steps and exactness flag
    """
    if m < 2:
        raise ValueError(f'Taylor degree must be >= 2, got {m}')
    center_arr = np.asarray(list(center), dtype=float)
    if radius is not None and float(np.linalg.norm(center_arr)) > radius:
        raise ValueError(f'center {center_arr.tolist()} outside domain of radius {radius}')
    if isinstance(h, FourierTaylorSeries):
        if center_arr.size != h.n:
            raise DimensionMismatch(h.n, center_arr.size)
        return TaylorResult(_taylor_from_series(h, center_arr, m), {}, True)
    poly, steps = _taylor_from_callable(h, center_arr, m)
    logging.debug('Finite-difference Taylor expansion with steps %s', steps)
    return TaylorResult(poly, steps, False)


def taylor_polynomial(
        h: Union[FourierTaylorSeries, Callable[[np.ndarray], float]],
        center: Iterable[float],
        m: int,
        radius: Optional[float] = None
    ) -> ActionPolynomial:
    """T_center^m h as an element of P2(n, m); see taylor_expansion."""
    return taylor_expansion(h, center, m, radius).polynomial


@dataclass(frozen=True)
class GevreyNormEstimate:
    """Sampled lower bound of the (alpha, beta, L1, L2) Gevrey norm."""

    alpha: float
    beta: float
    L1: float
    L2: float
    value: float
    orders_checked: Tuple[int, int]
    radius: float
    argmax_orders: Tuple[Index, Index]


def gevrey_norm_estimate(
        f: FourierTaylorSeries,
        alpha: float,
        beta: float,
        L1: float,
        L2: float,
        radius: float = 1.0,
        orders: Optional[Tuple[int, int]] = None,
        angle_points: Optional[int] = None,
        action_points: int = 5
    ) -> GevreyNormEstimate:
    """Estimate sup |d_theta^a d_I^b f| L1^-|a| L2^-|b| a!^-alpha b!^-beta.

    The sup runs over derivative orders |a| <= K, |b| <= M and over a grid of
    T^n x {||I|| <= radius}; every inspected value is attained, so the result is
    a lower bound of the true norm and grows with the inspected orders.
    """
    if alpha < 1 or beta < 1:
        raise ValueError(f'Gevrey exponents must be >= 1, got alpha={alpha}, beta={beta}')
    if L1 < 1 or L2 < 1:
        raise ValueError(f'Gevrey scales must be >= 1, got L1={L1}, L2={L2}')
    if radius <= 0:
        raise ValueError(f'radius must be positive, got {radius}')
    k_chk, m_chk = orders if orders is not None else (f.k_max, f.m_max)
    n = f.n
    if angle_points is None:
        angle_points = max(4, int(round(4096 ** (1.0 / n))))
    evaluator = f.evaluator()
    if evaluator.cs.size == 0:
        return GevreyNormEstimate(alpha, beta, L1, L2, 0.0, (k_chk, m_chk), radius, ((0,) * n, (0,) * n))

    angles = np.linspace(0.0, 2 * np.pi, angle_points, endpoint=False)
    theta = np.array(list(itertools.product(angles, repeat=n)))
    axis = np.linspace(-radius, radius, action_points)
    actions = np.array([p for p in itertools.product(axis, repeat=n) if np.linalg.norm(p) <= radius + 1e-12])
    if not any(np.allclose(p, 0.0) for p in actions):
        actions = np.vstack([actions, np.zeros(n)])
    th = np.repeat(theta, len(actions), axis=0)
    ac = np.tile(actions, (len(theta), 1))
    phase = np.exp(1j * (th @ evaluator.ks.T))

    best = 0.0
    best_orders: Tuple[Index, Index] = ((0,) * n, (0,) * n)
    for b in l1_indices(n, m_chk, signed=False):
        b_arr = np.array(b, dtype=float)
        valid = np.all(evaluator.ls >= b_arr, axis=1)
        falling = np.ones(len(evaluator.cs))
        for j in range(n):
            for s in range(b[j]):
                falling = falling * (evaluator.ls[:, j] - s)
        falling = falling * valid
        if not falling.any():
            continue
        mono = np.prod(ac[:, None, :] ** np.maximum(evaluator.ls - b_arr, 0.0), axis=-1)
        base = phase * mono
        for a in l1_indices(n, k_chk, signed=False):
            fa = np.ones(len(evaluator.cs), dtype=complex)
            for j in range(n):
                for _ in range(a[j]):
                    fa = fa * (1j * evaluator.ks[:, j])
            sup = float(np.max(np.abs(np.real(base @ (evaluator.cs * fa * falling)))))
            weight = (L1 ** -sum(a) * L2 ** -sum(b)
                      * _multi_factorial(a) ** -alpha * _multi_factorial(b) ** -beta)
            if sup * weight > best:
                best = sup * weight
                best_orders = (a, b)
    return GevreyNormEstimate(alpha, beta, L1, L2, best, (k_chk, m_chk), radius, best_orders)
