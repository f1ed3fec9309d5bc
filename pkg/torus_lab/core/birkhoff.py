"""
Birkhoff normal form near the torus I = 0.

The transformation is a composition of time-one Lie flows exp(ad_chi), one
generator per homogeneity order |l|. Angle-dependent terms of order 0 and 1 are
removed first by repeated sweeps; orders 2..m are then normalised in a single
ascending pass.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .diophantine import gamma_estimate
from .errors import BudgetExceeded, ConvergenceError, SmallDivisor
from .series import (
    ActionPolynomial,
    FourierTaylorSeries,
    canonical_k,
    poisson_bracket,
    series_add,
)


@dataclass(frozen=True)
class NormalFormBudgets:
    """Truncation and tolerance settings of a normal-form run.

    Attributes:
        k_work: Fourier truncation of every intermediate series
        m_work: Taylor truncation; None means the requested order
        divisor_floor: Smallest admissible |k.omega|; None derives it from a
            Diophantine scan as gamma_est * k_work^-tau / 2
        tol_hom: Residual tolerance relative to the largest input coefficient
        max_lie_terms: Cap on the terms of one Lie series
        max_prenormal_sweeps: Cap on the order-0/1 elimination sweeps
    """

    k_work: int = 8
    m_work: Optional[int] = None
    divisor_floor: Optional[float] = None
    tol_hom: float = 1e-10
    max_lie_terms: int = 60
    max_prenormal_sweeps: int = 60


@dataclass(frozen=True)
class NormalFormResult:
    """Output of bnf.

    transformed equals omega_eff.I + H_m + (terms of order > order_m) up to
    tol_hom, where omega_eff = omega + frequency_shift.
    """

    order_m: int
    H_m: ActionPolynomial
    generators: List[FourierTaylorSeries]
    generator_orders: List[int]
    transformed: FourierTaylorSeries
    remainder_norm_by_order: Dict[int, float]
    small_divisor_log: List[Tuple[Tuple[int, ...], float]]
    frequency_shift: Tuple[float, ...]
    energy_offset: float
    residual: float
    divisor_floor: float

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'order_m': self.order_m,
            'H_m': self.H_m.to_dict(),
            'generators': [
                {'order': order, 'chi': chi.to_dict()}
                for order, chi in zip(self.generator_orders, self.generators)
            ],
            'transformed': self.transformed.to_dict(),
            'remainder_norm_by_order': {str(k): v for k, v in self.remainder_norm_by_order.items()},
            'small_divisor_log': [{'k': list(k), 'divisor': d} for k, d in self.small_divisor_log],
            'frequency_shift': list(self.frequency_shift),
            'energy_offset': self.energy_offset,
            'residual': self.residual,
            'divisor_floor': self.divisor_floor
        }


def _dot_grid(series: FourierTaylorSeries, omega: np.ndarray) -> np.ndarray:
    n, k_max = series.n, series.k_max
    total = np.zeros((2 * k_max + 1,) * n + (1,) * n)
    for j in range(n):
        shape = [1] * (2 * n)
        shape[j] = 2 * k_max + 1
        total = total + (np.arange(2 * k_max + 1) - k_max).reshape(shape) * omega[j]
    return total


def homological_solve(
        g: FourierTaylorSeries,
        omega: Iterable[float],
        divisor_floor: float,
        divisor_log: Optional[Dict[Tuple[int, ...], float]] = None,
        negligible: float = 0.0
    ) -> FourierTaylorSeries:
    """Solve omega . d_theta chi = g - <g>_theta term by term.

    Args:
        g: Right-hand side
        omega: Frequencies of the linear part
        divisor_floor: Every |k.omega| used must be at least this large
        divisor_log: Optional map collecting canonical k -> |k.omega| in order of first use
        negligible: Coefficients of g at most this large are treated as zero

    Returns:
        FourierTaylorSeries: chi with zero angle average

    Raises:
        SmallDivisor: When a needed divisor is zero or below the floor
    """
    omega_arr = np.asarray(list(omega), dtype=float)
    osc = g.oscillating_part()
    data = osc.data
    dots = np.broadcast_to(_dot_grid(g, omega_arr), data.shape)
    needed = np.abs(data) > negligible
    if not needed.any():
        return FourierTaylorSeries.zero(g.n, g.k_max, g.m_max)

    used: Dict[Tuple[int, ...], float] = {}
    for pos in zip(*np.nonzero(needed)):
        k = canonical_k(int(x) - g.k_max for x in pos[:g.n])
        used.setdefault(k, abs(float(dots[pos])))
    ordered = sorted(used.items(), key=lambda kv: (sum(abs(x) for x in kv[0]), kv[0]))
    for k, divisor in ordered:
        if divisor == 0.0 or divisor < divisor_floor:
            raise SmallDivisor(k, divisor, divisor_floor)
    if divisor_log is not None:
        for k, divisor in ordered:
            divisor_log.setdefault(k, divisor)

    chi = np.zeros_like(data)
    np.divide(data, 1j * dots, out=chi, where=needed)
    return FourierTaylorSeries(g.n, g.k_max, g.m_max, chi)


def lie_transform(
        H: FourierTaylorSeries,
        chi: FourierTaylorSeries,
        k_out: int,
        m_out: int,
        max_terms: int,
        tol: float
    ) -> FourierTaylorSeries:
    """exp(ad_chi) H = sum_s ad_chi^s H / s!, with ad_chi F = {F, chi}.

    Summation stops once a term is at most tol in every coefficient.
    """
    result = H.resized(k_out, m_out)
    term = result
    for s in range(1, max_terms + 1):
        term = poisson_bracket(term, chi, k_out, m_out).scale(1.0 / s)
        if term.max_abs() <= tol:
            return result
        result = series_add(result, term)
    raise ConvergenceError(f'Lie series did not converge within {max_terms} terms')


def linear_frequencies(H: FourierTaylorSeries) -> np.ndarray:
    """Coefficients of the k = 0, |l| = 1 part."""
    n = H.n
    return np.array([
        H.coeff((0,) * n, tuple(1 if i == j else 0 for i in range(n))).real for j in range(n)
    ])


def default_divisor_floor(omega: Iterable[float], tau: float, k_work: int) -> float:
    """gamma_est * k_work^-tau / 2 from a scan of depth k_work."""
    report = gamma_estimate(omega, tau, k_work)
    return report.gamma_est * k_work ** (-tau) / 2.0


def bnf(
        H: FourierTaylorSeries,
        omega: Iterable[float],
        m: int,
        budgets: Optional[NormalFormBudgets] = None,
        tau: Optional[float] = None
    ) -> NormalFormResult:
    """Birkhoff normal form of H = omega.I + ... to order m.

    Args:
        H: Hamiltonian whose k = 0 linear part equals omega.I
        omega: Frequency vector of the torus
        m: Normal-form order, at least 2
        budgets: Truncation and tolerance settings
        tau: Diophantine exponent for the default divisor floor (default max(n - 1, 1))

    Returns:
        NormalFormResult: Birkhoff polynomial, generators and transformed Hamiltonian

    Raises:
        SmallDivisor: On a resonance within the Fourier budget
        BudgetExceeded: When the input or m does not fit the budgets
    """
    budgets = budgets or NormalFormBudgets()
    omega_arr = np.asarray(list(omega), dtype=float)
    n = H.n
    if omega_arr.size != n:
        raise ValueError(f'omega has length {omega_arr.size}, Hamiltonian has dimension {n}')
    if m < 2:
        raise ValueError(f'normal-form order must be >= 2, got {m}')
    k_work = budgets.k_work
    m_work = m if budgets.m_work is None else budgets.m_work
    if m > m_work:
        raise BudgetExceeded(f'order {m} exceeds Taylor budget {m_work}')
    fitted = H.resized(k_work, m_work)
    dropped = series_add(H, fitted.scale(-1.0)).max_abs()
    if dropped > 0.0:
        raise BudgetExceeded(
            f'Hamiltonian has terms beyond K={k_work}, M={m_work} (largest dropped {dropped:.3e})'
        )

    scale = H.max_abs()
    linear = linear_frequencies(H)
    if np.max(np.abs(linear - omega_arr)) > 1e-12 * max(scale, 1.0):
        raise ValueError(f'linear part {linear.tolist()} of H does not match omega {omega_arr.tolist()}')
    tol_abs = budgets.tol_hom * scale
    lie_tol = 1e-17 * scale
    if budgets.divisor_floor is not None:
        floor = budgets.divisor_floor
    else:
        floor = default_divisor_floor(omega_arr, max(n - 1.0, 1.0) if tau is None else tau, k_work)
    logging.debug('bnf: n=%d m=%d K=%d M=%d floor=%.3e', n, m, k_work, m_work, floor)

    divisor_log: Dict[Tuple[int, ...], float] = {}
    generators: List[FourierTaylorSeries] = []
    orders: List[int] = []
    current = fitted

    def normalise(order: int) -> None:
        nonlocal current
        part = current.order_part(order).oscillating_part()
        chi = homological_solve(part, linear_frequencies(current), floor, divisor_log, lie_tol * 100)
        current = lie_transform(current, chi, k_work, m_work, budgets.max_lie_terms, lie_tol)
        generators.append(chi)
        orders.append(order)
        logging.debug('bnf: order %d generator max %.3e', order, chi.max_abs())

    def low_residual() -> float:
        by_order = current.max_abs_by_order()
        return max(by_order.get(0, 0.0), by_order.get(1, 0.0))

    normalise(0)
    normalise(1)
    sweeps = 1
    target = 0.1 * tol_abs
    while low_residual() > target:
        if sweeps >= budgets.max_prenormal_sweeps:
            raise ConvergenceError(
                f'order-0/1 angle terms still {low_residual():.3e} after {sweeps} sweeps'
            )
        for order in (0, 1):
            if current.order_part(order).oscillating_part().max_abs() > target:
                normalise(order)
        sweeps += 1
    logging.debug('bnf: low orders cleared after %d sweeps', sweeps)

    for order in range(2, m + 1):
        normalise(order)

    by_order = current.max_abs_by_order()
    residual = max((by_order[j] for j in range(0, m + 1)), default=0.0)
    if residual > tol_abs:
        logging.warning('bnf residual %.3e exceeds tolerance %.3e', residual, tol_abs)
    shift = linear_frequencies(current) - omega_arr
    result = NormalFormResult(
        order_m=m,
        H_m=ActionPolynomial.from_series(current, m),
        generators=generators,
        generator_orders=orders,
        transformed=current,
        remainder_norm_by_order=by_order,
        small_divisor_log=list(divisor_log.items()),
        frequency_shift=tuple(shift.tolist()),
        energy_offset=current.coeff((0,) * n, (0,) * n).real,
        residual=residual,
        divisor_floor=floor
    )
    logging.info('Birkhoff normal form to order %d: residual %.3e, %d divisors', m, residual, len(divisor_log))
    return result


def transform_point(
        result: NormalFormResult,
        theta: Iterable[float],
        actions: Iterable[float],
        rtol: float = 1e-12,
        atol: float = 1e-14
    ) -> Tuple[np.ndarray, np.ndarray]:
    """Apply Phi_m to (theta, I) by integrating the generator flows.

    Phi_m is the composition of the time-one flows in generator order, so the
    last generator acts first. Angles are in radians.
    """
    state = np.concatenate([np.asarray(list(theta), dtype=float), np.asarray(list(actions), dtype=float)])
    n = result.transformed.n
    for chi in reversed(result.generators):
        if chi.is_zero():
            continue
        evaluator = chi.evaluator()

        def field_(_: float, z: np.ndarray, ev=evaluator) -> np.ndarray:
            th, ac = z[:n], z[n:]
            return np.concatenate([ev.grad_action(th, ac), -ev.grad_theta(th, ac)])

        sol = solve_ivp(field_, (0.0, 1.0), state, method='DOP853', rtol=rtol, atol=atol)
        if not sol.success:
            raise ConvergenceError(f'generator flow failed: {sol.message}')
        state = sol.y[:, -1]
    return state[:n], state[n:]


def gevrey_beta(alpha: float, tau: float) -> float:
    """beta = alpha (1 + tau) + 1, the action exponent of the normal-form remainder."""
    return alpha * (1.0 + tau) + 1.0


def remainder_decay_bound(A: float, L2: float, alpha: float, tau: float, r: float) -> float:
    """A exp(-(2 L2 r)^(-1/(alpha (1 + tau)))), the flat-remainder bound on B_2r."""
    for name, value in (('A', A), ('L2', L2), ('alpha', alpha), ('tau', tau), ('r', r)):
        if value <= 0:
            raise ValueError(f'{name} must be positive, got {value}')
    if 2 * L2 * r >= 1:
        logging.warning('remainder bound used outside its range: 2*L2*r = %s >= 1', 2 * L2 * r)
    return A * math.exp(-((2.0 * L2 * r) ** (-1.0 / (alpha * (1.0 + tau)))))


def kam_remainder_decay_bound(A_prime: float, L2_prime: float, alpha: float, tau: float, r: float) -> float:
    """Decay bound of the remainder of a parameterised KAM normal form near the torus family.

    Predictor formula only; the same expression as remainder_decay_bound with the
    family constants A', L2'.
    """
    return remainder_decay_bound(A_prime, L2_prime, alpha, tau, r)


def stirling_order_choice(L2: float, norm_I: float, alpha: float, tau: float) -> int:
    """Truncation order round((L2 ||I||)^(-1/(alpha (1 + tau)))) balancing the flat remainder."""
    product = L2 * norm_I
    if not 0 < product < 1:
        raise ValueError(f'need 0 < L2*||I|| < 1, got {product}')
    if alpha <= 0 or tau < 0:
        raise ValueError(f'need alpha > 0 and tau >= 0, got alpha={alpha}, tau={tau}')
    return int(math.floor(product ** (-1.0 / (alpha * (1.0 + tau))) + 0.5))
