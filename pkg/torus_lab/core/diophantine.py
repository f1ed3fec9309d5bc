"""Diophantine quality of frequency vectors and the good frequency set."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import ScanBudgetExceeded

DEFAULT_SCAN_BUDGET = 5_000_000

_DEFAULT_DEPTH = {1: 200, 2: 50, 3: 20, 4: 8}


def default_scan_depth(n: int) -> int:
    """Default l1 scan radius K for dimension n."""
    return _DEFAULT_DEPTH.get(n, 6)


def count_scan_vectors(n: int, K: int) -> int:
    """Number of nonzero k in Z^n with |k| <= K, counted in one half-space."""
    total = sum(
        math.comb(n, j) * math.comb(K, j) * 2 ** j
        for j in range(0, min(n, K) + 1)
    )
    return (total - 1) // 2


def _l1_ball(n: int, K: int) -> Iterator[Tuple[int, ...]]:
    """All k in Z^n with |k| <= K."""
    if n == 0:
        yield ()
        return
    for head in range(-K, K + 1):
        for tail in _l1_ball(n - 1, K - abs(head)):
            yield (head,) + tail


def _half_space_vectors(n: int, K: int) -> np.ndarray:
    """Nonzero k with |k| <= K and first nonzero entry positive, ordered by |k| then lexicographically.

    Generated from the leading entry, so exactly count_scan_vectors(n, K) vectors are built.
    """
    rows: List[Tuple[int, ...]] = []
    for lead in range(n):
        zeros = (0,) * lead
        for first in range(1, K + 1):
            rows.extend(zeros + (first,) + tail for tail in _l1_ball(n - lead - 1, K - first))
    rows.sort(key=lambda v: (sum(abs(x) for x in v), v))
    return np.array(rows, dtype=np.int64).reshape(-1, n)


@dataclass(frozen=True)
class DiophantineReport:
    """Result of a Diophantine scan of omega up to depth K."""

    omega: Tuple[float, ...]
    tau: float
    K: int
    gamma_est: float
    argmin_k: Tuple[int, ...]
    raw_min: float

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'omega': list(self.omega),
            'tau': self.tau,
            'K': self.K,
            'gamma_est': self.gamma_est,
            'argmin_k': list(self.argmin_k),
            'raw_min': self.raw_min
        }


def gamma_estimate(
        omega: Iterable[float],
        tau: float,
        K: int,
        budget: int = DEFAULT_SCAN_BUDGET
    ) -> DiophantineReport:
    """Estimate gamma in |k.omega| >= gamma |k|^-tau by exhaustive scan.

    Only one vector of each pair +-k is visited; the product |k.omega| |k|^tau
    is even in k.

    Args:
        omega: Frequency vector, not zero
        tau: Diophantine exponent, at least n - 1
        K: l1 scan radius, at least 1
        budget: Maximal number of vectors the scan may visit

    Returns:
        DiophantineReport: gamma_est = min(1, raw_min); 0 on exact resonance
    """
    omega_arr = np.asarray(list(omega), dtype=float)
    n = omega_arr.size
    if n == 0 or not np.any(omega_arr):
        raise ValueError('frequency vector must be nonzero')
    if K < 1:
        raise ValueError(f'scan depth must be >= 1, got {K}')
    if tau < n - 1:
        raise ValueError(f'tau must be >= n - 1 = {n - 1}, got {tau}')
    count = count_scan_vectors(n, K)
    if count > budget:
        raise ScanBudgetExceeded(f'scan of {count} vectors exceeds budget {budget} (n={n}, K={K})')

    ks = _half_space_vectors(n, K)
    dots = np.abs(ks.astype(float) @ omega_arr)
    norms = np.sum(np.abs(ks), axis=1).astype(float)
    products = dots * norms ** tau
    idx = int(np.argmin(products))
    raw_min = float(products[idx])
    gamma = 0.0 if dots[idx] == 0.0 else min(1.0, raw_min)
    logging.debug('Diophantine scan of %d vectors: raw_min=%s at k=%s', len(ks), raw_min, ks[idx].tolist())
    return DiophantineReport(
        omega=tuple(omega_arr.tolist()),
        tau=float(tau),
        K=K,
        gamma_est=gamma,
        argmin_k=tuple(int(x) for x in ks[idx]),
        raw_min=raw_min
    )


@dataclass(frozen=True)
class MembershipReport:
    """Verdict of omega in Omega_{gamma,tau} with both margins."""

    member: bool
    boundary_distance: float
    gamma: float
    diophantine: DiophantineReport

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'member': self.member,
            'boundary_distance': self.boundary_distance,
            'boundary_margin': self.boundary_distance - self.gamma,
            'diophantine_margin': self.diophantine.gamma_est - self.gamma,
            'gamma': self.gamma,
            'diophantine': self.diophantine.to_dict()
        }


def omega_set_membership(
        omega: Iterable[float],
        omega_bounds: Sequence[Tuple[float, float]],
        gamma: float,
        tau: float,
        K: int
    ) -> MembershipReport:
    """Test omega in Omega_{gamma,tau} with Omega approximated by a box.

    Membership needs distance to the box boundary >= gamma and a scanned
    Diophantine constant >= gamma.
    """
    omega_arr = np.asarray(list(omega), dtype=float)
    if len(omega_bounds) != omega_arr.size:
        raise ValueError(f'box has {len(omega_bounds)} intervals for a vector of length {omega_arr.size}')
    if not 0 < gamma <= 1:
        raise ValueError(f'gamma must lie in (0, 1], got {gamma}')
    lows = np.array([lo for lo, _ in omega_bounds], dtype=float)
    highs = np.array([hi for _, hi in omega_bounds], dtype=float)
    if np.any(omega_arr < lows) or np.any(omega_arr > highs):
        raise ValueError(f'omega {omega_arr.tolist()} lies outside the box')
    distance = float(np.min(np.minimum(omega_arr - lows, highs - omega_arr)))
    report = gamma_estimate(omega_arr, tau, K)
    member = distance >= gamma and report.gamma_est >= gamma
    return MembershipReport(member, distance, float(gamma), report)
