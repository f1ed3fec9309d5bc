"""
Symplectic integration on T^n x R^n and escape times from action neighbourhoods.

Integrators work in radians on batches of states; PhasePoint stores angles in
turns, reduced to [0, 1).
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..utils.utils import write_csv
from .errors import DimensionMismatch, IntegrationError
from .series import FourierTaylorSeries

TWO_PI = 2.0 * math.pi

SCHEMES = ('splitting', 'implicit-midpoint')
SAMPLERS = ('sphere', 'ball')

MIDPOINT_TOL = 1e-13
MIDPOINT_MAX_ITER = 50


@dataclass(frozen=True)
class PhasePoint:
    """A point of T^n x R^n; theta in turns, reduced to [0, 1)."""

    theta: Tuple[float, ...]
    I: Tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.theta) != len(self.I):
            raise DimensionMismatch(len(self.theta), len(self.I))
        turns = []
        for x in self.theta:
            t = float(x) % 1.0
            turns.append(0.0 if t >= 1.0 else t)
        object.__setattr__(self, 'theta', tuple(turns))
        object.__setattr__(self, 'I', tuple(float(x) for x in self.I))

    @property
    def n(self) -> int:
        """Dimension."""
        return len(self.I)

    @classmethod
    def from_radians(cls, theta: Iterable[float], actions: Iterable[float]) -> 'PhasePoint':
        """Build from angles in radians."""
        return cls(tuple(float(x) / TWO_PI for x in theta), tuple(actions))

    def radians(self) -> np.ndarray:
        """Angles in radians."""
        return np.asarray(self.theta) * TWO_PI

    def actions(self) -> np.ndarray:
        """Actions as an array."""
        return np.asarray(self.I)

    def to_dict(self) -> Dict[str, List[float]]:
        """JSON-ready dict."""
        return {'theta': list(self.theta), 'I': list(self.I)}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Sequence[float]]) -> 'PhasePoint':
        """Inverse of to_dict."""
        return cls(tuple(payload['theta']), tuple(payload['I']))


class HamiltonianFlow:
    """Batched one-step maps of Hamilton's equations for a series H.

    splitting: Strang splitting, half kick from the angle part f(theta), drift
    from the action part h(I), half kick. Requires H = h(I) + f(theta).
    implicit-midpoint: fixed-point iteration to MIDPOINT_TOL, at most
    MIDPOINT_MAX_ITER iterations.
    """

    def __init__(self, H: FourierTaylorSeries, scheme: Optional[str] = None) -> None:
        decomposable = H.is_decomposable()
        if scheme is None:
            scheme = 'splitting' if decomposable else 'implicit-midpoint'
        if scheme not in SCHEMES:
            raise ValueError(f'unknown scheme {scheme!r}; expected one of {SCHEMES}')
        if scheme == 'splitting' and not decomposable:
            raise ValueError('splitting needs H = h(I) + f(theta)')
        self.H = H
        self.n = H.n
        self.scheme = scheme
        self._full = H.evaluator()
        self._actions_part = H.angle_average().evaluator()
        self._angles_part = H.oscillating_part().evaluator()

    def energy(self, theta: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """H at a batch of states."""
        return self._full.value(theta, actions)

    def vector_field(self, theta: np.ndarray, actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(dH/dI, -dH/dtheta)."""
        return self._full.grad_action(theta, actions), -self._full.grad_theta(theta, actions)

    def step(self, theta: np.ndarray, actions: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        """Advance a batch by one step of size dt (negative dt runs backwards)."""
        if self.scheme == 'splitting':
            return self._strang(theta, actions, dt)
        return self._midpoint(theta, actions, dt)

    def _strang(self, theta: np.ndarray, actions: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        zeros = np.zeros_like(actions)
        actions = actions - 0.5 * dt * self._angles_part.grad_theta(theta, zeros)
        theta = theta + dt * self._actions_part.grad_action(zeros, actions)
        actions = actions - 0.5 * dt * self._angles_part.grad_theta(theta, zeros)
        return theta, actions

    def _midpoint(self, theta: np.ndarray, actions: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        # Rows converge independently, so a member's result does not depend on its batch.
        d_theta, d_actions = self.vector_field(theta, actions)
        new_theta = theta + dt * d_theta
        new_actions = actions + dt * d_actions
        pending = np.arange(theta.shape[0])
        for _ in range(MIDPOINT_MAX_ITER):
            th, ac = theta[pending], actions[pending]
            d_theta, d_actions = self.vector_field(0.5 * (th + new_theta[pending]), 0.5 * (ac + new_actions[pending]))
            next_theta = th + dt * d_theta
            next_actions = ac + dt * d_actions
            change = np.maximum(
                np.max(np.abs(next_theta - new_theta[pending]), axis=1),
                np.max(np.abs(next_actions - new_actions[pending]), axis=1)
            )
            scale = np.maximum(
                1.0, np.maximum(np.max(np.abs(next_theta), axis=1), np.max(np.abs(next_actions), axis=1))
            )
            new_theta[pending] = next_theta
            new_actions[pending] = next_actions
            pending = pending[change > MIDPOINT_TOL * scale]
            if pending.size == 0:
                return new_theta, new_actions
        raise IntegrationError(f'implicit midpoint did not converge in {MIDPOINT_MAX_ITER} iterations')


def _check_finite(theta: np.ndarray, actions: np.ndarray, step: int) -> None:
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(actions))):
        raise IntegrationError(f'non-finite state at step {step}')


@dataclass(frozen=True)
class TrajectorySummary:
    """Checkpointed states of one trajectory.

    energy_drift is the largest |H(z(t)) - H(z(0))| over the monitored steps.
    """

    times: Tuple[float, ...]
    states: Tuple[PhasePoint, ...]
    energies: Tuple[float, ...]
    energy_drift: float
    scheme: str
    dt: float
    steps: int

    @property
    def final(self) -> PhasePoint:
        """Last checkpoint."""
        return self.states[-1]


def integrate(
        H: FourierTaylorSeries,
        z0: PhasePoint,
        dt: float,
        steps: int,
        scheme: Optional[str] = None,
        checkpoints: int = 10,
        energy_every: int = 1
    ) -> TrajectorySummary:
    """Integrate theta' = dH/dI, I' = -dH/dtheta from z0.

    Args:
        H: Hamiltonian
        z0: Initial state
        dt: Step size; negative values integrate backwards in time
        steps: Number of steps
        scheme: 'splitting' or 'implicit-midpoint'; default by decomposability of H
        checkpoints: Number of equally spaced stored states after the initial one
        energy_every: Energy drift is monitored every this many steps

    Returns:
        TrajectorySummary: Checkpoints, energies and drift

    Raises:
        IntegrationError: On non-convergence or non-finite states; carries the partial summary
    """
    if z0.n != H.n:
        raise DimensionMismatch(H.n, z0.n)
    if dt == 0 or not math.isfinite(dt):
        raise ValueError(f'dt must be finite and nonzero, got {dt}')
    if steps < 0:
        raise ValueError(f'steps must be >= 0, got {steps}')
    flow = HamiltonianFlow(H, scheme)
    checkpoints = max(1, min(checkpoints, steps)) if steps else 0
    marks = {int(round(steps * (c + 1) / checkpoints)) for c in range(checkpoints)}
    theta = z0.radians()[None, :]
    actions = z0.actions()[None, :]
    e0 = float(flow.energy(theta, actions)[0])
    times: List[float] = [0.0]
    states: List[PhasePoint] = [z0]
    energies: List[float] = [e0]
    drift = 0.0

    def summary() -> TrajectorySummary:
        return TrajectorySummary(tuple(times), tuple(states), tuple(energies), drift, flow.scheme, dt, steps)

    for k in range(1, steps + 1):
        try:
            theta, actions = flow.step(theta, actions, dt)
            _check_finite(theta, actions, k)
        except IntegrationError as exc:
            raise IntegrationError(str(exc), partial=summary()) from exc
        monitored = k % energy_every == 0 or k in marks
        if monitored:
            energy = float(flow.energy(theta, actions)[0])
            drift = max(drift, abs(energy - e0))
        if k in marks:
            times.append(k * dt)
            states.append(PhasePoint.from_radians(theta[0], actions[0]))
            energies.append(energy)
    logging.debug('Integrated %d steps (%s, dt=%s): energy drift %.3e', steps, flow.scheme, dt, drift)
    return summary()


def write_trajectory_csv(path: str, summary: TrajectorySummary) -> None:
    """Checkpoints as CSV rows (t, theta_1.., I_1.., H); angles in turns."""
    n = summary.states[0].n
    header = ['t'] + [f'theta_{j + 1}' for j in range(n)] + [f'I_{j + 1}' for j in range(n)] + ['H']
    rows = [
        [t] + list(z.theta) + list(z.I) + [e]
        for t, z, e in zip(summary.times, summary.states, summary.energies)
    ]
    write_csv(path, header, rows)


def default_time_step(H: FourierTaylorSeries, I_star: Optional[Iterable[float]] = None, radius: float = 1.0) -> float:
    """min(0.1, 0.01 / F) with F an upper estimate of max |dH/dtheta| near I_star.

    F sums |k_j| |c_{k,l}| (||I_star||_inf + radius)^|l| over the angle terms.
    """
    center = 0.0 if I_star is None else float(np.max(np.abs(np.asarray(list(I_star), dtype=float)), initial=0.0))
    reach = center + radius
    force = np.zeros(H.n)
    for idx, c in H.oscillating_part().coeffs.items():
        force += np.abs(np.asarray(idx.k, dtype=float)) * abs(c) * reach ** idx.taylor_weight
    estimate = float(force.max(initial=0.0))
    if estimate == 0.0:
        return 0.1
    return min(0.1, 0.01 / estimate)


@dataclass(frozen=True)
class EscapeTimeRecord:
    """Outcome of one escape-time run.

    For an escaped record escape_time is the linearly interpolated crossing of
    ||I - I_star|| = 2r inside bracket; for a censored one it is the budget time
    steps * dt, a lower bound.
    """

    r: float
    I_star: Tuple[float, ...]
    initial: PhasePoint
    escape_time: float
    censored: bool
    exit_norm: float
    energy_drift: float
    steps: int
    dt: float
    seed: int
    scheme: str
    bracket: Optional[Tuple[float, float]] = None

    @property
    def log_time(self) -> float:
        """log of escape_time (or of the budget time when censored)."""
        return math.log(self.escape_time) if self.escape_time > 0 else -math.inf

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict."""
        return {
            'r': self.r,
            'I_star': list(self.I_star),
            'initial': self.initial.to_dict(),
            'escape_time': self.escape_time,
            'censored': self.censored,
            'exit_norm': self.exit_norm,
            'energy_drift': self.energy_drift,
            'steps': self.steps,
            'dt': self.dt,
            'seed': self.seed,
            'scheme': self.scheme,
            'bracket': list(self.bracket) if self.bracket is not None else None
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, object]) -> 'EscapeTimeRecord':
        """Inverse of to_dict."""
        bracket = payload.get('bracket')
        return cls(
            r=float(payload['r']),  # type: ignore[arg-type]
            I_star=tuple(payload['I_star']),  # type: ignore[arg-type]
            initial=PhasePoint.from_dict(payload['initial']),  # type: ignore[arg-type]
            escape_time=float(payload['escape_time']),  # type: ignore[arg-type]
            censored=bool(payload['censored']),
            exit_norm=float(payload['exit_norm']),  # type: ignore[arg-type]
            energy_drift=float(payload['energy_drift']),  # type: ignore[arg-type]
            steps=int(payload['steps']),  # type: ignore[arg-type]
            dt=float(payload['dt']),  # type: ignore[arg-type]
            seed=int(payload['seed']),  # type: ignore[arg-type]
            scheme=str(payload['scheme']),
            bracket=tuple(bracket) if bracket is not None else None  # type: ignore[arg-type]
        )


def sample_initial(
        I_star: np.ndarray,
        r: float,
        rng: np.random.Generator,
        sampler: str = 'sphere'
    ) -> PhasePoint:
    """Initial state near the torus: actions on the r-sphere (or in the r-ball), angles uniform."""
    if sampler not in SAMPLERS:
        raise ValueError(f'unknown sampler {sampler!r}; expected one of {SAMPLERS}')
    n = I_star.size
    direction = rng.standard_normal(n)
    direction /= np.linalg.norm(direction)
    radius = r if sampler == 'sphere' else r * rng.uniform() ** (1.0 / n)
    theta = rng.uniform(0.0, 1.0, size=n)
    return PhasePoint(tuple(theta.tolist()), tuple((I_star + radius * direction).tolist()))


def escape_ensemble(
        H: FourierTaylorSeries,
        I_star: Iterable[float],
        r: float,
        seeds: Sequence[int],
        dt: Optional[float] = None,
        budget_steps: int = 100_000,
        sampler: str = 'sphere',
        scheme: Optional[str] = None,
        energy_every: int = 100
    ) -> List[EscapeTimeRecord]:
    """Escape times of one trajectory per seed, stepped together as a batch.

    Each member draws its initial state from default_rng(seed) and follows the
    same arithmetic as a single escape_time run with that seed.

    Raises:
        IntegrationError: On integrator failure; partial holds the finished records
    """
    center = np.asarray(list(I_star), dtype=float)
    if center.size != H.n:
        raise DimensionMismatch(H.n, center.size)
    if r <= 0:
        raise ValueError(f'r must be positive, got {r}')
    if budget_steps < 1:
        raise ValueError(f'budget_steps must be >= 1, got {budget_steps}')
    step = default_time_step(H, center, 2.0 * r) if dt is None else dt
    if not step > 0:
        raise ValueError(f'dt must be positive, got {step}')
    flow = HamiltonianFlow(H, scheme)
    initials = [sample_initial(center, r, np.random.default_rng(s), sampler) for s in seeds]
    size = len(initials)
    theta = np.array([z.radians() for z in initials]).reshape(size, H.n)
    actions = np.array([z.actions() for z in initials]).reshape(size, H.n)
    e0 = flow.energy(theta, actions)
    drift = np.zeros(size)
    dist = np.linalg.norm(actions - center, axis=1)
    threshold = 2.0 * r
    active = np.arange(size)
    records: List[Optional[EscapeTimeRecord]] = [None] * size

    def finish(member: int, escape: float, censored: bool, exit_norm: float, steps: int,
               bracket: Optional[Tuple[float, float]]) -> None:
        records[member] = EscapeTimeRecord(
            r=r, I_star=tuple(center.tolist()), initial=initials[member], escape_time=escape,
            censored=censored, exit_norm=exit_norm, energy_drift=float(drift[member]), steps=steps,
            dt=step, seed=int(seeds[member]), scheme=flow.scheme, bracket=bracket
        )

    for member in np.nonzero(dist >= threshold)[0]:
        finish(int(member), 0.0, False, float(dist[member]), 0, (0.0, 0.0))
    active = active[dist < threshold]
    theta, actions, dist = theta[active], actions[active], dist[active]

    k = 0
    while active.size and k < budget_steps:
        k += 1
        try:
            theta, actions = flow.step(theta, actions, step)
            _check_finite(theta, actions, k)
        except IntegrationError as exc:
            raise IntegrationError(str(exc), partial=[rec for rec in records if rec is not None]) from exc
        new_dist = np.linalg.norm(actions - center, axis=1)
        escaped = new_dist >= threshold
        if k % energy_every == 0 or escaped.any() or k == budget_steps:
            drift[active] = np.maximum(drift[active], np.abs(flow.energy(theta, actions) - e0[active]))
        if escaped.any():
            for pos in np.nonzero(escaped)[0]:
                d_prev, d_cur = float(dist[pos]), float(new_dist[pos])
                t_prev = (k - 1) * step
                crossing = t_prev + step * (threshold - d_prev) / (d_cur - d_prev)
                finish(int(active[pos]), crossing, False, d_cur, k, (t_prev, k * step))
            keep = ~escaped
            active, theta, actions, new_dist = active[keep], theta[keep], actions[keep], new_dist[keep]
        dist = new_dist
    for pos, member in enumerate(active):
        finish(int(member), k * step, True, float(dist[pos]), k, None)
    done = [rec for rec in records if rec is not None]
    logging.debug(
        'Escape ensemble r=%s: %d members, %d censored', r, size, sum(1 for rec in done if rec.censored)
    )
    return done


def escape_time(
        H: FourierTaylorSeries,
        I_star: Iterable[float],
        r: float,
        seed: int = 0,
        dt: Optional[float] = None,
        budget_steps: int = 100_000,
        sampler: str = 'sphere',
        scheme: Optional[str] = None,
        energy_every: int = 100
    ) -> EscapeTimeRecord:
    """Integrate from a sampled state near I_star until ||I - I_star|| >= 2r or the budget runs out."""
    return escape_ensemble(H, I_star, r, [seed], dt, budget_steps, sampler, scheme, energy_every)[0]
