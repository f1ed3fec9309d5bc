"""Test the birkhoff module."""

import json
import math

import numpy as np
import pytest

from torus_lab.core.birkhoff import (
    NormalFormBudgets,
    bnf,
    default_divisor_floor,
    gevrey_beta,
    homological_solve,
    kam_remainder_decay_bound,
    linear_frequencies,
    remainder_decay_bound,
    stirling_order_choice,
    transform_point,
)
from torus_lab.core.config import load_preset
from torus_lab.core.errors import BudgetExceeded, SmallDivisor
from torus_lab.core.series import FourierTaylorSeries, poisson_bracket, series_add
from torus_lab.utils.utils import to_json

# pylint: disable=redefined-outer-name

PHI = (1.0 + math.sqrt(5.0)) / 2.0
OMEGA = (1.0, PHI)
EPS = 0.1


@pytest.fixture
def cosine_perturbation() -> FourierTaylorSeries:
    """omega.I + EPS cos(theta_1)."""
    return series_add(FourierTaylorSeries.linear_action(OMEGA), FourierTaylorSeries.trig(2, (1, 0), cos=EPS))


@pytest.fixture(scope='module')
def golden_pendulum():
    """Order-4 normal form of omega.I + I_1^2/2 + 0.01 cos(theta_1)."""
    cfg = load_preset('golden-pendulum')
    return cfg.hamiltonian, bnf(cfg.hamiltonian, cfg.omega, 4, NormalFormBudgets(), tau=1.0)


def test_homological_solve_inverts_linear_flow() -> None:
    """Test {chi, omega.I} = g - <g> for a mixed right-hand side."""
    g = series_add(
        series_add(FourierTaylorSeries.trig(2, (1, -2), (1, 0), cos=0.3, sin=0.1), FourierTaylorSeries.constant(2, 0.5)),
        FourierTaylorSeries.trig(2, (2, 1), sin=0.2)
    )
    log = {}
    chi = homological_solve(g, OMEGA, divisor_floor=0.1, divisor_log=log)
    assert chi.angle_average().is_zero()
    lhs = poisson_bracket(chi, FourierTaylorSeries.linear_action(OMEGA), chi.k_max, chi.m_max)
    assert np.allclose(lhs.data, g.oscillating_part().data, atol=1e-14)
    assert set(log) == {(1, -2), (2, 1)}
    assert log[(1, -2)] == pytest.approx(abs(1.0 - 2.0 * PHI))


def test_homological_solve_small_divisor() -> None:
    """Test that divisors below the floor are refused."""
    g = FourierTaylorSeries.trig(2, (1, 0), cos=1.0)
    with pytest.raises(SmallDivisor) as exc:
        homological_solve(g, OMEGA, divisor_floor=2.0)
    assert exc.value.k == (1, 0)
    assert exc.value.divisor == pytest.approx(1.0)
    assert exc.value.floor == 2.0


def test_bnf_removes_angle_only_perturbation(cosine_perturbation) -> None:
    """Test that omega.I + EPS cos(theta_1) normalises to omega.I with chi = EPS sin(theta_1)."""
    result = bnf(cosine_perturbation, OMEGA, 2, tau=1.0)
    expected_chi = FourierTaylorSeries.trig(2, (1, 0), sin=EPS / OMEGA[0])
    assert result.generator_orders[0] == 0
    assert np.allclose(result.generators[0].resized(1, 0).data, expected_chi.data, atol=1e-15)
    assert all(chi.is_zero() for chi in result.generators[1:])
    linear = FourierTaylorSeries.linear_action(OMEGA).resized(result.transformed.k_max, result.transformed.m_max)
    assert np.allclose(result.transformed.data, linear.data, atol=1e-14)
    assert result.H_m.coefficient_sup_norm() < 1e-14
    assert result.divisor_floor == pytest.approx(1.0 / 16.0)


def test_transform_point_shifts_actions(cosine_perturbation) -> None:
    """Test Phi_m moves I_1 by -EPS cos(theta_1) and conjugates H to the normal form."""
    result = bnf(cosine_perturbation, OMEGA, 2, tau=1.0)
    theta = np.array([0.3, 0.5])
    actions = np.array([0.2, 0.1])
    new_theta, new_actions = transform_point(result, theta, actions)
    assert np.allclose(new_theta, theta, atol=1e-12)
    assert np.allclose(new_actions, [0.2 - EPS * math.cos(0.3), 0.1], atol=1e-10)
    assert cosine_perturbation.evaluate(new_theta, new_actions) == pytest.approx(
        result.transformed.evaluate(theta, actions), abs=1e-10
    )


def test_bnf_resonance_reports_vector() -> None:
    """Test that omega = (1, 1) stops at k = (1, -1)."""
    cfg = load_preset('resonant')
    with pytest.raises(SmallDivisor) as exc:
        bnf(cfg.hamiltonian, cfg.omega, 4, tau=1.0)
    assert exc.value.k == (1, -1)
    assert exc.value.divisor == 0.0


def test_bnf_golden_pendulum_coefficients(golden_pendulum) -> None:
    """Test the order-4 polynomial against the pendulum energy J^2/2 + eps^2/(4 J^2), J = 1 + I_1."""
    _, result = golden_pendulum
    coeffs = result.H_m.coeffs
    assert coeffs[(2, 0)] == pytest.approx(0.5 + 7.5e-5, abs=1e-6)
    assert coeffs[(3, 0)] == pytest.approx(-1.0e-4, abs=1e-6)
    assert coeffs[(4, 0)] == pytest.approx(1.25e-4, abs=1e-6)
    assert abs(coeffs.get((0, 2), 0.0)) < 1e-12
    assert result.frequency_shift[0] == pytest.approx(-5.0e-5, abs=1e-7)
    assert result.frequency_shift[1] == pytest.approx(0.0, abs=1e-12)
    assert result.energy_offset == pytest.approx(2.5e-5, abs=1e-7)


def test_bnf_residual_within_tolerance(golden_pendulum) -> None:
    """Test that no angle dependence survives through order m."""
    H, result = golden_pendulum
    assert result.residual <= 1e-10 * H.max_abs()
    assert all(result.remainder_norm_by_order[j] <= 1e-10 for j in range(5))
    assert result.small_divisor_log
    assert all(d >= result.divisor_floor for _, d in result.small_divisor_log)


def test_bnf_higher_order_extends_lower(golden_pendulum) -> None:
    """Test that the order-6 polynomial truncated to degree 4 equals the order-4 one."""
    H, result = golden_pendulum
    higher = bnf(H, OMEGA, 6, NormalFormBudgets(), tau=1.0)
    truncated = higher.H_m.truncate(4)
    for l, c in result.H_m.coeffs.items():
        assert truncated.coeffs.get(l, 0.0) == pytest.approx(c, abs=1e-12)


def test_bnf_energy_consistency(golden_pendulum) -> None:
    """Test H(Phi(z)) == transformed(z) up to terms beyond the normal-form order."""
    H, result = golden_pendulum
    theta = np.array([1.3, -0.4])
    actions = np.array([0.006, -0.008])
    new_theta, new_actions = transform_point(result, theta, actions)
    assert abs(H.evaluate(new_theta, new_actions) - result.transformed.evaluate(theta, actions)) < 1e-9


def test_bnf_result_serializes(golden_pendulum) -> None:
    """Test that the result is JSON-ready."""
    _, result = golden_pendulum
    payload = json.loads(to_json(result))
    assert payload['order_m'] == 4
    assert len(payload['generators']) == len(result.generators)


def test_bnf_argument_checks(cosine_perturbation) -> None:
    """Test order, budget and linear-part validation."""
    with pytest.raises(ValueError):
        bnf(cosine_perturbation, OMEGA, 1)
    with pytest.raises(ValueError):
        bnf(cosine_perturbation, (1.0, 2.0), 2)
    with pytest.raises(BudgetExceeded):
        bnf(cosine_perturbation, OMEGA, 4, NormalFormBudgets(m_work=3))
    far = series_add(cosine_perturbation, FourierTaylorSeries.trig(2, (9, 0), cos=1e-3))
    with pytest.raises(BudgetExceeded):
        bnf(far, OMEGA, 2, NormalFormBudgets(k_work=8))


def test_linear_frequencies(cosine_perturbation) -> None:
    """Test extraction of the linear part."""
    assert np.allclose(linear_frequencies(cosine_perturbation), OMEGA)


def test_default_divisor_floor() -> None:
    """Test gamma_est * K^-tau / 2 for the golden vector."""
    assert default_divisor_floor(OMEGA, 1.0, 8) == pytest.approx(1.0 / 16.0)
    assert default_divisor_floor((1.0, 1.0), 1.0, 8) == 0.0


def test_gevrey_beta() -> None:
    """Test beta = alpha (1 + tau) + 1."""
    assert gevrey_beta(1.0, 1.0) == 3.0
    assert gevrey_beta(2.0, 0.5) == 4.0


def test_remainder_decay_bound() -> None:
    """Test the flat-remainder predictor at 2 L2 r = 1/4."""
    assert remainder_decay_bound(1.0, 1.0, 1.0, 1.0, 0.125) == pytest.approx(math.exp(-2.0))
    assert kam_remainder_decay_bound(2.0, 1.0, 1.0, 1.0, 0.125) == pytest.approx(2.0 * math.exp(-2.0))
    assert remainder_decay_bound(1.0, 1.0, 1.0, 1.0, 0.0625) < remainder_decay_bound(1.0, 1.0, 1.0, 1.0, 0.125)
    with pytest.raises(ValueError):
        remainder_decay_bound(1.0, 1.0, 1.0, 1.0, 0.0)


def test_stirling_order_choice() -> None:
    """Test the optimal truncation order (L2 ||I||)^(-1/(alpha (1 + tau)))."""
    assert stirling_order_choice(1.0, 1.0 / 16.0, 1.0, 1.0) == 4
    assert stirling_order_choice(1.0, 1.0 / 256.0, 1.0, 1.0) == 16
    with pytest.raises(ValueError):
        stirling_order_choice(1.0, 2.0, 1.0, 1.0)
