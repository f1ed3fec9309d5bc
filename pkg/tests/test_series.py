"""Test the series module."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torus_lab.core.errors import DimensionMismatch
from torus_lab.core.series import (
    ActionPolynomial,
    FourierTaylorSeries,
    gevrey_norm_estimate,
    l1_indices,
    poisson_bracket,
    series_add,
    series_mul,
    series_sub,
    taylor_expansion,
    taylor_polynomial,
)

# pylint: disable=redefined-outer-name

OMEGA = (1.0, (1.0 + math.sqrt(5.0)) / 2.0)

_K_CHOICES = l1_indices(2, 2, signed=True)
_L_CHOICES = l1_indices(2, 2, signed=False)
_AMPLITUDE = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False, allow_infinity=False)


@st.composite
def small_series(draw) -> FourierTaylorSeries:
    """Real series with n = 2, |k| <= 2 and degree <= 2."""
    terms = draw(st.lists(
        st.tuples(st.sampled_from(_K_CHOICES), st.sampled_from(_L_CHOICES), _AMPLITUDE, _AMPLITUDE),
        min_size=1, max_size=4
    ))
    out = FourierTaylorSeries.zero(2, 2, 2)
    for k, l, c, s in terms:
        out = series_add(out, FourierTaylorSeries.trig(2, k, l, cos=c, sin=s))
    return out


@pytest.fixture
def cos1() -> FourierTaylorSeries:
    """cos(theta_1) in two degrees of freedom."""
    return FourierTaylorSeries.trig(2, (1, 0), cos=1.0)


def test_add_doubles_coefficient(cos1) -> None:
    """Test that cos + cos stores 1 on each exponential."""
    doubled = series_add(cos1, cos1)
    assert doubled.coeff((1, 0), (0, 0)) == pytest.approx(1.0)
    assert doubled.coeff((-1, 0), (0, 0)) == pytest.approx(1.0)


def test_add_zero_identity(cos1) -> None:
    """Test a + 0 == a."""
    assert series_add(cos1, FourierTaylorSeries.zero(2)) == cos1


def test_add_disjoint_supports() -> None:
    """Test omega.I + I_1^2/2 keeps both parts."""
    total = series_add(FourierTaylorSeries.linear_action(OMEGA), FourierTaylorSeries.monomial(2, (2, 0), 0.5))
    assert len(total.coeffs) == 3
    assert total.coeff((0, 0), (1, 0)) == pytest.approx(1.0)
    assert total.coeff((0, 0), (2, 0)) == pytest.approx(0.5)


def test_sub_self_is_zero(cos1) -> None:
    """Test a - a == 0."""
    assert series_sub(cos1, cos1).is_zero()


def test_dimension_mismatch() -> None:
    """Test that series of different dimension cannot be combined."""
    with pytest.raises(DimensionMismatch):
        series_add(FourierTaylorSeries.constant(1, 1.0), FourierTaylorSeries.constant(2, 1.0))
    with pytest.raises(DimensionMismatch):
        poisson_bracket(FourierTaylorSeries.constant(1, 1.0), FourierTaylorSeries.constant(2, 1.0), 1, 1)


def test_from_terms_rejects_complex_function() -> None:
    """Test that terms violating c(-k) = conj c(k) are refused."""
    with pytest.raises(ValueError):
        FourierTaylorSeries.from_terms(1, [((1,), (0,), 1.0)])


def test_mul_trig_identity(cos1) -> None:
    """Test cos^2 = 1/2 + cos(2 theta)/2."""
    square = series_mul(cos1, cos1, 2, 0)
    assert square.coeff((0, 0), (0, 0)).real == pytest.approx(0.5, abs=1e-14)
    assert square.coeff((2, 0), (0, 0)).real == pytest.approx(0.25, abs=1e-14)
    assert square.coeff((1, 0), (0, 0)) == pytest.approx(0.0, abs=1e-14)
    assert square.evaluate([0.3, 1.1], [0.0, 0.0]) == pytest.approx(math.cos(0.3) ** 2)


def test_mul_actions() -> None:
    """Test I_1 * I_1 = I_1^2 and multiplication by zero."""
    i1 = FourierTaylorSeries.monomial(2, (1, 0), 1.0)
    square = series_mul(i1, i1, 0, 2)
    assert square.coeff((0, 0), (2, 0)).real == pytest.approx(1.0)
    assert series_mul(i1, FourierTaylorSeries.zero(2), 0, 2).is_zero()


def test_mul_truncates_explicitly(cos1) -> None:
    """Test that products are truncated to the requested radii."""
    square = series_mul(cos1, cos1, 1, 0)
    assert square.k_max == 1
    assert square.coeff((2, 0), (0, 0)) == 0j


def test_bracket_with_linear_action() -> None:
    """Test {sin theta_1, omega.I} = omega_1 cos theta_1 and the sign convention."""
    sin1 = FourierTaylorSeries.trig(2, (1, 0), sin=1.0)
    linear = FourierTaylorSeries.linear_action(OMEGA)
    expected = FourierTaylorSeries.trig(2, (1, 0), cos=OMEGA[0])
    forward = poisson_bracket(sin1, linear, 1, 1)
    backward = poisson_bracket(linear, sin1, 1, 1)
    assert np.allclose(forward.data, expected.resized(1, 1).data, atol=1e-14)
    assert np.allclose(backward.data, expected.scale(-1.0).resized(1, 1).data, atol=1e-14)


def test_bracket_angle_free_with_action_is_zero() -> None:
    """Test {I_1, h(I)} = 0."""
    i1 = FourierTaylorSeries.monomial(2, (1, 0), 1.0)
    h = series_add(FourierTaylorSeries.monomial(2, (2, 0), 0.5), FourierTaylorSeries.monomial(2, (1, 1), 3.0))
    assert poisson_bracket(i1, h, 0, 2).is_zero(1e-15)


def test_derivatives() -> None:
    """Test angle and action derivatives of I_1^2 cos(theta_2)."""
    f = FourierTaylorSeries.trig(2, (0, 1), (2, 0), cos=1.0)
    theta, actions = [0.4, 0.9], [0.3, -0.2]
    assert f.d_theta(1).evaluate(theta, actions) == pytest.approx(-0.09 * math.sin(0.9))
    assert f.d_action(0).evaluate(theta, actions) == pytest.approx(0.6 * math.cos(0.9))
    grads = f.evaluator()
    assert grads.grad_theta(np.array(theta), np.array(actions))[1] == pytest.approx(-0.09 * math.sin(0.9))
    assert grads.grad_action(np.array(theta), np.array(actions))[0] == pytest.approx(0.6 * math.cos(0.9))


def test_structural_parts() -> None:
    """Test averaging, order splitting and decomposability."""
    f = series_add(FourierTaylorSeries.monomial(2, (2, 0), 0.5), FourierTaylorSeries.trig(2, (1, 1), (1, 0), cos=0.1))
    assert ActionPolynomial.from_series(f.angle_average()).coeffs == {(2, 0): 0.5}
    assert f.oscillating_part().order_part(1).max_abs() == pytest.approx(0.05)
    assert f.up_to_order(1).order_part(2).is_zero()
    assert not f.is_decomposable()
    assert series_add(FourierTaylorSeries.monomial(2, (2, 0), 0.5), FourierTaylorSeries.trig(2, (1, 0), cos=1.0)).is_decomposable()


def test_serialization_preserves_values() -> None:
    """Test that the cosine/sine JSON form restores the same series."""
    f = series_add(FourierTaylorSeries.trig(2, (1, -1), (0, 1), cos=0.3, sin=-0.7), FourierTaylorSeries.linear_action(OMEGA))
    payload = f.to_dict()
    assert {'k': [1, -1], 'l': [0, 1], 're': pytest.approx(0.3), 'im': pytest.approx(-0.7)} in payload['terms']
    assert FourierTaylorSeries.from_dict(payload) == f


@settings(max_examples=25, deadline=None)
@given(small_series(), small_series())
def test_mul_commutative(a, b) -> None:
    """Test ab == ba at full truncation."""
    assert np.allclose(series_mul(a, b, 4, 4).data, series_mul(b, a, 4, 4).data, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(small_series(), small_series(), small_series())
def test_mul_associative(a, b, c) -> None:
    """Test (ab)c == a(bc) at full truncation."""
    left = series_mul(series_mul(a, b, 4, 4), c, 6, 6)
    right = series_mul(a, series_mul(b, c, 4, 4), 6, 6)
    assert np.allclose(left.data, right.data, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(small_series(), small_series())
def test_bracket_antisymmetric(a, b) -> None:
    """Test {b, a} == -{a, b} exactly and {a, a} == 0."""
    ab = poisson_bracket(a, b, 4, 3)
    ba = poisson_bracket(b, a, 4, 3)
    assert np.array_equal(ba.data, -ab.data)
    assert poisson_bracket(a, a, 4, 3).is_zero()
    assert ab.reality_defect() == 0.0


@settings(max_examples=15, deadline=None)
@given(small_series(), small_series(), small_series())
def test_bracket_jacobi(a, b, c) -> None:
    """Test the Jacobi identity when truncation is exact."""
    total = series_add(
        series_add(
            poisson_bracket(a, poisson_bracket(b, c, 4, 4), 6, 6),
            poisson_bracket(b, poisson_bracket(c, a, 4, 4), 6, 6)
        ),
        poisson_bracket(c, poisson_bracket(a, b, 4, 4), 6, 6)
    )
    assert total.max_abs() < 1e-10


def test_taylor_of_quadratic() -> None:
    """Test T^2 of ||I||^2/2 at the origin."""
    h = series_add(FourierTaylorSeries.monomial(2, (2, 0), 0.5), FourierTaylorSeries.monomial(2, (0, 2), 0.5))
    assert taylor_polynomial(h, [0.0, 0.0], 2).coeffs == {(0, 2): 0.5, (2, 0): 0.5}


def test_taylor_of_cubic_is_exact() -> None:
    """Test T^4 of I_1^3 copies the coefficient."""
    result = taylor_expansion(FourierTaylorSeries.monomial(2, (3, 0), 1.0), [0.0, 0.0], 4)
    assert result.exact
    assert result.steps == {}
    assert result.polynomial.coeffs == {(3, 0): 1.0}


def test_taylor_of_callable_uses_finite_differences() -> None:
    """Test T^3 of exp(I_1) drops the constant and linear terms."""
    result = taylor_expansion(lambda x: math.exp(x[0]), [0.0, 0.0], 3)
    assert not result.exact
    assert set(result.steps) == {2, 3}
    coeffs = result.polynomial.coeffs
    assert coeffs[(2, 0)] == pytest.approx(0.5, abs=1e-5)
    assert coeffs[(3, 0)] == pytest.approx(1.0 / 6.0, abs=1e-5)
    assert abs(coeffs.get((1, 1), 0.0)) < 1e-5


def test_taylor_matches_remainder() -> None:
    """Test P(X) == h(I0+X) - h(I0) - grad h(I0).X for a cubic h."""
    h = series_add(
        series_add(FourierTaylorSeries.monomial(2, (3, 0), 1.0), FourierTaylorSeries.monomial(2, (1, 1), 2.0)),
        FourierTaylorSeries.monomial(2, (0, 2), -0.5)
    )
    center = np.array([0.3, -0.2])
    P = taylor_polynomial(h, center, 3)
    X = np.array([0.006, -0.008])
    grad = h.evaluator().grad_action(np.zeros(2), center)
    expected = h.evaluate([0, 0], center + X) - h.evaluate([0, 0], center) - float(grad @ X)
    assert abs(float(P.value(X)) - expected) < 1e-8


def test_taylor_errors() -> None:
    """Test degree and domain checks."""
    h = FourierTaylorSeries.monomial(2, (2, 0), 1.0)
    with pytest.raises(ValueError):
        taylor_polynomial(h, [0.0, 0.0], 1)
    with pytest.raises(ValueError):
        taylor_polynomial(h, [2.0, 0.0], 2, radius=1.0)


def test_gevrey_trivial_cases(cos1) -> None:
    """Test the zero, constant and cosine norms."""
    assert gevrey_norm_estimate(FourierTaylorSeries.zero(2), 1, 1, 1, 1).value == 0.0
    assert gevrey_norm_estimate(FourierTaylorSeries.constant(2, -2.5), 1, 1, 1, 1).value == pytest.approx(2.5)
    assert gevrey_norm_estimate(cos1, 1, 1, 1, 1).value == pytest.approx(1.0)


def test_gevrey_monotone_in_orders() -> None:
    """Test that inspecting more derivative orders never lowers the estimate."""
    f = series_add(FourierTaylorSeries.trig(2, (2, 1), (2, 0), cos=0.4), FourierTaylorSeries.trig(2, (0, 1), sin=0.3))
    low = gevrey_norm_estimate(f, 1, 1, 1, 1, orders=(1, 1)).value
    high = gevrey_norm_estimate(f, 1, 1, 1, 1, orders=(3, 2)).value
    assert high >= low > 0.0


def test_gevrey_rejects_invalid_constants(cos1) -> None:
    """Test that Gevrey exponents and scales below 1 are refused."""
    with pytest.raises(ValueError):
        gevrey_norm_estimate(cos1, 0.5, 1, 1, 1)
    with pytest.raises(ValueError):
        gevrey_norm_estimate(cos1, 1, 1, 1, 0.5)


def test_action_polynomial_structure() -> None:
    """Test P2(n, m) membership and derivatives."""
    with pytest.raises(ValueError):
        ActionPolynomial(2, 3, {(1, 0): 1.0})
    P = ActionPolynomial(2, 2, {(2, 0): 0.5, (0, 2): 0.5})
    x = np.array([0.3, -0.4])
    assert float(P.value(x)) == pytest.approx(0.125)
    assert np.allclose(P.gradient(x), x)
    assert np.allclose(P.hessian(x), np.eye(2))
    assert P.sub(P).coeffs == {}
    assert ActionPolynomial.from_dict(P.to_dict()) == P
