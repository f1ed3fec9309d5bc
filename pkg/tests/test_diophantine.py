"""Test the diophantine module."""

import itertools
import math

import numpy as np
import pytest

from torus_lab.core.diophantine import (
    _half_space_vectors,
    count_scan_vectors,
    default_scan_depth,
    gamma_estimate,
    omega_set_membership,
)
from torus_lab.core.errors import ScanBudgetExceeded

PHI = (1.0 + math.sqrt(5.0)) / 2.0


def test_exact_resonance() -> None:
    """Test that omega = (1, 1) is resonant at k = (1, -1)."""
    report = gamma_estimate((1.0, 1.0), tau=1.0, K=2)
    assert report.gamma_est == 0.0
    assert report.raw_min == 0.0
    assert report.argmin_k == (1, -1)


def test_golden_mean() -> None:
    """Test that the golden vector is capped at gamma = 1 with minimiser (1, 0)."""
    report = gamma_estimate((1.0, PHI), tau=1.0, K=50)
    assert report.gamma_est == pytest.approx(1.0)
    assert report.raw_min == pytest.approx(1.0)
    assert report.argmin_k == (1, 0)


def test_resonance_with_zero_component() -> None:
    """Test that a vanishing frequency is caught by k = (0, 1)."""
    report = gamma_estimate((1.0, 0.0), tau=1.0, K=1)
    assert report.gamma_est == 0.0
    assert report.argmin_k == (0, 1)


def test_gamma_non_increasing_in_depth() -> None:
    """Test that deeper scans never raise the estimate."""
    omega = (1.0, math.sqrt(2.0))
    values = [gamma_estimate(omega, tau=1.0, K=K).raw_min for K in (10, 20, 50)]
    assert values[0] >= values[1] >= values[2] > 0.0


def test_three_dimensional_scan() -> None:
    """Test a scan with tau = n - 1 in three dimensions."""
    report = gamma_estimate((1.0, math.sqrt(2.0), math.sqrt(3.0)), tau=2.0, K=6)
    assert 0.0 < report.gamma_est <= 1.0
    assert sum(abs(x) for x in report.argmin_k) <= 6
    assert next(x for x in report.argmin_k if x != 0) > 0


def test_scaling_by_two_is_exact() -> None:
    """Test that doubling omega doubles the raw minimum bit for bit."""
    omega = (1.0, PHI, math.sqrt(2.0))
    single = gamma_estimate(omega, tau=2.5, K=6)
    double = gamma_estimate(tuple(2.0 * x for x in omega), tau=2.5, K=6)
    assert double.raw_min == 2.0 * single.raw_min


@pytest.mark.parametrize('order', [(1, 0, 2), (2, 1, 0), (1, 2, 0)])
def test_permutation_invariance(order) -> None:
    """Test that permuting omega leaves the raw minimum unchanged up to rounding."""
    omega = (1.0, PHI, math.sqrt(2.0))
    base = gamma_estimate(omega, tau=2.5, K=6)
    permuted = gamma_estimate(tuple(omega[i] for i in order), tau=2.5, K=6)
    assert permuted.raw_min == pytest.approx(base.raw_min, rel=1e-13)


@pytest.mark.parametrize('n, K', [(1, 4), (2, 5), (3, 4), (4, 3)])
def test_half_space_enumeration(n, K) -> None:
    """Test that the scan builds exactly the budgeted half-space of the l1 ball."""
    ks = _half_space_vectors(n, K)
    assert len(ks) == count_scan_vectors(n, K)
    expected = {
        k for k in itertools.product(range(-K, K + 1), repeat=n)
        if 0 < sum(abs(x) for x in k) <= K and next(x for x in k if x != 0) > 0
    }
    assert {tuple(int(x) for x in k) for k in ks} == expected
    norms = np.sum(np.abs(ks), axis=1)
    assert np.all(np.diff(norms) >= 0)


def test_invalid_arguments() -> None:
    """Test argument validation."""
    with pytest.raises(ValueError):
        gamma_estimate((0.0, 0.0), tau=1.0, K=5)
    with pytest.raises(ValueError):
        gamma_estimate((1.0, PHI), tau=1.0, K=0)
    with pytest.raises(ValueError):
        gamma_estimate((1.0, PHI, 2.0), tau=1.5, K=5)


def test_scan_budget() -> None:
    """Test that oversized scans are refused before they start."""
    assert count_scan_vectors(2, 1) == 2
    assert count_scan_vectors(2, 2) == 6
    with pytest.raises(ScanBudgetExceeded):
        gamma_estimate((1.0, PHI), tau=1.0, K=50, budget=10)


def test_default_depths() -> None:
    """Test the per-dimension default scan radius."""
    assert default_scan_depth(2) == 50
    assert default_scan_depth(3) == 20
    assert default_scan_depth(7) == 6


def test_membership_inside_box() -> None:
    """Test a Diophantine vector well inside its box."""
    report = omega_set_membership((1.0, PHI), [(0.0, 3.0), (0.0, 3.0)], gamma=0.5, tau=1.0, K=20)
    assert report.member
    assert report.boundary_distance == pytest.approx(1.0)
    assert report.to_dict()['diophantine_margin'] == pytest.approx(0.5)


def test_membership_resonant_vector() -> None:
    """Test that a resonant vector is not a member however far from the boundary."""
    report = omega_set_membership((0.5, 0.5), [(0.0, 1.0), (0.0, 1.0)], gamma=0.4, tau=1.0, K=5)
    assert not report.member
    assert report.boundary_distance == pytest.approx(0.5)


def test_membership_boundary_point() -> None:
    """Test that a point on the boundary is never a member."""
    report = omega_set_membership((1.0, PHI), [(1.0, 2.0), (1.0, 2.0)], gamma=0.1, tau=1.0, K=10)
    assert not report.member
    assert report.boundary_distance == 0.0


def test_membership_validation() -> None:
    """Test that outside points and bad gamma are refused."""
    with pytest.raises(ValueError):
        omega_set_membership((5.0, PHI), [(0.0, 3.0), (0.0, 3.0)], gamma=0.5, tau=1.0, K=5)
    with pytest.raises(ValueError):
        omega_set_membership((1.0, PHI), [(0.0, 3.0), (0.0, 3.0)], gamma=0.0, tau=1.0, K=5)
