from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import equator_loop, torus_line
from geolab.errors import NotCritical
from geolab.flows import refine_critical
from geolab.loopspace import PeriodData, TimeGrid
from geolab.manifold import FlatTorus, RoundSphere, TriaxialEllipsoid
from geolab.morse import (classify_indices, dichotomy_scan, discrete_hessian, jacobi_conjugate_count,
                          loop_conjugate_count, loop_spectrum)


def great_circle_conjugates(multiplicity):
    """Conjugate points of a unit-sphere great circle lie every pi of arc: 2m - 1 in (0, 2 pi m)."""
    return 2 * multiplicity - 1


@pytest.fixture(scope="module")
def circle_record():
    return refine_critical(equator_loop(8))


@pytest.fixture(scope="module")
def line_record():
    return refine_critical(torus_line(8))


@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_great_circle_iterate_index(circle_record, m):
    rep = discrete_hessian(circle_record, PeriodData.from_m(1, 1, m))
    assert rep.index == great_circle_conjugates(m + 1)
    # rotations of the sphere plus the time shift
    assert rep.nullity == 3
    assert rep.m == m


def test_pulled_back_hessian_keeps_index(circle_record):
    pd = PeriodData.from_m(1, 1, 2)
    a = discrete_hessian(circle_record, pd)
    b = discrete_hessian(circle_record, pd, pulled_back=True)
    assert (a.index, a.nullity) == (b.index, b.nullity)


def test_torus_line_iterates_have_index_zero(line_record):
    for m in range(4):
        rep = discrete_hessian(line_record, PeriodData.from_m(1, 1, m))
        assert (rep.index, rep.nullity) == (0, 2)


def test_discrete_hessian_requires_critical_record(circle_record):
    from dataclasses import replace
    with pytest.raises(NotCritical):
        discrete_hessian(replace(circle_record, grad_norm=1e-3), PeriodData.from_m(1, 1, 0))


def test_spectrum_counts_add_up():
    rep = loop_spectrum(equator_loop(8))
    assert rep.index + rep.nullity + rep.positive == len(rep.eigenvalues) == 16
    assert rep.null_tol == pytest.approx(1e-6 * np.max(np.abs(rep.eigenvalues)))


@given(turns=st.integers(1, 4), speed=st.floats(0.5, 4.0))
def test_jacobi_sphere_matches_closed_form(turns, speed):
    # conjugate points at arc length pi j: count floor of (T |v| / pi) with the end excluded
    s = RoundSphere(1.0)
    T = turns * 2 * np.pi / speed
    n = jacobi_conjugate_count(s, [1.0, 0, 0], [0, speed, 0], T)
    assert n == 2 * turns - 1


def test_jacobi_torus_has_no_conjugate_points():
    assert jacobi_conjugate_count(FlatTorus(), [0.1, 0.2], [1.0, 0.3], 5.0) == 0


def test_jacobi_ellipsoid_of_revolution_matches_sphere():
    e = TriaxialEllipsoid(1.0, 1.0, 1.0)
    assert jacobi_conjugate_count(e, [1.0, 0, 0], [0, 2 * np.pi, 0], 2.0, n_samples=400) == 3


def test_ellipsoid_curvature_closed_form():
    a, b, c = 1.0, 1.1, 1.2
    e = TriaxialEllipsoid(a, b, c)
    # Gaussian curvature at the vertices of a triaxial ellipsoid
    assert e.curvature(np.array([a, 0, 0])) == pytest.approx(a ** 2 / (b ** 2 * c ** 2), rel=1e-14)
    assert e.curvature(np.array([0, 0, c])) == pytest.approx(c ** 2 / (a ** 2 * b ** 2), rel=1e-14)


def test_loop_conjugate_count_closed_form():
    loop = equator_loop(16)
    for mult in (1, 2, 3):
        assert loop_conjugate_count(loop, mult) == great_circle_conjugates(mult)


def test_jacobi_rejects_higher_dimensions():
    from geolab.manifold import CircleTimesSphere
    with pytest.raises(ValueError):
        jacobi_conjugate_count(CircleTimesSphere(), [0, 1, 0, 0], [1, 0, 0, 0], 1.0)


def test_classify_indices_examples():
    assert classify_indices([0, 0, 0], 2) == "ALL_ZERO"
    assert classify_indices([1, 3, 5], 2) == "GROWING"
    assert classify_indices([1, 3], 2) == "INCONCLUSIVE"
    assert classify_indices([1, 5, 3], 2) == "INCONCLUSIVE"
    assert classify_indices([1, 3], 2, threshold=2) == "GROWING"


def test_dichotomy_scan_sphere_and_torus(circle_record, line_record):
    sphere_scan = dichotomy_scan(circle_record, 1, 1, 4)
    assert sphere_scan.m_values == [0, 1, 2, 3, 4]
    assert sphere_scan.indices == [1, 3, 5, 7, 9]
    assert sphere_scan.verdict == "GROWING"
    torus_scan = dichotomy_scan(line_record, 1, 1, 3)
    assert torus_scan.verdict == "ALL_ZERO"
    rows = torus_scan.to_rows()
    assert [r["m"] for r in rows] == [0, 1, 2, 3]


def test_dichotomy_scan_short_range_inconclusive(circle_record):
    scan = dichotomy_scan(circle_record, 1, 1, 1)
    assert scan.indices == [1, 3]
    assert scan.verdict == "INCONCLUSIVE"


def test_dichotomy_scan_half_periods():
    # q = 2 with p = 1: only every other iterate lies in the class of q' = 0
    rec = refine_critical(equator_loop(8, q=2.0))
    scan = dichotomy_scan(rec, 1, 2, 6)
    assert scan.q_prime == Fraction(0)
    assert scan.m_values == [1, 3, 5]
    assert scan.indices == [great_circle_conjugates(j) for j in (1, 2, 3)]
