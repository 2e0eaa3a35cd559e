import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from core.exceptions import HeisenbergError, NumericalError, PreconditionError
from core.group import (
    GroupDim,
    Point,
    dilate,
    dist_left,
    inverse,
    koranyi_ball_volume,
    koranyi_norm,
    multiply,
    multiply_coords,
    polar_constant,
)

coord = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)


@st.composite
def points(draw, n=2):
    x = tuple(draw(coord) for _ in range(n))
    y = tuple(draw(coord) for _ in range(n))
    return Point(x, y, draw(coord))


def _close(a: Point, b: Point, tol=1e-9):
    assert_allclose(a.as_array(), b.as_array(), atol=tol)


def test_group_dim():
    dim = GroupDim(2)
    assert dim.Q == 6
    assert dim.size == 5
    assert dim.within_hypotheses
    assert not GroupDim(1).within_hypotheses
    assert GroupDim.from_size(7) == GroupDim(3)


@pytest.mark.parametrize("n", [0, -1, 1.5])
def test_group_dim_rejects_bad_n(n):
    with pytest.raises(PreconditionError):
        GroupDim(n)


def test_point_rejects_non_finite():
    with pytest.raises(PreconditionError):
        Point((0.0,), (math.nan,), 0.0)
    with pytest.raises(PreconditionError):
        Point((0.0, 1.0), (0.0,), 0.0)


def test_errors_are_validation_errors():
    from django.core.exceptions import ValidationError

    assert issubclass(PreconditionError, HeisenbergError)
    assert issubclass(NumericalError, ValidationError)


def test_hand_product():
    p = Point((1.0,), (0.0,), 0.0) * Point((0.0,), (1.0,), 0.0)
    assert p == Point((1.0,), (1.0,), -0.5)


def test_mixed_dimensions_refused():
    with pytest.raises(PreconditionError):
        multiply(Point((0.0,), (0.0,), 0.0), Point((0.0, 0.0), (0.0, 0.0), 0.0))
    with pytest.raises(PreconditionError):
        multiply_coords(np.zeros(3), np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(points(), points(), points())
def test_associativity(a, b, c):
    _close(multiply(multiply(a, b), c), multiply(a, multiply(b, c)), tol=1e-8)


@settings(max_examples=60, deadline=None)
@given(points())
def test_inverse_and_identity(a):
    e = Point.origin(GroupDim(2))
    _close(multiply(a, inverse(a)), e)
    _close(multiply(inverse(a), a), e)
    _close(multiply(a, e), a)


@settings(max_examples=60, deadline=None)
@given(points(), points(), st.floats(min_value=0.1, max_value=4.0))
def test_dilation_is_automorphism(a, b, r):
    _close(dilate(r, multiply(a, b)), multiply(dilate(r, a), dilate(r, b)), tol=1e-7)


@settings(max_examples=60, deadline=None)
@given(points(), st.floats(min_value=0.1, max_value=4.0))
def test_norm_homogeneity(a, r):
    assert koranyi_norm(dilate(r, a)) == pytest.approx(r * koranyi_norm(a), rel=1e-9, abs=1e-12)
    assert koranyi_norm(inverse(a)) == pytest.approx(koranyi_norm(a))


@settings(max_examples=60, deadline=None)
@given(points(), points(), points())
def test_metric_axioms(a, b, c):
    assert dist_left(a, b) == pytest.approx(dist_left(b, a), rel=1e-9, abs=1e-12)
    assert dist_left(a, c) <= dist_left(a, b) + dist_left(b, c) + 1e-9
    assert dist_left(multiply(c, a), multiply(c, b)) == pytest.approx(dist_left(a, b), rel=1e-7, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(points(), points())
def test_norm_triangle(a, b):
    assert koranyi_norm(multiply(a, b)) <= koranyi_norm(a) + koranyi_norm(b) + 1e-9


def test_ball_volume_closed_form():
    # n = 1: pi * B(1/2, 3/2) / 4 = pi^2 / 8
    assert koranyi_ball_volume(GroupDim(1)) == pytest.approx(math.pi ** 2 / 8)


def test_polar_constant_matches_ball_volume():
    from analysis.quadrature import build_sphere_rule, sphere_rule_for_complex_sphere

    for n, n_theta, size in [(1, 16, 32), (2, 64, 64)]:
        dim = GroupDim(n)
        q = build_sphere_rule(dim, n_theta, sphere_rule_for_complex_sphere(n, size))
        kappa = polar_constant(dim, q)
        assert kappa == pytest.approx(dim.Q * koranyi_ball_volume(dim), rel=1e-3)


def test_polar_constant_refuses_unnormalized_rule():
    class Broken:
        nodes = np.zeros((1, 3))
        weights = np.array([0.5])

    with pytest.raises(PreconditionError):
        polar_constant(GroupDim(1), Broken())
