import numpy as np
import pytest

from analysis import spectral
from analysis.fields import BoxGrid, GridFunction, lp_norm, sample
from analysis.operators import (
    LacunaryConfig,
    continuity_deficit,
    continuity_fit,
    dilated,
    improving_scaling_fit,
    lacunary_maximal,
    poisson_mean,
    poisson_radial_rule,
    power_fit,
    right_translate,
    spherical_mean,
    spherical_mean_at,
    translate_right,
)
from core.exceptions import NumericalError, PreconditionError
from core.group import (
    Point,
    dilate_coords,
    inverse,
    koranyi_ball_volume,
    koranyi_norm_coords,
    multiply_coords,
)


def _gaussian(x):
    return np.exp(-np.sum(x[..., :-1] ** 2, axis=-1) - x[..., -1] ** 2)


def _one(x):
    return np.ones(np.asarray(x).shape[:-1])


def test_mean_of_constant_is_constant(sphere1, sphere2):
    pts = np.random.default_rng(1).normal(size=(20, 3))
    assert np.allclose(spherical_mean_at(_one, 0.7, sphere1, pts), 1.0)
    pts = np.random.default_rng(1).normal(size=(20, 5))
    assert np.allclose(spherical_mean_at(_one, 2.5, sphere2, pts), 1.0)


@pytest.mark.parametrize("r", [0.3, 1.0, 1.3])
def test_mean_of_fourth_power_at_origin(sphere2, r):
    value = spherical_mean_at(lambda x: koranyi_norm_coords(x) ** 4, r, sphere2, np.zeros((1, 5)))
    assert value[0] == pytest.approx(r ** 4, rel=1e-10)


def test_radius_must_be_positive(sphere1):
    with pytest.raises(PreconditionError):
        spherical_mean_at(_one, 0.0, sphere1, np.zeros((1, 3)))


def test_unresolved_radius_refused(dim1, sphere1):
    F = sample(BoxGrid.cube(dim1, 1.0, 8), _gaussian)
    with pytest.raises(PreconditionError):
        spherical_mean(F, 0.5, sphere1)


def test_callable_needs_output_grid(sphere1):
    with pytest.raises(PreconditionError):
        spherical_mean(_gaussian, 1.0, sphere1)


def test_left_translation_commutes_with_mean(sphere1):
    b = np.array([0.2, -0.1, 0.05])
    pts = np.random.default_rng(2).uniform(-1.0, 1.0, size=(30, 3))

    def moved(x):
        return _gaussian(multiply_coords(b, x))

    left = spherical_mean_at(moved, 0.8, sphere1, pts)
    right = spherical_mean_at(_gaussian, 0.8, sphere1, multiply_coords(b, pts))
    assert np.allclose(left, right, rtol=1e-12, atol=1e-14)


def test_lacunary_maximal_grows_with_window(dim1, sphere1):
    grid = BoxGrid.cube(dim1, 1.0, 6)
    small = lacunary_maximal(_gaussian, LacunaryConfig(0.5, 0, 1), sphere1, grid)
    large = lacunary_maximal(_gaussian, LacunaryConfig(0.5, -1, 2), sphere1, grid)
    assert np.all(large.values >= small.values - 1e-15)
    single = spherical_mean_at(_gaussian, 1.0, sphere1, grid.points())
    assert np.all(small.values >= single - 1e-15)


@pytest.mark.parametrize("delta, k_min, k_max", [(1.0, 0, 1), (0.5, 2, 1), (0.0, 0, 0)])
def test_lacunary_config_refusals(delta, k_min, k_max):
    with pytest.raises(PreconditionError):
        LacunaryConfig(delta, k_min, k_max)


def test_lacunary_scales():
    assert LacunaryConfig(0.5, -1, 1).scales == [2.0, 1.0, 0.5]


@pytest.mark.parametrize("t", [0.1, 1.0, 7.0])
def test_poisson_radial_rule_has_unit_mass(sphere2, t):
    Q = sphere2.dim.Q
    kappa = Q * koranyi_ball_volume(sphere2.dim)
    _, weights = poisson_radial_rule(Q, t, kappa, spectral.c_q(Q, kappa))
    assert np.sum(weights) == pytest.approx(1.0, rel=1e-6)


def test_poisson_mean_of_constant(dim1, sphere1):
    kappa = dim1.Q * koranyi_ball_volume(dim1)
    grid = BoxGrid.cube(dim1, 1.0, 4)
    out = poisson_mean(_one, 0.5, kappa, sphere1, grid)
    assert np.allclose(out.values, 1.0, atol=1e-6)


def test_poisson_mass_defect_detected(dim1, sphere1):
    kappa = dim1.Q * koranyi_ball_volume(dim1)
    grid = BoxGrid.cube(dim1, 1.0, 4)
    with pytest.raises(NumericalError):
        poisson_mean(_one, 0.5, kappa, sphere1, grid, c_q=0.5 * spectral.c_q(dim1.Q, kappa))


def test_continuity_deficit_vanishes_at_zero_shift(dim1, sphere1):
    grid = BoxGrid.cube(dim1, 1.5, 8, half_width_t=1.5)
    assert continuity_deficit(_gaussian, 1.0, Point.origin(dim1), 2.0, 3.0, sphere1, grid) == 0.0
    shifted = continuity_deficit(_gaussian, 1.0, Point((0.25,), (0.0,), 0.0), 2.0, 3.0, sphere1, grid)
    assert shifted > 0.0


def test_continuity_refuses_large_shift(dim1, sphere1):
    grid = BoxGrid.cube(dim1, 1.0, 4)
    with pytest.raises(PreconditionError):
        continuity_deficit(_gaussian, 0.5, Point((1.0,), (0.0,), 0.0), 2.0, 3.0, sphere1, grid)


def test_scaling_slope_matches_homogeneity(dim1, sphere1):
    grid = BoxGrid.cube(dim1, 2.0, 8)
    fit = improving_scaling_fit(_gaussian, (0.25, 0.5, 1.0, 2.0), 2.0, 3.0, sphere1, grid)
    assert fit.slope == pytest.approx(dim1.Q * (1 / 3 - 1 / 2), abs=1e-6)
    assert fit.r_squared > 0.999


def test_dilated_function():
    f = dilated(lambda x: x[..., 0] + x[..., 2], 2.0)
    assert f(np.array([[1.0, 0.0, 1.0]]))[0] == pytest.approx(6.0)


def test_power_fit_refuses_non_positive():
    assert power_fit([1, 2, 4], [1, 4, 16]).slope == pytest.approx(2.0)
    with pytest.raises(NumericalError):
        power_fit([1, 2], [0.0, 1.0])


def test_mean_of_grid_function_commutes_with_dilation(dim1, sphere1):
    grid = BoxGrid.cube(dim1, 1.0, 8)
    F = sample(grid, _gaussian)
    # те же отсчёты на растянутой сетке задают F o delta_{1/2}
    stretched = GridFunction(grid.scaled(2.0), F.samples)
    pts = grid.points()
    left = spherical_mean_at(stretched, 1.0, sphere1, dilate_coords(2.0, pts))
    right = spherical_mean_at(F, 0.5, sphere1, pts)
    assert np.allclose(left, right, rtol=1e-10, atol=1e-14)


def test_mean_is_positive_and_contracts_sup_norm(dim1, sphere1):
    grid = BoxGrid.cube(dim1, 1.0, 8)
    rng = np.random.default_rng(4)
    F = GridFunction(grid, rng.uniform(0.0, 2.0, grid.shape))
    out = spherical_mean(F, 1.0, sphere1)
    assert out.values.min() >= 0.0
    assert out.values.max() <= F.values.max() + 1e-12

    signed = F.with_values(F.values - 1.0)
    assert np.abs(spherical_mean(signed, 1.0, sphere1).values).max() <= np.abs(signed.values).max() + 1e-12


def test_continuity_deficit_grows_with_shift(dim1, sphere1):
    grid = BoxGrid.cube(dim1, 1.5, 8, half_width_t=1.5)
    fit = continuity_fit(_gaussian, 1.0, Point((1.0,), (0.0,), 0.0), (0.1, 0.2, 0.4), 2.0, 3.0, sphere1, grid)
    assert fit.slope > 0.5
    assert fit.r_squared > 0.9


def test_poisson_mean_commutes_with_dilation(dim1, sphere1):
    kappa = dim1.Q * koranyi_ball_volume(dim1)
    grid = BoxGrid.cube(dim1, 1.0, 4)
    left = poisson_mean(dilated(_gaussian, 2.0), 0.5, kappa, sphere1, grid)
    right = poisson_mean(_gaussian, 1.0, kappa, sphere1, grid.scaled(2.0))
    assert np.allclose(left.values, right.values, rtol=1e-10, atol=1e-14)


def test_right_translation_round_trip(dim1):
    grid = BoxGrid(Point.origin(dim1), 3.0, 3.0, (24, 24, 48))
    a = Point((0.3,), (-0.2,), 0.15)
    f = sample(grid, _gaussian)
    back = translate_right(right_translate(_gaussian, a), inverse(a), grid)
    assert np.allclose(back.values, f.values, rtol=0, atol=1e-12)

    moved = translate_right(_gaussian, a, grid)
    assert not np.allclose(moved.values, f.values)
    for p in (1.0, 2.0, 4.0):
        assert lp_norm(moved, p) == pytest.approx(lp_norm(f, p), rel=1e-4)
