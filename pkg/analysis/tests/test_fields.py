import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from analysis import fields
from analysis.fields import (
    BoxGrid,
    GridFunction,
    ball,
    ball_family,
    cube_average,
    interpolate,
    lp_norm,
    pairing,
    sample,
)
from core.exceptions import PreconditionError
from core.group import GroupDim, Point


@pytest.fixture
def grid(dim1):
    return BoxGrid.cube(dim1, 1.0, 8)


def test_grid_geometry(grid):
    assert grid.shape == (8, 8, 8)
    assert grid.size == 512
    assert grid.volume == pytest.approx(8.0)
    assert grid.cell_volume == pytest.approx(8.0 / 512)
    assert grid.spacing == pytest.approx(math.sqrt(0.25))
    assert grid.points().shape == (512, 3)


def test_refined_grid_halves_spacing(grid):
    fine = grid.refined()
    assert fine.shape == (16, 16, 32)
    assert fine.spacing == pytest.approx(grid.spacing / 2)
    assert fine.volume == pytest.approx(grid.volume)


def test_grid_rejects_bad_shapes(dim1):
    with pytest.raises(PreconditionError):
        BoxGrid(Point.origin(dim1), 1.0, 1.0, (8, 8))
    with pytest.raises(PreconditionError):
        BoxGrid(Point.origin(dim1), 1.0, 1.0, (8, 1, 8))
    with pytest.raises(PreconditionError):
        BoxGrid(Point.origin(dim1), -1.0, 1.0, (8, 8, 8))


def test_cell_index(grid):
    assert grid.cell_index(np.zeros(3))[0] >= 0
    assert grid.cell_index(np.array([2.0, 0.0, 0.0]))[0] == -1
    corner = grid.points()[0]
    assert grid.cell_index(corner)[0] == 0


def test_lp_norm_of_constant(grid):
    one = sample(grid, lambda x: 1.0)
    assert lp_norm(one, 1) == pytest.approx(8.0)
    assert lp_norm(one, 2) == pytest.approx(math.sqrt(8.0))
    assert lp_norm(one, math.inf) == 1.0
    with pytest.raises(PreconditionError):
        lp_norm(one, 0.5)


def test_weighted_norm_needs_positive_weight(grid):
    one = sample(grid, lambda x: 1.0)
    w = sample(grid, lambda x: 2.0)
    assert lp_norm(one, 1, w) == pytest.approx(16.0)
    with pytest.raises(PreconditionError):
        lp_norm(one, 1, w.with_values(np.zeros(grid.size)))


def test_sample_refuses_non_finite(grid):
    with pytest.raises(PreconditionError):
        sample(grid, lambda x: np.full(x.shape[0], np.inf))


def test_interpolation_reproduces_linear_function(grid):
    F = sample(grid, lambda x: 1.0 + x[..., 0] - 2.0 * x[..., 2])
    p = Point((0.3,), (-0.1,), 0.2)
    assert interpolate(F, p) == pytest.approx(1.0 + 0.3 - 0.4)
    assert interpolate(F, Point((5.0,), (0.0,), 0.0)) == 0.0


def test_binary_round_trip(tmp_path, grid):
    F = sample(grid, fields.test_functions(grid.dim, "random_trig", seed=5))
    G = GridFunction.from_binary(F.to_binary(tmp_path / "f.bin"))
    assert G.grid.resolution == grid.resolution
    assert G.grid.half_width_t == grid.half_width_t
    assert_allclose(G.values, F.values, rtol=0, atol=0)


def test_binary_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"nope" + bytes(32))
    with pytest.raises(PreconditionError):
        GridFunction.from_binary(path)


def test_cube_average_and_pairing(grid):
    F = sample(grid, lambda x: 2.0 + 0 * x[..., 0])
    cells = np.arange(10)
    assert cube_average(F, cells) == pytest.approx(2.0)
    assert cube_average(F, cells, p=3) == pytest.approx(2.0)
    assert pairing(F, F) == pytest.approx(4.0 * grid.volume)
    with pytest.raises(PreconditionError):
        cube_average(F, np.empty(0, dtype=int))


def test_balls(grid):
    b = ball(grid, Point.origin(grid.dim), 0.8)
    assert b.cells.size > 0
    assert np.all(np.linalg.norm(grid.points()[b.cells][:, :2], axis=1) < 0.8)
    family = ball_family(grid, [Point.origin(grid.dim), Point((9.0,), (9.0,), 0.0)], (0.8, 1.0))
    assert len(family) == 2


@pytest.mark.parametrize("kind", ["gaussian", "koranyi_ball_indicator", "smooth_bump", "random_trig",
                                  "power_weight"])
def test_named_functions_are_finite(kind, grid):
    f = fields.test_functions(grid.dim, kind)
    assert np.all(np.isfinite(f(grid.points())))


def test_unknown_function_kind():
    with pytest.raises(PreconditionError):
        fields.test_functions(GroupDim(1), "wavelet")


def test_interpolation_decays_to_zero_at_faces(grid):
    one = sample(grid, lambda x: 1.0 + 0 * x[..., 0])
    # крайний центр 0.875, грань 1.0
    assert interpolate(one, Point((0.95,), (0.0,), 0.0)) == pytest.approx(0.4)
    assert interpolate(one, Point((1.0,), (0.0,), 0.0)) == pytest.approx(0.0, abs=1e-12)
    assert interpolate(one, Point((1.05,), (0.0,), 0.0)) == 0.0
    assert interpolate(one, Point((0.0,), (-0.9,), 0.0)) == pytest.approx(0.8)


def test_interpolation_error_is_second_order(dim1):
    f = fields.test_functions(dim1, "gaussian")
    pts = np.random.default_rng(11).uniform(-0.7, 0.7, size=(4000, 3))
    errors = []
    for res in (16, 32):
        F = sample(BoxGrid.cube(dim1, 1.0, res), f)
        errors.append(math.sqrt(np.mean((F(pts) - f(pts)) ** 2)))
    assert 3.5 <= errors[0] / errors[1] <= 4.5


def test_cell_diameter_grows_with_shear(grid):
    assert grid.cell_diameter_at(1.0) > grid.cell_diameter_at(0.0)
    assert grid.koranyi_cell_diameter == pytest.approx(grid.cell_diameter_at(math.sqrt(2.0)))
