import math

import numpy as np
import pytest
from scipy.stats import unitary_group

from analysis.quadrature import (
    ComplexSphereRule,
    build_sphere_rule,
    integrate_on_sphere,
    polar_integrate,
    sphere_rule_for_complex_sphere,
    theta_constant,
)
from core.exceptions import PreconditionError
from core.group import GroupDim, koranyi_ball_volume, koranyi_norm_coords


@pytest.mark.parametrize("n, size", [(1, 16), (2, 8), (2, 64), (3, 40)])
def test_complex_sphere_rule_is_probability(n, size):
    rule = sphere_rule_for_complex_sphere(n, size, seed=3)
    assert rule.n == n
    assert np.sum(rule.weights) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.linalg.norm(rule.vectors, axis=1), 1.0)


def test_complex_sphere_rule_rejects_bad_weights():
    with pytest.raises(PreconditionError):
        ComplexSphereRule(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.7, 0.7]))
    with pytest.raises(PreconditionError):
        sphere_rule_for_complex_sphere(2, 3)


def test_theta_constant():
    assert theta_constant(1) == pytest.approx(1.0 / math.pi)
    assert theta_constant(2) == pytest.approx(0.5)


@pytest.mark.parametrize("n, size", [(1, 16), (2, 64)])
def test_sphere_measure(n, size):
    dim = GroupDim(n)
    q = build_sphere_rule(dim, 16, sphere_rule_for_complex_sphere(n, size))
    assert len(q) == 16 * size
    assert np.sum(q.weights) == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(koranyi_norm_coords(q.nodes) - 1.0)) < 1e-12
    assert abs(integrate_on_sphere(q, lambda x: x[..., -1])) < 1e-14
    assert integrate_on_sphere(q, lambda x: koranyi_norm_coords(x) ** 4) == pytest.approx(1.0)


def test_dilated_nodes_lie_on_sphere_of_radius(sphere1):
    nodes = sphere1.dilated_nodes(1.7)
    assert np.allclose(koranyi_norm_coords(nodes), 1.7)


def test_build_rejects_low_order_and_wrong_sphere():
    with pytest.raises(PreconditionError):
        build_sphere_rule(GroupDim(1), 4, sphere_rule_for_complex_sphere(1, 16))
    with pytest.raises(PreconditionError):
        build_sphere_rule(GroupDim(2), 16, sphere_rule_for_complex_sphere(1, 16))


def test_polar_integral_of_gaussian():
    dim = GroupDim(1)
    q = build_sphere_rule(dim, 16, sphere_rule_for_complex_sphere(1, 32))
    kappa = dim.Q * koranyi_ball_volume(dim)

    def gaussian(x):
        return np.exp(-np.sum(x[..., :2] ** 2, axis=-1) - x[..., 2] ** 2)

    assert polar_integrate(dim, q, kappa, gaussian) == pytest.approx(math.pi ** 1.5, rel=1e-3)


def test_polar_integral_of_ball_indicator():
    dim = GroupDim(1)
    q = build_sphere_rule(dim, 16, sphere_rule_for_complex_sphere(1, 32))
    kappa = dim.Q * koranyi_ball_volume(dim)

    def indicator(x):
        return (koranyi_norm_coords(x) < 1.0).astype(float)

    value = polar_integrate(dim, q, kappa, indicator, radius=2.0)
    assert value == pytest.approx(koranyi_ball_volume(dim), rel=1e-2)


def test_sphere_csv(tmp_path, sphere1):
    path = sphere1.to_csv(tmp_path / "sphere.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x1,y1,t,weight"
    assert len(lines) == len(sphere1) + 1


def _rotate(U, x):
    n = U.shape[0]
    z = U @ (x[..., :n] + 1j * x[..., n:2 * n])[..., None]
    z = z[..., 0]
    return np.concatenate([z.real, z.imag, x[..., 2 * n:]], axis=-1)


def test_sphere_rule_is_unitary_invariant(sphere2):
    def f(x):
        return (x[..., 0] ** 2 + x[..., 2] ** 2) ** 2 * (1.0 + x[..., -1])

    base = integrate_on_sphere(sphere2, f)
    for seed in range(3):
        U = unitary_group.rvs(2, random_state=seed)
        assert integrate_on_sphere(sphere2, lambda x: f(_rotate(U, x))) == pytest.approx(base, rel=1e-12)


def test_theta_order_converges(dim1):
    sphere = sphere_rule_for_complex_sphere(1, 32)

    def f(x):
        return np.cos(3.0 * (x[..., 0] ** 2 + x[..., 1] ** 2)) * np.exp(x[..., -1])

    coarse = integrate_on_sphere(build_sphere_rule(dim1, 64, sphere), f)
    fine = integrate_on_sphere(build_sphere_rule(dim1, 256, sphere), f)
    assert coarse == pytest.approx(fine, rel=1e-12)
