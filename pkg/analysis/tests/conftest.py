import pytest

from analysis.dyadic import build_system
from analysis.quadrature import build_sphere_rule, sphere_rule_for_complex_sphere
from core.group import GroupDim
from experiments.services import lab_domain


@pytest.fixture(scope="session")
def dim1():
    return GroupDim(1)


@pytest.fixture(scope="session")
def sphere1(dim1):
    return build_sphere_rule(dim1, 8, sphere_rule_for_complex_sphere(1, 16))


@pytest.fixture(scope="session")
def sphere2():
    return build_sphere_rule(GroupDim(2), 16, sphere_rule_for_complex_sphere(2, 64))


@pytest.fixture(scope="session")
def system(dim1):
    # (16, 16, 128) ячеек на [-1, 1]^3, уровни -2..1
    return build_system(lab_domain(dim1, 16), 0.5, (-2, 1), seed=0)


@pytest.fixture(scope="session")
def deep_system(dim1):
    # (8, 8, 32) ячеек, пять уровней -4..0; 0.9^-4 < d(a, a^-1) / 2 для угловой ячейки a,
    # поэтому на уровне -4 больше одного куба
    return build_system(lab_domain(dim1, 8), 0.9, (-4, 0), seed=0)
