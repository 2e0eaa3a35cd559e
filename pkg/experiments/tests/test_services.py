import math

import numpy as np
import pytest

from analysis.dyadic import build_system
from analysis.fields import lp_norm, sample, test_functions
from analysis.operators import LacunaryConfig, lacunary_maximal
from analysis.sparse import active_cubes, averaging_family
from analysis.weights import weighted_maximal_ratio
from core.group import GroupDim
from experiments.forms import ExperimentConfigForm
from experiments.services import (
    RunReport,
    busiest_cube,
    choose_q0,
    cube_indicator,
    lab_domain,
    power_weight_rows,
    representation_profiles,
    run,
    smooth_pair,
    sparse_refinement,
    sphere_quadrature,
)

SPARSE_N1 = {"command": "sparse-dominate", "n": 1, "grid": 8, "delta": 0.9, "kmin": -4, "kmax": 0, "pairs": 3}


def _config(data):
    form = ExperimentConfigForm(data=data)
    assert form.is_valid(), form.errors
    return form.config


def _metric(report, name):
    return next(m["value"] for m in report.metrics if m["name"] == name)


def test_report_criteria():
    report = RunReport("verify-group", {"seed": 0}, True)
    assert report.check("small", 1e-14, "<=", 1e-12, "group law")
    assert not report.check("nan", math.nan, "<=", 1.0, "group law")
    assert report.require("exact", True, "group law")
    assert not report.passed
    summary = report.summary()
    assert [c["passed"] for c in summary["criteria"]] == [True, False, True]
    assert summary["criteria"][2]["relation"] == "is"
    assert summary["within_hypotheses"] is True


def test_infinite_value_fails_check():
    report = RunReport("weights", {}, False)
    assert not report.check("ratio", math.inf, "<", math.inf, "weighted lacunary bound")


def test_lab_domain_is_homogeneous():
    grid = lab_domain(GroupDim(1), 16)
    assert grid.resolution == (16, 16, 128)
    assert grid.spacings[0] == pytest.approx(math.sqrt(grid.spacings[2]))


def test_representation_profiles():
    cases = representation_profiles()
    assert len(cases) == 7
    assert sum(1 for t, _ in cases if t == 2.0) == 1


@pytest.mark.django_db
def test_run_verify_representation():
    form = ExperimentConfigForm(data={"command": "verify-representation"})
    assert form.is_valid(), form.errors
    report = run(form.config)
    assert report.passed, [c for c in report.criteria if not c.passed]
    assert len(report.tables["representation"]) == 7


@pytest.fixture(scope="module")
def small_system():
    return build_system(lab_domain(GroupDim(1), 8), 0.9, (-4, 0), seed=0)


def test_choose_q0_is_proper_cube(small_system):
    Q0 = choose_q0(small_system)
    assert Q0.level == -4
    assert len(Q0) < small_system.grid.size
    assert len(averaging_family(small_system, Q0)) > 1


def test_default_sparse_system_for_n2():
    cfg = _config({"command": "sparse-dominate"})
    system = build_system(lab_domain(cfg.dim, cfg.grid), cfg.delta, (cfg.kmin, cfg.kmax), seed=cfg.seed)
    assert system.levels == [-5, -4, -3, -2, -1, 0]
    Q0 = choose_q0(system)
    assert len(Q0) < system.grid.size
    family = averaging_family(system, Q0)
    assert len(family) > 1
    assert len({c.level for c in family}) == 2


def test_busiest_cube_of_single_top():
    system = build_system(lab_domain(GroupDim(1), 8), 0.6, (-3, 0), seed=0)
    # любые две ячейки ближе 0.6^-3: грубый уровень - один куб
    assert len(system.cubes(-3)) == 1
    Q0 = busiest_cube(system)
    assert len(Q0) == system.grid.size
    assert active_cubes(system, Q0)


def test_cube_indicator_matches_labels(small_system):
    cube = small_system.cubes(-4)[1]
    values = cube_indicator(small_system, cube)(small_system.grid.points())
    assert np.array_equal(np.flatnonzero(values), np.sort(cube.cells))
    assert cube_indicator(small_system, cube)(np.array([[5.0, 0.0, 0.0]]))[0] == 0.0


def test_smooth_pair_lives_on_q0(small_system):
    Q0 = choose_q0(small_system)
    f, g = smooth_pair(np.random.default_rng(0), small_system, Q0)
    pts = small_system.grid.points()
    outside = np.ones(small_system.grid.size, dtype=bool)
    outside[Q0.cells] = False
    for h in (f, g):
        values = h(pts)
        assert not np.any(values[outside])
        assert np.all(values[Q0.cells] >= 0.5)
        assert values.max() > 0.5


def test_power_weight_rows(small_system):
    family = small_system.all_cubes()
    rows = power_weight_rows(small_system.grid, family)
    assert [r["a"] for r in rows] == pytest.approx([0.0, 2 / 3, 4 / 3, 2.0, 8 / 3, 10 / 3])
    assert rows[0]["ap_constant"] == pytest.approx(1.0)
    assert rows[0]["rh_constant"] == pytest.approx(1.0)
    assert all(r["family"] == len(family) for r in rows)
    assert all(r["ap_constant"] >= 1.0 - 1e-12 for r in rows)


@pytest.mark.django_db
def test_run_sparse_dominate_on_proper_cube(snapshot):
    report = run(_config(SPARSE_N1))
    assert len(_metric(report, "семейство A_Q")) > 1
    assert _metric(report, "доля ячеек области в Q0") < 1.0
    by_name = {c.name: c for c in report.criteria}
    assert by_name["B_Q попарно не пересекаются"].passed
    assert by_name["F_S попарно не пересекаются"].passed
    assert len(report.tables["pairs"]) == 3
    snapshot("sparse_dominate.n1.max_ratio", _metric(report, "max отношение"), rel=1e-6)


def test_sparse_ratio_is_stable_under_refinement(small_system, snapshot):
    cfg = _config(SPARSE_N1)
    label, rows = sparse_refinement(cfg, small_system, sphere_quadrature(GroupDim(1)))
    assert len(rows) == 3
    base = max(r["base"] for r in rows)
    refined = max(r["refined"] for r in rows)
    assert refined > 0
    assert abs(refined - base) / refined <= 0.25
    snapshot(f"sparse_refinement.max_ratio[{label}]", refined, rel=1e-6)


def test_unit_weight_ratio(snapshot):
    dim = GroupDim(1)
    grid = lab_domain(dim, 16)
    lacunary = LacunaryConfig(0.5, -2, 1)
    q = sphere_quadrature(dim)
    bump = test_functions(dim, "smooth_bump", radius=0.5)
    one = sample(grid, lambda x: np.ones(x.shape[:-1]))
    ratio = weighted_maximal_ratio(bump, one, 1.35, 1.2, lacunary, q)

    F = sample(grid, bump)
    assert ratio == pytest.approx(lp_norm(lacunary_maximal(F, lacunary, q), 1.35) / lp_norm(F, 1.35), rel=1e-12)
    snapshot("weights.n1.unit_weight_ratio", ratio, rel=1e-6)


@pytest.mark.django_db
def test_run_weights_reports_unit_weight_ratio():
    report = run(_config({"command": "weights"}))
    assert _metric(report, "||M^lac f||_p / ||f||_p при w = 1") > 0
    assert len(report.tables["power_weights"]) == 6


@pytest.mark.django_db
def test_run_lp_improving_separates_identity_from_contraction():
    report = run(_config({"command": "lp-improving", "n": 1, "grid": 16}))
    names = [c.name for c in report.criteria]
    assert any(name.startswith("тождество масштабирования") for name in names)
    contraction = next(c for c in report.criteria if c.name.endswith("для фиксированной f"))
    assert contraction.anchor == "spherical means"
    rows = report.tables["lp_improving"]
    assert all(r["contraction"] > 0 for r in rows)
    assert max(r["contraction"] for r in rows) == pytest.approx(contraction.value + 1.0)


@pytest.mark.django_db
def test_run_continuity_checks_right_translation():
    report = run(_config({"command": "continuity", "n": 1, "grid": 20}))
    by_name = {c.name: c for c in report.criteria}
    assert by_name["tau_{a^{-1}} tau_a f = f"].passed
    assert _metric(report, "||tau_a f||_p / ||f||_p") == pytest.approx(1.0, rel=0.2)
