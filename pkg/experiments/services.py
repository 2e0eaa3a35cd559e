import logging
import math
import operator
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import special

from analysis import dyadic, operators, quadrature, sparse, spectral, weights
from analysis.fields import BoxGrid, GridFunction, ball_family, lp_norm, sample, test_functions
from core import group
from core.exceptions import PreconditionError
from core.group import GroupDim, Point
from exports.services import SCHEMA_VERSION

from .forms import ExperimentConfig

logger = logging.getLogger(__name__)

RELATIONS = {
    "<=": operator.le,
    ">=": operator.ge,
    "<": operator.lt,
    ">": operator.gt,
}


@dataclass
class Criterion:
    name: str
    value: float | bool | None
    bound: float | bool | None
    relation: str
    anchor: str
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "bound": self.bound,
                "relation": self.relation, "anchor": self.anchor, "passed": self.passed}


@dataclass
class RunReport:
    command: str
    config: dict
    within_hypotheses: bool
    metrics: list[dict] = field(default_factory=list)
    criteria: list[Criterion] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    # дополнительные файлы: имя -> функция, пишущая файл по пути
    attachments: dict[str, Callable] = field(default_factory=dict)

    def metric(self, name: str, value, anchor: str):
        self.metrics.append({"name": name, "value": value, "anchor": anchor})

    def check(self, name: str, value: float, relation: str, bound: float, anchor: str) -> bool:
        value = float(value)
        passed = math.isfinite(value) and RELATIONS[relation](value, bound)
        self.criteria.append(Criterion(name, value, float(bound), relation, anchor, bool(passed)))
        if not passed:
            logger.warning("Критерий не выполнен: %s = %r (нужно %s %r)", name, value, relation, bound)
        return passed

    def require(self, name: str, ok: bool, anchor: str) -> bool:
        self.criteria.append(Criterion(name, bool(ok), True, "is", anchor, bool(ok)))
        if not ok:
            logger.warning("Критерий не выполнен: %s", name)
        return bool(ok)

    def table(self, name: str, rows: list[dict]):
        self.tables[name] = rows

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def summary(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "command": self.command,
            "config": self.config,
            "metrics": self.metrics,
            "criteria": [c.as_dict() for c in self.criteria],
            "passed": self.passed,
            "within_hypotheses": self.within_hypotheses,
        }


def _report(cfg: ExperimentConfig) -> RunReport:
    return RunReport(cfg.command, cfg.as_dict(), cfg.dim.within_hypotheses)


# -------------------------
# Общие заготовки
# -------------------------

# размеры правил на S^{2n-1} по умолчанию
SPHERE_SIZES = {1: 16, 2: 8}


def sphere_quadrature(dim: GroupDim, n_theta: int = 8, size: int | None = None, seed: int = 0):
    size = size or SPHERE_SIZES.get(dim.n, 4 * dim.n)
    rule = quadrature.sphere_rule_for_complex_sphere(dim.n, size, seed)
    return quadrature.build_sphere_rule(dim, n_theta, rule)


def lab_domain(dim: GroupDim, resolution: int) -> BoxGrid:
    """[-1,1]^{2n+1}: по t resolution^2/2 ячеек, так что h_z = sqrt(h_t)."""
    return BoxGrid(Point.origin(dim), 1.0, 1.0,
                   (resolution,) * (2 * dim.n) + (max(2, resolution * resolution // 2),))


def _unit_direction(dim: GroupDim) -> Point:
    return Point((1.0,) + (0.0,) * (dim.n - 1), (0.0,) * dim.n, 0.0)


def _random_points(rng: np.random.Generator, dim: GroupDim, count: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(count, dim.size))


# -------------------------
# verify-group
# -------------------------

def verify_group(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    dim = cfg.dim
    tol = cfg.tol("group")
    rng = np.random.default_rng(cfg.seed)
    a, b, c = (_random_points(rng, dim, cfg.samples) for _ in range(3))
    norm = group.koranyi_norm_coords
    dist = group.dist_left_coords
    mul = group.multiply_coords

    ab = mul(a, b)
    rows = []

    def record(prop: str, errors: np.ndarray, anchor: str):
        worst = float(np.max(errors))
        rows.append({"property": prop, "samples": int(errors.size), "max_error": worst,
                     "violations": int(np.count_nonzero(errors > tol))})
        report.check(prop, worst, "<=", tol, anchor)

    record("ассоциативность", np.max(np.abs(mul(ab, c) - mul(a, mul(b, c))), axis=-1), "group law")
    record("обратный элемент", np.max(np.abs(mul(a, group.inverse_coords(a))), axis=-1), "group law")

    auto, homog = [], []
    for r in (0.5, 2.0, 3.7):
        lhs = group.dilate_coords(r, ab)
        rhs = mul(group.dilate_coords(r, a), group.dilate_coords(r, b))
        auto.append(np.max(np.abs(lhs - rhs), axis=-1) / (r * r))
        homog.append(np.abs(norm(group.dilate_coords(r, a)) - r * norm(a)) / (r * norm(a)))
    record("delta_r - автоморфизм", np.concatenate(auto), "dilation automorphism")
    record("однородность нормы", np.concatenate(homog), "Koranyi norm homogeneity")

    record("неравенство треугольника для нормы", np.maximum(norm(ab) - norm(a) - norm(b), 0.0),
           "Cygan triangle inequality")
    record("симметрия d_L", np.abs(dist(a, b) - dist(b, a)), "left-invariant metric")
    record("неравенство треугольника для d_L", np.maximum(dist(a, c) - dist(a, b) - dist(b, c), 0.0),
           "left-invariant metric")
    record("левая инвариантность d_L", np.abs(dist(mul(c, a), mul(c, b)) - dist(a, b)), "left-invariant metric")

    # ручной пример для n = 1: (1,0,0)(0,1,0) = (1,1,-1/2)
    hand = group.multiply(Point((1.0,), (0.0,), 0.0), Point((0.0,), (1.0,), 0.0))
    report.require("(1,0,0)(0,1,0) = (1,1,-1/2)", hand == Point((1.0,), (1.0,), -0.5), "group law")

    report.table("group", rows)
    return report


# -------------------------
# verify-quadrature
# -------------------------

def verify_quadrature(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    rows = []
    rules = {}
    for n in (1, 2, 3):
        dim = GroupDim(n)
        q = sphere_quadrature(dim, n_theta=64 if n == 2 else 16, size={1: 32, 2: 64}.get(n, 400), seed=cfg.seed)
        rules[n] = q
        mass = abs(float(np.sum(q.weights)) - 1.0)
        node_error = float(np.max(np.abs(group.koranyi_norm_coords(q.nodes) - 1.0)))
        kappa = group.polar_constant(dim, q, tol=cfg.tol("polar"))
        closed = dim.Q * group.koranyi_ball_volume(dim)
        rows.append({"n": n, "n_theta": q.n_theta, "n_sphere": q.n_sphere, "nodes": len(q),
                     "mass_error": mass, "node_error": node_error, "kappa": kappa, "kappa_closed": closed})
        report.check(f"масса sigma, n={n}", mass, "<=", cfg.tol("mass"), "sphere measure normalization")
        report.check(f"узлы на сфере, n={n}", node_error, "<=", 1e-12, "sphere measure normalization")
        report.check(f"kappa = Q|B(0,1)|, n={n}", abs(kappa - closed) / closed, "<=", cfg.tol("polar"),
                     "polar decomposition")
    report.table("quadrature", rows)

    dim = cfg.dim
    q = rules.get(dim.n) or sphere_quadrature(dim, 16)
    report.attachments[f"sphere_n{dim.n}.csv"] = q.to_csv
    report.check("int_S t dsigma = 0", abs(quadrature.integrate_on_sphere(q, lambda x: x[..., -1])), "<=",
                 cfg.tol("interior"), "sphere measure normalization")
    report.check("int_S |x|^4 dsigma = 1",
                 abs(quadrature.integrate_on_sphere(q, lambda x: group.koranyi_norm_coords(x) ** 4) - 1.0),
                 "<=", cfg.tol("interior"), "sphere measure normalization")

    kappa = dim.Q * group.koranyi_ball_volume(dim)
    gaussian = test_functions(dim, "gaussian", a=1.0, b=1.0)
    box = BoxGrid.cube(dim, 5.0, cfg.grid, half_width_t=5.0)
    direct = float(np.sum(gaussian(box.points())) * box.cell_volume)
    polar = quadrature.polar_integrate(dim, q, kappa, gaussian)
    report.metric("гауссиана: сетка", direct, "polar decomposition")
    report.metric("гауссиана: полярная квадратура", polar, "polar decomposition")
    report.check("гауссиана: полярная против сетки", abs(polar - direct) / direct, "<=", cfg.tol("polar"),
                 "polar decomposition")

    ball_volume = group.koranyi_ball_volume(dim)
    indicator = test_functions(dim, "koranyi_ball_indicator", radius=1.0)
    polar_ball = quadrature.polar_integrate(dim, q, kappa, indicator, radius=2.0)
    report.check("шар: полярная против kappa/Q", abs(polar_ball - ball_volume) / ball_volume, "<=", 1e-2,
                 "polar decomposition")
    counting = BoxGrid.cube(dim, 1.0, cfg.grid, half_width_t=0.25)
    counted = float(np.count_nonzero(indicator(counting.points())) * counting.cell_volume)
    report.metric("|B(0,1)| подсчётом ячеек: относительная ошибка", abs(counted - ball_volume) / ball_volume,
                  "polar decomposition")
    return report


# -------------------------
# verify-gamma
# -------------------------

ASYMPTOTIC_NU = 100.0


def verify_gamma(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    tol = cfg.tol("gamma")
    gammas = np.linspace(-20.0, 20.0, 81)
    rows = []
    for Q in (4, 6, 8):
        chk = spectral.f_hat_identity_check(Q, gammas)
        for g, num, closed, err in zip(chk.gammas, chk.numeric, chk.closed, chk.errors):
            rows.append({"Q": Q, "gamma": float(g), "numeric_re": num.real, "numeric_im": num.imag,
                         "closed_re": closed.real, "closed_im": closed.imag, "error": float(err)})
        report.check(f"F^ против гамма-формулы, Q={Q}", chk.max_error, "<=", tol, "Fourier transform of F")
        report.check(f"a(Q,0) = 0, Q={Q}", abs(complex(spectral.a_coefficient(Q, 0.0))), "<=", 1e-12,
                     "Fourier transform of F")
        wide = np.linspace(-100.0, 100.0, 401)
        a = spectral.a_coefficient(Q, wide)
        report.metric(f"sup |a(Q,g)|, |g| <= 100, Q={Q}", float(np.max(np.abs(a))), "Fourier transform of F")
        report.check(f"a(Q,-g) = conj a(Q,g), Q={Q}", float(np.max(np.abs(a[::-1] - np.conj(a)))), "<=", 1e-12,
                     "Fourier transform of F")
        kappa = Q * group.koranyi_ball_volume(GroupDim((Q - 2) // 2))
        report.metric(f"c_Q, Q={Q}", spectral.c_q(Q, kappa, tol=tol), "Poisson kernel normalization")
    report.table("f_hat", rows)

    half = complex(np.exp(spectral.log_gamma_complex(0.5)))
    report.check("Gamma(1/2) = sqrt(pi)", abs(half - math.sqrt(math.pi)) / math.sqrt(math.pi), "<=", tol,
                 "complex gamma function")

    rng = np.random.default_rng(cfg.seed)
    z = rng.uniform(-3.0, 3.0, 200) + 1j * rng.uniform(-5.0, 5.0, 200)
    g_z = np.exp(spectral.log_gamma_complex(z))
    shifted = np.exp(spectral.log_gamma_complex(z + 1.0))
    report.check("Gamma(z+1) = z Gamma(z)", float(np.max(np.abs(shifted - z * g_z) / np.abs(z * g_z))), "<=", tol,
                 "complex gamma function")
    right = z[z.real > 0.5]
    oracle = np.exp(special.loggamma(right))
    report.check("Ланцош против scipy", float(np.max(np.abs(np.exp(spectral.log_gamma_complex(right)) - oracle)
                                                    / np.abs(oracle))), "<=", tol, "complex gamma function")

    asym = []
    for mu in (0.5, 1.0, 2.0, 3.0, 4.0):
        log_abs = float(spectral.log_gamma_complex(complex(mu, ASYMPTOTIC_NU)).real)
        log_model = (0.5 * math.log(2.0 * math.pi) + (mu - 0.5) * math.log(ASYMPTOTIC_NU)
                     - 0.5 * math.pi * ASYMPTOTIC_NU)
        ratio = math.exp(log_abs - log_model)
        asym.append({"mu": mu, "nu": ASYMPTOTIC_NU, "ratio": ratio})
        report.check(f"асимптотика |Gamma(mu+i nu)|, mu={mu:g}", abs(ratio - 1.0), "<=", cfg.tol("asymptotic"),
                     "gamma asymptotics")
    report.table("gamma_asymptotics", asym)
    return report


# -------------------------
# verify-representation
# -------------------------

def representation_profiles() -> list[tuple[float, spectral.RadialProfile]]:
    """(t, профиль): пять шапочек вокруг t = 1, одна вне носителя и одна при t = 2."""
    bump = spectral.annular_bump
    return [
        (1.0, bump(1.0, 0.5)),
        (1.0, bump(1.0, 0.8)),
        (1.0, bump(1.2, 0.6)),
        (1.0, bump(0.9, 0.4)),
        (1.0, bump(1.0, 0.5) + bump(1.6, 0.3)),
        (1.0, bump(2.5, 0.5)),
        (2.0, bump(2.0, 1.0)),
    ]


def verify_representation(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    Q = cfg.dim.Q
    tol = cfg.tol("representation")
    rows = []
    for t, profile in representation_profiles():
        chk = spectral.verify_measure_representation(profile, Q, t=t)
        rows.append({"profile": profile.label, "t": t, "lhs": chk.lhs, "p_term": chk.p_term,
                     "gamma_term_re": chk.gamma_term.real, "gamma_term_im": chk.gamma_term.imag,
                     "error": chk.error, "gamma_max": chk.gamma_max})
        report.check(f"sigma_t = P_t + int a I_g: {profile.label}, t={t:g}", chk.error, "<=", tol,
                     "sphere measure representation")
    report.table("representation", rows)
    return report


# -------------------------
# lp-improving
# -------------------------

IMPROVING_RADII = (0.25, 0.5, 1.0, 2.0)


def lp_improving(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    dim = cfg.dim
    q = sphere_quadrature(dim)
    p, q_exp = cfg.p, cfg.q
    f = test_functions(dim, "smooth_bump", radius=1.0)
    expected = dim.Q * (1.0 / q_exp - 1.0 / p)
    report.metric("ожидаемый наклон Q(1/q - 1/p)", expected, "L^p-improving scaling")

    rng = np.random.default_rng(cfg.seed)
    pts = _random_points(rng, dim, 64)
    ones = operators.spherical_mean_at(lambda x: np.ones(x.shape[:-1]), 0.7, q, pts)
    report.check("A_r 1 = 1", float(np.max(np.abs(ones - 1.0))), "<=", cfg.tol("interior"), "spherical means")
    quartic = operators.spherical_mean_at(lambda x: group.koranyi_norm_coords(x) ** 4, 1.3, q,
                                          Point.origin(dim).as_array())
    report.check("A_r |x|^4 (0) = r^4", abs(float(quartic[0]) - 1.3 ** 4) / 1.3 ** 4, "<=", cfg.tol("power"),
                 "spherical means")
    r = 0.6
    direct = operators.spherical_mean_at(f, r, q, pts)
    covariant = operators.spherical_mean_at(operators.dilated(f, r), 1.0, q, group.dilate_coords(1.0 / r, pts))
    report.check("delta_r^{-1} A_1 delta_r = A_r", float(np.max(np.abs(direct - covariant))), "<=",
                 cfg.tol("covariance"), "spherical means")

    # f и сетка растягиваются вместе: наклон совпадает с Q(1/q - 1/p) заменой переменных
    base = BoxGrid(Point.origin(dim), 2.0, 1.0, (cfg.grid,) * dim.size)
    fit = operators.improving_scaling_fit(f, IMPROVING_RADII, p, q_exp, q, base, cfg.threads)
    report.metric("тождество масштабирования: наклон по f o delta_{1/r}", fit.slope, "L^p-improving scaling")
    report.check("тождество масштабирования: |наклон - Q(1/q - 1/p)|", abs(fit.slope - expected), "<=",
                 cfg.tol("slope"), "L^p-improving scaling")

    fixed, contraction = [], []
    for r in IMPROVING_RADII:
        # сетка покрывает носитель A_r f: |z| <= 1 + r, |t| <= (1 + r)^2 / 4
        grid = BoxGrid(Point.origin(dim), 1.0 + r, 0.25 * (1.0 + r) ** 2, (cfg.grid,) * dim.size)
        ratio = operators.improving_ratio(f, r, p, q_exp, q, grid, cfg.threads)
        f_grid = sample(grid, f)
        fixed.append(ratio)
        contraction.append(ratio * lp_norm(f_grid, p) / lp_norm(f_grid, q_exp))
    fixed_fit = operators.power_fit(IMPROVING_RADII, fixed)
    scaled = [z * r ** -expected for r, z in zip(IMPROVING_RADII, fixed)]
    report.metric("наклон для фиксированной f", fixed_fit.slope, "L^p-improving scaling")
    report.metric("max_r r^{-Q(1/q-1/p)} ||A_r f||_q / ||f||_p", max(scaled), "L^p-improving scaling")
    report.check("||A_r f||_q / ||f||_q - 1 для фиксированной f", max(contraction) - 1.0, "<=",
                 cfg.tol("contraction"), "spherical means")
    report.table("lp_improving", [
        {"r": r, "dilation_family_ratio": y, "fixed_f_ratio": z, "scaled_fixed_ratio": s, "contraction": c}
        for r, y, z, s, c in zip(IMPROVING_RADII, fit.ys, fixed, scaled, contraction)
    ])
    return report


# -------------------------
# continuity
# -------------------------

CONTINUITY_SIZES = tuple(2.0 ** -j for j in range(1, 6))


def continuity(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    dim = cfg.dim
    q = sphere_quadrature(dim)
    f = test_functions(dim, "smooth_bump", radius=1.0)
    grid = BoxGrid(Point.origin(dim), 2.5, 1.6, (cfg.grid,) * dim.size)
    zero = operators.continuity_deficit(f, 1.0, Point.origin(dim), cfg.p, cfg.q, q, grid, cfg.threads)
    report.check("сдвиг a = 0 даёт 0", zero, "<=", 0.0, "continuity under translation")

    fit = operators.continuity_fit(f, 1.0, _unit_direction(dim), CONTINUITY_SIZES, cfg.p, cfg.q, q, grid,
                                   cfg.threads)
    report.metric("eta", fit.slope, "continuity under translation")
    report.metric("R^2", fit.r_squared, "continuity under translation")
    report.check("eta > 0", fit.slope, ">", 0.0, "continuity under translation")
    report.check("R^2 подгонки", fit.r_squared, ">=", cfg.tol("r_squared"), "continuity under translation")
    report.table("continuity", [{"a_norm": x, "deficit": y} for x, y in zip(fit.xs, fit.ys)])

    a = Point.from_array(group.dilate_coords(CONTINUITY_SIZES[1], _unit_direction(dim).as_array()))
    f_grid = sample(grid, f)
    moved = operators.translate_right(f, a, grid)
    back = operators.translate_right(operators.right_translate(f, a), group.inverse(a), grid)
    report.check("tau_{a^{-1}} tau_a f = f", float(np.max(np.abs(back.values - f_grid.values))), "<=",
                 cfg.tol("interior"), "continuity under translation")
    report.metric("||tau_a f||_p / ||f||_p", lp_norm(moved, cfg.p) / lp_norm(f_grid, cfg.p),
                  "continuity under translation")
    return report


# -------------------------
# build-grid / verify-grid
# -------------------------

def _systems(cfg: ExperimentConfig) -> list[dyadic.DyadicSystem]:
    domain = lab_domain(cfg.dim, cfg.grid)
    return dyadic.build_systems(domain, cfg.delta, (cfg.kmin, cfg.kmax), seed=cfg.seed, count=cfg.systems)


def build_grid(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    systems = _systems(cfg)
    rows = []
    for alpha, s in enumerate(systems):
        for k in s.levels:
            counts = np.bincount(s.labels[k], minlength=len(s.cubes(k)))
            rows.append({"system": alpha, "seed": s.seed, "level": k, "sidelength": s.sidelength(k),
                         "cubes": len(s.cubes(k)), "min_cells": int(counts.min()), "max_cells": int(counts.max())})
            report.require(f"система {alpha}, уровень {k}: разбиение",
                           counts.sum() == s.grid.size and bool(np.all(counts > 0)), "dyadic system")
        report.attachments[f"system_{alpha}.csv"] = s.to_csv
    report.metric("ячеек сетки", systems[0].grid.size, "dyadic system")
    report.metric("кубов верхнего уровня", len(systems[0].cubes(cfg.kmin)), "dyadic system")
    report.table("levels", rows)
    return report


# с такого delta проверяются постоянные 1/12 и 4
SANDWICH_DELTA = 1.0 / 96.0


def verify_grid(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    systems = _systems(cfg)
    rows = []
    for alpha, s in enumerate(systems):
        res = dyadic.verify_system(s)
        report.require(f"система {alpha}: разбиение", res.partition, "dyadic system")
        report.require(f"система {alpha}: вложенность", res.nesting, "dyadic system")
        report.require(f"система {alpha}: разделённость центров", res.separation, "dyadic system")
        report.require(f"система {alpha}: центр внутри куба", res.center_containment, "dyadic system")
        slack = s.grid.koranyi_cell_diameter
        for lv in res.levels:
            side = s.sidelength(lv.level)
            rows.append({"system": alpha, "level": lv.level, "cubes": lv.cubes, "c_in": lv.min_c_in,
                         "c_out": lv.max_c_out, "min_separation": lv.min_separation})
            if cfg.delta <= SANDWICH_DELTA:
                report.check(f"система {alpha}, уровень {lv.level}: c_in", lv.min_c_in + slack / side, ">=",
                             1.0 / 12.0, "dyadic system")
                report.check(f"система {alpha}, уровень {lv.level}: c_out", lv.max_c_out - slack / side, "<=",
                             4.0, "dyadic system")
        report.metric(f"система {alpha}: min c_in", res.min_c_in, "dyadic system")
        report.metric(f"система {alpha}: max c_out", res.max_c_out, "dyadic system")

    if cfg.kmax - 1 >= cfg.kmin:
        try:
            cover = dyadic.ball_cover_rate(systems, cfg.kmax, seed=cfg.seed)
            report.metric("доля шаров внутри куба уровня k-1", cover.rate, "dyadic system")
        except PreconditionError as exc:
            logger.warning("Покрытие шарами не оценено: %s", exc.messages[0])
    report.table("sandwich", rows)
    return report


# -------------------------
# sparse-dominate
# -------------------------

# Q0 берётся на уровне finest - FAMILY_DEPTH: в семействе A_Q два уровня
FAMILY_DEPTH = 4

# система для проверки измельчения, если сетка прогона слишком велика или все A_Q равны нулю;
# грубый уровень - один куб на всю область, его V_Q непусто
REFINEMENT_PRESET = {"n": 1, "grid": 8, "delta": 0.6, "kmin": -3, "kmax": 0}
REFINEMENT_CELLS = 1 << 18
REFINEMENT_PAIRS = 3


def choose_q0(system: dyadic.DyadicSystem) -> dyadic.Cube:
    """
    Собственный куб уровня finest - 4 с наибольшим числом кубов семейства,
    у которых V_Q непусто; при равенстве - больший по числу ячеек.
    """
    level = max(system.coarsest, system.finest - FAMILY_DEPTH)
    cubes = system.cubes(level)
    proper = [c for c in cubes if len(c) < system.grid.size]
    if not proper:
        logger.warning("Уровень %d - один куб на всю область: Q0 совпадает с областью.", level)
        return cubes[0]
    scored = [(len(sparse.active_cubes(system, c)), len(c), -c.index) for c in proper]
    best = max(range(len(proper)), key=lambda i: scored[i])
    if scored[best][0] == 0:
        logger.warning("Ни у одного куба уровня %d нет непустого V_Q: все A_Q равны нулю.", level)
    return proper[best]


def busiest_cube(system: dyadic.DyadicSystem) -> dyadic.Cube:
    """Куб грубого уровня с наибольшим числом кубов семейства с непустым V_Q."""
    cubes = system.cubes(system.coarsest)
    return max(cubes, key=lambda c: (len(sparse.active_cubes(system, c)), len(c), -c.index))


def _spiked(rng: np.random.Generator, system: dyadic.DyadicSystem, Q0: dyadic.Cube) -> GridFunction:
    """Шум из [0.5, 1.5) на Q0 плюс всплеск высоты 2..4 на случайном мельчайшем подкубе."""
    values = np.zeros(system.grid.size)
    values[Q0.cells] = rng.uniform(0.5, 1.5, Q0.cells.size)
    finest = system.descendants(Q0, system.finest)
    spike = finest[int(rng.integers(len(finest)))]
    values[spike.cells] += rng.uniform(2.0, 4.0)
    return GridFunction(system.grid, values.reshape(system.grid.shape))


def cube_indicator(system: dyadic.DyadicSystem, cube: dyadic.Cube) -> Callable[[np.ndarray], np.ndarray]:
    """1_Q как функция координат: по ячейке сетки системы, содержащей точку."""
    labels = system.labels[cube.level]

    def indicator(coords):
        coords = np.asarray(coords, dtype=float)
        cell = system.grid.cell_index(coords.reshape(-1, coords.shape[-1]))
        inside = (cell >= 0) & (labels[np.maximum(cell, 0)] == cube.index)
        return inside.astype(float).reshape(coords.shape[:-1])
    return indicator


def smooth_pair(rng: np.random.Generator, system: dyadic.DyadicSystem, Q0: dyadic.Cube):
    """
    (f, g) как функции координат: (1/2 + h * гладкая шапочка) на Q0, центр
    шапочки в случайной ячейке Q0, радиус - две стороны мельчайшего уровня.
    Не зависят от сетки, поэтому годятся для сравнения при измельчении.
    """
    dim = system.grid.dim
    pts = system.grid.points()[Q0.cells]
    inside = cube_indicator(system, Q0)
    radius = 2.0 * system.sidelength(system.finest)

    def make():
        center = Point.from_array(pts[int(rng.integers(pts.shape[0]))])
        height = float(rng.uniform(2.0, 4.0))
        bump = test_functions(dim, "smooth_bump", radius=radius, center=center)
        return lambda x: inside(x) * (0.5 + height * bump(x))
    return make(), make()


def _preset_system(seed: int):
    preset = REFINEMENT_PRESET
    dim = GroupDim(preset["n"])
    system = dyadic.build_system(lab_domain(dim, preset["grid"]), preset["delta"],
                                 (preset["kmin"], preset["kmax"]), seed=seed)
    return system, sphere_quadrature(dim)


def sparse_refinement(cfg: ExperimentConfig, system: dyadic.DyadicSystem, quad) -> tuple[str, list[dict]]:
    """
    max отношения домирования на гладких парах на сетке системы и на вдвое более
    мелкой. Берётся система прогона, если её измельчение помещается в
    REFINEMENT_CELLS и хотя бы одно A_Q не равно нулю, иначе REFINEMENT_PRESET.
    """
    label = "прогон"
    Q0 = None
    if system.grid.refined().size <= REFINEMENT_CELLS:
        Q0 = busiest_cube(system)
        if not sparse.active_cubes(system, Q0):
            Q0 = None
    if Q0 is None:
        system, quad = _preset_system(cfg.seed)
        Q0 = busiest_cube(system)
        label = ", ".join(f"{k}={v}" for k, v in REFINEMENT_PRESET.items())
    e = weights.ExponentPair.from_exponents(cfg.p, cfg.q)
    if weights.sparse_region(system.grid.dim.n, e) is not weights.Membership.INSIDE:
        logger.warning("(1/p, 1/q) вне области для n=%d: проверка измельчения пропущена.", system.grid.dim.n)
        return label, []
    fine = system.refined()
    fine_Q0 = fine.cube(Q0.level, Q0.index)

    rows = []
    for i in range(REFINEMENT_PAIRS):
        rng = np.random.default_rng([cfg.seed, 1000 + i])
        f, g = smooth_pair(rng, system, Q0)
        row = {"pair": i, "Q0": Q0.id}
        for name, s, Q in (("base", system, Q0), ("refined", fine, fine_Q0)):
            res = sparse.domination_ratio(sample(s.grid, f), sample(s.grid, g), Q, s, cfg.p, cfg.q, quad,
                                          workers=cfg.threads, leak_tol=cfg.tol("support_leak"))
            row[name] = res.ratio
        rows.append(row)
    return label, rows


def _sparse_refinement(report: RunReport, cfg: ExperimentConfig, system: dyadic.DyadicSystem, quad):
    label, rows = sparse_refinement(cfg, system, quad)
    report.metric("система для измельчения", label, "sparse domination")
    if not rows:
        return
    report.table("refinement", rows)

    base = max(r["base"] for r in rows)
    refined = max(r["refined"] for r in rows)
    if refined == 0:
        logger.warning("Отношение на измельчённой сетке равно нулю: проверка измельчения пропущена.")
        return
    report.check("изменение max отношения при измельчении", abs(refined - base) / refined, "<=",
                 cfg.tol("sparse_refinement"), "sparse domination")


def sparse_dominate(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    dim = cfg.dim
    system = dyadic.build_system(lab_domain(dim, cfg.grid), cfg.delta, (cfg.kmin, cfg.kmax), seed=cfg.seed)
    Q0 = choose_q0(system)
    family = sparse.averaging_family(system, Q0)
    active = sparse.active_cubes(system, Q0)
    q = sphere_quadrature(dim)
    p, q_exp = cfg.p, cfg.q
    lin_tol = cfg.tol("linearization")

    rows = []
    worst_lin = 0.0
    for i in range(cfg.pairs):
        rng = np.random.default_rng([cfg.seed, i])
        f, g = _spiked(rng, system, Q0), _spiked(rng, system, Q0)
        res = sparse.domination_ratio(f, g, Q0, system, p, q_exp, q, workers=cfg.threads,
                                      leak_tol=cfg.tol("support_leak"))
        lin = res.linearization
        lhs, rhs = lin.inequality(g)
        worst_lin = max(worst_lin, (lhs - rhs) / max(abs(rhs), 1e-300))
        S = res.collection
        phi = rng.uniform(0.5, 1.5, system.grid.size)
        rows.append({
            "pair": i, "pairing": res.pairing, "form": res.form.value, "ratio": res.ratio,
            "cubes": len(S), "levels": len({c.level for c in S.cubes}), "eta": S.eta, "disjoint": S.disjoint(),
            "violations": sparse.stopping_violations(S, f, g, p, q_exp, system),
            "b_disjoint": lin.b_disjoint(), "nonempty_b": len(lin.nonempty_b()),
            "linearization_lhs": lhs, "linearization_rhs": rhs,
            "carleson": sparse.carleson_sum_check(S, phi, 1.1, 2.0, Q0),
            "layer_cake": sparse.layer_cake_ratio(f, Q0, 1.0, p),
        })
        if i == 0:
            form = res.form
            report.attachments["collection_0.csv"] = lambda path, S=S, form=form: S.to_csv(path, form)

    ratios = [r["ratio"] for r in rows]
    report.metric("Q0", Q0.id, "sparse domination")
    report.metric("доля ячеек области в Q0", len(Q0) / system.grid.size, "sparse domination")
    report.metric("кубов по уровням", [len(system.cubes(k)) for k in system.levels], "dyadic system")
    report.metric("семейство A_Q", [c.id for c in family], "sparse domination")
    report.metric("кубов семейства с непустым V_Q", len(active), "sparse domination")
    report.metric("max отношение", max(ratios), "sparse domination")
    report.metric("среднее отношение", float(np.mean(ratios)), "sparse domination")
    report.metric("max сумма Карлесона", max(r["carleson"] for r in rows), "Carleson sum")
    report.check("отношение конечно", max(ratios), "<", math.inf, "sparse domination")
    report.check("min |F_S| / |S|", min(r["eta"] for r in rows), ">=", 0.5, "sparse family")
    report.require("F_S попарно не пересекаются", all(r["disjoint"] for r in rows), "sparse family")
    report.require("B_Q попарно не пересекаются", all(r["b_disjoint"] for r in rows), "linearization")
    report.check("нарушения остановки", sum(r["violations"] for r in rows), "<=", 0, "stopping cubes")
    report.check("<sup A_Q f, g> <= 2 sum <A_Q f, g 1_B>", worst_lin, "<=", lin_tol, "linearization")
    report.table("pairs", rows)
    _sparse_refinement(report, cfg, system, q)
    return report


# -------------------------
# weights
# -------------------------

REGION_EXAMPLES = (
    ("improving", 0.5, 0.5, True),
    ("improving", 0.5, 1 / 3, True),
    ("improving", 0.9, 0.05, False),
    ("sparse", 0.6, 0.6, True),
    ("sparse", 0.5, 0.5, False),
    ("sparse", 0.05, 0.05, False),
)

REGIONS = {"improving": weights.improving_region, "sparse": weights.sparse_region}


def _membership_table(n: int) -> list[dict]:
    axis = np.round(np.arange(1, 20) * 0.05, 10)
    rows = []
    for x in axis:
        for y in axis:
            e = weights.ExponentPair(float(x), float(y))
            rows.append({"inv_p": float(x), "inv_q": float(y),
                         "improving": weights.improving_region(n, e).value,
                         "sparse": weights.sparse_region(n, e).value})
    return rows


def _refinement_study(report: RunReport, cfg: ExperimentConfig, lacunary, q):
    # w = |x|^{1/2}, гладкая шапочка; сетка вдвое грубее и исходная
    dim = cfg.dim
    coarse = lab_domain(dim, cfg.grid // 2)
    if lacunary.scales[-1] < 2.0 * coarse.spacing:
        logger.warning("Грубая сетка %s не разрешает масштаб %g: проверка измельчения пропущена.",
                       coarse.resolution, lacunary.scales[-1])
        return
    bump = test_functions(dim, "smooth_bump", radius=1.0)
    power = test_functions(dim, "power_weight", a=0.5)
    rows = []
    for grid in (coarse, coarse.refined()):
        ratio = weights.weighted_maximal_ratio(bump, sample(grid, power), cfg.p, cfg.p0, lacunary, q, cfg.threads)
        rows.append({"resolution": "x".join(map(str, grid.resolution)), "spacing": grid.spacing, "ratio": ratio})
    change = abs(rows[1]["ratio"] - rows[0]["ratio"]) / rows[1]["ratio"]
    report.table("refinement", rows)
    report.check("изменение отношения при измельчении", change, "<=", cfg.tol("refinement"),
                 "weighted lacunary bound")


def power_weight_rows(domain: BoxGrid, family: list) -> list[dict]:
    """[|x|^a]_{A_2} и [|x|^a]_{RH_2} для a = 0, Q/6, ..., 5Q/6."""
    dim = domain.dim
    rows = []
    for a in np.linspace(0.0, dim.Q, 6, endpoint=False):
        w = sample(domain, test_functions(dim, "power_weight", a=float(a)))
        rep = weights.weight_report(w, 2.0, family)
        rows.append({"a": float(a), "ap_constant": rep.ap_constant, "rh_constant": rep.rh_constant,
                     "family": rep.family_size})
    return rows


def weights_suite(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    dim = cfg.dim
    n = dim.n

    for kind, x, y, expected in REGION_EXAMPLES:
        got = bool(REGIONS[kind](2, weights.ExponentPair(x, y)))
        report.require(f"n=2, {kind}({x:g}, {y:.4g}) = {expected}", got == expected, "exponent regions")
    report.table("regions", _membership_table(n))

    b = Fraction(2 * n, 2 * n + 1)
    at = weights.phi_exponent(n, b)
    report.check("непрерывность phi в 2n/(2n+1)", abs(float(at) - weights.phi_exponent(n, float(b) + 1e-14)),
                 "<=", 1e-12, "exponent map")
    report.require("phi(4/5; n=2) = 5/4", weights.phi_exponent(2, Fraction(4, 5)) == Fraction(5, 4), "exponent map")
    report.check("phi(0.9; n=2) = 2.5", abs(weights.phi_exponent(2, 0.9) - 2.5), "<=", 1e-12, "exponent map")

    systems = _systems(cfg)
    domain = systems[0].grid
    balls = ball_family(domain, [Point.origin(dim), _unit_direction(dim)], (0.25, 0.5, 1.0))
    family = weights.weight_family(systems, balls)
    report.metric("кубов и шаров в семействе", len(family), "Muckenhoupt weights")

    one = sample(domain, lambda x: np.ones(x.shape[:-1]))
    report.check("[1]_{A_p} = 1", weights.ap_constant(one, cfg.p, family), "<=", 1.0, "Muckenhoupt weights")
    report.check("[1]_{RH_p} = 1", weights.rh_constant(one, cfg.p, family), "<=", 1.0, "reverse Holder weights")

    ap_rows = power_weight_rows(domain, family)
    increments = np.diff([r["ap_constant"] for r in ap_rows])
    report.check("[|x|^a]_{A_2} не убывает по a", float(-increments.min()), "<=", cfg.tol("interior"),
                 "Muckenhoupt weights")
    report.table("power_weights", ap_rows)

    lo, hi = weights.admissible_window(n, cfg.p0)
    report.metric("окно p", [lo, hi], "weighted bound window")
    a_mid = 0.5 * dim.Q * (cfg.p / cfg.p0 - 1.0)
    w = sample(domain, test_functions(dim, "power_weight", a=a_mid))
    cls = weights.weight_class_report(w, cfg.p, cfg.p0, n, family)
    report.table("weight_class", [{"a": a_mid, "p": cls.p, "p0": cls.p0, "ap_exponent": cls.p / cls.p0,
                                   "ap_constant": cls.ap_constant, "rh_exponent": cls.rh_exponent,
                                   "rh_constant": cls.rh_constant, "family": cls.family_size}])

    lacunary = operators.LacunaryConfig(cfg.delta, cfg.kmin, cfg.kmax)
    bump = test_functions(dim, "smooth_bump", radius=0.5)
    q = sphere_quadrature(dim)
    ratio = weights.weighted_maximal_ratio(bump, w, cfg.p, cfg.p0, lacunary, q, cfg.threads)
    report.metric("||M^lac f||_{L^p(w)} / ||f||_{L^p(w)}", ratio, "weighted lacunary bound")
    unweighted = weights.weighted_maximal_ratio(bump, one, cfg.p, cfg.p0, lacunary, q, cfg.threads)
    report.metric("||M^lac f||_p / ||f||_p при w = 1", unweighted, "weighted lacunary bound")
    report.check("весовое отношение конечно", ratio, "<", math.inf, "weighted lacunary bound")
    _refinement_study(report, cfg, lacunary, q)

    refused = 0
    for p_out in (0.5 * (1.0 + lo), hi + 0.5):
        try:
            weights.weighted_maximal_ratio(bump, w, p_out, cfg.p0, lacunary, q, cfg.threads)
        except PreconditionError:
            refused += 1
    report.require("отказ вне окна (p0, phi')", refused == 2, "weighted bound window")
    return report


# -------------------------
# spectral-rk
# -------------------------

RK_DEGREES = tuple(range(11))
RK_LAMBDAS = (-4.0, -1.0, 0.5, 1.0, 4.0)
RK_RADII = (0.25, 0.5, 1.0, 2.0)


def spectral_rk(cfg: ExperimentConfig) -> RunReport:
    report = _report(cfg)
    dim = cfg.dim
    n_theta = max(spectral.min_theta_order(lam, r) for lam in RK_LAMBDAS for r in RK_RADII)
    q = sphere_quadrature(dim, n_theta=n_theta, size=max(2 * dim.n, SPHERE_SIZES.get(dim.n, 0)), seed=cfg.seed)
    table = spectral.r_k_table(dim.n, RK_DEGREES, RK_LAMBDAS, RK_RADII, q)
    rows = [{"k": r.k, "lambda": r.lam, "r": r.r, "re": r.value.real, "im": r.value.imag, "abs": abs(r.value),
             "sphere_re": r.by_sphere.real, "sphere_im": r.by_sphere.imag, "mismatch": r.mismatch}
            for r in table]
    report.table("r_k", rows)
    report.check("max |R_k|", max(abs(r.value) for r in table), "<=", 1.0 + cfg.tol("rk_bound"),
                 "Laguerre coefficients")
    report.check("формула по theta против узлов sigma_r", max(r.mismatch for r in table), "<=",
                 cfg.tol("rk_consistency"), "Laguerre coefficients")

    small = [spectral.r_k_coefficient(k, dim.n, lam, 1e-6, n_theta) for k in RK_DEGREES for lam in RK_LAMBDAS]
    report.check("R_k -> 1 при r -> 0", max(abs(v - 1.0) for v in small), "<=", cfg.tol("rk_consistency"),
                 "Laguerre coefficients")

    x = np.linspace(0.0, 20.0, 41)
    worst = 0.0
    for k in range(6):
        ours = spectral.laguerre(k, dim.n - 1, x)
        oracle = special.eval_genlaguerre(k, dim.n - 1, x)
        worst = max(worst, float(np.max(np.abs(ours - oracle) / np.maximum(1.0, np.abs(oracle)))))
    report.check("рекурсия Лагерра против scipy", worst, "<=", 1e-10, "Laguerre coefficients")
    return report


SUITES = {
    "verify-group": verify_group,
    "verify-quadrature": verify_quadrature,
    "verify-gamma": verify_gamma,
    "verify-representation": verify_representation,
    "lp-improving": lp_improving,
    "continuity": continuity,
    "build-grid": build_grid,
    "verify-grid": verify_grid,
    "sparse-dominate": sparse_dominate,
    "weights": weights_suite,
    "spectral-rk": spectral_rk,
}


def run(cfg: ExperimentConfig) -> RunReport:
    if not cfg.dim.within_hypotheses:
        logger.warning("n=%d: прогон вне условий основных оценок (нужно n >= 2).", cfg.n)
    logger.info("Запуск %s (seed=%d, потоков %d)", cfg.command, cfg.seed, cfg.threads)
    return SUITES[cfg.command](cfg)
