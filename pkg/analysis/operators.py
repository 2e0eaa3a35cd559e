from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import linregress

from core.exceptions import NumericalError, PreconditionError
from core.group import Point, dilate_coords, dist_left_coords, koranyi_norm, multiply_coords

from . import spectral
from .fields import BoxGrid, GridFunction, lp_norm, sample
from .quadrature import SphereQuadrature

logger = logging.getLogger(__name__)

# точек x узлов в одном куске вычислений
CHUNK_BUDGET = 2_000_000

Field = GridFunction | Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LacunaryConfig:
    delta: float
    k_min: int
    k_max: int

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise PreconditionError(f"delta должно лежать в (0, 1), получено {self.delta}.")
        if self.k_min > self.k_max:
            raise PreconditionError(f"Пустое окно масштабов: k_min={self.k_min} > k_max={self.k_max}.")

    @property
    def scales(self) -> list[float]:
        return [self.delta ** k for k in range(self.k_min, self.k_max + 1)]


@dataclass(frozen=True)
class PowerFit:
    slope: float
    intercept: float
    r_squared: float
    xs: tuple[float, ...]
    ys: tuple[float, ...]


def power_fit(xs: Sequence[float], ys: Sequence[float]) -> PowerFit:
    """Наклон прямой по методу наименьших квадратов в осях log-log."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise NumericalError("Для подгонки в log-log нужны положительные значения.")
    fit = linregress(np.log(xs), np.log(ys))
    return PowerFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
                    tuple(xs.tolist()), tuple(ys.tolist()))


# -------------------------
# Ядро: усреднение по сфере в произвольных точках
# -------------------------

def _map_chunks(func, chunks, workers: int):
    if workers <= 1 or len(chunks) <= 1:
        return [func(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map сохраняет порядок кусков: результат не зависит от числа потоков
        return list(pool.map(func, chunks))


def _check_resolved(F: Field, r: float, what: str = "радиус"):
    if isinstance(F, GridFunction) and r < 2.0 * F.grid.spacing:
        raise PreconditionError(
            f"{what} {r:g} меньше двух шагов сетки ({F.grid.spacing:g}): масштаб не разрешается."
        )


def _output_grid(F: Field, grid: BoxGrid | None) -> BoxGrid:
    if grid is not None:
        return grid
    if isinstance(F, GridFunction):
        return F.grid
    raise PreconditionError("Для функции, заданной формулой, нужно указать выходную сетку.")


def mean_over_nodes(F: Field, coords: np.ndarray, shifts: np.ndarray, weights: np.ndarray,
                    workers: int = 1) -> np.ndarray:
    """sum_i w_i F(x . shift_i^{-1}) для каждой точки x из coords."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    inv = -shifts
    step = max(1, CHUNK_BUDGET // max(1, inv.shape[0]))
    chunks = [coords[s:s + step] for s in range(0, coords.shape[0], step)]

    def run(block):
        pts = multiply_coords(block[:, None, :], inv[None, :, :])
        values = np.asarray(F(pts.reshape(-1, coords.shape[1])), dtype=float).reshape(block.shape[0], -1)
        return values @ weights

    parts = _map_chunks(run, chunks, workers)
    return np.concatenate(parts) if parts else np.empty(0)


def spherical_mean_at(F: Field, r: float, q: SphereQuadrature, coords: np.ndarray,
                      workers: int = 1) -> np.ndarray:
    """A_r F(x) = sum_i w_i F(x . delta_r(node_i)^{-1})."""
    if not r > 0:
        raise PreconditionError(f"Радиус должен быть положительным, получено {r}.")
    return mean_over_nodes(F, coords, q.dilated_nodes(r), q.weights, workers)


def spherical_mean(F: Field, r: float, q: SphereQuadrature, grid: BoxGrid | None = None,
                   workers: int = 1) -> GridFunction:
    _check_resolved(F, r)
    out = _output_grid(F, grid)
    return GridFunction(out, spherical_mean_at(F, r, q, out.points(), workers).reshape(out.shape))


def right_translate(F: Field, a: Point) -> Callable[[np.ndarray], np.ndarray]:
    """tau_a F(x) = F(x . a^{-1}) как функция координат."""
    inv = -a.as_array()

    def translated(coords):
        return F(multiply_coords(np.asarray(coords, dtype=float), inv))
    return translated


def translate_right(F: Field, a: Point, grid: BoxGrid | None = None) -> GridFunction:
    out = _output_grid(F, grid)
    return sample(out, right_translate(F, a))


def lacunary_maximal(F: Field, cfg: LacunaryConfig, q: SphereQuadrature, grid: BoxGrid | None = None,
                     workers: int = 1) -> GridFunction:
    """M^lac F = max по k из окна [k_min, k_max] от |A_{delta^k} F|."""
    _check_resolved(F, cfg.delta ** cfg.k_max, "наименьший масштаб окна")
    out = _output_grid(F, grid)
    pts = out.points()
    best = np.zeros(out.size)
    for r in cfg.scales:
        np.maximum(best, np.abs(spherical_mean_at(F, r, q, pts, workers)), out=best)
    logger.debug("M^lac: %d масштабов, delta=%g", len(cfg.scales), cfg.delta)
    return GridFunction(out, best.reshape(out.shape))


# -------------------------
# Ядро Пуассона
# -------------------------

def poisson_kernel(coords, t: float, c_q: float) -> np.ndarray:
    """P_t(x) = c_Q t (t^2 + |x|^2)^{-(Q+1)/2}."""
    coords = np.asarray(coords, dtype=float)
    Q = coords.shape[-1] + 1
    norm2 = np.sqrt(np.sum(coords[..., :-1] ** 2, axis=-1) ** 2 + 16.0 * coords[..., -1] ** 2)
    return c_q * t * (t * t + norm2) ** (-(Q + 1) / 2.0)


def poisson_radial_rule(Q: int, t: float, kappa: float, c_q: float, order: int = 48):
    """
    Радиальные узлы и веса меры P_t(y) dy в полярных координатах.
    Замена rho = t tan(u) превращает P_t rho^{Q-1} d rho в c_Q sin^{Q-1}(u) du.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    u = 0.25 * math.pi * (x + 1.0)
    radii = t * np.tan(u)
    weights = kappa * c_q * np.sin(u) ** (Q - 1) * 0.25 * math.pi * w
    return radii, weights


def poisson_mean(F: Field, t: float, kappa: float, q: SphereQuadrature, grid: BoxGrid | None = None,
                 c_q: float | None = None, order: int = 48, mass_tol: float = 1e-3,
                 workers: int = 1) -> GridFunction:
    """F * P_t(x) = int F(x . y^{-1}) P_t(y) dy полярной квадратурой ядра."""
    if not t > 0:
        raise PreconditionError(f"Параметр t должен быть положительным, получено {t}.")
    if c_q is None:
        c_q = spectral.c_q(q.dim.Q, kappa)

    radii, weights = poisson_radial_rule(q.dim.Q, t, kappa, c_q, order)
    mass = float(np.sum(weights))
    logger.debug("Масса ядра Пуассона %.15f (%d радиальных узлов)", mass, order)
    if abs(mass - 1.0) > mass_tol:
        raise NumericalError(f"Масса ядра Пуассона {mass:.6f} отличается от 1 более чем на {mass_tol:g}.")

    out = _output_grid(F, grid)
    pts = out.points()
    shifts = np.concatenate([q.dilated_nodes(r) for r in radii], axis=0)
    node_weights = np.concatenate([wr * q.weights for wr in weights])
    values = mean_over_nodes(F, pts, shifts, node_weights, workers)
    return GridFunction(out, values.reshape(out.shape))


# -------------------------
# Локализованное среднее A_Q
# -------------------------

def inner_cells(system, cube, r: float) -> np.ndarray:
    """
    Ячейки V_Q: кубы P уровня k+3 внутри Q, у которых шар B(z_P, R) целиком
    (по ячейкам области) лежит в Q. R = delta^{k+1}, но не меньше
    r + rad(P) + diam, где diam - оценка d_L на одну ячейку при |z| из P:
    интерполянт f 1_P отличен от нуля не дальше одной ячейки от P.
    """
    grid = system.grid
    pts = grid.points()
    n = grid.dim.n
    labels = system.labels[cube.level]
    chosen = []
    for p in system.descendants(cube, cube.level + 3):
        z_abs = float(np.linalg.norm(pts[p.cells, :2 * n], axis=1).max())
        slack = grid.cell_diameter_at(z_abs)
        radius = max(system.delta ** (cube.level + 1), r + system.cube_radius(p) + slack)
        d = dist_left_coords(p.center.as_array(), pts)
        if np.all(labels[d < radius] == cube.index):
            chosen.append(p.cells)
    logger.debug("V_Q для %s: %d кубов уровня %d", cube.id, len(chosen), cube.level + 3)
    return np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)


def localized_mean(F: GridFunction, cube, system, q: SphereQuadrature, workers: int = 1,
                   leak_tol: float = 1e-8) -> GridFunction:
    """
    A_Q F = A_{delta^{k+2}}(F 1_{V_Q}), где V_Q - объединение кубов P уровня k+3,
    для которых B(z_P, delta^{k+1}) лежит в Q. Результат сосредоточен в Q;
    доля массы вне Q выше leak_tol считается дефектом.
    """
    k = cube.level
    if k + 3 not in system.levels:
        raise PreconditionError(f"Для куба уровня {k} нужен уровень {k + 3}, которого нет в системе.")

    grid = system.grid
    r = system.delta ** (k + 2)
    _check_resolved(F, r)

    v_cells = inner_cells(system, cube, r)
    out = np.zeros(grid.size)
    if v_cells.size == 0 or not np.any(F.values[v_cells]):
        return GridFunction(grid, out.reshape(grid.shape))

    G = F.masked(v_cells)
    pts = grid.points()
    center = cube.center.as_array()
    spread = float(dist_left_coords(center, pts[v_cells]).max())
    reach = np.flatnonzero(
        dist_left_coords(center, pts) <= spread + r + 2.0 * grid.koranyi_cell_diameter
    )
    out[reach] = spherical_mean_at(G, r, q, pts[reach], workers)

    inside = np.zeros(grid.size, dtype=bool)
    inside[cube.cells] = True
    total = float(np.sum(np.abs(out)))
    leak = float(np.sum(np.abs(out[~inside]))) / total if total > 0 else 0.0
    if leak > leak_tol:
        raise NumericalError(f"A_Q выходит за носитель куба {cube.id}: доля массы вне Q {leak:.3e}.")
    out[~inside] = 0.0
    return GridFunction(grid, out.reshape(grid.shape))


# -------------------------
# Непрерывность и улучшение L^p
# -------------------------

def continuity_deficit(F: Field, r: float, a: Point, p: float, q_exp: float, q: SphereQuadrature,
                       grid: BoxGrid | None = None, workers: int = 1) -> float:
    """||A_r F - A_r tau_a F||_{q_exp} / ||F||_p."""
    size = koranyi_norm(a)
    if size > r:
        raise PreconditionError(f"Сдвиг |a|={size:g} больше радиуса r={r:g}.")
    out = _output_grid(F, grid)
    if 0 < size < out.spacing:
        logger.warning("Сдвиг |a|=%g меньше шага сетки %g: результат определяется интерполяцией.", size, out.spacing)

    base = F if isinstance(F, GridFunction) and F.grid is out else sample(out, F)
    norm_f = lp_norm(base, p)
    if norm_f == 0:
        raise PreconditionError("Норма функции равна нулю.")
    pts = out.points()
    diff = spherical_mean_at(F, r, q, pts, workers) - spherical_mean_at(right_translate(F, a), r, q, pts, workers)
    return lp_norm(GridFunction(out, diff.reshape(out.shape)), q_exp) / norm_f


def continuity_fit(F: Field, r: float, direction: Point, sizes: Sequence[float], p: float, q_exp: float,
                   q: SphereQuadrature, grid: BoxGrid, workers: int = 1) -> PowerFit:
    """Подгонка deficit ~ |a|^eta по сдвигам a = delta_s(direction), |direction| = 1."""
    base = direction.as_array()
    values = []
    for s in sizes:
        a = Point.from_array(dilate_coords(s, base))
        values.append(continuity_deficit(F, r, a, p, q_exp, q, grid, workers))
    return power_fit([koranyi_norm(Point.from_array(dilate_coords(s, base))) for s in sizes], values)


def improving_ratio(F: Field, r: float, p: float, q_exp: float, q: SphereQuadrature, grid: BoxGrid,
                    workers: int = 1) -> float:
    """||A_r F||_{q_exp} / ||F||_p на сетке grid."""
    f = sample(grid, F)
    mean = GridFunction(grid, spherical_mean_at(F, r, q, grid.points(), workers).reshape(grid.shape))
    return lp_norm(mean, q_exp) / lp_norm(f, p)


def improving_scaling_fit(f: Callable, radii: Sequence[float], p: float, q_exp: float,
                          q: SphereQuadrature, grid: BoxGrid, workers: int = 1) -> PowerFit:
    """
    Наклон ||A_r f_r||_q / ||f_r||_p по r для семейства f_r = f o delta_{1/r};
    сетка растягивается вместе с функцией, так что разрешение не меняется.
    """
    ratios = []
    for r in radii:
        fr = dilated(f, 1.0 / r)
        ratios.append(improving_ratio(fr, r, p, q_exp, q, grid.scaled(r), workers))
    return power_fit(radii, ratios)


def dilated(f: Callable, s: float) -> Callable:
    def g(coords):
        return f(dilate_coords(s, np.asarray(coords, dtype=float)))
    return g
