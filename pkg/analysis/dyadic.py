from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from core.exceptions import NumericalError, PreconditionError
from core.group import Point, dist_left_coords

from .fields import BoxGrid, ball

logger = logging.getLogger(__name__)

# сколько расстояний считать за один проход при назначении ячеек
CHUNK_BUDGET = 1_000_000


@dataclass(frozen=True, eq=False)
class Cube:
    id: str
    level: int
    index: int
    center: Point
    sidelength: float
    cells: np.ndarray = field(repr=False)
    cell_volume: float = field(repr=False)
    parent_id: str | None = None

    @property
    def measure(self) -> float:
        return self.cells.size * self.cell_volume

    def __len__(self):
        return int(self.cells.size)


def cube_id(level: int, index: int) -> str:
    return f"k{level}:{index}"


@dataclass(eq=False)
class DyadicSystem:
    """
    Иерархия кубов на ограниченной области: для каждого уровня k (от грубого к
    мелкому) центры сети и метка куба для каждой ячейки сетки.
    """
    grid: BoxGrid
    delta: float
    levels: list[int]
    center_cells: dict[int, np.ndarray]
    labels: dict[int, np.ndarray]
    parents: dict[int, np.ndarray]
    seed: int = 0

    @property
    def finest(self) -> int:
        return self.levels[-1]

    @property
    def coarsest(self) -> int:
        return self.levels[0]

    def sidelength(self, level: int) -> float:
        return self.delta ** level

    def centers(self, level: int) -> np.ndarray:
        return self.grid.points()[self.center_cells[level]]

    def _check_level(self, level: int):
        if level not in self.labels:
            raise PreconditionError(f"Уровень {level} не построен (есть {self.levels}).")

    @cached_property
    def _cubes(self) -> dict[int, list[Cube]]:
        out = {}
        for k in self.levels:
            labels = self.labels[k]
            order = np.argsort(labels, kind="stable")
            bounds = np.searchsorted(labels[order], np.arange(self.center_cells[k].size + 1))
            centers = self.centers(k)
            parents = self.parents.get(k)
            cubes = []
            for j in range(self.center_cells[k].size):
                cells = np.sort(order[bounds[j]:bounds[j + 1]])
                parent = cube_id(k - 1, int(parents[j])) if parents is not None else None
                cubes.append(Cube(
                    id=cube_id(k, j), level=k, index=j, center=Point.from_array(centers[j]),
                    sidelength=self.sidelength(k), cells=cells,
                    cell_volume=self.grid.cell_volume, parent_id=parent,
                ))
            out[k] = cubes
        return out

    def cubes(self, level: int) -> list[Cube]:
        self._check_level(level)
        return self._cubes[level]

    def all_cubes(self) -> list[Cube]:
        return [c for k in self.levels for c in self._cubes[k]]

    def cube(self, level: int, index: int) -> Cube:
        return self.cubes(level)[index]

    def by_id(self, ident: str) -> Cube:
        level, index = ident[1:].split(":")
        return self.cube(int(level), int(index))

    def parent(self, cube: Cube) -> Cube | None:
        return self.by_id(cube.parent_id) if cube.parent_id else None

    def ancestor(self, cube: Cube, level: int) -> Cube:
        if level > cube.level:
            raise PreconditionError(f"Уровень {level} мельче уровня куба {cube.level}.")
        return self.cube(level, int(self.labels[level][self.center_cells[cube.level][cube.index]]))

    def descendants(self, cube: Cube, level: int) -> list[Cube]:
        """Кубы уровня level, лежащие в cube (сам cube при level == cube.level)."""
        self._check_level(level)
        if level < cube.level:
            raise PreconditionError(f"Уровень {level} грубее уровня куба {cube.level}.")
        inside = np.unique(self.labels[level][cube.cells])
        return [self.cube(level, int(j)) for j in inside]

    def subcubes(self, cube: Cube, strict: bool = True) -> list[Cube]:
        """Все кубы системы внутри cube, от грубых к мелким."""
        start = cube.level + 1 if strict else cube.level
        return [p for k in self.levels if k >= start for p in self.descendants(cube, k)]

    def children(self, cube: Cube) -> list[Cube]:
        if cube.level == self.finest:
            return []
        return self.descendants(cube, cube.level + 1)

    def cube_radius(self, cube: Cube) -> float:
        """max d_L(z_Q, x) по ячейкам куба."""
        return float(dist_left_coords(cube.center.as_array(), self.grid.points()[cube.cells]).max())

    def refined(self, factor: int = 2) -> "DyadicSystem":
        """
        Та же система на измельчённой сетке: мелкая ячейка получает метки
        содержащей её грубой ячейки, центры - мелкие ячейки под грубыми центрами.
        """
        grid = self.grid.refined(factor)
        coarse = self.grid.cell_index(grid.points())
        centers = {k: grid.cell_index(self.centers(k)) for k in self.levels}
        labels = {k: self.labels[k][coarse] for k in self.levels}
        return DyadicSystem(grid, self.delta, list(self.levels), centers, labels, dict(self.parents), self.seed)

    def to_csv(self, path: Path) -> Path:
        n = self.grid.dim.n
        header = (["level", "cube_id"] + [f"x{j + 1}" for j in range(n)] + [f"y{j + 1}" for j in range(n)]
                  + ["t", "measure", "parent_id"])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for c in self.all_cubes():
                writer.writerow([c.level, c.id, *[repr(float(v)) for v in c.center.as_array()],
                                 repr(c.measure), c.parent_id or ""])
        return path


# -------------------------
# Построение
# -------------------------

def domain_size(grid: BoxGrid) -> float:
    """Оценка диаметра области: 2 max |c^{-1} x| по ячейкам плюс диаметр ячейки."""
    far = float(dist_left_coords(grid.center.as_array(), grid.points()).max())
    return 2.0 * far + grid.koranyi_cell_diameter


def _nearest(centers: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Индекс ближайшего центра (меньший индекс при равенстве) и расстояние до него."""
    best = np.full(pts.shape[0], np.inf)
    arg = np.zeros(pts.shape[0], dtype=np.int64)
    step = max(1, CHUNK_BUDGET // max(1, pts.shape[0]))
    for start in range(0, centers.shape[0], step):
        block = centers[start:start + step]
        d = dist_left_coords(block[:, None, :], pts[None, :, :])
        local = np.argmin(d, axis=0)
        dmin = d[local, np.arange(pts.shape[0])]
        # строгое < сохраняет меньший индекс при равных расстояниях
        better = dmin < best
        best[better] = dmin[better]
        arg[better] = local[better] + start
    return arg, best


def _greedy_net(pts: np.ndarray, order: np.ndarray, radius: float, seeds: np.ndarray) -> np.ndarray:
    """Максимальная radius-разделённая сеть: seeds плюс ячейки в порядке order."""
    mindist = np.full(pts.shape[0], np.inf)
    for c in seeds:
        np.minimum(mindist, dist_left_coords(pts[c], pts), out=mindist)
    chosen = list(int(c) for c in seeds)
    pos = 0
    while pos < order.size:
        free = mindist[order[pos:]] >= radius
        if not free.any():
            break
        hit = int(np.argmax(free))
        c = int(order[pos + hit])
        chosen.append(c)
        np.minimum(mindist, dist_left_coords(pts[c], pts), out=mindist)
        pos += hit + 1
    return np.asarray(chosen, dtype=np.int64)


def build_system(domain: BoxGrid, delta: float, k_range: tuple[int, int], seed: int = 0) -> DyadicSystem:
    """
    Уровни k_min..k_max: на каждом жадная максимальная delta^k-разделённая сеть
    в d_L по центрам ячеек в линейном порядке со сдвигом от seed; центры грубых
    уровней переносятся на мелкие. Ячейки относятся к ближайшему центру мелкого
    уровня, куб уровня k+1 - к ближайшему центру уровня k в пределах 2 delta^k.
    """
    if not 0 < delta < 1:
        raise PreconditionError(f"delta должно лежать в (0, 1), получено {delta}.")
    k_min, k_max = (int(k) for k in k_range)
    if k_min > k_max:
        raise PreconditionError(f"Пустой диапазон уровней: {k_min} > {k_max}.")
    size = domain_size(domain)
    if delta ** k_min > size:
        raise PreconditionError(f"Грубый масштаб delta^{k_min}={delta ** k_min:g} больше области ({size:g}).")
    if delta ** k_max < 4.0 * domain.spacing:
        raise PreconditionError(
            f"Мелкий масштаб delta^{k_max}={delta ** k_max:g} меньше четырёх шагов сетки ({domain.spacing:g})."
        )

    pts = domain.points()
    rng = np.random.default_rng(seed)
    order = np.roll(np.arange(domain.size), -int(rng.integers(domain.size)))
    levels = list(range(k_min, k_max + 1))

    center_cells: dict[int, np.ndarray] = {}
    seeds = np.empty(0, dtype=np.int64)
    for k in levels:
        net = _greedy_net(pts, order, delta ** k, seeds)
        if net.size == 0:
            raise NumericalError(f"Уровень {k} пуст.")
        center_cells[k] = net
        seeds = net
        logger.debug("Уровень %d: %d центров (сторона %g)", k, net.size, delta ** k)

    labels: dict[int, np.ndarray] = {}
    parents: dict[int, np.ndarray] = {}
    labels[k_max], _ = _nearest(pts[center_cells[k_max]], pts)

    for k in reversed(levels[:-1]):
        coarse = pts[center_cells[k]]
        fine = pts[center_cells[k + 1]]
        d = dist_left_coords(coarse[:, None, :], fine[None, :, :])
        d = np.where(d <= 2.0 * delta ** k, d, np.inf)
        if np.any(np.isinf(d.min(axis=0))):
            raise NumericalError(f"Центр уровня {k + 1} не имеет родителя в пределах 2 delta^{k}.")
        parents[k + 1] = np.argmin(d, axis=0)
        labels[k] = parents[k + 1][labels[k + 1]]

    system = DyadicSystem(domain, float(delta), levels, center_cells, labels, parents, seed=seed)
    logger.info("Диадическая система: delta=%g, уровни %d..%d, seed=%d", delta, k_min, k_max, seed)
    return system


def build_systems(domain: BoxGrid, delta: float, k_range: tuple[int, int], seed: int = 0,
                  count: int = 1) -> list[DyadicSystem]:
    """count систем с разными сдвигами жадного порядка."""
    if count < 1:
        raise PreconditionError(f"Нужна хотя бы одна система, получено {count}.")
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [build_system(domain, delta, k_range, seed=int(s)) for s in seeds]


def cube_of(system: DyadicSystem, p: Point, k: int) -> Cube:
    system._check_level(k)
    cell = int(system.grid.cell_index(p.as_array())[0])
    if cell < 0:
        raise PreconditionError(f"Точка {p} лежит вне области системы.")
    return system.cube(k, int(system.labels[k][cell]))


# -------------------------
# Проверка свойств
# -------------------------

@dataclass
class LevelReport:
    level: int
    cubes: int
    min_c_in: float
    max_c_out: float
    min_separation: float


@dataclass
class SystemReport:
    levels: list[LevelReport]
    partition: bool
    nesting: bool
    separation: bool
    center_containment: bool

    @property
    def min_c_in(self) -> float:
        return min(r.min_c_in for r in self.levels)

    @property
    def max_c_out(self) -> float:
        return max(r.max_c_out for r in self.levels)

    @property
    def ok(self) -> bool:
        return self.partition and self.nesting and self.separation and self.center_containment


def verify_system(system: DyadicSystem) -> SystemReport:
    """
    Для каждого куба по ячейкам: наибольшее c_in с B(z, c_in delta^k) в Q и
    наименьшее c_out с Q в B(z, c_out delta^k). Шары меряются по ячейкам области;
    куб, совпадающий со всей областью, даёт c_in = inf.
    """
    grid = system.grid
    pts = grid.points()
    slack = grid.koranyi_cell_diameter
    partition = nesting = separation = containment = True
    reports = []

    for k in system.levels:
        cubes = system.cubes(k)
        side = system.sidelength(k)
        counts = np.bincount(system.labels[k], minlength=len(cubes))
        partition &= bool(counts.sum() == grid.size and np.all(counts > 0))

        c_in, c_out = [], []
        labels = system.labels[k]
        for c in cubes:
            d = dist_left_coords(c.center.as_array(), pts)
            outside = labels != c.index
            c_in.append(float(d[outside].min()) / side if outside.any() else math.inf)
            c_out.append(float(d[~outside].max()) / side)
            containment &= bool(labels[system.center_cells[k][c.index]] == c.index)

        centers = system.centers(k)
        if len(cubes) > 1:
            dd = dist_left_coords(centers[:, None, :], centers[None, :, :])
            np.fill_diagonal(dd, np.inf)
            min_sep = float(dd.min())
            separation &= min_sep >= side - slack
        else:
            min_sep = math.inf

        if k != system.coarsest:
            nesting &= nested_in_parents(system, k)

        reports.append(LevelReport(k, len(cubes), min(c_in), max(c_out), min_sep))
        logger.debug("Уровень %d: c_in=%.4g, c_out=%.4g", k, min(c_in), max(c_out))

    return SystemReport(reports, partition, nesting, separation, containment)


def nested_in_parents(system: DyadicSystem, k: int) -> bool:
    """
    Каждый куб уровня k по своим ячейкам лежит ровно в одном кубе уровня k-1,
    и это его записанный родитель.
    """
    fine, coarse = system.labels[k], system.labels[k - 1]
    pairs = np.unique(np.stack([fine, coarse]), axis=1)
    if pairs.shape[1] != system.center_cells[k].size:
        logger.debug("Уровень %d: куб пересекает несколько кубов уровня %d", k, k - 1)
        return False
    return bool(np.all(pairs[1] == system.parents[k][pairs[0]]))


@dataclass
class CoverReport:
    level: int
    trials: int
    hits: int

    @property
    def rate(self) -> float:
        return self.hits / self.trials if self.trials else 0.0


def ball_cover_rate(systems: Sequence[DyadicSystem], k: int, trials: int = 50, seed: int = 0) -> CoverReport:
    """
    Доля случайных шаров B(x, r), delta^{k+1} < r <= delta^k, целиком лежащих в
    кубе уровня k-1 хотя бы одной системы. Центры берутся среди ячеек на
    расстоянии не меньше delta^k от края.
    """
    if not systems:
        raise PreconditionError("Нужна хотя бы одна система.")
    head = systems[0]
    for s in systems:
        s._check_level(k)
        s._check_level(k - 1)
    rng = np.random.default_rng(seed)
    delta = head.delta
    grid = head.grid
    pts = grid.points()
    n = grid.dim.n
    side = delta ** k
    pad = np.array([side] * (2 * n) + [side * side])
    pool = np.flatnonzero(np.all((pts >= grid.lower + pad) & (pts <= grid.upper - pad), axis=-1))
    if pool.size == 0:
        raise PreconditionError(f"Область слишком мала для шаров радиуса delta^{k}.")

    hits = 0
    for _ in range(trials):
        x = Point.from_array(pts[rng.choice(pool)])
        r = float(rng.uniform(delta ** (k + 1), side))
        b = ball(grid, x, r)
        for s in systems:
            labels = s.labels[k - 1][b.cells]
            if np.all(labels == labels[0]):
                hits += 1
                break
    return CoverReport(k, trials, hits)
