from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from core.exceptions import PreconditionError
from core.group import GroupDim, Point, dist_left_coords, inverse_coords, koranyi_norm_coords, multiply_coords

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"HGF1"


@dataclass(frozen=True, eq=False)
class BoxGrid:
    """
    Равномерная сетка на прямоугольнике в H^n: по осям z полуширина half_width_z,
    по оси t полуширина half_width_t; отсчёты в центрах ячеек.
    """
    center: Point
    half_width_z: float
    half_width_t: float
    resolution: tuple[int, ...]

    def __post_init__(self):
        if len(self.resolution) != self.center.dim.size:
            raise PreconditionError(
                f"Нужно {self.center.dim.size} разрешений по осям, получено {len(self.resolution)}."
            )
        if min(self.resolution) < 2:
            raise PreconditionError("Разрешение по каждой оси должно быть >= 2.")
        if not (self.half_width_z > 0 and self.half_width_t > 0):
            raise PreconditionError("Полуширины сетки должны быть положительными.")

    @classmethod
    def cube(cls, dim: GroupDim, half_width_z: float, resolution: int,
             half_width_t: float | None = None, center: Point | None = None) -> "BoxGrid":
        """Сетка с одинаковым разрешением; по t по умолчанию однородная полуширина hz^2."""
        return cls(
            center=center or Point.origin(dim),
            half_width_z=float(half_width_z),
            half_width_t=float(half_width_t if half_width_t is not None else half_width_z ** 2),
            resolution=(int(resolution),) * dim.size,
        )

    @property
    def dim(self) -> GroupDim:
        return self.center.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.resolution)

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @cached_property
    def half_widths(self) -> np.ndarray:
        n = self.dim.n
        return np.array([self.half_width_z] * (2 * n) + [self.half_width_t])

    @cached_property
    def spacings(self) -> np.ndarray:
        return 2.0 * self.half_widths / np.asarray(self.resolution, dtype=float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_widths))

    @property
    def spacing(self) -> float:
        """Однородный шаг max(h_z, sqrt(h_t)): t масштабируется как r^2."""
        n = self.dim.n
        return float(max(self.spacings[:2 * n].max(), math.sqrt(self.spacings[2 * n])))

    @cached_property
    def lower(self) -> np.ndarray:
        return self.center.as_array() - self.half_widths

    @cached_property
    def upper(self) -> np.ndarray:
        return self.center.as_array() + self.half_widths

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            lo + h * (np.arange(m) + 0.5)
            for lo, h, m in zip(self.lower, self.spacings, self.resolution)
        )

    def points(self) -> np.ndarray:
        return self._points

    @cached_property
    def _points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def cell_diameter_at(self, z_abs: float) -> float:
        """
        Верхняя оценка d_L от точки p с |z_p| <= z_abs до любой точки в пределах
        одной ячейки по каждой оси: |dz|^4 + 16 (|dt| + |z_p| |dz| / 2)^2.
        """
        n = self.dim.n
        dz = float(np.linalg.norm(self.spacings[:2 * n]))
        dt = float(self.spacings[2 * n])
        return (dz ** 4 + 16.0 * (dt + 0.5 * float(z_abs) * dz) ** 2) ** 0.25

    @cached_property
    def koranyi_cell_diameter(self) -> float:
        """Та же оценка для худшей точки прямоугольника."""
        n = self.dim.n
        z_max = float(np.linalg.norm(np.maximum(np.abs(self.lower[:2 * n]), np.abs(self.upper[:2 * n]))))
        return self.cell_diameter_at(z_max)

    def contains(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        return np.all((coords >= self.lower) & (coords < self.upper), axis=-1)

    def cell_index(self, coords) -> np.ndarray:
        """Плоский индекс ячейки, содержащей точку; -1 вне прямоугольника."""
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        idx = np.floor((coords - self.lower) / self.spacings).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.resolution) - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.shape)
        return np.where(self.contains(coords), flat, -1)

    def scaled(self, r: float) -> "BoxGrid":
        """Образ сетки под delta_r: те же разрешения, растянутые полуширины."""
        c = self.center.as_array() * np.array([r] * (2 * self.dim.n) + [r * r])
        return BoxGrid(Point.from_array(c), self.half_width_z * r, self.half_width_t * r * r, self.resolution)

    def refined(self, factor: int = 2) -> "BoxGrid":
        """Однородное измельчение: h_z делится на factor, h_t на factor^2."""
        z = tuple(m * factor for m in self.resolution[:-1])
        return BoxGrid(self.center, self.half_width_z, self.half_width_t,
                       z + (self.resolution[-1] * factor * factor,))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: BoxGrid
    samples: np.ndarray

    def __post_init__(self):
        if self.samples.shape != self.grid.shape:
            raise PreconditionError(f"Форма отсчётов {self.samples.shape} не совпадает с сеткой {self.grid.shape}.")
        if not np.all(np.isfinite(self.samples)):
            raise PreconditionError("Отсчёты функции на сетке должны быть конечными.")

    @property
    def values(self) -> np.ndarray:
        return self.samples.reshape(-1)

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        # нулевые узлы на гранях: между крайним центром и гранью спад к нулю, вне прямоугольника 0
        g = self.grid
        axes = tuple(np.concatenate(([lo], a, [hi])) for a, lo, hi in zip(g.axes, g.lower, g.upper))
        return RegularGridInterpolator(
            axes, np.pad(self.samples, 1), method="linear", bounds_error=False, fill_value=0.0
        )

    def __call__(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        flat = coords.reshape(-1, self.grid.dim.size)
        return self._interpolator(flat).reshape(coords.shape[:-1])

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.grid, np.asarray(values, dtype=float).reshape(self.grid.shape))

    def masked(self, cells: np.ndarray) -> "GridFunction":
        out = np.zeros(self.grid.size)
        out[cells] = self.values[cells]
        return self.with_values(out)

    # --- ввод/вывод ---

    def to_binary(self, path: Path) -> Path:
        g = self.grid
        header = BINARY_MAGIC + struct.pack("<ii", g.dim.n, g.dim.size)
        header += np.asarray(g.resolution, dtype="<i4").tobytes()
        header += np.asarray([*g.center.as_array(), g.half_width_z, g.half_width_t], dtype="<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.values.astype("<f8").tobytes())
        return path

    @classmethod
    def from_binary(cls, path: Path) -> "GridFunction":
        data = Path(path).read_bytes()
        if data[:4] != BINARY_MAGIC:
            raise PreconditionError(f"Файл {path} не является сеточной функцией.")
        n, size = struct.unpack("<ii", data[4:12])
        pos = 12
        resolution = tuple(int(v) for v in np.frombuffer(data, dtype="<i4", count=size, offset=pos))
        pos += 4 * size
        floats = np.frombuffer(data, dtype="<f8", count=size + 2, offset=pos)
        pos += 8 * (size + 2)
        grid = BoxGrid(Point.from_array(floats[:size]), float(floats[size]), float(floats[size + 1]), resolution)
        payload = np.frombuffer(data, dtype="<f8", count=grid.size, offset=pos).copy()
        return cls(grid, payload.reshape(grid.shape))

    def to_csv(self, path: Path, max_rows: int = 200_000) -> Path:
        if self.grid.size > max_rows:
            raise PreconditionError(f"Сетка слишком велика для CSV: {self.grid.size} > {max_rows} ячеек.")
        n = self.grid.dim.n
        header = [f"x{j + 1}" for j in range(n)] + [f"y{j + 1}" for j in range(n)] + ["t", "value"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for p, v in zip(self.grid.points(), self.values):
                writer.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        return path


@dataclass(frozen=True, eq=False)
class Ball:
    """Метрический шар B(center, radius) в d_L, представленный множеством ячеек."""
    center: Point
    radius: float
    cells: np.ndarray = field(repr=False)

    @property
    def label(self) -> str:
        return f"ball r={self.radius:g}"


def ball(grid: BoxGrid, center: Point, radius: float) -> Ball:
    d = dist_left_coords(center.as_array(), grid.points())
    return Ball(center, float(radius), np.flatnonzero(d < radius))


def ball_family(grid: BoxGrid, centers: Iterable[Point], radii: Sequence[float]) -> list[Ball]:
    """Шары с центрами в заданных точках и заданными радиусами; пустые отбрасываются."""
    out = []
    for c in centers:
        for r in radii:
            b = ball(grid, c, r)
            if b.cells.size:
                out.append(b)
    return out


# -------------------------
# Операции
# -------------------------

def sample(grid: BoxGrid, f: Callable[[np.ndarray], np.ndarray]) -> GridFunction:
    values = np.asarray(f(grid.points()), dtype=float)
    if values.shape != (grid.size,):
        values = np.broadcast_to(values, (grid.size,)).copy()
    if not np.all(np.isfinite(values)):
        raise PreconditionError("При дискретизации получено неконечное значение.")
    return GridFunction(grid, values.reshape(grid.shape))


def interpolate(F: GridFunction, p: Point) -> float:
    return float(F(p.as_array()))


def _weights_of(F: GridFunction, w: GridFunction | None) -> np.ndarray | float:
    if w is None:
        return 1.0
    if w.grid.shape != F.grid.shape:
        raise PreconditionError("Вес задан на другой сетке.")
    if np.any(w.values <= 0):
        raise PreconditionError("Вес должен быть положительным во всех ячейках.")
    return w.values


def lp_norm(F: GridFunction, p: float, w: GridFunction | None = None) -> float:
    if not p >= 1:
        raise PreconditionError(f"Показатель нормы должен быть >= 1, получено {p}.")
    weights = _weights_of(F, w)
    a = np.abs(F.values)
    if math.isinf(p):
        return float(a.max())
    return float(np.sum(a ** p * weights) * F.grid.cell_volume) ** (1.0 / p)


def cells_of(cube) -> np.ndarray:
    cells = cube.cells if hasattr(cube, "cells") else cube
    cells = np.asarray(cells)
    if cells.dtype == bool:
        cells = np.flatnonzero(cells)
    return cells


def cube_average(F: GridFunction | np.ndarray, cube, p: float = 1.0) -> float:
    """<f>_{Q,p} = (|Q|^{-1} int_Q |f|^p)^{1/p}; |Q| считается по числу ячеек."""
    cells = cells_of(cube)
    if cells.size == 0:
        raise PreconditionError("Куб не содержит ни одной ячейки сетки.")
    values = F.values if isinstance(F, GridFunction) else np.asarray(F).reshape(-1)
    a = np.abs(values[cells])
    if math.isinf(p):
        return float(a.max())
    return float(np.mean(a ** p)) ** (1.0 / p)


def pairing(F: GridFunction, G: GridFunction, cells: np.ndarray | None = None) -> float:
    """<F, G> = int F G dx по ячейкам (или по подмножеству ячеек)."""
    prod = F.values * G.values
    if cells is not None:
        prod = prod[cells_of(cells)]
    return float(np.sum(prod) * F.grid.cell_volume)


# -------------------------
# Тестовые функции
# -------------------------

def _local(coords: np.ndarray, center: Point | None) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    if center is None:
        return coords
    return multiply_coords(inverse_coords(center.as_array()), coords)


def test_functions(dim: GroupDim, kind: str, **params) -> Callable[[np.ndarray], np.ndarray]:
    """
    Именованные замыкания f(coords) для массивов координат (..., 2n+1):
      gaussian(a, b, center), koranyi_ball_indicator(radius, center),
      smooth_bump(radius, center), random_trig(modes, seed, scale), power_weight(a).
    """
    n = dim.n
    center = params.get("center")

    if kind == "gaussian":
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 1.0))

        def gaussian(coords):
            x = _local(coords, center)
            return np.exp(-a * np.sum(x[..., :2 * n] ** 2, axis=-1) - b * x[..., 2 * n] ** 2)
        return gaussian

    if kind == "koranyi_ball_indicator":
        radius = float(params.get("radius", 1.0))

        def indicator(coords):
            return (koranyi_norm_coords(_local(coords, center)) < radius).astype(float)
        return indicator

    if kind == "smooth_bump":
        radius = float(params.get("radius", 1.0))

        def bump(coords):
            x = _local(coords, center)
            z2 = np.sum(x[..., :2 * n] ** 2, axis=-1)
            # u = |x|^4 / r^4 - гладкая функция координат
            u = (z2 * z2 + 16.0 * x[..., 2 * n] ** 2) / radius ** 4
            out = np.zeros_like(u)
            inside = u < 1.0
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside]))
            return out
        return bump

    if kind == "random_trig":
        modes = int(params.get("modes", 4))
        scale = float(params.get("scale", 1.0))
        rng = np.random.default_rng(params.get("seed", 0))
        freqs = rng.normal(scale=scale, size=(modes, dim.size))
        phases = rng.uniform(0.0, 2.0 * math.pi, size=modes)
        amps = rng.uniform(-1.0, 1.0, size=modes) / modes

        def trig(coords):
            x = np.asarray(coords, dtype=float)
            return np.cos(x @ freqs.T + phases) @ amps
        return trig

    if kind == "power_weight":
        a = float(params.get("a", 0.0))

        def power(coords):
            return koranyi_norm_coords(_local(coords, center)) ** a
        return power

    raise PreconditionError(f"Неизвестный вид тестовой функции: {kind!r}.")


# не тест для pytest, несмотря на имя
test_functions.__test__ = False
