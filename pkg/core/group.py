from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import beta, gamma

from .exceptions import NumericalError, PreconditionError

logger = logging.getLogger(__name__)

# Координаты точки хранятся плоским вектором длины 2n+1: (x_1..x_n, y_1..y_n, t)


@dataclass(frozen=True)
class GroupDim:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise PreconditionError(f"Комплексная размерность должна быть целой и >= 1, получено {self.n}.")

    @property
    def Q(self) -> int:
        """Однородная размерность 2n+2."""
        return 2 * self.n + 2

    @property
    def size(self) -> int:
        return 2 * self.n + 1

    @property
    def within_hypotheses(self) -> bool:
        # основные оценки требуют n >= 2; n = 1 допускается для быстрых прогонов
        return self.n >= 2

    @classmethod
    def from_size(cls, size: int) -> "GroupDim":
        if size < 3 or size % 2 == 0:
            raise PreconditionError(f"Длина вектора координат должна быть нечётной и >= 3, получено {size}.")
        return cls((size - 1) // 2)


@dataclass(frozen=True)
class Point:
    x: tuple[float, ...]
    y: tuple[float, ...]
    t: float

    def __post_init__(self):
        if len(self.x) != len(self.y) or not self.x:
            raise PreconditionError("Re z и Im z должны иметь одинаковую ненулевую длину.")
        values = (*self.x, *self.y, self.t)
        if not all(math.isfinite(v) for v in values):
            raise PreconditionError("Все координаты точки должны быть конечными.")

    @property
    def dim(self) -> GroupDim:
        return GroupDim(len(self.x))

    def as_array(self) -> np.ndarray:
        return np.array([*self.x, *self.y, self.t], dtype=float)

    @classmethod
    def from_array(cls, coords: Sequence[float]) -> "Point":
        arr = np.asarray(coords, dtype=float).reshape(-1)
        n = GroupDim.from_size(arr.size).n
        return cls(tuple(arr[:n].tolist()), tuple(arr[n:2 * n].tolist()), float(arr[2 * n]))

    @classmethod
    def origin(cls, dim: GroupDim) -> "Point":
        return cls((0.0,) * dim.n, (0.0,) * dim.n, 0.0)

    def __mul__(self, other: "Point") -> "Point":
        return multiply(self, other)


# -------------------------
# Векторизованные операции над массивами координат (..., 2n+1)
# -------------------------

def _split(coords: np.ndarray):
    n = GroupDim.from_size(coords.shape[-1]).n
    return coords[..., :n], coords[..., n:2 * n], coords[..., 2 * n]


def multiply_coords(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise PreconditionError(
            f"Несовпадение размерностей: {a.shape[-1]} и {b.shape[-1]} координат."
        )
    x, y, t = _split(a)
    u, v, s = _split(b)
    # Im(z . conj(w)) = sum(y_j u_j - x_j v_j)
    twist = 0.5 * np.sum(y * u - x * v, axis=-1)
    return np.concatenate([x + u, y + v, (t + s + twist)[..., None]], axis=-1)


def inverse_coords(a) -> np.ndarray:
    return -np.asarray(a, dtype=float)


def dilation_vector(r: float, size: int) -> np.ndarray:
    if not r > 0:
        raise PreconditionError(f"Параметр растяжения должен быть положительным, получено {r}.")
    n = GroupDim.from_size(size).n
    return np.array([r] * (2 * n) + [r * r], dtype=float)


def dilate_coords(r: float, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a * dilation_vector(r, a.shape[-1])


def koranyi_norm_coords(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    x, y, t = _split(a)
    z2 = np.sum(x * x + y * y, axis=-1)
    return (z2 * z2 + 16.0 * t * t) ** 0.25


def dist_left_coords(a, b) -> np.ndarray:
    return koranyi_norm_coords(multiply_coords(inverse_coords(a), b))


# -------------------------
# Операции над точками
# -------------------------

def multiply(a: Point, b: Point) -> Point:
    if a.dim != b.dim:
        raise PreconditionError(f"Точки из разных групп: n={a.dim.n} и n={b.dim.n}.")
    return Point.from_array(multiply_coords(a.as_array(), b.as_array()))


def inverse(a: Point) -> Point:
    return Point(tuple(-v for v in a.x), tuple(-v for v in a.y), -a.t)


def dilate(r: float, a: Point) -> Point:
    return Point.from_array(dilate_coords(r, a.as_array()))


def koranyi_norm(a: Point) -> float:
    return float(koranyi_norm_coords(a.as_array()))


def dist_left(a: Point, b: Point) -> float:
    """Левоинвариантная метрика d_L(a, b) = |a^{-1} b|."""
    if a.dim != b.dim:
        raise PreconditionError(f"Точки из разных групп: n={a.dim.n} и n={b.dim.n}.")
    return float(dist_left_coords(a.as_array(), b.as_array()))


# -------------------------
# Полярное разложение
# -------------------------

def koranyi_ball_volume(dim: GroupDim) -> float:
    """|B(0,1)| = pi^n B(n/2, 3/2) / (4 Gamma(n))."""
    n = dim.n
    return float(math.pi ** n * beta(n / 2, 1.5) / (4.0 * gamma(n)))


def _radial_profile(dim: GroupDim, nodes: np.ndarray, weights: np.ndarray,
                    f: Callable[[np.ndarray], np.ndarray], radii: np.ndarray) -> np.ndarray:
    """sum_i w_i f(delta_r omega_i) для каждого r из radii."""
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    scale = np.ones((radii.size, dim.size))
    scale[:, :2 * dim.n] = radii[:, None]
    scale[:, 2 * dim.n] = radii ** 2
    # куски по радиусам, чтобы не держать в памяти все точки сразу
    step = max(1, 2_000_000 // max(1, nodes.shape[0]))
    out = np.empty(radii.size)
    for start in range(0, radii.size, step):
        block = scale[start:start + step]
        pts = nodes[None, :, :] * block[:, None, :]
        values = np.asarray(f(pts.reshape(-1, dim.size)), dtype=float).reshape(block.shape[0], -1)
        out[start:start + step] = values @ weights
    return out


def truncation_radius(dim: GroupDim, nodes: np.ndarray, weights: np.ndarray,
                      f: Callable, relative: float = 1e-14, r_max: float = 2.0 ** 12) -> float:
    """Радиус, за которым подынтегральная функция меньше relative * пик."""
    radii = 2.0 ** np.arange(-8, int(math.log2(r_max)) + 1).astype(float)
    profile = np.abs(_radial_profile(dim, nodes, weights, f, radii)) * radii ** (dim.Q - 1)
    peak = profile.max()
    if peak == 0:
        return 1.0
    top = int(profile.argmax())
    for r, value in zip(radii[top:], profile[top:]):
        if value < relative * peak:
            return float(r)
    raise NumericalError(f"Подынтегральная функция не убывает до r={r_max}: усечение невозможно.")


def radial_moment(dim: GroupDim, nodes: np.ndarray, weights: np.ndarray, f: Callable,
                  radius: float, panels: int = 64, order: int = 8) -> float:
    """
    int_0^R sum_i w_i f(delta_r omega_i) r^{Q-1} dr составной квадратурой
    Гаусса-Лежандра по r. При R = 2^j и числе панелей 2^m точка r = 1 попадает
    на границу панели, поэтому индикатор шара интегрируется точно.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    width = radius / panels
    left = width * np.arange(panels)
    r = (left[:, None] + 0.5 * width * (x[None, :] + 1.0)).reshape(-1)
    wr = np.tile(0.5 * width * w, panels)
    profile = _radial_profile(dim, nodes, weights, f, r)
    return float(np.sum(wr * profile * r ** (dim.Q - 1)))


def _gaussian(a: float, b: float, n: int) -> Callable[[np.ndarray], np.ndarray]:
    def f(coords):
        coords = np.asarray(coords, dtype=float)
        z2 = np.sum(coords[..., :2 * n] ** 2, axis=-1)
        return np.exp(-a * z2 - b * coords[..., 2 * n] ** 2)
    return f


def polar_constant(dim: GroupDim, quad, grid=None,
                   battery: Sequence[tuple[float, float]] = ((1.0, 1.0), (2.0, 3.0), (0.5, 1.0)),
                   tol: float = 1e-3) -> float:
    """
    Оценивает kappa в int f dx = kappa int_0^inf int_S f(delta_r w) r^{Q-1} dsigma dr
    методом наименьших квадратов по набору гауссиан exp(-a|z|^2 - b t^2).

    Числитель берётся в замкнутой форме (pi/a)^n sqrt(pi/b) либо, если передана
    сетка, суммированием по её ячейкам.
    """
    if abs(float(np.sum(quad.weights)) - 1.0) > 1e-8:
        raise PreconditionError("Квадратура сферы должна быть нормирована на массу 1.")

    numer, denom = [], []
    for a, b in battery:
        f = _gaussian(a, b, dim.n)
        if grid is None:
            numer.append((math.pi / a) ** dim.n * math.sqrt(math.pi / b))
        else:
            numer.append(float(np.sum(f(grid.points())) * grid.cell_volume))
        radius = truncation_radius(dim, quad.nodes, quad.weights, f)
        denom.append(radial_moment(dim, quad.nodes, quad.weights, f, radius))

    numer = np.asarray(numer)
    denom = np.asarray(denom)
    kappa = float(numer @ denom / (denom @ denom))
    spread = np.max(np.abs(numer / denom - kappa)) / kappa
    logger.debug("kappa=%.12g, разброс по набору %.3e", kappa, spread)

    if spread > tol:
        raise NumericalError(
            f"Оценки kappa по тестовым функциям расходятся на {spread:.3e} (допуск {tol:g}): дефект квадратуры."
        )
    return kappa
