from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import gammaln

from core.exceptions import NumericalError, PreconditionError
from core.group import GroupDim, koranyi_norm_coords, radial_moment, truncation_radius

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ComplexSphereRule:
    """Квадратура вероятностной меры на единичной сфере S^{2n-1} в C^n."""
    vectors: np.ndarray  # (M, 2n): Re z_1..Re z_n, Im z_1..Im z_n
    weights: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0 or self.vectors.shape[1] % 2:
            raise PreconditionError("Вырожденное правило на сфере: нет узлов или нечётная размерность.")
        if self.vectors.shape[0] != self.weights.shape[0]:
            raise PreconditionError("Число весов не совпадает с числом узлов.")
        if np.any(self.weights <= 0):
            raise PreconditionError("Веса правила на сфере должны быть положительными.")
        if np.max(np.abs(np.linalg.norm(self.vectors, axis=1) - 1.0)) > 1e-12:
            raise PreconditionError("Узлы правила должны лежать на единичной сфере.")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise PreconditionError("Сумма весов правила на сфере должна быть равна 1.")

    @property
    def n(self) -> int:
        return self.vectors.shape[1] // 2

    def __len__(self):
        return self.weights.shape[0]


def sphere_rule_for_complex_sphere(n: int, size: int, seed: int = 0) -> ComplexSphereRule:
    """
    Правило на S^{2n-1}:
      - n = 1: равномерная сетка по углу;
      - n = 2: произведение в координатах Хопфа (s = |z_2|^2 по Гауссу-Лежандру,
        две фазы равномерно), точно для сферических многочленов низкой степени;
      - n >= 3: равновесное Монте-Карло с антиподальными парами (seed).
    """
    if n < 1:
        raise PreconditionError(f"n должно быть >= 1, получено {n}.")
    if size < 2 * n:
        raise PreconditionError(f"Слишком мало узлов: {size} < 2n = {2 * n}.")

    if n == 1:
        phi = 2.0 * math.pi * (np.arange(size) + 0.5) / size
        vectors = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        weights = np.full(size, 1.0 / size)

    elif n == 2:
        m = max(2, math.ceil(size ** (1.0 / 3.0) - 1e-9))
        xs, ws = np.polynomial.legendre.leggauss(m)
        s = 0.5 * (xs + 1.0)
        ws = 0.5 * ws
        xi = 2.0 * math.pi * (np.arange(m) + 0.5) / m
        S, X1, X2 = np.meshgrid(s, xi, xi, indexing="ij")
        W = np.broadcast_to(ws[:, None, None], S.shape) / (m * m)
        a = np.sqrt(1.0 - S)
        b = np.sqrt(S)
        vectors = np.stack([
            a * np.cos(X1), b * np.cos(X2),
            a * np.sin(X1), b * np.sin(X2),
        ], axis=-1).reshape(-1, 4)
        weights = W.reshape(-1).copy()

    else:
        half = math.ceil(size / 2)
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((half, 2 * n))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        vectors = np.concatenate([g, -g], axis=0)
        weights = np.full(2 * half, 1.0 / (2 * half))

    # нормировка, чтобы погрешность округления не копилась в массе
    vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    weights = weights / np.sum(weights)
    return ComplexSphereRule(vectors=vectors, weights=weights)


def theta_constant(n: int) -> float:
    """c_n = Gamma((n+1)/2) / (sqrt(pi) Gamma(n/2))."""
    return float(math.exp(gammaln((n + 1) / 2) - gammaln(n / 2)) / math.sqrt(math.pi))


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    dim: GroupDim
    nodes: np.ndarray    # (N, 2n+1), на единичной сфере Кораньи
    weights: np.ndarray  # (N,)
    n_theta: int
    n_sphere: int

    def __post_init__(self):
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-10:
            raise NumericalError(f"Масса квадратуры сферы {np.sum(self.weights)!r} отличается от 1.")
        if np.max(np.abs(koranyi_norm_coords(self.nodes) - 1.0)) > 1e-12:
            raise NumericalError("Узлы квадратуры не лежат на единичной сфере Кораньи.")

    def __len__(self):
        return self.weights.shape[0]

    def dilated_nodes(self, r: float) -> np.ndarray:
        """Узлы sigma_r: delta_r применённое к узлам sigma."""
        scale = np.array([r] * (2 * self.dim.n) + [r * r])
        return self.nodes * scale

    def to_csv(self, path: Path) -> Path:
        n = self.dim.n
        header = [f"x{j + 1}" for j in range(n)] + [f"y{j + 1}" for j in range(n)] + ["t", "weight"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for node, w in zip(self.nodes, self.weights):
                writer.writerow([repr(float(v)) for v in node] + [repr(float(w))])
        return path


def build_sphere_rule(dim: GroupDim, n_theta: int, sphere: ComplexSphereRule) -> SphereQuadrature:
    """
    Квадратура вероятностной меры sigma на сфере Кораньи как суперпозиция мер на
    комплексных сферах: узлы (sqrt(cos th) w, sin(th)/4), веса c_n w_th cos^{n-1}(th) v.
    """
    if n_theta < 8:
        raise PreconditionError(f"Порядок правила по theta должен быть >= 8, получено {n_theta}.")
    if sphere.n != dim.n:
        raise PreconditionError(f"Правило на S^{2 * sphere.n - 1} не подходит для n={dim.n}.")

    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = 0.5 * math.pi * x
    w_theta = 0.5 * math.pi * w * theta_constant(dim.n) * np.cos(theta) ** (dim.n - 1)

    root = np.sqrt(np.cos(theta))
    z = root[:, None, None] * sphere.vectors[None, :, :]
    t = np.broadcast_to((0.25 * np.sin(theta))[:, None, None], (n_theta, len(sphere), 1))
    nodes = np.concatenate([z, t], axis=-1).reshape(-1, dim.size)
    weights = (w_theta[:, None] * sphere.weights[None, :]).reshape(-1)

    logger.debug("Квадратура сферы: n=%d, %d x %d узлов", dim.n, n_theta, len(sphere))
    return SphereQuadrature(dim=dim, nodes=nodes, weights=weights, n_theta=n_theta, n_sphere=len(sphere))


def _evaluate(f: Callable, coords: np.ndarray) -> np.ndarray:
    values = np.asarray(f(coords), dtype=float)
    if not np.all(np.isfinite(values)):
        raise PreconditionError("Функция принимает неконечные значения в узлах квадратуры.")
    return values


def integrate_on_sphere(q: SphereQuadrature, f: Callable[[np.ndarray], np.ndarray]) -> float:
    return float(np.sum(q.weights * _evaluate(f, q.nodes)))


def polar_integrate(dim: GroupDim, q: SphereQuadrature, kappa: float, f: Callable,
                    radius: float | None = None, panels: int = 64, order: int = 8,
                    truncation_tol: float = 1e-8) -> float:
    """
    kappa int_0^R sum_i w_i f(delta_r node_i) r^{Q-1} dr.

    Без radius граница выбирается там, где подынтегральное падает ниже 1e-14 пика;
    усечение проверяется удвоением R.
    """
    if radius is None:
        radius = truncation_radius(dim, q.nodes, q.weights, f)
    value = kappa * radial_moment(dim, q.nodes, q.weights, f, radius, panels=panels, order=order)
    doubled = kappa * radial_moment(dim, q.nodes, q.weights, f, 2.0 * radius, panels=2 * panels, order=order)
    if abs(doubled - value) > truncation_tol * max(abs(doubled), 1e-300):
        raise NumericalError(
            f"Результат определяется усечением: I(R)={value!r}, I(2R)={doubled!r} при R={radius:g}."
        )
    return value
