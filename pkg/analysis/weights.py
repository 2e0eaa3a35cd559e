from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from core.exceptions import PreconditionError

from .fields import GridFunction, cells_of, lp_norm, sample
from .operators import lacunary_maximal

logger = logging.getLogger(__name__)

# точки ближе этого к ребру считаются лежащими на границе
BOUNDARY_TOL = 1e-9


class Membership(Enum):
    INSIDE = "inside"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"

    def __bool__(self):
        return self is Membership.INSIDE


@dataclass(frozen=True)
class ExponentPair:
    inv_p: float
    inv_q: float

    def __post_init__(self):
        if not (0 < self.inv_p < 1 and 0 < self.inv_q < 1):
            raise PreconditionError(
                f"(1/p, 1/q) = ({self.inv_p}, {self.inv_q}) должна лежать в открытом единичном квадрате."
            )

    @classmethod
    def from_exponents(cls, p: float, q: float) -> "ExponentPair":
        return cls(1.0 / p, 1.0 / q)

    @property
    def p(self) -> float:
        return 1.0 / self.inv_p

    @property
    def q(self) -> float:
        return 1.0 / self.inv_q

    @property
    def p_conj(self) -> float:
        return conjugate(self.p)

    @property
    def q_conj(self) -> float:
        return conjugate(self.q)


def conjugate(p: float) -> float:
    """p' = p / (p - 1)."""
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def _check_n(n: int):
    if int(n) != n or n < 1:
        raise PreconditionError(f"n должно быть целым >= 1, получено {n}.")


def _cross(a, b, v) -> float:
    return (b[0] - a[0]) * (v[1] - a[1]) - (b[1] - a[1]) * (v[0] - a[0])


def _signed_distances(point, vertices) -> list[float]:
    """Расстояния до рёбер треугольника, положительные с внутренней стороны."""
    out = []
    for i in range(3):
        a, b, c = vertices[i], vertices[(i + 1) % 3], vertices[(i + 2) % 3]
        sign = 1.0 if _cross(a, b, c) > 0 else -1.0
        out.append(sign * _cross(a, b, point) / math.hypot(b[0] - a[0], b[1] - a[1]))
    return out


def _classify(point, vertices, tol: float) -> Membership:
    d = _signed_distances(point, vertices)
    if min(d) > tol:
        return Membership.INSIDE
    if min(d) < -tol:
        return Membership.OUTSIDE
    return Membership.BOUNDARY


def improving_vertices(n: int):
    return (0.0, 0.0), (1.0, 1.0), (2 * n / (2 * n + 1), 1 / (2 * n + 1))


def sparse_vertices(n: int):
    b = 2 * n / (2 * n + 1)
    return (0.0, 1.0), (1.0, 0.0), (b, b)


def improving_region(n: int, e: ExponentPair, tol: float = BOUNDARY_TOL) -> Membership:
    """
    Открытый треугольник с вершинами (0,0), (1,1), (2n/(2n+1), 1/(2n+1))
    вместе с открытой диагональю 1/p = 1/q.
    """
    _check_n(n)
    if abs(e.inv_p - e.inv_q) / math.sqrt(2.0) <= tol and tol < e.inv_p < 1 - tol:
        return Membership.INSIDE
    return _classify((e.inv_p, e.inv_q), improving_vertices(n), tol)


def sparse_region(n: int, e: ExponentPair, tol: float = BOUNDARY_TOL) -> Membership:
    """Открытый треугольник с вершинами (0,1), (1,0), (2n/(2n+1), 2n/(2n+1))."""
    _check_n(n)
    return _classify((e.inv_p, e.inv_q), sparse_vertices(n), tol)


def phi_exponent(n: int, inv_p0: float | Fraction) -> float | Fraction:
    """
    1/phi = 1 - 1/(2n p0) при 0 < 1/p0 <= 2n/(2n+1) и 2n(1 - 1/p0) при
    2n/(2n+1) < 1/p0 < 1. Для Fraction результат точный.
    """
    _check_n(n)
    exact = isinstance(inv_p0, Fraction)
    x = inv_p0 if exact else Fraction(repr(float(inv_p0)))
    if not 0 < x < 1:
        raise PreconditionError(f"1/p0 должно лежать в (0, 1), получено {inv_p0}.")
    inv_phi = 1 - x / (2 * n) if x <= Fraction(2 * n, 2 * n + 1) else 2 * n * (1 - x)
    phi = 1 / inv_phi
    return phi if exact else float(phi)


def admissible_window(n: int, p0: float) -> tuple[float, float]:
    """(p0, phi(1/p0)') - окно показателей p для весовой оценки."""
    if not p0 > 1:
        raise PreconditionError(f"p0 должно быть > 1, получено {p0}.")
    return p0, conjugate(float(phi_exponent(n, 1.0 / p0)))


# -------------------------
# Константы весов
# -------------------------

def _weight_values(w: GridFunction) -> np.ndarray:
    values = w.values
    if np.any(values <= 0):
        raise PreconditionError("Вес должен быть положительным во всех ячейках.")
    return values


def _family(cubes: Iterable) -> list[np.ndarray]:
    family = [cells_of(c) for c in cubes]
    family = [c for c in family if c.size]
    if not family:
        raise PreconditionError("Семейство кубов пусто.")
    return family


def ap_constant(w: GridFunction, p: float, cubes: Iterable) -> float:
    """[w]_{A_p} = max_Q <w>_Q <w^{1-p'}>_Q^{p-1} по семейству."""
    if not 1 < p < math.inf:
        raise PreconditionError(f"p должно лежать в (1, inf), получено {p}.")
    values = _weight_values(w)
    dual = values ** (1.0 - conjugate(p))
    return max(float(np.mean(values[c])) * float(np.mean(dual[c])) ** (p - 1.0) for c in _family(cubes))


def rh_constant(w: GridFunction, p: float, cubes: Iterable) -> float:
    """[w]_{RH_p} = max_Q <w>_{Q,p} / <w>_Q."""
    if not 1 <= p < math.inf:
        raise PreconditionError(f"p должно лежать в [1, inf), получено {p}.")
    values = _weight_values(w)
    powered = values ** p
    return max(float(np.mean(powered[c])) ** (1.0 / p) / float(np.mean(values[c])) for c in _family(cubes))


def weight_family(systems: Sequence = (), balls: Sequence = ()) -> list:
    """Все кубы всех систем вместе с заданными шарами."""
    return [c for s in systems for c in s.all_cubes()] + list(balls)


@dataclass
class WeightReport:
    ap_constant: float
    rh_constant: float
    family_size: int
    p: float
    rh_exponent: float


@dataclass
class WeightClassReport:
    """Классы веса для окна p0 < p < phi(1/p0)'."""
    p: float
    p0: float
    window: tuple[float, float]
    ap_constant: float
    rh_exponent: float
    rh_constant: float
    family_size: int


def weight_report(w: GridFunction, p: float, cubes: Sequence, rh_exponent: float | None = None) -> WeightReport:
    family = list(cubes)
    s = p if rh_exponent is None else rh_exponent
    return WeightReport(ap_constant(w, p, family), rh_constant(w, s, family), len(family), p, s)


def check_window(n: int, p: float, p0: float) -> tuple[float, float]:
    lo, hi = admissible_window(n, p0)
    if not lo < p < hi:
        raise PreconditionError(
            f"p={p:g} вне окна ({lo:g}, {hi:g}) для p0={p0:g}, n={n}: весовая оценка не гарантирована."
        )
    return lo, hi


def weight_class_report(w: GridFunction, p: float, p0: float, n: int, cubes: Sequence) -> WeightClassReport:
    """[w]_{A_{p/p0}} и [w]_{RH_s} при s = (phi(1/p0)'/p)'."""
    window = check_window(n, p, p0)
    family = list(cubes)
    s = conjugate(window[1] / p)
    return WeightClassReport(
        p=p, p0=p0, window=window,
        ap_constant=ap_constant(w, p / p0, family),
        rh_exponent=s, rh_constant=rh_constant(w, s, family),
        family_size=len(family),
    )


def weighted_maximal_ratio(f, w: GridFunction, p: float, p0: float, cfg, q, workers: int = 1) -> float:
    """||M^lac f||_{L^p(w)} / ||f||_{L^p(w)} на сетке веса."""
    check_window(w.grid.dim.n, p, p0)
    _weight_values(w)
    F = f if isinstance(f, GridFunction) else sample(w.grid, f)
    base = lp_norm(F, p, w)
    if base == 0:
        raise PreconditionError("Норма f равна нулю.")
    M = lacunary_maximal(F, cfg, q, workers=workers)
    ratio = lp_norm(M, p, w) / base
    logger.debug("Весовое отношение M^lac: %.6g (p=%g, p0=%g)", ratio, p, p0)
    return ratio
