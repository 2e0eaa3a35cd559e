from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from core.exceptions import NumericalError, PreconditionError

from .dyadic import Cube, DyadicSystem
from .fields import GridFunction, cube_average
from .operators import inner_cells, localized_mean, spherical_mean_at
from .quadrature import SphereQuadrature
from .weights import ExponentPair, Membership, sparse_region

logger = logging.getLogger(__name__)

G_EXPONENTS = ("q", "p")


def _values(F) -> np.ndarray:
    values = F.values if isinstance(F, GridFunction) else np.asarray(F, dtype=float).reshape(-1)
    if np.any(values < 0):
        raise PreconditionError("Функции f и g должны быть неотрицательными.")
    return values


def level_averages(system: DyadicSystem, values: np.ndarray, p: float) -> dict[int, np.ndarray]:
    """<f>_{Q,p} для всех кубов всех уровней сразу."""
    power = np.abs(values) ** p
    out = {}
    for k in system.levels:
        labels = system.labels[k]
        counts = np.bincount(labels, minlength=system.center_cells[k].size)
        sums = np.bincount(labels, weights=power, minlength=counts.size)
        out[k] = (sums / counts) ** (1.0 / p)
    return out


# -------------------------
# Линеаризация sup_Q A_Q f
# -------------------------

@dataclass
class Linearization:
    family: list[Cube]
    means: dict[str, np.ndarray] = field(repr=False)
    sup: np.ndarray = field(repr=False)
    E: dict[str, np.ndarray] = field(repr=False)
    B: dict[str, np.ndarray] = field(repr=False)

    def inequality(self, g) -> tuple[float, float]:
        """(<sup A_Q f, g>, 2 sum_Q <A_Q f, g 1_{B_Q}>) в единицах объёма ячейки."""
        gv = _values(g)
        lhs = float(np.sum(self.sup * gv))
        rhs = 2.0 * sum(float(np.sum(self.means[c.id][self.B[c.id]] * gv[self.B[c.id]])) for c in self.family)
        return lhs, rhs

    def b_disjoint(self) -> bool:
        hits = np.sum(np.stack([self.B[c.id] for c in self.family]), axis=0)
        return bool(np.all(hits <= 1))

    def nonempty_b(self) -> list[str]:
        return [c.id for c in self.family if self.B[c.id].any()]


def averaging_family(system: DyadicSystem, Q0: Cube) -> list[Cube]:
    """Q0 и его подкубы, для которых определено A_Q (есть уровень k+3)."""
    return [c for c in system.subcubes(Q0, strict=False) if c.level + 3 <= system.finest]


def active_cubes(system: DyadicSystem, Q0: Cube) -> list[Cube]:
    """Кубы семейства Q0 с непустым V_Q: только у них A_Q не равно нулю тождественно."""
    return [c for c in averaging_family(system, Q0)
            if inner_cells(system, c, system.delta ** (c.level + 2)).size]


def linearization_sets(F: GridFunction, Q0: Cube, system: DyadicSystem, q: SphereQuadrature,
                       workers: int = 1, leak_tol: float = 1e-8) -> Linearization:
    """
    E_Q = {x in Q: A_Q f(x) >= sup_P A_P f(x) / 2}, B_Q = E_Q без E_{Q'} строгих
    предков Q' из семейства. Точки с sup = 0 не входят ни в одно E_Q.
    """
    _values(F)
    family = averaging_family(system, Q0)
    if not family:
        raise PreconditionError(
            f"Для куба {Q0.id} нет уровней с A_Q: нужен уровень {Q0.level + 3}, самый мелкий {system.finest}."
        )
    means = {c.id: localized_mean(F, c, system, q, workers, leak_tol).values for c in family}
    logger.debug("Линеаризация для %s: %d кубов в семействе", Q0.id, len(family))
    return linearize(system, family, means)


def linearize(system: DyadicSystem, family: list[Cube], means: dict[str, np.ndarray]) -> Linearization:
    """E_Q и B_Q по готовым значениям A_Q f на ячейках (ключ - id куба)."""
    sup = np.max(np.stack([means[c.id] for c in family]), axis=0)
    positive = sup > 0

    E = {}
    for c in family:
        inside = np.zeros(system.grid.size, dtype=bool)
        inside[c.cells] = True
        E[c.id] = inside & positive & (means[c.id] >= 0.5 * sup)

    ids = {c.id for c in family}
    B = {}
    for c in family:
        mask = E[c.id].copy()
        for k in system.levels:
            if k >= c.level:
                break
            a = system.ancestor(c, k)
            if a.id in ids:
                mask &= ~E[a.id]
        B[c.id] = mask
    return Linearization(family, means, sup, E, B)


# -------------------------
# Остановка и разреженное разложение
# -------------------------

@dataclass
class _Averages:
    f: dict[int, np.ndarray]
    g: dict[int, np.ndarray]

    def of(self, cube: Cube) -> tuple[float, float]:
        return float(self.f[cube.level][cube.index]), float(self.g[cube.level][cube.index])


def _averages(system: DyadicSystem, f, g, p: float, q: float, g_exponent: str) -> _Averages:
    if g_exponent not in G_EXPONENTS:
        raise PreconditionError(f"g_exponent должен быть одним из {G_EXPONENTS}, получено {g_exponent!r}.")
    return _Averages(level_averages(system, _values(f), p),
                     level_averages(system, _values(g), q if g_exponent == "q" else p))


def _stopping(Q0: Cube, system: DyadicSystem, avg: _Averages, threshold: float) -> list[Cube]:
    f0, g0 = avg.of(Q0)
    covered = np.zeros(system.grid.size, dtype=bool)
    chosen = []
    for k in system.levels:
        if k <= Q0.level:
            continue
        for P in system.descendants(Q0, k):
            if covered[system.center_cells[k][P.index]]:
                continue
            fp, gp = avg.of(P)
            if fp > threshold * f0 or gp > threshold * g0:
                chosen.append(P)
                covered[P.cells] = True
    return chosen


def stopping_children(Q0: Cube, f, g, p: float, q: float, system: DyadicSystem,
                      threshold: float = 2.0, g_exponent: str = "q") -> list[Cube]:
    """
    Максимальные строгие подкубы P куба Q0 с <f>_{P,p} > threshold <f>_{Q0,p}
    или <g>_{P,q} > threshold <g>_{Q0,q}; потомки выбранных не рассматриваются.
    """
    return _stopping(Q0, system, _averages(system, f, g, p, q, g_exponent), threshold)


@dataclass
class SparseEntry:
    cube: Cube
    F_cells: np.ndarray = field(repr=False)

    @property
    def ratio(self) -> float:
        return self.F_cells.size / len(self.cube)


@dataclass
class SparseCollection:
    entries: list[SparseEntry]
    threshold: float = 2.0

    @property
    def cubes(self) -> list[Cube]:
        return [e.cube for e in self.entries]

    @property
    def eta(self) -> float:
        return min(e.ratio for e in self.entries) if self.entries else 1.0

    def __len__(self):
        return len(self.entries)

    def disjoint(self) -> bool:
        cells = np.concatenate([e.F_cells for e in self.entries]) if self.entries else np.empty(0)
        return np.unique(cells).size == cells.size

    def to_csv(self, path: Path, form: "SparseFormResult") -> Path:
        by_id = {t.cube_id: t for t in form.terms}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cube_id", "level", "measure", "F_measure", "f_avg", "g_avg", "term"])
            for e in self.entries:
                t = by_id[e.cube.id]
                writer.writerow([e.cube.id, e.cube.level, repr(e.cube.measure),
                                 repr(e.F_cells.size * e.cube.cell_volume),
                                 repr(t.f_avg), repr(t.g_avg), repr(t.value)])
        return path


def sparse_decompose(f, g, Q0: Cube, p: float, q: float, system: DyadicSystem,
                     threshold: float = 2.0, g_exponent: str = "q") -> SparseCollection:
    """
    Рекурсия остановки: в узле Q строится E_Q, F_Q = Q без объединения E_Q,
    (Q, F_Q) попадает в набор, рекурсия идёт в каждый куб из E_Q. Кубы
    самого мелкого уровня выдаются с F = Q.
    """
    fv = _values(f)
    outside = np.ones(system.grid.size, dtype=bool)
    outside[Q0.cells] = False
    if np.any(fv[outside] != 0):
        logger.warning("Носитель f выходит за куб %s: учитывается только часть внутри.", Q0.id)

    avg = _averages(system, f, g, p, q, g_exponent)
    entries = []
    stack = [Q0]
    while stack:
        Q = stack.pop()
        children = [] if Q.level == system.finest else _stopping(Q, system, avg, threshold)
        if children:
            stop = np.zeros(system.grid.size, dtype=bool)
            for P in children:
                stop[P.cells] = True
            F_cells = Q.cells[~stop[Q.cells]]
        else:
            F_cells = Q.cells
        if 2 * F_cells.size < Q.cells.size:
            raise NumericalError(
                f"Куб {Q.id}: |F_Q|/|Q| = {F_cells.size / Q.cells.size:.3f} < 1/2 при пороге {threshold:g}."
            )
        entries.append(SparseEntry(Q, F_cells))
        stack.extend(reversed(children))

    entries.sort(key=lambda e: (e.cube.level, e.cube.index))
    collection = SparseCollection(entries, threshold)
    logger.debug("Разреженный набор: %d кубов, eta=%.3f", len(collection), collection.eta)
    if collection.eta < 0.55:
        logger.warning("Достигнутая разреженность %.3f близка к границе 1/2.", collection.eta)
    return collection


def stopping_violations(S: SparseCollection, f, g, p: float, q: float, system: DyadicSystem,
                        g_exponent: str = "q") -> int:
    """Число пар (Q, P), P пересекает F_Q, где среднее P превышает порог относительно Q."""
    avg = _averages(system, f, g, p, q, g_exponent)
    bad = 0
    for e in S.entries:
        f0, g0 = avg.of(e.cube)
        in_f = np.zeros(system.grid.size, dtype=bool)
        in_f[e.F_cells] = True
        for P in system.subcubes(e.cube):
            if not in_f[P.cells].any():
                continue
            fp, gp = avg.of(P)
            if fp > S.threshold * f0 or gp > S.threshold * g0:
                bad += 1
    return bad


# -------------------------
# Разреженная форма
# -------------------------

@dataclass(frozen=True)
class SparseTerm:
    cube_id: str
    measure: float
    f_avg: float
    g_avg: float

    @property
    def value(self) -> float:
        return self.measure * self.f_avg * self.g_avg


@dataclass
class SparseFormResult:
    value: float
    terms: list[SparseTerm]


def _check_exponent(name: str, value: float):
    if not 1 < value < math.inf:
        raise PreconditionError(f"Показатель {name} должен лежать в (1, inf), получено {value}.")


def sparse_form(S: SparseCollection, f, g, p: float, q: float) -> SparseFormResult:
    """Lambda_{S,p,q}(f, g) = sum_S |S| <f>_{S,p} <g>_{S,q}."""
    _check_exponent("p", p)
    _check_exponent("q", q)
    fv, gv = _values(f), _values(g)
    terms = [SparseTerm(e.cube.id, e.cube.measure, cube_average(fv, e.cube, p), cube_average(gv, e.cube, q))
             for e in S.entries]
    return SparseFormResult(float(sum(t.value for t in terms)), terms)


@dataclass
class DominationResult:
    pairing: float
    form: SparseFormResult
    collection: SparseCollection
    linearization: Linearization

    @property
    def ratio(self) -> float:
        if self.form.value == 0:
            return 0.0
        return self.pairing / self.form.value


def domination_ratio(f: GridFunction, g: GridFunction, Q0: Cube, system: DyadicSystem, p: float, q: float,
                     quad: SphereQuadrature, threshold: float = 2.0, g_exponent: str = "q",
                     workers: int = 1, leak_tol: float = 1e-8) -> DominationResult:
    """<sup_Q A_Q f, g> / Lambda_{S,p,q}(f, g) для набора из sparse_decompose."""
    e = ExponentPair(1.0 / p, 1.0 / q)
    if sparse_region(system.grid.dim.n, e) is not Membership.INSIDE:
        raise PreconditionError(
            f"(1/p, 1/q) = ({e.inv_p:.4g}, {e.inv_q:.4g}) вне области разреженной оценки для n={system.grid.dim.n}."
        )
    lin = linearization_sets(f, Q0, system, quad, workers, leak_tol)
    pairing = float(np.sum(lin.sup * _values(g)) * system.grid.cell_volume)
    S = sparse_decompose(f, g, Q0, p, q, system, threshold, g_exponent)
    form = sparse_form(S, f, g, p, q)
    if form.value == 0 and pairing > 0:
        raise NumericalError("Разреженная форма равна нулю при ненулевом спаривании.")
    return DominationResult(pairing, form, S, lin)


def carleson_sum_check(S: SparseCollection, phi, s: float, t: float, Q0: Cube) -> float:
    """sum_{Q in S} <phi>_{Q,s} |Q| / (<phi>_{Q0,t} |Q0|)."""
    if not 1 <= s < t < math.inf:
        raise PreconditionError(f"Нужно 1 <= s < t < inf, получено s={s}, t={t}.")
    values = _values(phi)
    base = cube_average(values, Q0, t)
    if base == 0:
        raise PreconditionError("phi тождественно равна нулю на Q0.")
    total = sum(cube_average(values, c, s) * c.measure for c in S.cubes)
    return total / (base * Q0.measure)


# -------------------------
# Слои и проверка покрытия
# -------------------------

def dyadic_layers(F, cells: np.ndarray | None = None) -> dict[int, np.ndarray]:
    """E_m = {2^m <= f < 2^{m+1}} по ячейкам (нули не входят ни в один слой)."""
    values = _values(F)
    idx = np.arange(values.size) if cells is None else np.asarray(cells)
    v = values[idx]
    pos = v > 0
    m = np.floor(np.log2(v[pos])).astype(int)
    idx = idx[pos]
    return {int(level): idx[m == level] for level in np.unique(m)}


def layer_cake_ratio(F, Q0: Cube, rho1: float, rho: float) -> float:
    """sum_m 2^m <1_{E_m}>_{Q0,rho1} / <f>_{Q0,rho}."""
    if not 1 <= rho1 < rho:
        raise PreconditionError(f"Нужно 1 <= rho1 < rho, получено rho1={rho1}, rho={rho}.")
    base = cube_average(F if isinstance(F, GridFunction) else np.asarray(F), Q0, rho)
    if base == 0:
        raise PreconditionError("f тождественно равна нулю на Q0.")
    total = sum(2.0 ** m * (cells.size / len(Q0)) ** (1.0 / rho1)
                for m, cells in dyadic_layers(F, Q0.cells).items())
    return total / base


@dataclass
class CoverCheck:
    level: int
    points: int
    covered: int

    @property
    def fraction(self) -> float:
        return self.covered / self.points if self.points else 1.0


def localization_cover_check(F: GridFunction, systems: Sequence[DyadicSystem], k: int, q: SphereQuadrature,
                             workers: int = 1, leak_tol: float = 1e-8, rtol: float = 1e-12) -> CoverCheck:
    """
    Доля точек, где A_{delta^{k+2}} f <= sum_alpha sum_{Q in D_k^alpha} A_Q f,
    среди точек с положительной левой частью.
    """
    if not systems:
        raise PreconditionError("Нужна хотя бы одна система.")
    head = systems[0]
    grid = head.grid
    lhs = spherical_mean_at(F, head.delta ** (k + 2), q, grid.points(), workers)
    rhs = np.zeros(grid.size)
    for s in systems:
        for c in s.cubes(k):
            rhs += localized_mean(F, c, s, q, workers, leak_tol).values
    active = lhs > 0
    ok = lhs[active] <= rhs[active] * (1.0 + rtol)
    return CoverCheck(k, int(active.sum()), int(ok.sum()))
