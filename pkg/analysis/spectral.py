from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from core.exceptions import NumericalError, PreconditionError

from .quadrature import theta_constant

logger = logging.getLogger(__name__)

# -------------------------
# log Gamma в комплексной плоскости
# -------------------------

LANCZOS_G = 7
LANCZOS_COEFFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _lanczos(z: np.ndarray) -> np.ndarray:
    """log Gamma(z) при Re z >= 1/2."""
    z = z - 1.0
    series = np.full_like(z, LANCZOS_COEFFS[0])
    for i, c in enumerate(LANCZOS_COEFFS[1:], start=1):
        series = series + c / (z + i)
    t = z + LANCZOS_G + 0.5
    return LOG_SQRT_2PI + (z + 0.5) * np.log(t) - t + np.log(series)


def log_gamma_complex(z):
    """
    log Gamma(z) по Ланцошу (g = 7, 9 коэффициентов). При Re z < 1/2 через
    формулу отражения; там значение совпадает с главной ветвью по модулю 2 pi i.
    """
    arr = np.asarray(z, dtype=complex)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)

    poles = (arr.imag == 0) & (arr.real <= 0) & (arr.real == np.round(arr.real))
    if np.any(poles):
        raise PreconditionError(f"Gamma имеет полюс в точке {arr[poles][0]}.")

    out = np.empty_like(arr)
    right = arr.real >= 0.5
    out[right] = _lanczos(arr[right])
    left = ~right
    if np.any(left):
        w = arr[left]
        out[left] = math.log(math.pi) - np.log(np.sin(math.pi * w)) - _lanczos(1.0 - w)
    return out[0] if scalar else out


def gamma_ratio(Q: int, gamma) -> np.ndarray:
    """Gamma((Q - i g)/2) Gamma((1 + i g)/2) / (Gamma(Q/2) Gamma(1/2))."""
    g = np.asarray(gamma, dtype=float)
    num = log_gamma_complex((Q - 1j * g) / 2.0) + log_gamma_complex((1.0 + 1j * g) / 2.0)
    den = log_gamma_complex(complex(Q / 2.0)) + log_gamma_complex(complex(0.5))
    return np.exp(num - den)


def a_coefficient(Q: int, gamma):
    """a(Q, g) = 1 - Gamma((Q - i g)/2) Gamma((1 + i g)/2) / (Gamma(Q/2) Gamma(1/2))."""
    return 1.0 - gamma_ratio(Q, gamma)


def _check_Q(Q: int):
    if int(Q) != Q or Q < 4 or Q % 2:
        raise PreconditionError(f"Однородная размерность должна быть чётной и >= 4, получено {Q}.")


# -------------------------
# Постоянная c_Q и ядро F
# -------------------------

def radial_constant(Q: int) -> float:
    """(int_0^inf (1 + r^2)^{-(Q+1)/2} r^{Q-1} dr)^{-1} = 2 Gamma((Q+1)/2) / (Gamma(Q/2) sqrt(pi))."""
    return 2.0 * math.exp(gammaln((Q + 1) / 2.0) - gammaln(Q / 2.0)) / math.sqrt(math.pi)


def c_q_closed_form(Q: int, kappa: float) -> float:
    return radial_constant(Q) / kappa


def c_q(Q: int, kappa: float | None, tol: float = 1e-8) -> float:
    """c_Q из условия c_Q int (1 + |x|^2)^{-(Q+1)/2} dx = 1; сверяется с формулой через Бету."""
    _check_Q(Q)
    if kappa is None or not kappa > 0:
        raise PreconditionError("Для c_Q нужна положительная постоянная kappa.")
    radial, _ = integrate.quad(lambda r: (1.0 + r * r) ** (-(Q + 1) / 2.0) * r ** (Q - 1), 0.0, np.inf,
                               epsabs=0.0, epsrel=1e-13, limit=200)
    value = 1.0 / (kappa * radial)
    closed = c_q_closed_form(Q, kappa)
    if abs(value - closed) > tol * closed:
        raise NumericalError(f"c_Q: численное {value!r} и точное {closed!r} расходятся.")
    return value


def kernel_profile(Q: int) -> Callable[[np.ndarray], np.ndarray]:
    """F(s) = kappa c_Q (1 + e^{2s})^{-(Q+1)/2} e^{Qs}."""
    log_c = math.log(radial_constant(Q))

    def F(s):
        s = np.asarray(s, dtype=float)
        return np.exp(log_c - 0.5 * (Q + 1) * np.logaddexp(0.0, 2.0 * s) + Q * s)
    return F


def f_hat(Q: int, gamma: float, half_width: float = 60.0, limit: int = 400) -> complex:
    """sqrt(2 pi) F^(g) = int F(s) e^{-i g s} ds адаптивной квадратурой."""
    F = kernel_profile(Q)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if gamma == 0:
                re = sum(integrate.quad(F, a, b, epsabs=1e-14, epsrel=1e-13, limit=limit)[0]
                         for a, b in ((-half_width, 0.0), (0.0, half_width)))
                im = 0.0
            else:
                re = im = 0.0
                for a, b in ((-half_width, 0.0), (0.0, half_width)):
                    re += integrate.quad(F, a, b, weight="cos", wvar=gamma,
                                         epsabs=1e-14, epsrel=1e-13, limit=limit)[0]
                    im -= integrate.quad(F, a, b, weight="sin", wvar=gamma,
                                         epsabs=1e-14, epsrel=1e-13, limit=limit)[0]
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"Квадратура F^ при gamma={gamma:g} не сошлась: {exc}") from exc
    return complex(re, im)


@dataclass
class FHatCheck:
    Q: int
    gammas: np.ndarray
    numeric: np.ndarray
    closed: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.numeric - self.closed)

    @property
    def max_error(self) -> float:
        return float(self.errors.max())


def f_hat_identity_check(Q: int, gamma_grid, n_quad: int = 400) -> FHatCheck:
    """Сравнение sqrt(2 pi) F^(g) с отношением гамма-функций на сетке по g."""
    _check_Q(Q)
    gammas = np.asarray(gamma_grid, dtype=float)
    numeric = np.array([f_hat(Q, float(g), limit=n_quad) for g in gammas])
    check = FHatCheck(Q, gammas, numeric, gamma_ratio(Q, gammas))
    logger.debug("F^ для Q=%d: max ошибка %.3e на %d точках", Q, check.max_error, gammas.size)
    return check


# -------------------------
# Представление sigma_t = P_t + (2 pi)^{-1} int a(Q,g) t^{-ig} I_g dg
# -------------------------

@dataclass(frozen=True)
class RadialProfile:
    """Радиальный профиль u(r) = int u(delta_r w) dsigma(w) с носителем в (r_min, r_max)."""
    func: Callable[[np.ndarray], np.ndarray]
    r_min: float
    r_max: float
    label: str = ""

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max < math.inf:
            raise PreconditionError(f"Носитель профиля ({self.r_min}, {self.r_max}) должен лежать в (0, inf).")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = (r > self.r_min) & (r < self.r_max)
        out[inside] = self.func(r[inside])
        return out

    def __add__(self, other: "RadialProfile") -> "RadialProfile":
        return RadialProfile(lambda r: self(r) + other(r), min(self.r_min, other.r_min),
                             max(self.r_max, other.r_max), f"{self.label}+{other.label}")


def annular_bump(center: float, half_width: float, height: float = 1.0) -> RadialProfile:
    """Гладкая шапочка exp(1 - 1/(1 - u^2)), u = (r - center)/half_width."""
    if not 0 < half_width < center:
        raise PreconditionError(f"Шапочка должна лежать в (0, inf): center={center}, half_width={half_width}.")

    def bump(r):
        u = (np.asarray(r, dtype=float) - center) / half_width
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        out[inside] = height * np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
        return out
    return RadialProfile(bump, center - half_width, center + half_width, f"bump({center:g},{half_width:g})")


def _legendre_on(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * (x + 1.0) + a, 0.5 * (b - a) * w


def mellin_transform(profile: RadialProfile, gammas: np.ndarray, n_quad: int = 2048) -> np.ndarray:
    """M(g) = int u(r) r^{ig-1} dr = int u(e^s) e^{igs} ds."""
    s, w = _legendre_on(math.log(profile.r_min), math.log(profile.r_max), n_quad)
    weighted = w * profile(np.exp(s))
    out = np.empty(gammas.size, dtype=complex)
    step = max(1, 1_000_000 // n_quad)
    for start in range(0, gammas.size, step):
        g = gammas[start:start + step]
        out[start:start + step] = np.exp(1j * np.outer(g, s)) @ weighted
    return out


def _gamma_integral(Q: int, profile: RadialProfile, t: float, bound: float, n_quad: int,
                    panel: float = 2.0, order: int = 16) -> tuple[complex, complex]:
    """(2 pi)^{-1} int_{|g|<=bound} a(Q,g) t^{-ig} M(g) dg и вклад внешней половины |g| > bound/2."""
    panels = max(2, int(math.ceil(2.0 * bound / panel)))
    x, w = np.polynomial.legendre.leggauss(order)
    width = 2.0 * bound / panels
    left = -bound + width * np.arange(panels)
    g = (left[:, None] + 0.5 * width * (x[None, :] + 1.0)).reshape(-1)
    wg = np.tile(0.5 * width * w, panels)
    integrand = a_coefficient(Q, g) * np.exp(-1j * g * math.log(t)) * mellin_transform(profile, g, n_quad)
    total = np.sum(wg * integrand) / (2.0 * math.pi)
    outer = np.abs(g) > 0.5 * bound
    tail = np.sum(wg[outer] * integrand[outer]) / (2.0 * math.pi)
    return complex(total), complex(tail)


@dataclass
class RepresentationCheck:
    Q: int
    t: float
    lhs: float
    p_term: float
    gamma_term: complex
    gamma_max: float

    @property
    def rhs(self) -> complex:
        return self.p_term + self.gamma_term

    @property
    def abs_error(self) -> float:
        return float(abs(self.lhs - self.rhs))

    @property
    def error(self) -> float:
        """Относительная ошибка; при нулевой левой части - абсолютная."""
        return self.abs_error / abs(self.lhs) if self.lhs != 0 else self.abs_error


def verify_measure_representation(profile: RadialProfile, Q: int, gamma_max: float | None = None,
                                  n_quad: int = 2048, t: float = 1.0, tail_tol: float = 1e-6,
                                  gamma_cap: float = 4096.0) -> RepresentationCheck:
    """
    <sigma_t, u> = u(t) против kappa int P_t(r) u(r) r^{Q-1} dr
    + (2 pi)^{-1} int a(Q,g) t^{-ig} M(g) dg. Граница по g удваивается, пока
    внешняя половина отрезка даёт больше tail_tol от интеграла.
    """
    _check_Q(Q)
    if not t > 0:
        raise PreconditionError(f"Радиус t должен быть положительным, получено {t}.")

    r, w = _legendre_on(profile.r_min, profile.r_max, n_quad)
    p_term = float(np.sum(w * radial_constant(Q) * t * (t * t + r * r) ** (-(Q + 1) / 2.0)
                          * profile(r) * r ** (Q - 1)))

    bound = float(gamma_max or 60.0)
    while True:
        total, tail = _gamma_integral(Q, profile, t, bound, n_quad)
        if abs(tail) <= tail_tol * max(abs(total), 1e-300):
            break
        if bound >= gamma_cap:
            raise NumericalError(
                f"Хвост интеграла по gamma {abs(tail):.3e} выше допуска при Gamma_max={bound:g}."
            )
        bound *= 2.0
        logger.debug("Gamma_max увеличен до %g", bound)

    lhs = float(profile(np.array([t]))[0])
    return RepresentationCheck(Q, t, lhs, p_term, total, bound)


# -------------------------
# Функции Лагерра и коэффициенты R_k
# -------------------------

MAX_LAGUERRE_DEGREE = 10_000


def laguerre(k: int, alpha: float, x) -> np.ndarray:
    """L_k^alpha(x) по трёхчленной рекурсии."""
    if k < 0:
        raise PreconditionError(f"Степень должна быть >= 0, получено {k}.")
    if k > MAX_LAGUERRE_DEGREE:
        raise PreconditionError(f"Степень {k} больше {MAX_LAGUERRE_DEGREE}: отказ во избежание переполнения.")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev
    cur = 1.0 + alpha - x
    for j in range(1, k):
        prev, cur = cur, ((2 * j + 1 + alpha - x) * cur - (j + alpha) * prev) / (j + 1)
    return cur


def laguerre_phi(k: int, n: int, lam: float, z_norm):
    """phi_k^lam(z) = L_k^{n-1}(|lam||z|^2/2) exp(-|lam||z|^2/4)."""
    if lam == 0:
        raise PreconditionError("lambda должно быть ненулевым.")
    z2 = np.asarray(z_norm, dtype=float) ** 2
    return laguerre(k, n - 1, 0.5 * abs(lam) * z2) * np.exp(-0.25 * abs(lam) * z2)


def laguerre_normalization(k: int, n: int) -> float:
    """k!(n-1)!/(k+n-1)! = 1 / L_k^{n-1}(0)."""
    return math.exp(gammaln(k + 1) + gammaln(n) - gammaln(k + n))


def min_theta_order(lam: float, r: float) -> int:
    return 8 + 2 * math.ceil(abs(lam) * r * r)


def r_k_coefficient(k: int, n: int, lam: float, r: float, n_theta: int) -> complex:
    """
    R_k(lam, sigma_r) = c_n int_{-pi/2}^{pi/2} phi_k^lam(r sqrt(cos th))
    e^{i lam r^2 sin(th)/4} cos^{n-1}(th) dth, нормированное на L_k^{n-1}(0).
    """
    if n_theta < min_theta_order(lam, r):
        raise PreconditionError(
            f"n_theta={n_theta} мало для осцилляции |lam| r^2 = {abs(lam) * r * r:g}: нужно >= {min_theta_order(lam, r)}."
        )
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = 0.5 * math.pi * x
    cos = np.cos(theta)
    integrand = (laguerre_phi(k, n, lam, r * np.sqrt(cos)) * np.exp(0.25j * lam * r * r * np.sin(theta))
                 * cos ** (n - 1))
    return complex(laguerre_normalization(k, n) * theta_constant(n) * 0.5 * math.pi * np.sum(w * integrand))


def r_k_by_sphere(k: int, lam: float, r: float, q) -> complex:
    """Тот же коэффициент как сумма по узлам квадратуры sigma_r."""
    n = q.dim.n
    nodes = q.dilated_nodes(r)
    z_norm = np.linalg.norm(nodes[:, :2 * n], axis=1)
    values = laguerre_phi(k, n, lam, z_norm) * np.exp(1j * lam * nodes[:, 2 * n])
    return complex(laguerre_normalization(k, n) * np.sum(q.weights * values))


@dataclass(frozen=True)
class RkRow:
    k: int
    lam: float
    r: float
    value: complex
    by_sphere: complex

    @property
    def mismatch(self) -> float:
        return abs(self.value - self.by_sphere)


def r_k_table(n: int, ks, lams, radii, q, n_theta: int | None = None) -> list[RkRow]:
    """Таблица R_k по сетке (k, lam, r) с проверкой через узлы sigma_r."""
    rows = []
    for k in ks:
        for lam in lams:
            for r in radii:
                order = n_theta or q.n_theta
                rows.append(RkRow(int(k), float(lam), float(r),
                                  r_k_coefficient(int(k), n, float(lam), float(r), order),
                                  r_k_by_sphere(int(k), float(lam), float(r), q)))
    return rows
