from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

from hetmix import reference
from hetmix.dataio import write_csv_atomic
from hetmix.errors import DomainError, HetmixError
from hetmix.kernels import log_gamma_density, log_nb
from hetmix.mixing import STENCIL_STEP, FrequencyLaw, HGSBLaw, HGSGLaw, MixingLaw, ZetaLaw, five_point
from hetmix.mixtures import FamilyModel, MixtureModel
from hetmix.models import StepStatus, SweepEntry, SweepReport
from hetmix.settings import get_settings
from hetmix.tails import LIMIT_KS, richardson_limit

logger = logging.getLogger(__name__)

_LN2 = math.log(2.0)
QUASI_TOL = 1e-9
# Шаг локальной сетки z для целых шагов калибровки вниз в отдельной точке.
_UNIT_STEP_DZ = 1e-2
_SCAN_U = np.array([1e-9, 1e-6, 1e-3, 0.05, 0.2, 0.4, 0.6, 0.8, 0.95, 1 - 1e-3, 1 - 1e-6])
_GRID_MARGIN = 5.0
# Порог «верхнего дециля» на шкале интенсивности: q ≥ 0.9 ⇔ θ ≥ 9.
UPPER_DECILE_THETA = 9.0
SEV_UPPER_FACTOR = 10.0


def _split_z(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return -np.logaddexp(0.0, -z), -np.logaddexp(0.0, z)


def _freq_log_g(law: MixingLaw, log_t: np.ndarray, log1m_t: np.ndarray) -> np.ndarray:
    if isinstance(law, FrequencyLaw):
        return law.log_pdf_parts(log_t, log1m_t)
    return law.log_pdf(np.exp(log_t))


def _stencil(f: Callable[[np.ndarray], np.ndarray], z: np.ndarray) -> np.ndarray:
    return five_point(f, z, STENCIL_STEP)


def dlog_dz(law: MixingLaw, z: np.ndarray) -> np.ndarray:
    """Принимает закон и z (логит q или ln θ); возвращает d ln g(t)/dz для плотности в естественной координате t.

    Для законов каталога производная аналитическая (логарифмическое дифференцирование), иначе пятиточечный шаблон.
    """
    z = np.asarray(z, dtype=float)
    if isinstance(law, HGSBLaw):
        p = law.params
        zz = -z if law.complementary else z
        log_q, log1m_q = _split_z(zz)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            rc = np.exp(log1m_q + p.c * log_q) / -np.expm1(p.c * log_q)
            rd = np.exp(log1m_q + p.d * log_q) / -np.expm1(p.d * log_q)
            out = np.exp(log1m_q) * (p.c * p.a - 1.0) - p.b * p.c * rc + p.d * rd
        return -out if law.complementary else out
    if isinstance(law, ZetaLaw):
        zz = -z if law.complementary else z
        log_q, log1m_q = _split_z(zz)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = law.b * np.exp(log1m_q) / log_q + np.exp(log_q)
        return -out if law.complementary else out
    if isinstance(law, HGSGLaw):
        return law.elasticity_z(z)
    if law.unit_support:

        def f(u: np.ndarray) -> np.ndarray:
            lq, l1q = _split_z(u)
            return _freq_log_g(law, lq, l1q)

        return _stencil(f, z)
    return _stencil(lambda u: law.log_pdf_z(u) - u, z)


def elasticity(g: MixingLaw, t: np.ndarray | float) -> np.ndarray:
    """Принимает закон и точки t; возвращает e(t) = t·g′(t)/g(t)."""
    t = np.asarray(t, dtype=float)
    if g.unit_support:
        with np.errstate(divide="ignore"):
            z = np.log(t) - np.log1p(-t)
        return dlog_dz(g, z) / (1.0 - t)
    return dlog_dz(g, np.log(t))


def elasticity_limit_at_zero(g: MixingLaw) -> float:
    """Принимает закон; возвращает lim_{t→0+} e(t) по t = 2^{−k}, k = 10..40 (±inf при расходимости)."""
    log_t = -LIMIT_KS * _LN2
    if g.unit_support:
        t = np.exp(log_t)
        e = dlog_dz(g, log_t - np.log1p(-t)) / (1.0 - t)
    else:
        e = dlog_dz(g, log_t)
    limit, _ = richardson_limit(LIMIT_KS, e)
    if limit is None:
        return math.copysign(math.inf, float(e[-1]))
    return limit


# --- ядра интегралов -----------------------------------------------------------------


def _row_integrals(
    log_body: Callable[..., np.ndarray],
    factor: Callable[..., np.ndarray] | None,
    args: tuple[np.ndarray, ...],
) -> tuple[np.ndarray, np.ndarray]:
    """∫_0^1 e^{log_body(u, *args)}·factor(u, *args) du построчно, с масштабированием на пробный максимум."""
    n = len(args[0])
    with np.errstate(all="ignore"):
        scan = np.stack([log_body(np.full(n, u), *args) for u in _SCAN_U])
    scan = np.where(np.isfinite(scan), scan, -np.inf)
    shift = np.max(scan, axis=0)
    dead = ~np.isfinite(shift)
    shift = np.where(dead, 0.0, shift)

    def f(u: np.ndarray, *rest: np.ndarray) -> np.ndarray:
        *row_args, row_shift = rest
        with np.errstate(all="ignore"):
            out = np.exp(log_body(u, *row_args) - row_shift)
            if factor is not None:
                out = out * factor(u, *row_args)
        return np.where(np.isfinite(out), out, 0.0)

    res = integrate.tanhsinh(f, np.zeros(n), np.ones(n), args=(*args, shift), atol=1e-13, rtol=1e-11)
    values = np.where(dead, 0.0, np.asarray(res.integral, dtype=float))
    if not np.all(np.asarray(res.success) | dead):
        logger.warning("calibration_rows_unconverged", extra={"rows": int(np.sum(~np.asarray(res.success) & ~dead))})
    return values, shift


def _check_shapes(r: float, s: float, up: bool) -> None:
    if not r > 0 or not s > 0:
        raise DomainError(f"kernel shapes must be positive, got r={r}, s={s}")
    if up and not s > r:
        raise DomainError(f"up-calibration needs s > r, got r={r}, s={s}")
    if not up and not s < r:
        raise DomainError(f"down-calibration needs s < r, got r={r}, s={s}")


def _check_single_step(r: float, s: float) -> None:
    _check_shapes(r, s, s > r)
    if s < r and not r - s < 1.0:
        raise DomainError(f"a single down-step needs r − s < 1 for an integrable kernel, got r={r}, s={s}")


def _down_plan(r: float, s: float) -> tuple[float, list[float]]:
    """Принимает r > s; возвращает форму m после дробного шага (r − m < 1) и цели целых шагов m−1, …, s.

    m = r, если r − s целое: тогда дробного шага нет.
    """
    gap = r - s
    n = math.floor(gap + 1e-12)
    m = s + n
    if abs(m - r) <= 1e-12 * max(1.0, r):
        m = r
    return m, [m - k for k in range(1, n + 1)]


def _z_jacobian(unit: bool, z: np.ndarray) -> np.ndarray:
    if unit:
        return np.exp(-np.logaddexp(0.0, -z) - np.logaddexp(0.0, z))
    return np.exp(z)


def _grid_derivative(h: np.ndarray, dz: float) -> np.ndarray:
    """Производная на равномерной сетке: пятиточечный шаблон внутри, второй порядок у краёв."""
    d = np.asarray(np.gradient(h, dz, edge_order=2))
    if h.size >= 5:
        d[2:-2] = (h[:-4] - 8.0 * h[1:-3] + 8.0 * h[3:-1] - h[4:]) / (12.0 * dz)
    return d


def _z_values(g: MixingLaw, r: float, s: float, z: np.ndarray) -> np.ndarray:
    """Плотность g_s по z (логит q или ln θ) на равномерной сетке z.

    Шаг вниз с r − s ≥ 1 идёт цепочкой: дробный шаг до m интегралом, затем целые шаги h ← h − h′/s_k.
    """
    if s == r:
        with np.errstate(all="ignore"):
            log_h = g.log_pdf_z(z)
        return np.exp(np.where(np.isfinite(log_h), log_h, -np.inf))
    if s > r or r - s < 1.0:
        values = _freq_values(g, r, s, z) if g.unit_support else _sev_values(g, r, s, z)
        return values * _z_jacobian(g.unit_support, z)
    m, targets = _down_plan(r, s)
    h = _z_values(g, r, m, z)
    dz = float(z[1] - z[0])
    for target in targets:
        h = h - _grid_derivative(h, dz) / target
    return h


def _down_value(g: MixingLaw, r: float, s: float, t: float) -> float:
    z0 = _as_z(g, t)
    if r - s < 1.0:
        if g.unit_support:
            return float(_freq_values(g, r, s, np.array([z0]))[0])
        return float(_sev_values(g, r, s, np.array([z0]))[0])
    _, targets = _down_plan(r, s)
    k = 2 * len(targets) + 2
    z = z0 + _UNIT_STEP_DZ * np.arange(-k, k + 1, dtype=float)
    h = _z_values(g, r, s, z)
    return float(h[k] / _z_jacobian(g.unit_support, np.array(z0)))


def _freq_values(g: MixingLaw, r: float, s: float, z: np.ndarray) -> np.ndarray:
    log_q, log1m_q = _split_z(np.asarray(z, dtype=float))
    up = s > r
    _check_single_step(r, s)

    def parts(u: np.ndarray, lq: np.ndarray, l1q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.logaddexp(lq, l1q + np.log(u)), l1q + np.log1p(-u)

    if up:

        def log_body(u: np.ndarray, lq: np.ndarray, l1q: np.ndarray) -> np.ndarray:
            lw, l1w = parts(u, lq, l1q)
            return (s - r - 1.0) * np.log(u) + r * np.log1p(-u) + (1.0 - s) * lw + _freq_log_g(g, lw, l1w)

        values, shift = _row_integrals(log_body, None, (log_q, log1m_q))
        log_pref = (r - 1.0) * log_q - special.betaln(r, s - r)
    else:

        def log_body(u: np.ndarray, lq: np.ndarray, l1q: np.ndarray) -> np.ndarray:
            lw, l1w = parts(u, lq, l1q)
            return (s - r) * np.log(u) + (r - 1.0) * np.log1p(-u) + (1.0 - s) * lw + _freq_log_g(g, lw, l1w)

        def factor(u: np.ndarray, lq: np.ndarray, l1q: np.ndarray) -> np.ndarray:
            lw, l1w = parts(u, lq, l1q)
            zw = lw - l1w
            return (s - 1.0) * np.exp(l1w - lw) + r - dlog_dz(g, zw) * np.exp(-lw)

        values, shift = _row_integrals(log_body, factor, (log_q, log1m_q))
        log_pref = special.gammaln(s) - special.gammaln(r) - special.gammaln(s - r + 1.0) + (r - 1.0) * log_q
    with np.errstate(over="ignore"):
        return np.asarray(np.exp(log_pref + shift) * values)


def _sev_values(g: MixingLaw, r: float, s: float, z: np.ndarray) -> np.ndarray:
    log_theta = np.asarray(z, dtype=float)
    up = s > r
    _check_single_step(r, s)

    def log_g_at(u: np.ndarray, lt: np.ndarray) -> np.ndarray:
        lw = lt - np.log(u)
        return g.log_pdf_z(lw) - lw

    if up:

        def log_body(u: np.ndarray, lt: np.ndarray) -> np.ndarray:
            return (r - 2.0) * np.log(u) + (s - r - 1.0) * np.log1p(-u) + log_g_at(u, lt)

        values, shift = _row_integrals(log_body, None, (log_theta,))
        log_pref = -special.betaln(r, s - r)
    else:

        def log_body(u: np.ndarray, lt: np.ndarray) -> np.ndarray:
            return (r - 2.0) * np.log(u) + (s - r) * np.log1p(-u) + log_g_at(u, lt)

        def factor(u: np.ndarray, lt: np.ndarray) -> np.ndarray:
            return (s - 1.0) - dlog_dz(g, lt - np.log(u))

        values, shift = _row_integrals(log_body, factor, (log_theta,))
        log_pref = special.gammaln(s) - special.gammaln(r) - special.gammaln(s - r + 1.0)
    with np.errstate(over="ignore"):
        return np.asarray(np.exp(log_pref + shift) * values)


def _as_z(g: MixingLaw, t: float) -> float:
    if g.unit_support:
        if not 0 < t < 1:
            raise DomainError(f"q must lie in (0, 1), got {t}")
        return math.log(t) - math.log1p(-t)
    if not t > 0:
        raise DomainError(f"θ must be positive, got {t}")
    return math.log(t)


def _require_side(g: MixingLaw, unit: bool) -> None:
    if g.unit_support is not unit:
        raise DomainError(f"{g.label} lives on the wrong support for this transform")


def calibrate_freq_up(g_r: MixingLaw, r: float, s: float, q: float) -> float:
    """Принимает закон на (0,1) при форме r, целевую форму s > r и q; возвращает g_s(q) (всегда собственная плотность)."""
    _require_side(g_r, True)
    _check_shapes(r, s, up=True)
    return float(_freq_values(g_r, r, s, np.array([_as_z(g_r, q)]))[0])


def calibrate_freq_down(g_r: MixingLaw, r: float, s: float, q: float) -> tuple[float, bool]:
    """Принимает закон на (0,1), форму r, 0 < s < r и q; возвращает (g_s(q), признак отрицательности в точке)."""
    _require_side(g_r, True)
    _check_shapes(r, s, up=False)
    value = _down_value(g_r, r, s, q)
    return value, value < 0


def calibrate_sev_up(g_r: MixingLaw, r: float, s: float, theta: float) -> float:
    _require_side(g_r, False)
    _check_shapes(r, s, up=True)
    return float(_sev_values(g_r, r, s, np.array([_as_z(g_r, theta)]))[0])


def calibrate_sev_down(g_r: MixingLaw, r: float, s: float, theta: float) -> tuple[float, bool]:
    _require_side(g_r, False)
    _check_shapes(r, s, up=False)
    value = _down_value(g_r, r, s, theta)
    return value, value < 0


def poisson_mixing_pdf(g_r: MixingLaw, r: float, lam: float) -> float:
    """Принимает закон на (0,1), форму r и λ > 0; возвращает ∫ Gamma(λ; r, q/(1−q))·g_r(q) dq."""
    _require_side(g_r, True)
    if not lam > 0:
        raise DomainError(f"λ must be positive, got {lam}")

    def log_h(z: np.ndarray) -> np.ndarray:
        return log_gamma_density(r, z, lam) + g_r.log_pdf_z(z)

    return reference.integrate_log(log_h, reference.FREQ_Z_RANGE)[0]


def poisson_reconstruction(g_r: MixingLaw, r: float, xs: Sequence[int], grid_n: int = 512) -> np.ndarray:
    """Принимает закон, r и точки x; возвращает ∫ Poisson(λ)(x)·g_λ(λ) dλ трапециями по сетке ln λ."""
    _require_side(g_r, True)
    z_lo, z_hi, _, _ = reference.scan_window(g_r.log_pdf_z, *reference.FREQ_Z_RANGE)
    log_lam = np.linspace(z_lo - 12.0, z_hi + 6.0, grid_n)
    dens = np.array([poisson_mixing_pdf(g_r, r, math.exp(v)) for v in log_lam]) * np.exp(log_lam)
    x = np.asarray(xs, dtype=float)
    log_pois = x[:, None] * log_lam[None, :] - np.exp(log_lam)[None, :] - special.gammaln(x + 1.0)[:, None]
    return np.asarray(integrate.trapezoid(np.exp(log_pois) * dens[None, :], log_lam, axis=1))


# --- сеточное представление ---------------------------------------------------------


@dataclass
class CalibratedDensity:
    """Плотность g_s на равномерной сетке z (логит q или ln θ); для квази-плотности значения бывают < 0."""

    s: float
    origin_r: float
    unit_support: bool
    z: np.ndarray
    density: np.ndarray
    z_density: np.ndarray
    is_quasi: bool = False
    negativity_region: list[tuple[float, float]] = field(default_factory=list)
    integral: float = math.nan
    _interp: PchipInterpolator | None = field(default=None, repr=False)

    @property
    def t(self) -> np.ndarray:
        return special.expit(self.z) if self.unit_support else np.exp(self.z)

    def __call__(self, t: np.ndarray | float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            z = np.log(t) - np.log1p(-t) if self.unit_support else np.log(t)
        if self._interp is None:
            self._interp = PchipInterpolator(self.z, self.z_density, extrapolate=False)
        jac = t * (1.0 - t) if self.unit_support else t
        return np.nan_to_num(np.asarray(self._interp(z)) / jac)

    def upper_tail_mass(self, threshold: float) -> float:
        z_star = _as_z_any(self.unit_support, threshold)
        cum = integrate.cumulative_trapezoid(self.z_density, self.z, initial=0.0)
        below = float(np.interp(z_star, self.z, cum))
        return float((cum[-1] - below) / cum[-1])

    def modes(self) -> list[float]:
        h = self.z_density
        peak = float(np.max(h))
        inner = (h[1:-1] > h[:-2]) & (h[1:-1] >= h[2:]) & (h[1:-1] > 1e-3 * peak)
        idx = np.flatnonzero(inner) + 1
        return [float(v) for v in self.t[idx]]

    def reconstruct(self, points: np.ndarray) -> np.ndarray:
        """Принимает x или y; возвращает ∫ kernel(s, ·)(point)·g_s dt трапециями по сетке."""
        points = np.asarray(points, dtype=float)
        if self.unit_support:
            log_q, log1m_q = _split_z(self.z)
            log_k = log_nb(self.s, log_q[None, :], log1m_q[None, :], points[:, None])
        else:
            log_k = log_gamma_density(self.s, self.z[None, :], points[:, None])
        return np.asarray(integrate.trapezoid(np.exp(log_k) * self.z_density[None, :], self.z, axis=1))

    def rows(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.t, self.z, self.density, strict=True)]


def _as_z_any(unit: bool, t: float) -> float:
    if unit:
        return math.log(t) - math.log1p(-t)
    return math.log(t)


def _negative_intervals(t: np.ndarray, negative: np.ndarray) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    start: int | None = None
    for i, flag in enumerate(negative):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            out.append((float(t[start]), float(t[i - 1])))
            start = None
    if start is not None:
        out.append((float(t[start]), float(t[-1])))
    return out


def _tail_extrapolated_integral(z: np.ndarray, h: np.ndarray) -> float:
    total = float(integrate.trapezoid(h, z))
    dz = z[1] - z[0]
    for a, b in ((h[0], h[1]), (h[-1], h[-2])):
        if a > 0 and b > a:
            rate = math.log(b / a) / dz
            total += a / rate
    return total


def calibration_grid(g_r: MixingLaw, r: float, s: float, grid_n: int | None = None) -> np.ndarray:
    """Принимает закон, r, s и размер сетки; возвращает равномерную сетку z, покрывающую массу g_r и g_s."""
    n = grid_n or get_settings().calib_grid
    z_range = reference.FREQ_Z_RANGE if g_r.unit_support else reference.SEV_Z_RANGE
    z_lo, z_hi, _, _ = reference.scan_window(g_r.log_pdf_z, *z_range)
    width = z_hi - z_lo
    shift = abs(math.log(s / r))
    lo = max(z_lo - 0.25 * width - shift - _GRID_MARGIN, z_range[0])
    hi = min(z_hi + 0.25 * width + shift + _GRID_MARGIN, z_range[1])
    return np.linspace(lo, hi, n)


def calibrate(g_r: MixingLaw, r: float, s: float, grid_n: int | None = None) -> CalibratedDensity:
    """Принимает закон при форме r и целевую форму s; возвращает сеточную g_s с признаком квази-плотности.

    s = r даёт сам закон; s > r и s < r идут через прямое и обратное преобразования, любое 0 < s < r допустимо.
    """
    if s != r:
        _check_shapes(r, s, s > r)
    z = calibration_grid(g_r, r, s, grid_n)
    z_density = _z_values(g_r, r, s, z)
    if g_r.unit_support:
        t = special.expit(z)
        density = z_density / (t * (1.0 - t))
    else:
        t = np.exp(z)
        density = z_density / t
    peak = float(np.max(np.abs(z_density)))
    negative = z_density < -QUASI_TOL * peak
    out = CalibratedDensity(
        s=s,
        origin_r=r,
        unit_support=g_r.unit_support,
        z=z,
        density=density,
        z_density=z_density,
        is_quasi=bool(np.any(negative)),
        negativity_region=_negative_intervals(t, negative),
        integral=_tail_extrapolated_integral(z, z_density),
    )
    logger.info(
        "calibration_done",
        extra={"r": r, "s": s, "quasi": out.is_quasi, "integral": out.integral, "law": g_r.label},
    )
    return out


# --- проверка устойчивости -----------------------------------------------------------


def upper_tail_threshold(g_r: MixingLaw, r: float, s: float) -> float:
    """Порог «верхнего дециля» при форме s, эквивалентный по интенсивности q ≥ 0.9 (или 10 медианам θ) при форме r."""
    if g_r.unit_support:
        theta = UPPER_DECILE_THETA * r / s
        return theta / (1.0 + theta)
    z, cdf = _law_cdf(g_r)
    median = math.exp(float(np.interp(0.5, cdf, z)))
    return SEV_UPPER_FACTOR * median * r / s


def _law_cdf(g: MixingLaw) -> tuple[np.ndarray, np.ndarray]:
    z = calibration_grid(g, 1.0, 1.0, 4096)
    with np.errstate(all="ignore"):
        h = np.exp(g.log_pdf_z(z))
    h = np.where(np.isfinite(h), h, 0.0)
    cum = integrate.cumulative_trapezoid(h, z, initial=0.0)
    return z, cum / cum[-1]


def audit_points(model: MixtureModel | FamilyModel) -> np.ndarray:
    """Принимает модель; возвращает точки аудита инвариантности: x = 0..49 или 30 лог-равномерных y."""
    law = model.mixing_law()
    if law.unit_support:
        return np.arange(50, dtype=float)
    _, _, z_peak, _ = reference.scan_window(law.log_pdf_z, *reference.SEV_Z_RANGE)
    center = model.r * math.exp(z_peak)
    return np.geomspace(center * 1e-2, center * 1e2, 30)


def _sweep_one(
    model: MixtureModel | FamilyModel,
    s: float,
    grid_n: int | None,
    out_dir: Path | None,
    target: np.ndarray,
    points: np.ndarray,
) -> SweepEntry:
    law = model.mixing_law()
    r = model.r
    try:
        cal = calibrate(law, r, s, grid_n)
        rebuilt = cal.reconstruct(points)
        dev = float(np.max(np.abs(rebuilt - target) / np.abs(target)))
        grid_file = None
        if out_dir is not None:
            path = out_dir / f"mixing_s{s:g}.csv"
            write_csv_atomic(path, ("t", "z", "density"), cal.rows())
            grid_file = path.name
        return SweepEntry(
            s=s,
            status=StepStatus.ok,
            is_quasi=cal.is_quasi,
            negativity_region=cal.negativity_region,
            integral=cal.integral,
            modes=cal.modes(),
            upper_tail_mass=cal.upper_tail_mass(upper_tail_threshold(law, r, s)),
            elasticity_at_zero=elasticity_limit_at_zero(law),
            invariance_max_rel_dev=dev,
            grid_file=grid_file,
        )
    except HetmixError as exc:
        logger.warning("sweep_step_failed", extra={"s": s, "error": str(exc)})
        return SweepEntry(s=s, status=StepStatus.failed, error=str(exc))


def persistence(base_mass: float, base_modes: int, entries: Sequence[SweepEntry]) -> str:
    """Принимает массу верхнего хвоста и число мод при исходной форме и записи свипа; возвращает вердикт устойчивости.

    vanishing: хоть при одном s масса падает ниже половины исходной или пропадает многомодальность;
    persistent: при всех успешных s без квази-плотностей признак сохраняется; иначе undetermined.
    """
    ok = [e for e in entries if e.status is StepStatus.ok and e.upper_tail_mass is not None]
    if not ok:
        return "undetermined"
    for e in ok:
        assert e.upper_tail_mass is not None
        if e.upper_tail_mass < 0.5 * base_mass or (base_modes >= 2 and len(e.modes) < 2):
            return "vanishing"
    if len(ok) < len(entries) or any(e.is_quasi for e in ok):
        return "undetermined"
    return "persistent"


def robustness_sweep(
    model: MixtureModel | FamilyModel,
    s_grid: Sequence[float],
    grid_n: int | None = None,
    out_dir: Path | None = None,
) -> SweepReport:
    """Принимает подобранную модель и сетку форм s; возвращает отчёт по каждому s и итог устойчивости признаков."""
    s_values = [float(s) for s in s_grid]
    if s_values != sorted(s_values) or any(s <= 0 for s in s_values):
        raise DomainError("s_grid must be ascending positive numbers")
    points = audit_points(model)
    target = np.exp(model.log_density(points))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    law = model.mixing_law()
    base = calibrate(law, model.r, model.r, grid_n)
    base_mass = base.upper_tail_mass(upper_tail_threshold(law, model.r, model.r))
    workers = max(1, min(get_settings().threads, len(s_values)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        entries = list(pool.map(lambda s: _sweep_one(model, s, grid_n, out_dir, target, points), s_values))
    verdict = persistence(base_mass, len(base.modes()), entries)
    logger.info("robustness_sweep_done", extra={"r": model.r, "s_grid": s_values, "persistence": verdict})
    return SweepReport(origin_r=model.r, entries=entries, persistence=verdict)
