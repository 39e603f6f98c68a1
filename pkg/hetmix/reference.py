from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Callable

import numpy as np
from scipy import integrate, special

from hetmix.errors import DomainError, QuadratureError
from hetmix.kernels import log_gamma_density, log_nb
from hetmix.mixing import MixingLaw
from hetmix.settings import get_settings

logger = logging.getLogger(__name__)

LogIntegrand = Callable[[np.ndarray], np.ndarray]

# Окна сканирования z-координаты: логит q и ln θ.
FREQ_Z_RANGE = (-740.0, 740.0)
SEV_Z_RANGE = (-700.0, 700.0)
_SCAN_STEP = 0.1
_WINDOW_DROP = 60.0


def scan_window(
    log_h: LogIntegrand,
    lo: float,
    hi: float,
    step: float = _SCAN_STEP,
    drop: float = _WINDOW_DROP,
) -> tuple[float, float, float, float]:
    """Принимает ln h(z) и диапазон; возвращает (z_lo, z_hi, z_peak, ln h_peak) окна, где ln h ≥ пик − drop."""
    z = np.arange(lo, hi + step, step)
    with np.errstate(all="ignore"):
        vals = np.asarray(log_h(z), dtype=float)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    if not np.any(np.isfinite(vals)):
        raise QuadratureError("integrand vanishes on the whole scan range")
    i_peak = int(np.argmax(vals))
    peak = float(vals[i_peak])
    keep = np.flatnonzero(vals >= peak - drop)
    i_lo = max(int(keep[0]) - 1, 0)
    i_hi = min(int(keep[-1]) + 1, len(z) - 1)
    return float(z[i_lo]), float(z[i_hi]), float(z[i_peak]), peak


def _tanhsinh_panel(f: LogIntegrand, lo: float, hi: float, atol: float, rtol: float) -> tuple[float, float, bool]:
    res = integrate.tanhsinh(f, lo, hi, atol=atol, rtol=rtol)
    return float(res.integral), float(res.error), bool(res.success)


def _kronrod_panel(f: LogIntegrand, lo: float, hi: float, atol: float, rtol: float, limit: int) -> tuple[float, float, bool]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, err = integrate.quad(lambda t: float(f(np.asarray([t]))[0]), lo, hi, epsabs=atol, epsrel=rtol, limit=limit)
    return float(value), float(err), err <= max(atol, rtol * abs(value))


def integrate_log(
    log_h: LogIntegrand,
    z_range: tuple[float, float],
    atol: float | None = None,
    rtol: float | None = None,
) -> tuple[float, float]:
    """Принимает ln h(z) на прямой и диапазон сканирования; возвращает (∫ h dz, граница ошибки).

    Подынтегральное выражение масштабируется на пик; окно [пик − 60 в логарифме] делится в точке пика,
    каждая панель интегрируется tanh-sinh, при неудаче адаптивным Гаусс–Кронродом.
    """
    settings = get_settings()
    atol = settings.quad_abs_tol if atol is None else atol
    rtol = settings.quad_rel_tol if rtol is None else rtol
    z_lo, z_hi, z_peak, peak = scan_window(log_h, *z_range)
    if not math.isfinite(peak):
        raise QuadratureError("integrand peak is not finite")

    def h(z: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = np.exp(np.asarray(log_h(z), dtype=float) - peak)
        return np.where(np.isfinite(out), out, 0.0)

    scale = math.exp(peak) if peak < 709 else math.inf
    if not math.isfinite(scale):
        raise QuadratureError("integrand overflows", math.inf, math.inf)
    panel_atol = atol / scale if scale > 0 else atol
    edges = [z_lo, z_peak, z_hi] if z_lo < z_peak < z_hi else [z_lo, z_hi]

    total = 0.0
    bound = 0.0
    for lo, hi in zip(edges[:-1], edges[1:], strict=True):
        value, err, ok = _tanhsinh_panel(h, lo, hi, panel_atol, rtol)
        if not ok:
            value2, err2, ok2 = _kronrod_panel(h, lo, hi, panel_atol, rtol, settings.quad_limit)
            if ok2 or err2 < err:
                value, err, ok = value2, err2, ok2
        total += value
        bound += err
    # массa вне окна: не больше e^{-60} от пика на ширину скана
    bound += math.exp(-_WINDOW_DROP) * (z_range[1] - z_range[0])
    value = total * scale
    abs_bound = bound * scale
    if abs_bound > max(atol, rtol * abs(value)) * 10.0:
        logger.warning("quadrature_budget_exhausted", extra={"value": value, "bound": abs_bound})
        raise QuadratureError(f"quadrature bound {abs_bound:.3g} not met for value {value:.6g}", value, abs_bound)
    return value, abs_bound


def _freq_log_integrand(r: float, g: MixingLaw, x: float) -> LogIntegrand:
    def log_h(z: np.ndarray) -> np.ndarray:
        log_q = -np.logaddexp(0.0, -z)
        log1m_q = -np.logaddexp(0.0, z)
        return log_nb(r, log_q, log1m_q, x) + g.log_pdf_z(z)

    return log_h


def _sev_log_integrand(r: float, g: MixingLaw, y: float) -> LogIntegrand:
    def log_h(z: np.ndarray) -> np.ndarray:
        return log_gamma_density(r, z, y) + g.log_pdf_z(z)

    return log_h


def quad_mixture_pmf_bounded(r: float, g: MixingLaw, x: int) -> tuple[float, float]:
    if not g.unit_support:
        raise DomainError("frequency mixtures need a mixing law on (0, 1)")
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x}")
    return integrate_log(_freq_log_integrand(r, g, float(x)), FREQ_Z_RANGE)


def quad_mixture_pmf(r: float, g: MixingLaw, x: int) -> float:
    """Принимает форму r, закон g на (0,1) и x; возвращает ∫ NB(r,q)(x) g(q) dq квадратурой по логиту q."""
    return quad_mixture_pmf_bounded(r, g, x)[0]


def quad_mixture_pdf_bounded(r: float, g: MixingLaw, y: float) -> tuple[float, float]:
    if g.unit_support:
        raise DomainError("severity mixtures need a mixing law on (0, ∞)")
    if not y > 0:
        raise DomainError(f"y must be positive, got {y}")
    return integrate_log(_sev_log_integrand(r, g, y), SEV_Z_RANGE)


def quad_mixture_pdf(r: float, g: MixingLaw, y: float) -> float:
    """Принимает форму r, закон g на (0,∞) и y > 0; возвращает ∫ Γ(r,θ)(y) g(θ) dθ квадратурой по ln θ."""
    return quad_mixture_pdf_bounded(r, g, y)[0]


def quad_law_moment(g: MixingLaw, fn: Callable[[np.ndarray], np.ndarray]) -> float:
    """Принимает закон и функцию ln φ(t); возвращает ∫ φ(t) g(t) dt."""
    z_range = FREQ_Z_RANGE if g.unit_support else SEV_Z_RANGE

    def log_h(z: np.ndarray) -> np.ndarray:
        return fn(g.to_natural(z)) + g.log_pdf_z(z)

    return integrate_log(log_h, z_range)[0]


def brute_sigma_beta(xi: float, v: float, w: float, n_terms: int) -> tuple[float, float]:
    """Принимает (ξ, v, w) и число членов; возвращает (частичная сумма Σ_B, мажоранта хвоста)."""
    k = np.arange(n_terms, dtype=float)
    partial = math.fsum(np.exp(special.betaln(xi * k + v, w + 1.0)).tolist())
    x = xi * n_terms + v
    tail = math.exp(special.gammaln(w + 1.0) - w * math.log(x)) / (xi * w)
    return partial, tail


def brute_pmf_sum(log_pmf: Callable[[np.ndarray], np.ndarray], x_max: int, power: int = 0) -> float:
    x = np.arange(x_max + 1, dtype=float)
    vals = np.exp(log_pmf(x))
    if power:
        vals = vals * x**power
    return math.fsum(vals.tolist())


def mc_moment(samples: np.ndarray, kappa: float) -> tuple[float, float]:
    """Принимает выборку и порядок κ; возвращает (выборочный момент, его стандартную ошибку)."""
    vals = np.asarray(samples, dtype=float) ** kappa
    if vals.size < 2:
        raise DomainError("need at least two samples")
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))
