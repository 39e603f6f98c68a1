from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from hetmix.errors import CancellationError, DivergenceError, DomainError, PoleError, RangeError
from hetmix.settings import get_settings

logger = logging.getLogger(__name__)

STIRLING_CAP = 170
_EPS = float(np.finfo(float).eps)
_LOG_MAX = 709.0
_POLE_TOL = 1e-12


@dataclass(frozen=True, slots=True)
class SeriesResult:
    value: float
    abs_error_bound: float
    terms_used: int
    converged: bool


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0 or math.isinf(value):
            raise DomainError(f"{name} must be a finite positive number, got {value}")


def log_gamma(x: float) -> float:
    """Принимает x > 0; возвращает ln Γ(x)."""
    _require_positive(x=x)
    return float(special.gammaln(x))


def log_beta(v: float, w: float) -> float:
    _require_positive(v=v, w=w)
    return float(special.betaln(v, w))


def beta_fn(v: float, w: float) -> float:
    """Принимает v, w > 0; возвращает B(v, w) = Γ(v)Γ(w)/Γ(v+w)."""
    return math.exp(log_beta(v, w))


def riemann_zeta(s: float) -> float:
    if not s > 1:
        raise DomainError(f"riemann_zeta requires s > 1, got {s}")
    return float(special.zeta(s))


def hurwitz_zeta(s: float, m: float) -> float:
    """Принимает s > 1, m > 0; возвращает Σ_{k≥0} (k+m)^{-s}."""
    if not s > 1:
        raise DomainError(f"hurwitz_zeta requires s > 1, got {s}")
    _require_positive(m=m)
    return float(special.zeta(s, m))


def bessel_k(nu: float, z: float) -> float:
    """Принимает порядок nu и z > 0; возвращает K_nu(z) (K_{-nu} = K_nu).

    Исчезновение порядка при больших z и переполнение при малых z сигнализируются RangeError;
    для логарифма в таких областях есть log_bessel_k.
    """
    _require_positive(z=z)
    value = float(special.kv(abs(nu), z))
    if not math.isfinite(value):
        raise RangeError(f"K_{nu}({z}) overflows")
    if value == 0.0:
        raise RangeError(f"K_{nu}({z}) underflows")
    return value


def log_bessel_k(nu: float, z: float) -> float:
    _require_positive(z=z)
    scaled = float(special.kve(abs(nu), z))
    if not math.isfinite(scaled) or scaled <= 0.0:
        raise RangeError(f"ln K_{nu}({z}) is not representable")
    return math.log(scaled) - z


@lru_cache(maxsize=1)
def _stirling_table() -> tuple[tuple[int, ...], ...]:
    rows: list[tuple[int, ...]] = [(1,)]
    for kappa in range(1, STIRLING_CAP + 1):
        prev = rows[-1]
        row = [0] * (kappa + 1)
        for i in range(1, kappa + 1):
            row[i] = i * (prev[i] if i < len(prev) else 0) + prev[i - 1]
        rows.append(tuple(row))
    return tuple(rows)


def stirling2(kappa: int, i: int) -> int:
    """Принимает 0 ≤ i ≤ kappa ≤ 170; возвращает число Стирлинга второго рода S(kappa, i)."""
    if kappa < 0 or i < 0:
        raise DomainError(f"stirling2 requires nonnegative arguments, got ({kappa}, {i})")
    if kappa > STIRLING_CAP:
        raise RangeError(f"stirling2 is tabulated up to kappa={STIRLING_CAP}, got {kappa}")
    if i > kappa:
        return 0
    return _stirling_table()[kappa][i]


def _decreasing_series(
    log_terms: Callable[[np.ndarray], np.ndarray],
    remainder: Callable[[int], float],
    accelerated_tail: Callable[[int], tuple[float, float]],
    tol: float,
    cap: int,
    accel_after: int,
) -> SeriesResult:
    """Суммирует положительный убывающий ряд по блокам; возвращает SeriesResult.

    remainder(n) мажорирует хвост Σ_{k≥n}; accelerated_tail(n) даёт асимптотическую оценку хвоста и её погрешность.
    """
    first = float(np.exp(log_terms(np.zeros(1)))[0])
    if cap <= 1:
        bound = remainder(1)
        return SeriesResult(first, bound, 1, bound <= tol)

    total = 0.0
    n = 0
    chunk = 1024
    bound = math.inf
    while n < cap:
        m = min(chunk, cap - n)
        terms = np.exp(log_terms(np.arange(n, n + m, dtype=float)))
        total = math.fsum([total, *terms.tolist()])
        n += m
        bound = remainder(n)
        if terms[-1] < tol * abs(total) and bound < tol:
            return SeriesResult(total, bound, n, True)
        if n >= accel_after:
            tail, tail_err = accelerated_tail(n)
            if tail_err < tol:
                return SeriesResult(total + tail, tail_err, n, True)
        chunk = min(chunk * 2, 65536)

    value = total
    if n >= accel_after:
        tail, tail_err = accelerated_tail(n)
        if tail_err < bound:
            value, bound = total + tail, tail_err
    logger.warning("series_nonconverged", extra={"terms": n, "bound": bound, "tol": tol})
    return SeriesResult(value, bound, n, False)


def _midpoint_rel_error(s: float, x: float) -> float:
    # Γ(x)/Γ(x+s) ≈ (x + (s-1)/2)^{-s}; первый отброшенный член s(s²-1)/(24x²), с запасом 2.
    return 2.0 * s * abs(s * s - 1.0) / (24.0 * x * x)


def sigma_beta(
    xi: float,
    v: float,
    w: float,
    tol: float | None = None,
    max_terms: int | None = None,
) -> SeriesResult:
    """Принимает ξ, v, w > 0 и допуск; возвращает Σ_{k≥0} B(ξk+v, w+1) с честной оценкой остатка.

    После series_accel_after членов хвост заменяется асимптотикой через дзету Гурвица.
    """
    _require_positive(xi=xi, v=v, w=w)
    settings = get_settings()
    tol = settings.series_tol if tol is None else tol
    cap = settings.series_max_terms if max_terms is None else max_terms
    if tol < 0:
        raise DomainError(f"tol must be nonnegative, got {tol}")
    s = w + 1.0
    lg_s = float(special.gammaln(s))

    def log_terms(k: np.ndarray) -> np.ndarray:
        return special.betaln(xi * k + v, s)

    def remainder(n: int) -> float:
        x = xi * n + v
        return math.exp(special.betaln(x, s)) + math.exp(lg_s - w * math.log(x)) / (xi * w)

    def accelerated_tail(n: int) -> tuple[float, float]:
        shifted = n + (v + w / 2.0) / xi
        tail = math.exp(lg_s - s * math.log(xi)) * float(special.zeta(s, shifted))
        return tail, tail * _midpoint_rel_error(s, xi * n + v) + 4 * _EPS * tail

    return _decreasing_series(log_terms, remainder, accelerated_tail, tol, cap, settings.series_accel_after)


def sigma_beta_diff(
    xi: float,
    v1: float,
    v2: float,
    w: float,
    tol: float | None = None,
    max_terms: int | None = None,
) -> SeriesResult:
    """Принимает ξ, 0 < v1 < v2, w; возвращает Σ_B(ξ,v1,w) − Σ_B(ξ,v2,w), суммируя положительные разности почленно."""
    _require_positive(xi=xi, v1=v1, v2=v2, w=w)
    if not v2 > v1:
        raise DomainError(f"sigma_beta_diff requires v2 > v1, got v1={v1}, v2={v2}")
    settings = get_settings()
    tol = settings.series_tol if tol is None else tol
    cap = settings.series_max_terms if max_terms is None else max_terms
    s = w + 1.0
    lg_s = float(special.gammaln(s))
    gap = v2 - v1

    def log_terms(k: np.ndarray) -> np.ndarray:
        l1 = special.betaln(xi * k + v1, s)
        l2 = special.betaln(xi * k + v2, s)
        return l1 + np.log(-np.expm1(l2 - l1))

    def remainder(n: int) -> float:
        x1 = xi * n + v1
        lead = math.exp(float(log_terms(np.array([float(n)]))[0]))
        return lead + gap / xi * math.exp(special.betaln(x1, s))

    def accelerated_tail(n: int) -> tuple[float, float]:
        scale = math.exp(lg_s - s * math.log(xi))
        z1 = float(special.zeta(s, n + (v1 + w / 2.0) / xi))
        z2 = float(special.zeta(s, n + (v2 + w / 2.0) / xi))
        tail = scale * (z1 - z2)
        x1 = xi * n + v1
        err = _midpoint_rel_error(s, x1) * gap / xi * math.exp(lg_s - s * math.log(x1)) * (s + 2.0)
        return tail, err + 4 * _EPS * scale * z1

    return _decreasing_series(log_terms, remainder, accelerated_tail, tol, cap, settings.series_accel_after)


def _check_gamma_poles(xi: float, v: float, upto: int) -> None:
    if v > 0:
        return
    kmax = min(int(math.floor(-v / xi)), upto)
    args = xi * np.arange(0, kmax + 1, dtype=float) + v
    near = np.abs(args - np.round(args)) <= _POLE_TOL * np.maximum(1.0, np.abs(args))
    if np.any(near & (np.round(args) <= 0)):
        k = int(np.flatnonzero(near)[0])
        raise PoleError(f"Γ(ξk+v) has a pole at k={k} (ξ={xi}, v={v})")


def _check_gamma_domain(xi: float, w: float) -> None:
    if not xi > 0:
        raise DomainError(f"sigma_gamma requires ξ > 0, got {xi}")
    if xi > 1.0 and w != 0.0:
        raise DivergenceError(f"Σ_Γ diverges for ξ={xi} > 1 and w={w} ≠ 0")
    if xi == 1.0 and abs(w) >= 1.0:
        raise DivergenceError(f"Σ_Γ with ξ=1 requires |w| < 1, got w={w}")


def sigma_gamma(
    xi: float,
    v: float,
    w: float,
    tol: float | None = None,
    max_terms: int | None = None,
) -> SeriesResult:
    """Принимает ξ > 0, v, w (возможно w < 0) и допуск; возвращает Σ_{k≥0} w^k Γ(ξk+v)/k!.

    Ряд целый по w при ξ < 1, сходится при |w| < 1 для ξ = 1 и расходится при ξ > 1 (w ≠ 0).
    Граница ошибки учитывает округление при знакочередовании; при потере точности converged = False.
    """
    _check_gamma_domain(xi, w)
    settings = get_settings()
    tol = settings.series_tol if tol is None else tol
    cap = settings.series_max_terms if max_terms is None else max_terms
    if w == 0.0 or cap <= 1:
        _check_gamma_poles(xi, v, 0)
        first = float(special.gamma(v))
        if not math.isfinite(first):
            raise RangeError(f"Γ({v}) overflows")
        if w == 0.0:
            return SeriesResult(first, 0.0, 1, True)
        return SeriesResult(first, math.inf, 1, False)
    _check_gamma_poles(xi, v, cap)

    log_w = math.log(abs(w))
    negative = w < 0
    total = 0.0
    abs_total = 0.0
    round_err = 0.0
    n = 0
    chunk = 256
    bound = math.inf
    while n < cap:
        m = min(chunk, cap - n)
        k = np.arange(n, n + m, dtype=float)
        arg = xi * k + v
        lg_arg = special.gammaln(arg)
        lg_k = special.gammaln(k + 1.0)
        log_t = k * log_w - lg_k + lg_arg
        if np.any(log_t > _LOG_MAX):
            raise CancellationError("Σ_Γ terms exceed the float range", math.nan, math.inf)
        sign = special.gammasgn(arg)
        if negative:
            sign = sign * np.where(k % 2 == 0, 1.0, -1.0)
        mag = np.exp(log_t)
        total = math.fsum([total, *(sign * mag).tolist()])
        abs_total += float(mag.sum())
        round_err += float(np.sum(mag * _EPS * (2.0 + np.abs(k * log_w) + lg_k + np.abs(lg_arg))))
        n += m

        last = float(mag[-1])
        ratio = math.exp(float(log_t[-1] - log_t[-2])) if m > 1 else 1.0
        if xi == 1.0:
            ratio = max(ratio, abs(w))
        tail = last * ratio / (1.0 - ratio) if ratio < 1.0 else math.inf
        bound = tail + round_err
        if last <= tol * abs(total) and tail < tol:
            converged = bound <= tol
            if not converged:
                logger.debug(
                    "series_cancellation",
                    extra={"xi": xi, "v": v, "w": w, "bound": bound, "abs_total": abs_total},
                )
            return SeriesResult(total, bound, n, converged)
        chunk = min(chunk * 2, 65536)

    logger.warning("series_nonconverged", extra={"terms": n, "bound": bound, "tol": tol, "w": w})
    return SeriesResult(total, bound, n, False)


def sigma_gamma_vec(
    xi: float,
    v: float,
    w: np.ndarray,
    tol: float | None = None,
    max_terms: int = 4096,
) -> tuple[np.ndarray, np.ndarray]:
    """Принимает ξ, v и массив w; возвращает (значения, границы ошибки) Σ_Γ поэлементно.

    Элементы, не сошедшиеся за max_terms или потерявшие точность, получают границу inf.
    """
    w = np.asarray(w, dtype=float)
    _check_gamma_domain(xi, float(np.max(np.abs(w))) if w.size else 0.0)
    tol = get_settings().series_tol if tol is None else tol
    _check_gamma_poles(xi, v, max_terms)

    values = np.zeros_like(w)
    abs_sum = np.zeros_like(w)
    err = np.zeros_like(w)
    bounds = np.full_like(w, np.inf)
    active = np.ones(w.shape, dtype=bool)
    zero = w == 0.0
    if np.any(zero):
        values[zero] = special.gamma(v)
        bounds[zero] = 0.0
        active &= ~zero

    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        log_w = np.log(np.abs(w))
        odd_sign = np.where(w < 0, -1.0, 1.0)
        n = 0
        block = 64
        while n < max_terms and np.any(active):
            idx = np.flatnonzero(active)
            k = np.arange(n, min(n + block, max_terms), dtype=float)
            arg = xi * k + v
            lg_arg = special.gammaln(arg)
            lg_k = special.gammaln(k + 1.0)
            log_t = k[None, :] * log_w[idx, None] - lg_k[None, :] + lg_arg[None, :]
            overflow = np.any(log_t > _LOG_MAX, axis=1)
            mag = np.exp(np.minimum(log_t, _LOG_MAX))
            sign = special.gammasgn(arg)[None, :] * odd_sign[idx, None] ** k[None, :]
            values[idx] += np.sum(sign * mag, axis=1)
            abs_sum[idx] += np.sum(mag, axis=1)
            err[idx] += np.sum(mag * _EPS * (2.0 + np.abs(k[None, :] * log_w[idx, None]) + lg_k + np.abs(lg_arg)), axis=1)
            n += len(k)

            last = mag[:, -1]
            ratio = np.exp(log_t[:, -1] - log_t[:, -2])
            if xi == 1.0:
                ratio = np.maximum(ratio, np.abs(w[idx]))
            tail = np.where(ratio < 1.0, last * ratio / (1.0 - ratio), np.inf)
            # суммирование блоками по столбцам даёт погрешность порядка eps·Σ|t|
            done = (last <= tol * np.abs(values[idx])) & (tail < tol)
            bounds[idx[done]] = tail[done] + err[idx[done]] + 4 * _EPS * abs_sum[idx[done]]
            active[idx[done | overflow]] = False
            bounds[idx[overflow]] = np.inf
            block = min(block * 2, 1024)
    return values, bounds
