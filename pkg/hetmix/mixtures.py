from __future__ import annotations

import logging
import math
import threading
from collections.abc import Callable, Mapping
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special
from scipy.interpolate import PchipInterpolator

from hetmix import reference
from hetmix.errors import (
    CancellationError,
    ConsistencyError,
    DomainError,
    HetmixError,
    NegativeProbabilityError,
    PoleError,
    SeriesError,
)
from hetmix.kernels import sample_nb_theta
from hetmix.mixing import (
    FamilyId,
    FamilyNode,
    HGSBLaw,
    HGSGLaw,
    MixingLaw,
    check_free,
    family_mixing_law,
    get_node,
    log_sigma_beta_norm,
    log_sigma_gamma_norm,
    mixing_law,
    restrict,
)
from hetmix.models import DataKind, FreqMixParams, MixingSide, MixtureKind, SevMixParams
from hetmix.settings import get_settings
from hetmix.specfun import hurwitz_zeta, riemann_zeta, sigma_beta, sigma_beta_diff, sigma_gamma_vec

logger = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-12
_EPS = float(np.finfo(float).eps)
_ABEL_MAX_TERMS = 4000
_ALTERNATING_MAX_X = 60
_ASYMPTOTIC_TERMS = 80
_RESIDUE_TERMS = 600
_POLE_GAP = 1e-7


class _FallbackCounter:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._value = 0

    def bump(self, n: int = 1) -> None:
        with self._lock:
            self._value += n

    @property
    def value(self) -> int:
        return self._value

    def reset(self) -> None:
        with self._lock:
            self._value = 0


FALLBACKS = _FallbackCounter()


def fallback_count() -> int:
    """Принимает ничего; возвращает число точек, пересчитанных квадратурным оракулом с начала процесса."""
    return FALLBACKS.value


def _log_nb_coef(r: float, x: np.ndarray) -> np.ndarray:
    return special.gammaln(r + x) - special.gammaln(r) - special.gammaln(x + 1.0)


def _log_diff(l1: np.ndarray, l2: np.ndarray) -> np.ndarray:
    """ln(e^{l1} − e^{l2}) при l1 > l2."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return l1 + np.log(-np.expm1(l2 - l1))


def _safe_log(value: float, what: str) -> float:
    if value < -NEGATIVE_TOL:
        raise NegativeProbabilityError(f"{what} evaluated to {value:.3g} < 0")
    return math.log(value) if value > 0 else -math.inf


def _tol() -> float:
    return get_settings().fallback_rel_tol


def _oracle_log(law: MixingLaw, r: float, points: np.ndarray, reason: str) -> np.ndarray:
    FALLBACKS.bump(len(points))
    logger.info("closed_form_fallback", extra={"reason": reason, "points": len(points), "law": law.label})
    out = np.empty(len(points))
    for i, t in enumerate(points):
        if law.unit_support:
            value = reference.quad_mixture_pmf(r, law, int(t))
        else:
            value = reference.quad_mixture_pdf(r, law, float(t))
        out[i] = _safe_log(value, f"oracle density at {t}")
    return out


# --- частотная сторона: HGZY и HGZY′ -------------------------------------------


class _SigmaLadder:
    """Разности D_m = Σ_B(ξ, a+m/c, b) − Σ_B(ξ, a+(m+1)/c, b) с кэшем по m."""

    def __init__(self, p: FreqMixParams) -> None:
        self.p = p
        self.xi = p.d / p.c
        self._cache: dict[int, tuple[float, float]] = {}

    def diff(self, m: int) -> tuple[float, float]:
        hit = self._cache.get(m)
        if hit is not None:
            return hit
        p = self.p
        v1 = p.a + m / p.c
        v2 = p.a + (m + 1) / p.c
        if self.xi == 1.0:
            l1 = special.betaln(v1, p.b)
            value = float(math.exp(l1) * -math.expm1(special.betaln(v2, p.b) - l1))
            out = (value, 8 * _EPS * value)
        elif p.d == 1.0:
            # шаг 1/c совпадает с ξ: ряд телескопируется в первый член
            value = float(math.exp(special.betaln(v1, p.b + 1.0)))
            out = (value, 8 * _EPS * value)
        else:
            res = sigma_beta_diff(self.xi, v1, v2, p.b)
            if not res.converged:
                raise SeriesError(f"Σ_B difference at m={m} did not converge", res)
            out = (res.value, res.abs_error_bound)
        self._cache[m] = out
        return out


def _abel_series(r: float, x: int, ladder: _SigmaLadder) -> tuple[float, float]:
    """Σ_ℓ C(r,ℓ)(−1)^ℓ S_{x+ℓ} после суммирования по частям: Σ_L (−1)^L C(r−1,L) D_{x+L}."""
    b = ladder.p.b
    p_exp = r + b + 1.0
    weight = 1.0
    terms: list[float] = []
    bound = 0.0
    small = 0
    partial = 0.0
    for L in range(_ABEL_MAX_TERMS):
        d_val, d_bound = ladder.diff(x + L)
        t = weight * d_val
        terms.append(t)
        partial += t
        bound += abs(weight) * d_bound
        weight *= (L + 1.0 - r) / (L + 1.0)
        if weight == 0.0:
            return math.fsum(terms), bound
        small = small + 1 if abs(t) < 1e-3 * _tol() * abs(partial) else 0
        if small >= 3 and L >= 8:
            tail = t * (L / (p_exp - 1.0) - 0.5)
            tail_err = abs(tail) * (p_exp + 1.0) / L
            if tail_err <= 0.1 * _tol() * abs(partial):
                return math.fsum([*terms, tail]), bound + tail_err
    raise SeriesError(f"generalized binomial series for x={x}, r={r} did not settle")


def _hgzy_log_pmf(r: float, p: FreqMixParams, x: np.ndarray) -> np.ndarray:
    ladder = _SigmaLadder(p)
    log_s0 = log_sigma_beta_norm(ladder.xi, p.a, p.b)
    out = np.empty(len(x))
    bad: list[int] = []
    for i, xv in enumerate(x):
        xi_ = int(xv)
        try:
            if r == 1.0:
                value, bound = ladder.diff(xi_)
            else:
                value, bound = _abel_series(r, xi_, ladder)
            if bound > _tol() * abs(value):
                raise CancellationError("bound exceeds tolerance", value, bound)
            out[i] = _safe_log(value, f"HGZY pmf at {xi_}") - log_s0
        except (SeriesError, CancellationError):
            bad.append(i)
    if r != 1.0:
        good = np.setdiff1d(np.arange(len(x)), bad)
        out[good] += _log_nb_coef(r, x[good])
    if bad:
        law = HGSBLaw(p)
        out[bad] = _oracle_log(law, r, x[bad], "hgzy_series")
    return out


def _alternating_binomial(x: int, log_f: Callable[[np.ndarray], np.ndarray], rel_err: float) -> float:
    """Σ_{j=0}^x C(x,j)(−1)^j e^{log_f(j)}; CancellationError, если округление съедает значение."""
    if x > _ALTERNATING_MAX_X:
        raise CancellationError(f"alternating sum of {x + 1} terms", math.nan, math.inf)
    j = np.arange(x + 1, dtype=float)
    log_c = special.gammaln(x + 1.0) - special.gammaln(j + 1.0) - special.gammaln(x - j + 1.0)
    mag = np.exp(log_c + log_f(j))
    signed = np.where(j % 2 == 0, mag, -mag)
    order = np.argsort(-mag)
    value = math.fsum(signed[order].tolist())
    bound = float(np.sum(mag)) * (rel_err + 8 * _EPS)
    if value <= 0 or bound > _tol() * abs(value):
        raise CancellationError(f"alternating sum at x={x} lost precision", value, bound)
    return value


def _hgzyp_log_pmf(r: float, p: FreqMixParams, x: np.ndarray) -> np.ndarray:
    xi = p.d / p.c
    log_s0 = log_sigma_beta_norm(xi, p.a, p.b)
    out = np.empty(len(x))
    bad: list[int] = []
    cache: dict[int, tuple[float, float]] = {}

    def f_j(j: int) -> tuple[float, float]:
        if j not in cache:
            res = sigma_beta(xi, p.a + (r + j) / p.c, p.b) if xi != 1.0 else None
            if res is None:
                value = math.exp(special.betaln(p.a + (r + j) / p.c, p.b))
                cache[j] = (value, 8 * _EPS * value)
            elif not res.converged:
                raise SeriesError(f"Σ_B at j={j} did not converge", res)
            else:
                cache[j] = (res.value, res.abs_error_bound)
        return cache[j]

    for i, xv in enumerate(x):
        xi_ = int(xv)
        try:
            if p.c == 1.0:
                # при c = 1 разложение (1−p)^x не нужно: Σ_B(d, r+a, x+b) без знакочередования
                res = sigma_beta(p.d, r + p.a, xi_ + p.b)
                if not res.converged or res.abs_error_bound > _tol() * res.value:
                    raise SeriesError("Σ_B(d, r+a, x+b) did not converge", res)
                value = res.value
            else:
                vals = [f_j(j) for j in range(xi_ + 1)] if xi_ <= _ALTERNATING_MAX_X else []
                rel = max((bnd / v for v, bnd in vals), default=0.0)

                def log_f(j: np.ndarray, vals: list[tuple[float, float]] = vals) -> np.ndarray:
                    return np.log(np.asarray([vals[int(k)][0] for k in j]))

                value = _alternating_binomial(xi_, log_f, rel)
            out[i] = math.log(value) - log_s0
        except (SeriesError, CancellationError):
            bad.append(i)
    good = np.setdiff1d(np.arange(len(x)), bad)
    out[good] += _log_nb_coef(r, x[good])
    if bad:
        out[bad] = _oracle_log(HGSBLaw(p, complementary=True), r, x[bad], "hgzy_prime_alternating")
    return out


# --- сторона потерь: HGΣΣ и HGΣΣ′ ---------------------------------------------


def _pareto_shifted_log_pdf(r: float, alpha: float, c: float, y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return (
            (r - 1.0) * np.log(y)
            + special.gammaln(alpha + r)
            - special.gammaln(r)
            - special.gammaln(alpha)
            + alpha * math.log(c)
            - (alpha + r) * np.log(c + y)
        )


def _hgss_asymptotic(r: float, p: SevMixParams, log_norm: float, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Асимптотика при больших Y = y − 1/δ: Σ_m (−β)^m/m!·Γ(γ(α+m)+r)·Y^{−(γ(α+m)+r)} с оптимальным обрывом."""
    big_y = y - p.inv_delta
    ok = big_y > 0
    out = np.full(len(y), np.nan)
    accepted = np.zeros(len(y), dtype=bool)
    if not np.any(ok):
        return out, accepted
    ly = np.log(big_y[ok])
    m = np.arange(_ASYMPTOTIC_TERMS, dtype=float)
    power = p.gamma * (p.alpha + m) + r
    log_t = (m * math.log(p.beta) - special.gammaln(m + 1.0) + special.gammaln(power))[None, :] - power[None, :] * ly[:, None]
    i_min = np.argmin(log_t, axis=1)
    mask = m[None, :] < i_min[:, None]
    signs = np.where(m % 2 == 0, 1.0, -1.0)[None, :]
    vals = np.sum(np.where(mask, signs * np.exp(log_t), 0.0), axis=1)
    err = np.exp(log_t[np.arange(len(ly)), i_min])
    good = (vals > 0) & (err <= 0.1 * _tol() * np.abs(vals)) & (i_min > 0)
    log_c = math.log(p.gamma) + p.alpha * math.log(p.beta) - log_norm
    idx = np.flatnonzero(ok)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[idx] = log_c + (r - 1.0) * np.log(y[idx]) - special.gammaln(r) + np.log(vals)
    accepted[idx[good]] = True
    return out, accepted


def _hgss_log_pdf(r: float, p: SevMixParams, y: np.ndarray) -> np.ndarray:
    if p.gamma == 1.0:
        return _pareto_shifted_log_pdf(r, p.alpha, p.beta - p.inv_delta, y)
    g = p.gamma
    log_norm = log_sigma_gamma_norm(p.alpha, p.beta, g, p.inv_delta)
    scale = p.beta ** (-1.0 / g)
    w = (p.inv_delta - y) * scale
    out = np.full(len(y), np.nan)
    vals, bounds = sigma_gamma_vec(1.0 / g, p.alpha + r / g, w)
    ok = (vals > 0) & (bounds <= _tol() * np.abs(vals))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_pref = -(r / g) * math.log(p.beta) + (r - 1.0) * np.log(y) - special.gammaln(r) - log_norm
        out[ok] = log_pref[ok] + np.log(vals[ok])
    rest = np.flatnonzero(~ok)
    if len(rest):
        asym, accepted = _hgss_asymptotic(r, p, log_norm, y[rest])
        out[rest[accepted]] = asym[accepted]
        left = rest[~accepted]
        if len(left):
            out[left] = _oracle_log(HGSGLaw(p, inverse=True), r, y[left], "hgss_series")
    return out


def _check_poles(args: np.ndarray) -> None:
    nearest = np.round(args)
    if np.any((nearest <= 0) & (np.abs(args - nearest) < _POLE_GAP)):
        raise PoleError("residue series hit coinciding poles")


def _hgssp_bracket(r: float, p: SevMixParams, y: float) -> float:
    """Σ_k δ^{−k}/k!·I_k(y) по двум сериям вычетов (полюса Γ(s) и Γ((μ+s)/γ))."""
    g = p.gamma
    ly = math.log(y)
    lb = math.log(p.beta)
    j = np.arange(_RESIDUE_TERMS, dtype=float)
    n = np.arange(_RESIDUE_TERMS, dtype=float)
    sign_alt = np.where(j % 2 == 0, 1.0, -1.0)
    pieces: list[float] = []
    abs_sum = 0.0
    max_log = -math.inf
    k = 0
    quiet = 0
    running = 0.0
    while True:
        mu = g * p.alpha - r + k
        arg_j = (mu - j) / g
        arg_n = -mu - g * n
        _check_poles(arg_j)
        _check_poles(arg_n)
        log_wk = 0.0 if k == 0 else k * math.log(p.inv_delta) - math.lgamma(k + 1.0)
        log_j = j * ly - special.gammaln(j + 1.0) + special.gammaln(arg_j) - arg_j * lb - math.log(g) + log_wk
        log_n = n * lb - special.gammaln(n + 1.0) + special.gammaln(arg_n) + (mu + g * n) * ly + log_wk
        all_log = np.concatenate([log_j, log_n])
        top = float(np.max(all_log))
        if top > 700:
            raise CancellationError("residue terms exceed the float range", math.nan, math.inf)
        if max(float(np.max(log_j[-20:])), float(np.max(log_n[-20:]))) > top - 40:
            raise SeriesError("residue series not settled within the term cap")
        signed = np.concatenate(
            [sign_alt * special.gammasgn(arg_j) * np.exp(log_j), sign_alt * special.gammasgn(arg_n) * np.exp(log_n)]
        )
        block = math.fsum(signed.tolist())
        pieces.append(block)
        block_abs = float(np.sum(np.abs(signed)))
        abs_sum += block_abs
        max_log = max(max_log, float(np.max(np.abs(all_log[np.isfinite(all_log)]))))
        running += block
        if p.inv_delta == 0.0:
            break
        quiet = quiet + 1 if block_abs < 1e-17 * max(abs(running), 1e-300) else 0
        if quiet >= 3:
            break
        k += 1
        if k > 400:
            raise SeriesError("outer δ-series did not settle")
    value = math.fsum(pieces)
    bound = abs_sum * _EPS * (4.0 + max_log)
    if value <= 0 or bound > _tol() * abs(value):
        raise CancellationError("residue series lost precision", value, bound)
    return value


def _hgssp_log_pdf(r: float, p: SevMixParams, y: np.ndarray) -> np.ndarray:
    if p.gamma == 1.0:
        c = p.beta - p.inv_delta
        nu = abs(p.alpha - r)
        z = 2.0 * np.sqrt(c * y)
        with np.errstate(divide="ignore"):
            log_k = np.log(special.kve(nu, z)) - z
            return (
                math.log(2.0)
                + p.alpha * math.log(c)
                - special.gammaln(p.alpha)
                - special.gammaln(r)
                + (r - 1.0) * np.log(y)
                + 0.5 * (p.alpha - r) * (np.log(y) - math.log(c))
                + log_k
            )
    log_c = math.log(p.gamma) + p.alpha * math.log(p.beta) - log_sigma_gamma_norm(p.alpha, p.beta, p.gamma, p.inv_delta)
    out = np.empty(len(y))
    bad: list[int] = []
    for i, yv in enumerate(y):
        try:
            out[i] = log_c + (r - 1.0) * math.log(yv) - math.lgamma(r) + math.log(_hgssp_bracket(r, p, float(yv)))
        except (SeriesError, CancellationError):
            bad.append(i)
    if bad:
        out[bad] = _oracle_log(HGSGLaw(p), r, y[bad], "hgss_prime_residues")
    return out


# --- модели ---------------------------------------------------------------------


def _as_counts(values: ArrayLike) -> np.ndarray:
    x = np.atleast_1d(np.asarray(values, dtype=float))
    if np.any(x < 0) or np.any(x != np.floor(x)) or not np.all(np.isfinite(x)):
        raise DomainError("counts must be nonnegative integers")
    return x


def _as_losses(values: ArrayLike) -> np.ndarray:
    y = np.atleast_1d(np.asarray(values, dtype=float))
    if np.any(~(y > 0)) or not np.all(np.isfinite(y)):
        raise DomainError("losses must be finite and positive")
    return y


def _evaluate_unique(values: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    uniq, inverse = np.unique(values, return_inverse=True)
    return fn(uniq)[inverse]


_FREQ_KINDS = (MixtureKind.hgzy, MixtureKind.hgzy_prime)


class MixtureModel(BaseModel):
    """Каноническая смесь: ядро NB(r, q) или Gamma(r, θ) со смешивающим законом своей стороны."""

    model_config = ConfigDict(frozen=True)

    kind: MixtureKind
    r: float = Field(default=1.0, gt=0, allow_inf_nan=False)
    params: FreqMixParams | SevMixParams

    @model_validator(mode="after")
    def _params_match_kind(self) -> MixtureModel:
        freq = self.kind in _FREQ_KINDS
        if freq != isinstance(self.params, FreqMixParams):
            raise ValueError(f"{self.kind.value} needs {'(a, b, c, d)' if freq else '(alpha, beta, gamma, delta)'}")
        return self

    @property
    def data_kind(self) -> DataKind:
        return DataKind.counts if self.kind in _FREQ_KINDS else DataKind.losses

    @property
    def side(self) -> MixingSide:
        return {
            MixtureKind.hgzy: MixingSide.hgsb,
            MixtureKind.hgzy_prime: MixingSide.chgsb,
            MixtureKind.hgss: MixingSide.ihgsg,
            MixtureKind.hgss_prime: MixingSide.hgsg,
        }[self.kind]

    def mixing_law(self) -> MixingLaw:
        return mixing_law(self.side, self.params)

    def log_density(self, values: ArrayLike) -> np.ndarray:
        """Принимает массив x или y; возвращает ln f в каждой точке (вычисление по уникальным значениям)."""
        p = self.params
        if self.kind is MixtureKind.hgzy:
            assert isinstance(p, FreqMixParams)
            return _evaluate_unique(_as_counts(values), lambda u: _hgzy_log_pmf(self.r, p, u))
        if self.kind is MixtureKind.hgzy_prime:
            assert isinstance(p, FreqMixParams)
            return _evaluate_unique(_as_counts(values), lambda u: _hgzyp_log_pmf(self.r, p, u))
        assert isinstance(p, SevMixParams)
        if self.kind is MixtureKind.hgss:
            return _evaluate_unique(_as_losses(values), lambda u: _hgss_log_pdf(self.r, p, u))
        return _evaluate_unique(_as_losses(values), lambda u: _hgssp_log_pdf(self.r, p, u))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_mixture(self, n, rng)


def _kind_check(m: MixtureModel, kind: MixtureKind) -> None:
    if m.kind is not kind:
        raise DomainError(f"expected a {kind.value} model, got {m.kind.value}")


def hgzy_log_pmf(m: MixtureModel, x: int) -> float:
    _kind_check(m, MixtureKind.hgzy)
    return float(m.log_density([x])[0])


def hgzyp_log_pmf(m: MixtureModel, x: int) -> float:
    _kind_check(m, MixtureKind.hgzy_prime)
    return float(m.log_density([x])[0])


def hgss_log_pdf(m: MixtureModel, y: float) -> float:
    _kind_check(m, MixtureKind.hgss)
    return float(m.log_density([y])[0])


def hgssp_log_pdf(m: MixtureModel, y: float) -> float:
    _kind_check(m, MixtureKind.hgss_prime)
    return float(m.log_density([y])[0])


# --- формы узлов каталога -------------------------------------------------------


def _freq_node_log_pmf(node: FamilyNode, f: Mapping[str, float], x: np.ndarray) -> np.ndarray | None:
    base = node.id.value
    if base == "zeta":
        b = f["b"]
        return -(b + 1.0) * np.log(x + 1.0) - math.log(riemann_zeta(b + 1.0))
    if base == "yule":
        return math.log(f["b"]) + special.betaln(x + 1.0, f["b"] + 1.0)
    if base == "quadratic":
        c = f["c"]
        return math.log(c) - np.log(x + c) - np.log(x + c + 1.0)
    if base == "zy":
        b, c = f["b"], f["c"]
        return special.betaln((x + 1.0) / c, b + 1.0) - log_sigma_beta_norm(1.0 / c, 1.0 / c, b)
    if base == "waring":
        a, b = f["a"], f["b"]
        return special.betaln(a + x, b + 1.0) - special.betaln(a, b)
    if base == "kmix":
        b, c = f["b"], f["c"]
        return math.log(b) + _log_diff(special.betaln(x / c + 1.0, b), special.betaln((x + 1.0) / c + 1.0, b))
    if base == "gzy":
        a, b, c = f["a"], f["b"], f["c"]
        return special.betaln(a + x / c, b + 1.0) - log_sigma_beta_norm(1.0 / c, a, b)
    if base == "gw2":
        a, b, c = f["a"], f["b"], f["c"]
        return _log_diff(special.betaln(a + x / c, b), special.betaln(a + (x + 1.0) / c, b)) - special.betaln(a, b)
    if base == "gen_waring":
        r, a, b = f["r"], f["a"], f["b"]
        return _log_nb_coef(r, x) + special.betaln(a + x, b + r) - special.betaln(a, b)
    if base == "yule_prime":
        return math.log(f["b"]) + special.betaln(2.0, x + f["b"])
    if base == "quadratic_prime":
        c = f["c"]
        return math.log(c) + special.betaln(c + 1.0, x + 1.0)
    if base == "waring_prime":
        a, b = f["a"], f["b"]
        return special.betaln(a + 1.0, x + b) - special.betaln(a, b)
    if base in ("zeta_prime", "kmix_prime", "gw2_prime"):
        return _prime_alternating_node(base, f, x)
    return None


def _prime_alternating_node(base: str, f: Mapping[str, float], x: np.ndarray) -> np.ndarray:
    if base == "zeta_prime":
        b = f["b"]
        log_z = math.log(riemann_zeta(b + 1.0))

        def log_term(j: np.ndarray) -> np.ndarray:
            return np.log([hurwitz_zeta(b + 1.0, jj + 2.0) for jj in j]) - log_z

    elif base == "kmix_prime":
        b, c = f["b"], f["c"]

        def log_term(j: np.ndarray) -> np.ndarray:
            return math.log(b) + special.betaln(1.0 + (j + 1.0) / c, b)

    else:
        a, b, c = f["a"], f["b"], f["c"]

        def log_term(j: np.ndarray) -> np.ndarray:
            return special.betaln(a + (j + 1.0) / c, b) - special.betaln(a, b)

    out = np.empty(len(x))
    for i, xv in enumerate(x):
        out[i] = math.log(_alternating_binomial(int(xv), log_term, 1e-14))
    return out


def _sev_node_log_pdf(node: FamilyNode, f: Mapping[str, float], y: np.ndarray) -> np.ndarray | None:
    base = node.id.value
    if base == "pareto2_a1":
        b = f["beta"]
        return math.log(b) - 2.0 * np.log(b + y)
    if base == "pareto2":
        a, b = f["alpha"], f["beta"]
        return math.log(a / b) + (a + 1.0) * (math.log(b) - np.log(b + y))
    if base in ("pareto2_a1_prime", "pareto2_prime"):
        a = f.get("alpha", 1.0)
        b = f["beta"]
        z = 2.0 * np.sqrt(b * y)
        with np.errstate(divide="ignore"):
            log_k = np.log(special.kve(abs(a - 1.0), z)) - z
            return math.log(2.0) + 0.5 * (a + 1.0) * math.log(b) - special.gammaln(a) + 0.5 * (a - 1.0) * np.log(y) + log_k
    return None


def family_log_density(family: FamilyId | str, free_params: Mapping[str, float], values: ArrayLike) -> np.ndarray:
    """Принимает узел, его свободные параметры и точки; возвращает ln f по собственной формуле узла.

    Узлы без отдельной табличной формулы вычисляются общей формулой родителя под ограничением;
    при потере точности знакочередующейся формулы используется общая ветвь (и, при нужде, оракул).
    """
    node = get_node(family)
    free = check_free(node, free_params)
    if node.kind in _FREQ_KINDS:
        x = _as_counts(values)

        def freq(u: np.ndarray) -> np.ndarray:
            try:
                own = _freq_node_log_pmf(node, free, u)
            except CancellationError:
                own = None
            if own is not None:
                return np.asarray(own, dtype=float)
            if node.limit is not None:
                law = family_mixing_law(node.id, free)
                return _oracle_log(law, 1.0, u, "limit_node")
            return MixtureModel(kind=node.kind, r=free["r"], params=restrict(node.id, free)).log_density(u)

        return _evaluate_unique(x, freq)

    y = _as_losses(values)

    def sev(u: np.ndarray) -> np.ndarray:
        own = _sev_node_log_pdf(node, free, u)
        if own is not None:
            return np.asarray(own, dtype=float)
        return MixtureModel(kind=node.kind, r=free["r"], params=restrict(node.id, free)).log_density(u)

    return _evaluate_unique(y, sev)


def pmf_pdf_by_family(
    family: FamilyId | str,
    free_params: Mapping[str, float],
    x_or_y: float,
    rel_tol: float = 1e-8,
) -> float:
    """Принимает узел, параметры и точку; возвращает значение собственной формы, сверенное с родителем.

    Расхождение с родителем под ограничением (или с оракулом для предельных узлов) даёт ConsistencyError.
    """
    node = get_node(family)
    free = check_free(node, free_params)
    own = float(np.exp(family_log_density(node.id, free, [x_or_y])[0]))
    if node.limit is not None:
        law = family_mixing_law(node.id, free)
        parent = (
            reference.quad_mixture_pmf(1.0, law, int(x_or_y))
            if law.unit_support
            else reference.quad_mixture_pdf(1.0, law, float(x_or_y))
        )
    else:
        model = MixtureModel(kind=node.kind, r=free["r"], params=restrict(node.id, free))
        parent = float(np.exp(model.log_density([x_or_y])[0]))
    if abs(own - parent) > rel_tol * max(abs(parent), 1e-300):
        logger.error(
            "family_consistency_failed",
            extra={"family": node.id.value, "at": x_or_y, "own": own, "parent": parent},
        )
        raise ConsistencyError(f"{node.id.value} closed form {own!r} disagrees with parent {parent!r} at {x_or_y}")
    return own


class FamilyModel(BaseModel):
    """Узел каталога с конкретными свободными параметрами."""

    model_config = ConfigDict(frozen=True)

    family: FamilyId
    free: dict[str, float]

    @model_validator(mode="after")
    def _check(self) -> FamilyModel:
        node = get_node(self.family)
        check_free(node, self.free)
        if node.limit is None:
            restrict(node.id, self.free)
        return self

    @property
    def node(self) -> FamilyNode:
        return get_node(self.family)

    @property
    def r(self) -> float:
        return float(self.free.get("r", 1.0))

    @property
    def data_kind(self) -> DataKind:
        return DataKind.counts if self.node.kind in _FREQ_KINDS else DataKind.losses

    def log_density(self, values: ArrayLike) -> np.ndarray:
        return family_log_density(self.family, self.free, values)

    def mixing_law(self) -> MixingLaw:
        return family_mixing_law(self.family, self.free)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_mixture(self, n, rng)

    def describe(self) -> dict[str, Any]:
        return {"family": self.family.value, "params": dict(self.free), "mixing": self.mixing_law().label}


# --- выборка ---------------------------------------------------------------------


def tabulate_mixing_cdf(law: MixingLaw, grid_n: int | None = None, rounds: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Принимает закон и размер сетки; возвращает (узлы z, значения CDF) на чебышёвской сетке с уточнением.

    Узлы, на интервалы между которыми приходится больше 4/N массы, дробятся пополам.
    """
    n = grid_n or get_settings().sampler_grid
    z_range = reference.FREQ_Z_RANGE if law.unit_support else reference.SEV_Z_RANGE
    z_lo, z_hi, _, peak = reference.scan_window(law.log_pdf_z, *z_range)
    mid, half = 0.5 * (z_lo + z_hi), 0.5 * (z_hi - z_lo)
    z = mid - half * np.cos(np.pi * np.arange(n) / (n - 1))

    def masses(z: np.ndarray) -> tuple[np.ndarray, float]:
        with np.errstate(all="ignore"):
            h = np.exp(law.log_pdf_z(z) - peak)
        h = np.where(np.isfinite(h), h, 0.0)
        pieces = 0.5 * (h[1:] + h[:-1]) * np.diff(z)
        total = float(pieces.sum())
        if not math.isfinite(total) or total <= 0:
            raise HetmixError(f"mixing tabulation failed for {law.label}")
        return pieces, total

    pieces, total = masses(z)
    for _ in range(rounds):
        heavy = np.flatnonzero(pieces > 4.0 * total / n)
        if len(heavy) == 0:
            break
        z = np.sort(np.concatenate([z, 0.5 * (z[heavy] + z[heavy + 1])]))
        pieces, total = masses(z)
    cdf = np.concatenate([[0.0], np.cumsum(pieces)]) / total
    return z, cdf


def sample_mixing(law: MixingLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """Принимает закон, объём и поток; возвращает n значений z (логит q или ln θ) обратным преобразованием CDF."""
    z, cdf = tabulate_mixing_cdf(law)
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    inverse = PchipInterpolator(cdf[keep], z[keep])
    return np.asarray(inverse(rng.random(n)), dtype=float)


def sample_mixture(m: MixtureModel | FamilyModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Принимает модель, n и поток; возвращает выборку: сначала масштаб из закона, затем ядро."""
    if n <= 0:
        raise DomainError(f"n must be positive, got {n}")
    law = m.mixing_law()
    z = sample_mixing(law, n, rng)
    with np.errstate(over="ignore"):
        theta = np.exp(z)
    if law.unit_support:
        # θ = q/(1−q) = e^z: NB(r, q) как Poisson(Gamma(r, θ))
        return sample_nb_theta(m.r, theta, rng).astype(np.int64)
    return rng.gamma(m.r, theta)
