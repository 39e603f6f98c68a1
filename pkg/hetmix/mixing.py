from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from pydantic import ValidationError
from scipy import special

from hetmix.errors import DomainError, SeriesError
from hetmix.models import FreqMixParams, MixingSide, MixtureKind, SevMixParams
from hetmix.specfun import riemann_zeta, sigma_beta, sigma_gamma

logger = logging.getLogger(__name__)

_LN2 = math.log(2.0)
# Шаг пятиточечного шаблона: относительный для t, абсолютный для z.
STENCIL_STEP = 1e-3


def _log1m_exp(x: np.ndarray) -> np.ndarray:
    """ln(1 − e^x) для x ≤ 0 без потери точности у обоих концов."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -_LN2, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def five_point(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: np.ndarray | float) -> np.ndarray:
    """Принимает функцию, точки и шаг; возвращает производную пятиточечным шаблоном."""
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)


def _pow_ratio(log_t: np.ndarray, e: float) -> np.ndarray:
    """t^e/(1 − t^e) по ln t."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return -np.exp(e * log_t) / np.expm1(e * log_t)


def freq_params(**values: float) -> FreqMixParams:
    try:
        return FreqMixParams(**values)
    except ValidationError as exc:
        raise DomainError(_first_error(exc)) from exc


def sev_params(**values: float) -> SevMixParams:
    try:
        return SevMixParams(**values)
    except ValidationError as exc:
        raise DomainError(_first_error(exc)) from exc


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    where = ".".join(str(p) for p in err.get("loc", ()))
    msg = str(err.get("msg", "invalid parameters")).removeprefix("Value error, ")
    return f"{where}: {msg}" if where else msg


@lru_cache(maxsize=4096)
def log_sigma_beta_norm(xi: float, a: float, b: float) -> float:
    """Принимает (ξ, a, b); возвращает ln Σ_B(ξ, a, b) с кэшем по параметрам."""
    if xi == 1.0:
        return float(special.betaln(a, b))
    res = sigma_beta(xi, a, b)
    if not res.converged:
        raise SeriesError(f"Σ_B({xi}, {a}, {b}) did not converge", res)
    return math.log(res.value)


@lru_cache(maxsize=4096)
def log_sigma_gamma_norm(alpha: float, beta: float, gamma: float, inv_delta: float) -> float:
    """Принимает (α, β, γ, 1/δ); возвращает ln Σ_Γ(1/γ, α, β^{-1/γ}/δ)."""
    if inv_delta == 0.0:
        return float(special.gammaln(alpha))
    if gamma == 1.0:
        return float(special.gammaln(alpha)) - alpha * math.log1p(-inv_delta / beta)
    res = sigma_gamma(1.0 / gamma, alpha, beta ** (-1.0 / gamma) * inv_delta)
    if not res.converged or res.value <= 0:
        raise SeriesError(f"Σ_Γ normalizer for α={alpha}, β={beta}, γ={gamma} did not converge", res)
    return math.log(res.value)


class MixingLaw(ABC):
    """Плотность смешивающего закона на (0,1) или (0,∞).

    Вычисления идут в логарифмах; z-координата (логит q или ln θ) используется сеточными алгоритмами.
    """

    label: str
    unit_support: bool
    side: MixingSide | None = None

    @abstractmethod
    def log_pdf(self, t: ArrayLike) -> np.ndarray: ...

    @abstractmethod
    def log_pdf_z(self, z: ArrayLike) -> np.ndarray: ...

    def pdf(self, t: ArrayLike) -> np.ndarray:
        return np.exp(self.log_pdf(t))

    def to_natural(self, z: ArrayLike) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return special.expit(z) if self.unit_support else np.exp(z)

    def dlog_pdf(self, t: ArrayLike) -> np.ndarray:
        """Принимает t; возвращает d ln g/dt пятиточечным шаблоном с шагом STENCIL_STEP от масштаба носителя."""
        t = np.asarray(t, dtype=float)
        scale = np.minimum(t, 1.0 - t) if self.unit_support else t
        return five_point(self.log_pdf, t, STENCIL_STEP * scale)

    def elasticity(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return t * self.dlog_pdf(t)

    def describe(self) -> dict[str, Any]:
        return {"label": self.label, "side": self.side.value if self.side else None}


class FrequencyLaw(MixingLaw):
    unit_support = True
    complementary: bool = False

    @abstractmethod
    def _core(self, log_t: np.ndarray, log1m_t: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _core_dlog(self, t: np.ndarray, log_t: np.ndarray) -> np.ndarray: ...

    def log_pdf_parts(self, log_q: ArrayLike, log1m_q: ArrayLike) -> np.ndarray:
        """Принимает ln q и ln(1−q); возвращает ln g(q) без вычисления самой q."""
        lq = np.asarray(log_q, dtype=float)
        l1q = np.asarray(log1m_q, dtype=float)
        if self.complementary:
            return self._core(l1q, lq)
        return self._core(lq, l1q)

    def log_pdf(self, t: ArrayLike) -> np.ndarray:
        q = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self.log_pdf_parts(np.log(q), np.log1p(-q))

    def log_pdf_z(self, z: ArrayLike) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        log_q = -np.logaddexp(0.0, -z)
        log1m_q = -np.logaddexp(0.0, z)
        return self.log_pdf_parts(log_q, log1m_q) + log_q + log1m_q

    def dlog_pdf(self, t: ArrayLike) -> np.ndarray:
        q = np.asarray(t, dtype=float)
        if self.complementary:
            p = 1.0 - q
            return -self._core_dlog(p, np.log1p(-q))
        return self._core_dlog(q, np.log(q))


class HGSBLaw(FrequencyLaw):
    """HGΣB(a,b,c,d): c/Σ_B(d/c,a,b)·q^{ca−1}(1−q^c)^b/(1−q^d); complementary: то же в 1−q (CHGΣB)."""

    def __init__(self, params: FreqMixParams, complementary: bool = False) -> None:
        self.params = params
        self.complementary = complementary
        self.side = MixingSide.chgsb if complementary else MixingSide.hgsb
        p = params
        self.label = f"{'C' if complementary else ''}HGΣB(a={p.a:g}, b={p.b:g}, c={p.c:g}, d={p.d:g})"
        self.log_norm = math.log(p.c) - log_sigma_beta_norm(p.d / p.c, p.a, p.b)

    def _core(self, log_t: np.ndarray, log1m_t: np.ndarray) -> np.ndarray:
        p = self.params
        with np.errstate(invalid="ignore"):
            return (
                self.log_norm
                + (p.c * p.a - 1.0) * log_t
                + p.b * _log1m_exp(p.c * log_t)
                - _log1m_exp(p.d * log_t)
            )

    def _core_dlog(self, t: np.ndarray, log_t: np.ndarray) -> np.ndarray:
        p = self.params
        return ((p.c * p.a - 1.0) - p.b * p.c * _pow_ratio(log_t, p.c) + p.d * _pow_ratio(log_t, p.d)) / t


class ZetaLaw(FrequencyLaw):
    """Предел c→0 семейства ΣB: (−ln q)^b/(ζ(b+1)Γ(b+1)(1−q))."""

    def __init__(self, b: float, complementary: bool = False) -> None:
        if not b > 0:
            raise DomainError(f"b must be positive, got {b}")
        self.b = b
        self.complementary = complementary
        self.side = MixingSide.chgsb if complementary else MixingSide.hgsb
        self.label = f"{'Compl. ' if complementary else ''}ΣB(b={b:g}, c→0)"
        self.log_norm = -math.log(riemann_zeta(b + 1.0)) - float(special.gammaln(b + 1.0))

    def _core(self, log_t: np.ndarray, log1m_t: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.log_norm + self.b * np.log(-log_t) - log1m_t

    def _core_dlog(self, t: np.ndarray, log_t: np.ndarray) -> np.ndarray:
        return self.b / (t * log_t) + 1.0 / (1.0 - t)


class HGSGLaw(MixingLaw):
    """HGΣΓ(α,β,γ,δ): γβ^α/Σ_Γ(1/γ,α,β^{-1/γ}/δ)·θ^{γα−1}e^{−βθ^γ}e^{θ/δ}; inverse: IHGΣΓ (θ→1/θ с якобианом)."""

    unit_support = False

    def __init__(self, params: SevMixParams, inverse: bool = False) -> None:
        self.params = params
        self.inverse = inverse
        self.side = MixingSide.ihgsg if inverse else MixingSide.hgsg
        p = params
        delta = "∞" if math.isinf(p.delta) else f"{p.delta:g}"
        self.label = f"{'I' if inverse else ''}HGΣΓ(α={p.alpha:g}, β={p.beta:g}, γ={p.gamma:g}, δ={delta})"
        self.log_norm = (
            math.log(p.gamma)
            + p.alpha * math.log(p.beta)
            - log_sigma_gamma_norm(p.alpha, p.beta, p.gamma, p.inv_delta)
        )

    def _core(self, log_theta: np.ndarray) -> np.ndarray:
        p = self.params
        with np.errstate(over="ignore", invalid="ignore"):
            return (
                self.log_norm
                + (p.gamma * p.alpha - 1.0) * log_theta
                - p.beta * np.exp(p.gamma * log_theta)
                + p.inv_delta * np.exp(log_theta)
            )

    def _core_elasticity(self, log_theta: np.ndarray) -> np.ndarray:
        p = self.params
        with np.errstate(over="ignore"):
            return (p.gamma * p.alpha - 1.0) - p.beta * p.gamma * np.exp(p.gamma * log_theta) + p.inv_delta * np.exp(log_theta)

    def log_pdf_z(self, z: ArrayLike) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.inverse:
            return self._core(-z) - z
        return self._core(z) + z

    def log_pdf(self, t: ArrayLike) -> np.ndarray:
        with np.errstate(divide="ignore"):
            lt = np.log(np.asarray(t, dtype=float))
        if self.inverse:
            return self._core(-lt) - 2.0 * lt
        return self._core(lt)

    def elasticity_z(self, z: ArrayLike) -> np.ndarray:
        """Принимает z = ln θ; возвращает d ln g/d ln θ без перехода к самой θ."""
        z = np.asarray(z, dtype=float)
        if self.inverse:
            return -self._core_elasticity(-z) - 2.0
        return self._core_elasticity(z)

    def elasticity(self, t: ArrayLike) -> np.ndarray:
        return self.elasticity_z(np.log(np.asarray(t, dtype=float)))

    def dlog_pdf(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.elasticity(t) / t


def mixing_law(side: MixingSide, params: FreqMixParams | SevMixParams) -> MixingLaw:
    """Принимает сторону (hgsb/chgsb/hgsg/ihgsg) и параметры; возвращает объект закона."""
    if side in (MixingSide.hgsb, MixingSide.chgsb):
        if not isinstance(params, FreqMixParams):
            raise DomainError(f"{side.value} needs (a, b, c, d) parameters")
        return HGSBLaw(params, complementary=side is MixingSide.chgsb)
    if not isinstance(params, SevMixParams):
        raise DomainError(f"{side.value} needs (alpha, beta, gamma, delta) parameters")
    return HGSGLaw(params, inverse=side is MixingSide.ihgsg)


def hgsb_log_pdf(p: FreqMixParams, q: ArrayLike) -> np.ndarray:
    return HGSBLaw(p).log_pdf(q)


def chgsb_log_pdf(p: FreqMixParams, q: ArrayLike) -> np.ndarray:
    return HGSBLaw(p, complementary=True).log_pdf(q)


def hgsg_log_pdf(p: SevMixParams, theta: ArrayLike) -> np.ndarray:
    return HGSGLaw(p).log_pdf(theta)


def ihgsg_log_pdf(p: SevMixParams, theta: ArrayLike) -> np.ndarray:
    return HGSGLaw(p, inverse=True).log_pdf(theta)


# --- каталог семейств -------------------------------------------------------


class FamilyId(str, Enum):
    zeta = "zeta"
    yule = "yule"
    quadratic = "quadratic"
    zy = "zy"
    waring = "waring"
    kmix = "kmix"
    gzy = "gzy"
    gw2 = "gw2"
    hgzy = "hgzy"
    gen_waring = "gen_waring"

    zeta_prime = "zeta_prime"
    yule_prime = "yule_prime"
    quadratic_prime = "quadratic_prime"
    zy_prime = "zy_prime"
    waring_prime = "waring_prime"
    kmix_prime = "kmix_prime"
    gzy_prime = "gzy_prime"
    gw2_prime = "gw2_prime"
    hgzy_prime = "hgzy_prime"

    pareto2_a1 = "pareto2_a1"
    weimix_b1 = "weimix_b1"
    ss = "ss"
    pareto2 = "pareto2"
    weimix = "weimix"
    gss = "gss"
    gp2 = "gp2"
    hgss = "hgss"

    pareto2_a1_prime = "pareto2_a1_prime"
    weimix_b1_prime = "weimix_b1_prime"
    ss_prime = "ss_prime"
    pareto2_prime = "pareto2_prime"
    weimix_prime = "weimix_prime"
    gss_prime = "gss_prime"
    gp2_prime = "gp2_prime"
    hgss_prime = "hgss_prime"


_SIDE_OF_KIND = {
    MixtureKind.hgzy: MixingSide.hgsb,
    MixtureKind.hgzy_prime: MixingSide.chgsb,
    MixtureKind.hgss: MixingSide.ihgsg,
    MixtureKind.hgss_prime: MixingSide.hgsg,
}

FREQ_NAMES = ("a", "b", "c", "d")
SEV_NAMES = ("alpha", "beta", "gamma", "delta")


@dataclass(frozen=True)
class FamilyNode:
    id: FamilyId
    kind: MixtureKind
    label: str
    mixing_label: str
    free: tuple[str, ...]
    fixed: Mapping[str, str] = field(default_factory=dict)
    parent: FamilyId | None = None
    limit: str | None = None

    @property
    def side(self) -> MixingSide:
        return _SIDE_OF_KIND[self.kind]

    @property
    def has_r(self) -> bool:
        return "r" in self.free

    @property
    def mixing_free(self) -> tuple[str, ...]:
        return tuple(n for n in self.free if n != "r")


def _node(
    fid: FamilyId,
    kind: MixtureKind,
    label: str,
    mixing_label: str,
    free: tuple[str, ...],
    fixed: Mapping[str, str] | None = None,
    parent: FamilyId | None = None,
    limit: str | None = None,
) -> FamilyNode:
    return FamilyNode(fid, kind, label, mixing_label, free, dict(fixed or {}), parent, limit)


def _freq_nodes(prime: bool) -> list[FamilyNode]:
    kind = MixtureKind.hgzy_prime if prime else MixtureKind.hgzy
    sfx = " Prime" if prime else ""
    cmp_ = "Compl. " if prime else ""

    def fid(name: str) -> FamilyId:
        return FamilyId(f"{name}_prime" if prime else name)

    return [
        _node(fid("zeta"), kind, f"Zeta{sfx}(b)", f"{cmp_}ΣB(b, c→0)", ("b",), parent=fid("zy"), limit="c→0 with a=1/c, d=1"),
        _node(fid("yule"), kind, f"Yule{sfx}(b)", f"{cmp_}Beta(a=1, b)", ("b",), {"a": "1", "c": "1", "d": "1"}, fid("waring")),
        _node(fid("quadratic"), kind, f"Quadratic{sfx}(c)", f"{cmp_}Kumaraswamy(b=1, c)", ("c",), {"a": "1", "b": "1", "d": "c"}, fid("kmix")),
        _node(fid("zy"), kind, f"ZY{sfx}(b, c)", f"{cmp_}ΣB(b, c)", ("b", "c"), {"a": "1/c", "d": "1"}, fid("gzy")),
        _node(fid("waring"), kind, f"Waring{sfx}(a, b)", f"{cmp_}Beta(a, b)", ("a", "b"), {"c": "1", "d": "1"}, fid("gzy")),
        _node(fid("kmix"), kind, f"K-Mix{sfx}(b, c)", f"{cmp_}Kumaraswamy(b, c)", ("b", "c"), {"a": "1", "d": "c"}, fid("gw2")),
        _node(fid("gzy"), kind, f"Generalized ZY{sfx}(a, b, c)", f"{cmp_}GΣB(a, b, c)", ("a", "b", "c"), {"d": "1"}, fid("hgzy")),
        _node(fid("gw2"), kind, f"Generalized Waring 2{sfx}(a, b, c)", f"{cmp_}GB1(a, b, c)", ("a", "b", "c"), {"d": "c"}, fid("hgzy")),
        _node(fid("hgzy"), kind, f"Hyper-Generalized ZY{sfx}(r, a, b, c, d)", f"{cmp_}HGΣB(a, b, c, d)", ("r", "a", "b", "c", "d")),
    ]


def _sev_nodes(prime: bool) -> list[FamilyNode]:
    kind = MixtureKind.hgss_prime if prime else MixtureKind.hgss
    sfx = " Prime" if prime else ""
    inv = "" if prime else "Inverse "

    def fid(name: str) -> FamilyId:
        return FamilyId(f"{name}_prime" if prime else name)

    return [
        _node(fid("pareto2_a1"), kind, f"Pareto 2{sfx}(α=1, β)", f"{inv}Gamma(α=1, 1/β)", ("beta",), {"alpha": "1", "gamma": "1", "delta": "inf"}, fid("pareto2")),
        _node(fid("weimix_b1"), kind, f"Wei-Mix{sfx}(β=1, γ)", f"{inv}Weibull(β=1, γ)", ("gamma",), {"alpha": "1", "beta": "1", "delta": "inf"}, fid("weimix")),
        _node(fid("ss"), kind, f"ΣΣ{sfx}(β, γ)", f"{inv}ΣΓ(β, γ)", ("beta", "gamma"), {"alpha": "1/gamma", "delta": "1"}, fid("gss")),
        _node(fid("pareto2"), kind, f"Pareto 2{sfx}(α, β)", f"{inv}Gamma(α, 1/β)", ("alpha", "beta"), {"gamma": "1", "delta": "inf"}, fid("gp2")),
        _node(fid("weimix"), kind, f"Wei-Mix{sfx}(β, γ)", f"{inv}Weibull(β, γ)", ("beta", "gamma"), {"alpha": "1", "delta": "inf"}, fid("gp2")),
        _node(fid("gss"), kind, f"Generalized ΣΣ{sfx}(α, β, γ)", f"{inv}GΣΓ(α, β, γ)", ("alpha", "beta", "gamma"), {"delta": "1"}, fid("hgss")),
        _node(fid("gp2"), kind, f"Generalized Pareto 2{sfx}(α, β, γ)", f"{inv}GΓ(α, β, γ)", ("alpha", "beta", "gamma"), {"delta": "inf"}, fid("hgss")),
        _node(fid("hgss"), kind, f"Hyper-Generalized ΣΣ{sfx}(r, α, β, γ, δ)", f"{inv}HGΣΓ(α, β, γ, δ)", ("r", "alpha", "beta", "gamma", "delta")),
    ]


CATALOG: dict[FamilyId, FamilyNode] = {
    n.id: n
    for n in [
        *_freq_nodes(prime=False),
        *_freq_nodes(prime=True),
        _node(FamilyId.gen_waring, MixtureKind.hgzy, "Generalized Waring(r, a, b)", "Beta(a, b)", ("r", "a", "b"), {"c": "1", "d": "1"}, FamilyId.hgzy),
        *_sev_nodes(prime=False),
        *_sev_nodes(prime=True),
    ]
}

# (потомок, родитель, свободные параметры родителя через свободные параметры потомка)
EDGES: tuple[tuple[FamilyId, FamilyId, Mapping[str, str]], ...] = tuple(
    (FamilyId(f"{child}{sfx}"), FamilyId(f"{parent}{sfx}"), mapping)
    for sfx in ("", "_prime")
    for child, parent, mapping in (
        ("yule", "zy", {"b": "b", "c": "1"}),
        ("yule", "waring", {"a": "1", "b": "b"}),
        ("quadratic", "kmix", {"b": "1", "c": "c"}),
        ("zy", "gzy", {"a": "1/c", "b": "b", "c": "c"}),
        ("waring", "gzy", {"a": "a", "b": "b", "c": "1"}),
        ("waring", "gw2", {"a": "a", "b": "b", "c": "1"}),
        ("kmix", "gw2", {"a": "1", "b": "b", "c": "c"}),
        ("gzy", "hgzy", {"r": "1", "a": "a", "b": "b", "c": "c", "d": "1"}),
        ("gw2", "hgzy", {"r": "1", "a": "a", "b": "b", "c": "c", "d": "c"}),
        ("pareto2_a1", "pareto2", {"alpha": "1", "beta": "beta"}),
        ("pareto2_a1", "weimix", {"beta": "beta", "gamma": "1"}),
        ("weimix_b1", "weimix", {"beta": "1", "gamma": "gamma"}),
        ("ss", "gss", {"alpha": "1/gamma", "beta": "beta", "gamma": "gamma"}),
        ("pareto2", "gp2", {"alpha": "alpha", "beta": "beta", "gamma": "1"}),
        ("weimix", "gp2", {"alpha": "1", "beta": "beta", "gamma": "gamma"}),
        ("gss", "hgss", {"r": "1", "alpha": "alpha", "beta": "beta", "gamma": "gamma", "delta": "1"}),
        ("gp2", "hgss", {"r": "1", "alpha": "alpha", "beta": "beta", "gamma": "gamma", "delta": "inf"}),
    )
) + (
    (FamilyId.waring, FamilyId.gen_waring, {"r": "1", "a": "a", "b": "b"}),
    (FamilyId.gen_waring, FamilyId.hgzy, {"r": "r", "a": "a", "b": "b", "c": "1", "d": "1"}),
)

LIMIT_EDGES: tuple[tuple[FamilyId, FamilyId, str], ...] = (
    (FamilyId.zeta, FamilyId.zy, "c→0"),
    (FamilyId.zeta_prime, FamilyId.zy_prime, "c→0"),
)


def resolve(expr: str, free: Mapping[str, float]) -> float:
    """Принимает выражение ограничения ('1', 'inf', имя, '1/имя') и свободные параметры; возвращает число."""
    if expr in free:
        return float(free[expr])
    if expr.startswith("1/"):
        return 1.0 / float(free[expr[2:]])
    return float(expr)


def get_node(family: FamilyId | str) -> FamilyNode:
    try:
        return CATALOG[FamilyId(family)]
    except ValueError as exc:
        raise DomainError(f"unknown family node: {family}") from exc


def check_free(node: FamilyNode, free: Mapping[str, float]) -> dict[str, float]:
    """Принимает узел и свободные параметры; возвращает их копию с r (по умолчанию 1)."""
    names = set(free) - {"r"}
    expected = set(node.mixing_free)
    if names != expected:
        raise DomainError(f"{node.id.value} expects parameters {sorted(expected)}, got {sorted(names)}")
    r = float(free.get("r", 1.0))
    if not node.has_r and r != 1.0:
        raise DomainError(f"{node.id.value} is an r = 1 family; use the hyper-generalized node for r ≠ 1")
    out = {k: float(free[k]) for k in sorted(expected)}
    out["r"] = r
    for name, value in out.items():
        if not value > 0 or math.isnan(value):
            raise DomainError(f"{name} must be positive, got {value}")
    return out


def restrict(family: FamilyId | str, free_params: Mapping[str, float]) -> FreqMixParams | SevMixParams:
    """Принимает узел каталога и его свободные параметры; возвращает полный 4-вектор родительского закона."""
    node = get_node(family)
    free = check_free(node, free_params)
    if node.limit is not None:
        raise DomainError(f"{node.id.value} is the limit {node.limit}; it has no finite restriction")
    names = FREQ_NAMES if node.kind in (MixtureKind.hgzy, MixtureKind.hgzy_prime) else SEV_NAMES
    full = {n: resolve(node.fixed[n], free) if n in node.fixed else free[n] for n in names}
    if names is FREQ_NAMES:
        return freq_params(**full)
    return sev_params(**full)


def family_mixing_law(family: FamilyId | str, free_params: Mapping[str, float]) -> MixingLaw:
    node = get_node(family)
    free = check_free(node, free_params)
    if node.limit is not None:
        return ZetaLaw(free["b"], complementary=node.side is MixingSide.chgsb)
    return mixing_law(node.side, restrict(node.id, free))


# --- собственные формы смешивающих плотностей узлов --------------------------


def _freq_node_core(node_id: str, f: Mapping[str, float], lt: np.ndarray, l1t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        if node_id == "zeta":
            b = f["b"]
            return b * np.log(-lt) - math.log(riemann_zeta(b + 1)) - special.gammaln(b + 1) - l1t
        if node_id == "yule":
            return math.log(f["b"]) + (f["b"] - 1.0) * l1t
        if node_id == "quadratic":
            return math.log(f["c"]) + (f["c"] - 1.0) * lt
        if node_id == "zy":
            b, c = f["b"], f["c"]
            return math.log(c) - log_sigma_beta_norm(1.0 / c, 1.0 / c, b) + b * _log1m_exp(c * lt) - l1t
        if node_id in ("waring", "gen_waring"):
            a, b = f["a"], f["b"]
            return (a - 1.0) * lt + (b - 1.0) * l1t - special.betaln(a, b)
        if node_id == "kmix":
            b, c = f["b"], f["c"]
            return math.log(b * c) + (c - 1.0) * lt + (b - 1.0) * _log1m_exp(c * lt)
        if node_id == "gzy":
            a, b, c = f["a"], f["b"], f["c"]
            return math.log(c) - log_sigma_beta_norm(1.0 / c, a, b) + (c * a - 1.0) * lt + b * _log1m_exp(c * lt) - l1t
        if node_id == "gw2":
            a, b, c = f["a"], f["b"], f["c"]
            return math.log(c) - special.betaln(a, b) + (c * a - 1.0) * lt + (b - 1.0) * _log1m_exp(c * lt)
    return HGSBLaw(freq_params(**{n: f[n] for n in FREQ_NAMES}))._core(lt, l1t)


def _sev_node_direct(node_id: str, f: Mapping[str, float], lt: np.ndarray) -> np.ndarray:
    """ln g прямого (не обратного) закона узла в ln θ."""
    with np.errstate(over="ignore", invalid="ignore"):
        theta = np.exp(lt)
        if node_id == "pareto2_a1":
            return math.log(f["beta"]) - f["beta"] * theta
        if node_id == "weimix_b1":
            g = f["gamma"]
            return math.log(g) + (g - 1.0) * lt - np.exp(g * lt)
        if node_id == "ss":
            b, g = f["beta"], f["gamma"]
            return math.log(g) + math.log(b) / g - log_sigma_gamma_norm(1.0 / g, b, g, 1.0) - b * np.exp(g * lt) + theta
        if node_id == "pareto2":
            a, b = f["alpha"], f["beta"]
            return a * math.log(b) - special.gammaln(a) + (a - 1.0) * lt - b * theta
        if node_id == "weimix":
            b, g = f["beta"], f["gamma"]
            return math.log(g * b) + (g - 1.0) * lt - b * np.exp(g * lt)
        if node_id == "gss":
            a, b, g = f["alpha"], f["beta"], f["gamma"]
            return (
                math.log(g)
                + a * math.log(b)
                - log_sigma_gamma_norm(a, b, g, 1.0)
                + (g * a - 1.0) * lt
                - b * np.exp(g * lt)
                + theta
            )
        if node_id == "gp2":
            a, b, g = f["alpha"], f["beta"], f["gamma"]
            return math.log(g) + a * math.log(b) - special.gammaln(a) + (g * a - 1.0) * lt - b * np.exp(g * lt)
    return HGSGLaw(sev_params(**{n: f[n] for n in SEV_NAMES}))._core(lt)


def node_mixing_log_pdf(family: FamilyId | str, free_params: Mapping[str, float], t: ArrayLike) -> np.ndarray:
    """Принимает узел, свободные параметры и точки; возвращает ln g по собственной табличной формуле узла."""
    node = get_node(family)
    free = check_free(node, free_params)
    if node.limit is None:
        restrict(node.id, free)
    base = node.id.value.removesuffix("_prime")
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        if node.side in (MixingSide.hgsb, MixingSide.chgsb):
            lt, l1t = np.log(t), np.log1p(-t)
            if node.side is MixingSide.chgsb:
                lt, l1t = l1t, lt
            return _freq_node_core(base, free, lt, l1t)
        lt = np.log(t)
    if node.side is MixingSide.ihgsg:
        return _sev_node_direct(base, free, -lt) - 2.0 * lt
    return _sev_node_direct(base, free, lt)


def registry() -> list[dict[str, Any]]:
    """Принимает ничего; возвращает JSON-совместимый реестр узлов каталога."""
    out: list[dict[str, Any]] = []
    for node in CATALOG.values():
        out.append(
            {
                "name": node.id.value,
                "label": node.label,
                "side": node.side.value,
                "mixture": node.kind.value,
                "mixing": node.mixing_label,
                "parent": node.parent.value if node.parent else None,
                "free": list(node.free),
                "restriction": dict(node.fixed),
                "limit": node.limit,
            }
        )
    return out
