from __future__ import annotations

import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import special

from hetmix.errors import DomainError

logger = logging.getLogger(__name__)

# Верхний предел интенсивности для rng.poisson (int64).
_POISSON_LAM_MAX = 1e18


class NBKernel(BaseModel):
    model_config = ConfigDict(frozen=True)

    r: float = Field(gt=0, allow_inf_nan=False)
    q: float = Field(gt=0, lt=1)

    @property
    def theta(self) -> float:
        return self.q / (1.0 - self.q)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return log_nb(self.r, math.log(self.q), math.log1p(-self.q), x)


class GammaKernel(BaseModel):
    model_config = ConfigDict(frozen=True)

    r: float = Field(gt=0, allow_inf_nan=False)
    theta: float = Field(gt=0, allow_inf_nan=False)

    def log_density(self, y: np.ndarray) -> np.ndarray:
        return log_gamma_density(self.r, math.log(self.theta), y)


class PoissonKernel(BaseModel):
    model_config = ConfigDict(frozen=True)

    lam: float = Field(gt=0, allow_inf_nan=False)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x * math.log(self.lam) - self.lam - special.gammaln(x + 1.0)


def geometric(q: float) -> NBKernel:
    return NBKernel(r=1.0, q=q)


def exponential(theta: float) -> GammaKernel:
    return GammaKernel(r=1.0, theta=theta)


def log_nb(r: float, log_q: np.ndarray | float, log1m_q: np.ndarray | float, x: np.ndarray | float) -> np.ndarray:
    """Принимает r, ln q, ln(1−q) и x (массивы согласуются по broadcast); возвращает ln f_NB(x).

    q передаётся парой логарифмов: у границы q→1 сама q в float неотличима от 1.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        tail = np.where(x > 0, x * log_q, 0.0)
    return special.gammaln(r + x) - special.gammaln(r) - special.gammaln(x + 1.0) + r * log1m_q + tail


def log_gamma_density(r: float, log_theta: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
    """Принимает r, ln θ и y > 0; возвращает ln f_Γ(y) = (r−1)ln y − y/θ − ln Γ(r) − r ln θ."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return (r - 1.0) * np.log(y) - y * np.exp(-np.asarray(log_theta)) - special.gammaln(r) - r * log_theta


def nb_log_pmf(k: NBKernel, x: int) -> float:
    """Принимает NBKernel и x ≥ 0; возвращает ln[Γ(r+x)/(Γ(r)Γ(x+1))·(1−q)^r·q^x]."""
    if x < 0 or int(x) != x:
        raise DomainError(f"x must be a nonnegative integer, got {x}")
    return float(k.log_density(np.asarray(float(x))))


def gamma_log_pdf(k: GammaKernel, y: float) -> float:
    """Принимает GammaKernel и y ≥ 0; возвращает ln f_Γ(y). В y = 0 допускается только r ≥ 1 (предел плотности)."""
    if y < 0 or math.isnan(y):
        raise DomainError(f"y must be nonnegative, got {y}")
    if y == 0.0:
        if k.r == 1.0:
            return -math.log(k.theta)
        if k.r > 1.0:
            return -math.inf
        raise DomainError(f"Gamma density with r={k.r} < 1 is unbounded at y = 0")
    return float(k.log_density(np.asarray(y)))


def poisson_log_pmf(k: PoissonKernel, x: int) -> float:
    if x < 0 or int(x) != x:
        raise DomainError(f"x must be a nonnegative integer, got {x}")
    return float(k.log_density(np.asarray(float(x))))


def nb_cdf(k: NBKernel, x: int) -> float:
    if x < 0:
        return 0.0
    return float(special.betainc(k.r, math.floor(x) + 1.0, 1.0 - k.q))


def gamma_cdf(k: GammaKernel, y: float) -> float:
    if y <= 0:
        return 0.0
    return float(special.gammainc(k.r, y / k.theta))


def gamma_raw_moment(r: float, theta: float, kappa: float) -> float:
    """Принимает форму r, масштаб θ и порядок κ > −r; возвращает Γ(r+κ)θ^κ/Γ(r)."""
    if not r + kappa > 0:
        raise DomainError(f"gamma moment of order {kappa} requires r + κ > 0")
    return math.exp(special.gammaln(r + kappa) - special.gammaln(r) + kappa * math.log(theta))


def dual_argument(t: float) -> float:
    """Принимает аргумент t преобразования NB; возвращает u = 1 − e^{−t} для двойственного Gamma."""
    return -math.expm1(-t)


def nb_to_gamma(k: NBKernel) -> GammaKernel:
    return GammaKernel(r=k.r, theta=k.theta)


def laplace_transform(kernel: NBKernel | GammaKernel, t_or_u: float) -> float:
    """Принимает ядро и t (NB) или u (Gamma) ≥ 0; возвращает ((1−q)/(1−q e^{−t}))^r или (1+θu)^{−r}."""
    if t_or_u < 0:
        raise DomainError(f"transform argument must be nonnegative, got {t_or_u}")
    if isinstance(kernel, NBKernel):
        log_value = kernel.r * (math.log1p(-kernel.q) - math.log1p(-kernel.q * math.exp(-t_or_u)))
        return math.exp(log_value)
    return math.exp(-kernel.r * math.log1p(kernel.theta * t_or_u))


def _poisson_draws(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if np.any(lam > _POISSON_LAM_MAX):
        logger.warning("poisson_rate_clipped", extra={"count": int(np.sum(lam > _POISSON_LAM_MAX))})
        lam = np.minimum(lam, _POISSON_LAM_MAX)
    return rng.poisson(lam)


def sample_nb_theta(r: float, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Принимает форму r и массив θ = q/(1−q); возвращает NB-выборку через Gamma–Poisson."""
    return _poisson_draws(rng.gamma(r, theta), rng)


def sample(
    kernel: NBKernel | GammaKernel | PoissonKernel,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Принимает ядро, поток и размер; возвращает выборку (целые для NB/Poisson, вещественные для Gamma)."""
    shape = () if size is None else (size,)
    if isinstance(kernel, NBKernel):
        return sample_nb_theta(kernel.r, np.full(shape, kernel.theta), rng)
    if isinstance(kernel, GammaKernel):
        return rng.gamma(kernel.r, kernel.theta, size=shape)
    return _poisson_draws(np.full(shape, kernel.lam), rng)
