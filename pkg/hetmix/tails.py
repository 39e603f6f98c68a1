from __future__ import annotations

import logging
import math
from collections.abc import Mapping

import numpy as np
from scipy import special

from hetmix import reference
from hetmix.errors import DomainError, RangeError
from hetmix.mixing import (
    FamilyId,
    FrequencyLaw,
    HGSBLaw,
    HGSGLaw,
    MixingLaw,
    ZetaLaw,
    family_mixing_law,
    get_node,
    mixing_law,
    restrict,
)
from hetmix.mixtures import FamilyModel, MixtureModel
from hetmix.models import FreqMixParams, HillEstimate, MixingSide, SevMixParams, TailMethod, TailVerdict
from hetmix.specfun import STIRLING_CAP, stirling2

logger = logging.getLogger(__name__)

_LN2 = math.log(2.0)
LIMIT_KS = np.arange(10, 41, dtype=float)
# Допуск согласия трёх последних экстраполяций и привязки к целому порядку.
_AGREE_TOL = 1e-2
_SNAP_TOL = 1e-6
HILL_MIN_SAMPLES = 100

FreqTarget = FamilyId | str | FreqMixParams | MixingLaw
SevTarget = FamilyId | str | SevMixParams | MixingLaw


def nb_raw_moment(r: float, q: float, kappa: int) -> float:
    """Принимает r > 0, q ∈ (0,1) и κ ≥ 1; возвращает Σ_i S(κ,i)·Γ(r+i)/Γ(r)·θ^i, θ = q/(1−q)."""
    if not r > 0 or not 0 < q < 1:
        raise DomainError(f"need r > 0 and 0 < q < 1, got r={r}, q={q}")
    if kappa < 1 or kappa > STIRLING_CAP:
        raise RangeError(f"moment order must lie in [1, {STIRLING_CAP}], got {kappa}")
    log_theta = math.log(q) - math.log1p(-q)
    logs = [
        math.log(stirling2(kappa, i)) + special.gammaln(r + i) - special.gammaln(r) + i * log_theta
        for i in range(1, kappa + 1)
    ]
    total = float(special.logsumexp(logs))
    if total > 709.0:
        raise RangeError(f"E[X^{kappa}] overflows for r={r}, q={q}")
    return math.exp(total)


def _log_nb_moment_z(r: float, kappa: int, z: np.ndarray) -> np.ndarray:
    """ln E[X^κ | θ = e^z] по формуле со Стирлингом, векторно по z."""
    i = np.arange(1, kappa + 1, dtype=float)
    log_s = np.array([math.log(stirling2(kappa, int(k))) for k in i])
    log_terms = (log_s + special.gammaln(r + i) - special.gammaln(r))[None, :] + i[None, :] * np.asarray(z)[:, None]
    return np.asarray(special.logsumexp(log_terms, axis=1))


# --- аналитические порядки ---------------------------------------------------------


def _freq_order(law: MixingLaw) -> float | None:
    """Порядок ρ: E[X^κ] = ∞ ⇔ κ ≥ ρ; ln g ~ (ρ−1)·ln(1−q) при q↑1."""
    if isinstance(law, ZetaLaw):
        return 1.0 if law.complementary else law.b
    if isinstance(law, HGSBLaw):
        p = law.params
        return p.c * p.a if law.complementary else p.b
    return None


def _sev_order(law: MixingLaw) -> float | None:
    if isinstance(law, HGSGLaw):
        p = law.params
        return p.gamma * p.alpha if law.inverse else math.inf
    return None


def _verdict(order: float, method: TailMethod, interval: tuple[float, float] | None = None) -> TailVerdict:
    if math.isinf(order):
        return TailVerdict(heavy=False, method=method)
    nearest = round(order)
    if abs(order - nearest) < _SNAP_TOL:
        order = float(nearest)
    first = max(1, math.ceil(order))
    warning = None
    if order == float(first):
        warning = f"power order {order:g} sits on an integer: E[X^{first}] diverges only logarithmically"
    return TailVerdict(
        heavy=True,
        power_order=order,
        first_infinite_moment=first,
        method=method,
        warning=warning,
        interval=interval,
    )


# --- численный предел ----------------------------------------------------------------


def richardson_limit(ks: np.ndarray, values: np.ndarray) -> tuple[float | None, tuple[float, float]]:
    """Принимает сетку k и последовательность L_k ≈ A + B/k; возвращает (A или None, интервал).

    None, если последовательность расходится или три последние экстраполяции не согласуются.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        return None, (-math.inf, math.inf)
    diffs = np.abs(np.diff(values))
    if abs(values[-1]) > 1e3 or (diffs[-1] > 1e-3 and diffs[-1] >= diffs[-2]):
        return None, (-math.inf, math.inf)
    rich = (ks[1:] * values[1:] - ks[:-1] * values[:-1]) / (ks[1:] - ks[:-1])
    last = rich[-3:]
    lo, hi = float(np.min(last)), float(np.max(last))
    interval = (min(lo, float(values[-1])), max(hi, float(values[-1])))
    if hi - lo > _AGREE_TOL * max(1.0, abs(float(last[-1]))):
        return None, interval
    return float(last[-1]), interval


def _freq_limit_sequence(law: FrequencyLaw) -> np.ndarray:
    log1m_q = -LIMIT_KS * _LN2
    log_q = np.log1p(-np.exp(log1m_q))
    return np.asarray(law.log_pdf_parts(log_q, log1m_q)) / log1m_q


def _sev_limit_sequence(law: MixingLaw) -> np.ndarray:
    z = LIMIT_KS * _LN2
    with np.errstate(over="ignore", invalid="ignore"):
        return (np.asarray(law.log_pdf_z(z)) - z) / z


def _numeric_verdict(seq: np.ndarray, shift: float, sign: float) -> TailVerdict:
    limit, interval = richardson_limit(LIMIT_KS, seq)
    if limit is None:
        if math.isinf(interval[0]):
            return TailVerdict(heavy=False, method=TailMethod.numeric_limit)
        lo, hi = sorted((sign * interval[0] + shift, sign * interval[1] + shift))
        logger.warning("tail_limit_unsettled", extra={"interval": [lo, hi]})
        verdict = _verdict(0.5 * (lo + hi), TailMethod.numeric_limit, (lo, hi))
        return verdict.model_copy(update={"warning": "limit extrapolation did not settle; order is approximate"})
    return _verdict(sign * limit + shift, TailMethod.numeric_limit)


def _freq_target(target: FreqTarget, side: MixingSide, free_params: Mapping[str, float] | None) -> MixingLaw:
    if isinstance(target, MixingLaw):
        law = target
    elif isinstance(target, FreqMixParams):
        law = mixing_law(side, target)
    else:
        node = get_node(target)
        if node.side not in (MixingSide.hgsb, MixingSide.chgsb):
            raise DomainError(f"{node.id.value} is a severity node")
        if free_params is None:
            raise DomainError(f"{node.id.value} needs its free parameters")
        law = family_mixing_law(node.id, free_params)
    if not law.unit_support:
        raise DomainError(f"{law.label} is not a frequency mixing law")
    return law


def _sev_target(target: SevTarget, side: MixingSide, free_params: Mapping[str, float] | None) -> MixingLaw:
    if isinstance(target, MixingLaw):
        law = target
    elif isinstance(target, SevMixParams):
        law = mixing_law(side, target)
    else:
        node = get_node(target)
        if node.side not in (MixingSide.hgsg, MixingSide.ihgsg):
            raise DomainError(f"{node.id.value} is a frequency node")
        if free_params is None:
            raise DomainError(f"{node.id.value} needs its free parameters")
        law = mixing_law(node.side, restrict(node.id, free_params))
    if law.unit_support:
        raise DomainError(f"{law.label} is not a severity mixing law")
    return law


def classify_freq_mixing(
    target: FreqTarget,
    side: MixingSide = MixingSide.hgsb,
    free_params: Mapping[str, float] | None = None,
    method: TailMethod = TailMethod.analytic,
) -> TailVerdict:
    """Принимает узел (со свободными параметрами), параметры ΣB-закона со стороной или сам закон; возвращает вердикт.

    Численная ветвь оценивает lim ln g(q)/ln(1−q) на q = 1 − 2^{−k}, k = 10..40; порядок = предел + 1.
    """
    law = _freq_target(target, side, free_params)
    order = _freq_order(law)
    if method is TailMethod.analytic and order is not None:
        return _verdict(order, TailMethod.analytic)
    assert isinstance(law, FrequencyLaw)
    return _numeric_verdict(_freq_limit_sequence(law), shift=1.0, sign=1.0)


def classify_sev_mixing(
    target: SevTarget,
    side: MixingSide = MixingSide.ihgsg,
    free_params: Mapping[str, float] | None = None,
    method: TailMethod = TailMethod.analytic,
) -> TailVerdict:
    """Принимает узел, параметры ΣΓ-закона со стороной или закон; возвращает вердикт по пределу при θ→∞.

    λ = −lim ln g(θ)/ln θ на θ = 2^k; порядок = λ − 1, расходимость предела означает лёгкий хвост.
    """
    law = _sev_target(target, side, free_params)
    order = _sev_order(law)
    if method is TailMethod.analytic and order is not None:
        return _verdict(order, TailMethod.analytic)
    return _numeric_verdict(_sev_limit_sequence(law), shift=-1.0, sign=-1.0)


def classify_model(model: MixtureModel | FamilyModel, method: TailMethod = TailMethod.analytic) -> TailVerdict:
    law = model.mixing_law()
    if law.unit_support:
        return classify_freq_mixing(law, method=method)
    return classify_sev_mixing(law, method=method)


def empirical_tail_index(samples: np.ndarray | list[float], k_fraction: float = 0.05) -> HillEstimate:
    """Принимает выборку и долю верхних порядковых статистик; возвращает оценку Хилла индекса хвоста."""
    x = np.sort(np.asarray(samples, dtype=float))[::-1]
    n = x.size
    if n < HILL_MIN_SAMPLES:
        raise DomainError(f"Hill estimator needs at least {HILL_MIN_SAMPLES} samples, got {n}")
    if not 0 < k_fraction < 1:
        raise DomainError(f"k_fraction must lie in (0, 1), got {k_fraction}")
    k = max(2, int(k_fraction * n))
    threshold = x[k]
    if not threshold > 0:
        raise DomainError("Hill estimator is degenerate: the threshold order statistic is not positive")
    logs = np.log(x[:k] / threshold)
    mean = float(logs.mean())
    if mean <= 0:
        raise DomainError("Hill estimator is degenerate: all top values are equal")
    return HillEstimate(tail_index=1.0 / mean, k=k, n=n, k_fraction=k_fraction)


def mixture_moment(model: MixtureModel | FamilyModel, kappa: float) -> float:
    """Принимает модель и порядок κ; возвращает E[X^κ] или E[Y^κ] (inf при κ ≥ порядка хвоста)."""
    law = model.mixing_law()
    verdict = classify_model(model)
    if verdict.heavy and verdict.power_order is not None and kappa >= verdict.power_order:
        return math.inf
    r = model.r
    if law.unit_support:
        if kappa != int(kappa) or kappa < 1:
            raise DomainError(f"frequency moments are defined here for integer κ ≥ 1, got {kappa}")
        k = int(kappa)

        def log_h(z: np.ndarray) -> np.ndarray:
            return _log_nb_moment_z(r, k, z) + law.log_pdf_z(z)

        return reference.integrate_log(log_h, reference.FREQ_Z_RANGE)[0]

    if not r + kappa > 0:
        raise DomainError(f"E[Y^κ] requires r + κ > 0, got κ={kappa}")
    log_ratio = float(special.gammaln(r + kappa) - special.gammaln(r))

    def log_h_sev(z: np.ndarray) -> np.ndarray:
        return log_ratio + kappa * z + law.log_pdf_z(z)

    return reference.integrate_log(log_h_sev, reference.SEV_Z_RANGE)[0]


def truncated_moment(model: MixtureModel | FamilyModel, kappa: int, x_max: int) -> float:
    """Принимает частотную модель, κ и X*; возвращает Σ_{x ≤ X*} x^κ f(x) (для проверки расходимости)."""
    if not model.mixing_law().unit_support:
        raise DomainError("truncated_moment is defined for count models")
    return reference.brute_pmf_sum(model.log_density, x_max, power=kappa)
