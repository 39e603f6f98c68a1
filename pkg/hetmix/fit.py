from __future__ import annotations

import logging
import math
import zlib
from collections.abc import Callable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from scipy import optimize, special
from scipy.stats import qmc

from hetmix.calibrate import calibrate, robustness_sweep, upper_tail_threshold
from hetmix.errors import DataError, DomainError, HetmixError
from hetmix.kernels import GammaKernel, NBKernel, log_gamma_density, log_nb, sample
from hetmix.mixing import CATALOG, FamilyId, FamilyNode, get_node, resolve
from hetmix.mixtures import FamilyModel
from hetmix.models import (
    DataKind,
    FitConfig,
    FitReport,
    FitResult,
    HeterogeneityReport,
    MixingSummary,
    MixtureKind,
    StepStatus,
    SweepReport,
)
from hetmix.rng import make_stream
from hetmix.settings import get_settings
from hetmix.tails import classify_model

logger = logging.getLogger(__name__)

ESTIMATOR = "maximum likelihood + AIC"
IDENTIFIABILITY_NOTE = (
    "Within one kernel shape r the mixing law is identified, but r and the mixing law trade off: "
    "every calibrated shape s reproduces the same fitted distribution. Step 1 cannot separate them; "
    "Step 3 reports whether the Step 2 features survive across s."
)
MATERIAL = "material heterogeneity"
NOT_MATERIAL = "no material heterogeneity"

# Порог массы верхнего дециля и минимальный разброс z смешивающего закона для признака неоднородности.
MATERIAL_MASS = 0.05
MIN_Z_SPREAD = 0.25

_U_CLIP = 35.0
_BOUNDARY_U = 20.0
_HESSIAN_STEP = 1e-4

KERNEL_FAMILIES: dict[str, DataKind] = {
    "geometric": DataKind.counts,
    "negbin": DataKind.counts,
    "exponential": DataKind.losses,
    "gamma": DataKind.losses,
}
_KERNEL_NAMES: dict[str, tuple[str, ...]] = {
    "geometric": ("q",),
    "negbin": ("r", "q"),
    "exponential": ("theta",),
    "gamma": ("r", "theta"),
}
_FREQ_MIXTURES = (MixtureKind.hgzy, MixtureKind.hgzy_prime)


# --- данные ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Выборка счётов или убытков с необязательными весами; хранит уникальные значения и суммы весов."""

    kind: DataKind
    values: np.ndarray
    weights: np.ndarray | None = None
    uniq: np.ndarray = field(init=False, repr=False)
    wsum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(values)):
            raise DataError("dataset contains non-finite values")
        if self.kind is DataKind.counts and (np.any(values < 0) or np.any(values != np.floor(values))):
            raise DataError("counts must be nonnegative integers")
        if self.kind is DataKind.losses and np.any(values <= 0):
            raise DataError("losses must be positive")
        if self.weights is None:
            weights = np.ones_like(values)
        else:
            weights = np.asarray(self.weights, dtype=float).ravel()
            if weights.shape != values.shape:
                raise DataError(f"got {weights.size} weights for {values.size} values")
            if np.any(weights < 0) or not np.all(np.isfinite(weights)):
                raise DataError("weights must be finite and nonnegative")
            if not weights.sum() > 0:
                raise DataError("all weights are zero")
        uniq, inverse = np.unique(values, return_inverse=True)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "uniq", uniq)
        object.__setattr__(self, "wsum", np.bincount(inverse, weights=weights, minlength=uniq.size))

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def total_weight(self) -> float:
        return float(self.wsum.sum())

    def mean(self) -> float:
        return float(np.dot(self.uniq, self.wsum) / self.total_weight)

    def median(self) -> float:
        cum = np.cumsum(self.wsum) / self.total_weight
        return float(self.uniq[np.searchsorted(cum, 0.5)])


# --- модели ядра без смешивания ------------------------------------------------------


class KernelModel(BaseModel):
    """Голое ядро (Geometric, NegBin, Exponential, Gamma), кандидат «без неоднородности»."""

    model_config = ConfigDict(frozen=True)

    name: str
    params: dict[str, float]

    @model_validator(mode="after")
    def _check(self) -> KernelModel:
        if self.name not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family: {self.name}")
        if set(self.params) != set(_KERNEL_NAMES[self.name]):
            raise ValueError(f"{self.name} expects parameters {list(_KERNEL_NAMES[self.name])}")
        self.kernel()
        return self

    @property
    def data_kind(self) -> DataKind:
        return KERNEL_FAMILIES[self.name]

    @property
    def r(self) -> float:
        return float(self.params.get("r", 1.0))

    def kernel(self) -> NBKernel | GammaKernel:
        if self.data_kind is DataKind.counts:
            return NBKernel(r=self.r, q=self.params["q"])
        return GammaKernel(r=self.r, theta=self.params["theta"])

    def log_density(self, values: ArrayLike) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.data_kind is DataKind.counts:
            q = self.params["q"]
            return log_nb(self.r, math.log(q), math.log1p(-q), values)
        return log_gamma_density(self.r, math.log(self.params["theta"]), values)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample(self.kernel(), rng, size=n)


FittedModel = KernelModel | FamilyModel


def model_from_result(result: FitResult) -> FittedModel:
    """Принимает FitResult; возвращает модель с подобранными параметрами."""
    if result.family in KERNEL_FAMILIES:
        return KernelModel(name=result.family, params=dict(result.params))
    return FamilyModel(family=FamilyId(result.family), free=dict(result.params))


def _data_kind_of(family: str) -> DataKind:
    if family in KERNEL_FAMILIES:
        return KERNEL_FAMILIES[family]
    node = get_node(family)
    return DataKind.counts if node.kind in _FREQ_MIXTURES else DataKind.losses


def _nll(model: FittedModel, data: Dataset) -> float:
    with np.errstate(all="ignore"):
        ld = np.asarray(model.log_density(data.uniq), dtype=float)
    if np.any(np.isnan(ld)):
        return math.inf
    if np.any(np.isneginf(ld) & (data.wsum > 0)):
        return math.inf
    return -float(np.dot(np.where(data.wsum > 0, ld, 0.0), data.wsum))


def negloglik(model: FittedModel, data: Dataset) -> float:
    """Принимает модель и данные того же типа; возвращает −Σ wᵢ ln f(valueᵢ) (inf при исчезновении плотности)."""
    if model.data_kind is not data.kind:
        raise DomainError(f"model is for {model.data_kind.value}, data are {data.kind.value}")
    value = _nll(model, data)
    if math.isinf(value):
        with np.errstate(all="ignore"):
            ld = np.asarray(model.log_density(data.uniq), dtype=float)
        bad = data.uniq[~np.isfinite(ld)]
        logger.warning("density_underflow", extra={"at": [float(v) for v in bad[:5]], "count": int(bad.size)})
    return value


# --- параметризация -------------------------------------------------------------------


def _expu(u: float) -> float:
    return math.exp(min(max(u, -_U_CLIP), _U_CLIP))


@dataclass(frozen=True)
class _Space:
    """Отображение неограниченного вектора u в параметры семейства.

    Правила: pos: e^u; unit: логистическая; gt1: 1 + e^u; floor: β = β_min + e^u
    (β_min = 1/δ, где δ либо свободен, либо зафиксирован узлом).
    """

    family: str
    names: tuple[str, ...]
    rules: tuple[str, ...]
    fixed: Mapping[str, float] = field(default_factory=dict)
    beta_floor: float | None = None
    label: str = "interior"

    @property
    def k(self) -> int:
        return len(self.names)

    def _floor(self, params: Mapping[str, float]) -> float:
        if self.beta_floor is not None:
            return self.beta_floor
        return 1.0 / params["delta"]

    def decode(self, u: np.ndarray) -> dict[str, float]:
        out: dict[str, float] = dict(self.fixed)
        pending: float | None = None
        for name, rule, ui in zip(self.names, self.rules, u, strict=True):
            if rule == "pos":
                out[name] = _expu(float(ui))
            elif rule == "unit":
                out[name] = float(special.expit(min(max(float(ui), -_U_CLIP), _U_CLIP)))
            elif rule == "gt1":
                out[name] = 1.0 + _expu(float(ui))
            else:
                pending = float(ui)
        if pending is not None:
            out["beta"] = self._floor(out) + _expu(pending)
        return out

    def encode(self, params: Mapping[str, float]) -> np.ndarray:
        u = []
        for name, rule in zip(self.names, self.rules, strict=True):
            v = params[name]
            if rule == "pos":
                u.append(math.log(v))
            elif rule == "unit":
                u.append(float(special.logit(v)))
            elif rule == "gt1":
                u.append(math.log(max(v - 1.0, 1e-3)))
            else:
                u.append(math.log(max(v - self._floor(params), 1e-3 * v)))
        return np.asarray(u, dtype=float)

    def slopes(self, u: np.ndarray) -> np.ndarray:
        """Производные параметров по u (для дельта-метода)."""
        p = self.decode(u)
        out = []
        for name, rule in zip(self.names, self.rules, strict=True):
            if rule == "pos":
                out.append(p[name])
            elif rule == "unit":
                out.append(p[name] * (1.0 - p[name]))
            elif rule == "gt1":
                out.append(p[name] - 1.0)
            else:
                out.append(p[name] - self._floor(p))
        return np.asarray(out, dtype=float)

    def build(self, u: np.ndarray) -> FittedModel:
        params = self.decode(u)
        if self.family in KERNEL_FAMILIES:
            return KernelModel(name=self.family, params=params)
        return FamilyModel(family=FamilyId(self.family), free=params)


def _node_spaces(node: FamilyNode) -> list[_Space]:
    names = node.free
    rules = tuple("gt1" if n == "gamma" else "pos" for n in names)
    spaces = [_Space(node.id.value, names, rules)]
    if "gamma" in names:
        rest = tuple(n for n in names if n != "gamma")
        beta_floor: float | None = None
        beta_rule = "pos"
        if "delta" in names:
            beta_rule = "floor"
        elif "delta" in node.fixed and not math.isinf(resolve(node.fixed["delta"], {})):
            beta_floor = 1.0 / resolve(node.fixed["delta"], {})
            beta_rule = "floor"
        rest_rules = tuple(beta_rule if n == "beta" else "pos" for n in rest)
        spaces.append(_Space(node.id.value, rest, rest_rules, {"gamma": 1.0}, beta_floor, "gamma=1 boundary"))
    return spaces


def _spaces(family: str) -> list[_Space]:
    if family in KERNEL_FAMILIES:
        names = _KERNEL_NAMES[family]
        return [_Space(family, names, tuple("unit" if n == "q" else "pos" for n in names))]
    return _node_spaces(get_node(family))


def _start_values(family: str, data: Dataset) -> dict[str, float]:
    """Стартовые параметры по среднему/медиане данных."""
    if data.kind is DataKind.counts:
        m = data.mean()
        q0 = min(max(m / (1.0 + m), 1e-6), 1.0 - 1e-6)
        prime = family.endswith("_prime")
        a0 = min(max(1.0 + 2.0 / max(m, 1e-3), 0.05), 50.0) if prime else min(max(m, 0.05), 50.0)
        return {"q": q0, "r": 1.0, "a": a0, "b": 2.0, "c": 1.0, "d": 1.0}
    med = data.median()
    beta0 = 1.0 / med if family.endswith("_prime") else med
    return {"theta": data.mean(), "r": 1.0, "alpha": 2.0, "beta": beta0, "gamma": 1.5, "delta": 10.0}


# --- оптимизация ------------------------------------------------------------------------


@dataclass(frozen=True)
class _Run:
    index: int
    u: np.ndarray
    nll: float
    nit: int


def _design(d: int, restarts: int, seed: int, family: str) -> np.ndarray:
    """Смещения стартов в пространстве u: нулевой старт и точки Соболя в кубе ±2."""
    out = np.zeros((restarts, d))
    if restarts > 1 and d > 0:
        sobol = qmc.Sobol(d, scramble=True, rng=make_stream(seed, zlib.crc32(family.encode())))
        points = sobol.random_base2(max(0, math.ceil(math.log2(restarts - 1))))
        out[1:] = 4.0 * (points[: restarts - 1] - 0.5)
    return out


def _objective(space: _Space, data: Dataset) -> Callable[[np.ndarray], float]:
    def f(u: np.ndarray) -> float:
        try:
            return _nll(space.build(np.asarray(u, dtype=float)), data)
        except (HetmixError, ValidationError, ValueError, ArithmeticError):
            return math.inf

    return f


def _optimize(space: _Space, data: Dataset, config: FitConfig, seed: int) -> list[_Run]:
    f = _objective(space, data)
    u0 = space.encode(_start_values(space.family, data))
    if space.k == 0:
        return [_Run(0, u0, f(u0), 0)]
    starts = u0[None, :] + _design(space.k, config.restarts, seed, space.family)

    def run(i: int) -> _Run:
        res = optimize.minimize(
            f,
            starts[i],
            method="Nelder-Mead",
            options={"xatol": config.xatol, "fatol": config.fatol, "maxiter": config.maxiter, "adaptive": True},
        )
        out = _Run(i, np.asarray(res.x, dtype=float), float(res.fun), int(res.nit))
        logger.debug(
            "fit_restart_done",
            extra={"family": space.family, "space": space.label, "restart": i, "nll": out.nll, "nit": out.nit},
        )
        return out

    workers = max(1, min(get_settings().threads, config.restarts))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(config.restarts)))


def _hessian(f: Callable[[np.ndarray], float], u: np.ndarray) -> np.ndarray | None:
    d = u.size
    h = _HESSIAN_STEP * np.maximum(1.0, np.abs(u))
    f0 = f(u)
    hess = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h[i]
            ej[j] = h[j]
            if i == j:
                value = (f(u + ei) - 2.0 * f0 + f(u - ei)) / h[i] ** 2
            else:
                value = (f(u + ei + ej) - f(u + ei - ej) - f(u - ei + ej) + f(u - ei - ej)) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = value
    if not np.all(np.isfinite(hess)):
        return None
    return hess


def _stderr(space: _Space, data: Dataset, u: np.ndarray) -> dict[str, float] | None:
    hess = _hessian(_objective(space, data), u)
    if hess is None:
        return None
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        return None
    var = np.diag(cov)
    if np.any(var <= 0):
        return None
    se = space.slopes(u) * np.sqrt(var)
    return {name: float(v) for name, v in zip(space.names, se, strict=True)}


def _resolve_target(family_or_kind: str | FamilyId | MixtureKind | DataKind) -> str:
    if isinstance(family_or_kind, DataKind):
        return FamilyId.hgzy.value if family_or_kind is DataKind.counts else FamilyId.hgss.value
    if isinstance(family_or_kind, FamilyId | MixtureKind):
        return family_or_kind.value
    if family_or_kind in (DataKind.counts.value, DataKind.losses.value):
        return _resolve_target(DataKind(family_or_kind))
    if family_or_kind in KERNEL_FAMILIES:
        return family_or_kind
    return get_node(family_or_kind).id.value


def mle_fit(
    family_or_kind: str | FamilyId | MixtureKind | DataKind,
    data: Dataset,
    config: FitConfig | None = None,
) -> FitResult:
    """Принимает семейство (узел каталога, ядро, вид смеси или тип данных) и данные; возвращает ОМП-подгонку.

    Неограниченная параметризация, Nelder–Mead из нескольких стартов; при свободном γ отдельно
    подгоняется граница γ = 1 (β > 1/δ), побеждает меньший AIC.
    """
    config = config or FitConfig()
    family = _resolve_target(family_or_kind)
    if _data_kind_of(family) is not data.kind:
        raise DomainError(f"{family} models {_data_kind_of(family).value}, data are {data.kind.value}")
    seed = config.seed if config.seed is not None else get_settings().default_seed

    best: tuple[float, _Space, list[_Run]] | None = None
    for space in _spaces(family):
        runs = _optimize(space, data, config, seed)
        incumbent = min(runs, key=lambda r: (r.nll, r.index))
        aic = 2.0 * space.k + 2.0 * incumbent.nll
        if math.isfinite(aic) and (best is None or aic < best[0]):
            best = (aic, space, runs)
    if best is None:
        raise HetmixError(f"{family}: no restart reached a finite likelihood")

    aic, space, runs = best
    ranked = sorted(runs, key=lambda r: (r.nll, r.index))
    top = ranked[0]
    converged = len(ranked) == 1 or abs(ranked[1].nll - top.nll) <= config.agree_tol
    params = space.decode(top.u)

    notes: list[str] = []
    boundary = False
    if space.fixed:
        boundary = True
        notes.append(space.label)
    edge = [n for n, ui in zip(space.names, top.u, strict=True) if abs(ui) > _BOUNDARY_U]
    if edge:
        boundary = True
        notes.append(f"parameters at the edge of the search space: {', '.join(edge)}")
    if data.kind is DataKind.counts and np.all(data.uniq == 0):
        boundary = True
        notes.append("all counts are zero; the fit collapses toward the q→0 boundary")
    if not converged:
        notes.append(f"best two restarts disagree by {ranked[1].nll - top.nll:.3g} in NLL")

    stderr = _stderr(space, data, top.u) if config.stderr and space.k > 0 and not boundary else None
    result = FitResult(
        family=family,
        kind=data.kind,
        params=params,
        loglik=-top.nll,
        aic=aic,
        k=space.k,
        n=data.n,
        converged=converged,
        boundary=boundary,
        stderr=stderr,
        restart_nll=[r.nll for r in runs],
        message="; ".join(notes) or None,
    )
    logger.info(
        "fit_done",
        extra={"family": family, "nll": top.nll, "aic": aic, "converged": converged, "boundary": boundary},
    )
    return result


def default_candidates(kind: DataKind) -> list[str]:
    """Принимает тип данных; возвращает ядра и все узлы иерархии для этого типа."""
    kernels = [name for name, k in KERNEL_FAMILIES.items() if k is kind]
    mixtures = _FREQ_MIXTURES if kind is DataKind.counts else (MixtureKind.hgss, MixtureKind.hgss_prime)
    nodes = [fid.value for fid, node in CATALOG.items() if node.kind in mixtures]
    return kernels + nodes


def fit_candidates(data: Dataset, config: FitConfig | None = None) -> FitReport:
    """Принимает данные и конфигурацию; возвращает кандидатов, упорядоченных по AIC, и победителя."""
    config = config or FitConfig()
    names = [_resolve_target(n) for n in config.families] if config.families else default_candidates(data.kind)
    results: list[FitResult] = []
    failed: dict[str, str] = {}
    for name in names:
        try:
            results.append(mle_fit(name, data, config))
        except HetmixError as exc:
            logger.warning("fit_candidate_failed", extra={"family": name, "error": str(exc)})
            failed[name] = str(exc)
    results.sort(key=lambda r: (r.aic, names.index(r.family)))
    if not results:
        status = StepStatus.failed
    elif failed or not results[0].converged:
        status = StepStatus.partial
    else:
        status = StepStatus.ok
    return FitReport(
        kind=data.kind,
        n=data.n,
        estimator=ESTIMATOR,
        candidates=results,
        failed=failed,
        winner=results[0].family if results else None,
        status=status,
    )


def winner_curve(model: FittedModel, data: Dataset, points: int = 200) -> list[tuple[float, float]]:
    """Принимает модель и данные; возвращает точки (x, pmf) для x = 0..max или (y, pdf) на лог-сетке."""
    if data.kind is DataKind.counts:
        xs = np.arange(0.0, min(float(data.uniq[-1]), 10_000.0) + 1.0)
    else:
        xs = np.geomspace(float(data.uniq[0]) / 2.0, float(data.uniq[-1]) * 2.0, points)
    with np.errstate(all="ignore"):
        dens = np.exp(model.log_density(xs))
    return [(float(x), float(v)) for x, v in zip(xs, dens, strict=True)]


# --- трёхшаговый отчёт ---------------------------------------------------------------


def _z_spread(z: np.ndarray, h: np.ndarray) -> float:
    w = np.clip(h, 0.0, None)
    total = float(w.sum())
    if total <= 0:
        return 0.0
    mean = float(np.dot(z, w) / total)
    return math.sqrt(float(np.dot((z - mean) ** 2, w) / total))


def summarize_mixing(model: FittedModel, grid_n: int | None = None) -> MixingSummary:
    """Принимает подобранную модель; возвращает массу верхнего дециля, моды и вердикт хвоста её смешивающего закона."""
    if isinstance(model, KernelModel):
        return MixingSummary(status=StepStatus.ok, heterogeneity=f"{NOT_MATERIAL} (kernel-only model)")
    try:
        law = model.mixing_law()
        cal = calibrate(law, model.r, model.r, grid_n)
        mass = cal.upper_tail_mass(upper_tail_threshold(law, model.r, model.r))
        modes = cal.modes()
        spread = _z_spread(cal.z, cal.z_density)
    except HetmixError as exc:
        logger.warning("mixing_summary_failed", extra={"error": str(exc)})
        return MixingSummary(status=StepStatus.failed, error=str(exc))
    try:
        verdict = classify_model(model)
    except HetmixError as exc:
        logger.warning("tail_verdict_failed", extra={"error": str(exc)})
        verdict = None
    if spread < MIN_Z_SPREAD:
        flag = f"{NOT_MATERIAL} (near-degenerate mixing)"
    elif mass >= MATERIAL_MASS or len(modes) >= 2:
        flag = MATERIAL
    else:
        flag = NOT_MATERIAL
    return MixingSummary(
        status=StepStatus.ok if verdict is not None else StepStatus.partial,
        upper_tail_mass=mass,
        modes=modes,
        verdict=verdict,
        heterogeneity=flag,
    )


def _sweep_status(report: SweepReport) -> StepStatus:
    ok = sum(e.status is StepStatus.ok for e in report.entries)
    if ok == len(report.entries):
        return StepStatus.ok
    return StepStatus.partial if ok else StepStatus.failed


def heterogeneity_report(
    data: Dataset,
    config: FitConfig | None = None,
    out_dir: Path | None = None,
) -> HeterogeneityReport:
    """Принимает данные и конфигурацию; возвращает трёхшаговый отчёт: подгонка, смешивающий закон, свип по s.

    Каждый шаг несёт свой статус; сбой шага не отменяет уже полученные результаты.
    """
    config = config or FitConfig()
    seed = config.seed if config.seed is not None else get_settings().default_seed
    step1 = fit_candidates(data, config.model_copy(update={"seed": seed}))

    step2 = MixingSummary(status=StepStatus.skipped)
    step3: SweepReport | None = None
    step3_status = StepStatus.skipped
    if step1.winner is not None:
        model = model_from_result(step1.candidates[0])
        step2 = summarize_mixing(model, config.grid_points)
        if isinstance(model, FamilyModel):
            try:
                step3 = robustness_sweep(model, sorted(config.s_grid), config.grid_points, out_dir)
                step3_status = _sweep_status(step3)
            except HetmixError as exc:
                logger.warning("robustness_sweep_failed", extra={"error": str(exc)})
                step3_status = StepStatus.failed
    logger.info(
        "heterogeneity_report_done",
        extra={"winner": step1.winner, "step2": step2.heterogeneity, "step3": step3_status.value},
    )
    return HeterogeneityReport(
        kind=data.kind,
        n=data.n,
        seed=seed,
        estimator=ESTIMATOR,
        identifiability_note=IDENTIFIABILITY_NOTE,
        step1=step1,
        step2=step2,
        step3=step3,
        step3_status=step3_status,
    )