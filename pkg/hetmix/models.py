from __future__ import annotations

import math
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

SCHEMA_VERSION = "hetmix/1"

# Зазор строгого неравенства β > 1/δ на границе γ = 1.
INTEGRABILITY_MARGIN = 1e-12


class DataKind(str, Enum):
    counts = "counts"
    losses = "losses"


class MixtureKind(str, Enum):
    hgzy = "hgzy"
    hgzy_prime = "hgzy_prime"
    hgss = "hgss"
    hgss_prime = "hgss_prime"


class MixingSide(str, Enum):
    hgsb = "hgsb"
    chgsb = "chgsb"
    hgsg = "hgsg"
    ihgsg = "ihgsg"


class TailMethod(str, Enum):
    analytic = "analytic"
    numeric_limit = "numeric-limit"


class StepStatus(str, Enum):
    ok = "ok"
    partial = "partial"
    failed = "failed"
    skipped = "skipped"


class FreqMixParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: float = Field(gt=0, allow_inf_nan=False)
    b: float = Field(gt=0, allow_inf_nan=False)
    c: float = Field(gt=0, allow_inf_nan=False)
    d: float = Field(gt=0, allow_inf_nan=False)


class SevMixParams(BaseModel):
    """Параметры HGΣΓ/IHGΣΓ; delta = inf задаёт предел δ→∞ (множитель e^{θ/δ} исчезает)."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(gt=0, allow_inf_nan=False)
    beta: float = Field(gt=0, allow_inf_nan=False)
    gamma: float = Field(gt=0, allow_inf_nan=False)
    delta: float = Field(gt=0)

    @model_validator(mode="after")
    def _integrable(self) -> SevMixParams:
        if math.isnan(self.delta):
            raise ValueError("δ must be a positive number or inf")
        if self.gamma < 1.0:
            raise ValueError("γ < 1 is not integrable: requires γ > 1, or γ = 1 with β > 1/δ")
        if self.gamma == 1.0 and not self.beta > self.inv_delta + INTEGRABILITY_MARGIN:
            raise ValueError("γ=1 requires β > 1/δ")
        return self

    @property
    def inv_delta(self) -> float:
        return 0.0 if math.isinf(self.delta) else 1.0 / self.delta


class TailVerdict(BaseModel):
    heavy: bool
    power_order: float | None = None
    first_infinite_moment: int | None = None
    method: TailMethod
    warning: str | None = None
    interval: tuple[float, float] | None = None


class HillEstimate(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_: str = Field(default=SCHEMA_VERSION, alias="schema")
    tail_index: float
    k: int
    n: int
    k_fraction: float


class FitConfig(BaseModel):
    s_grid: list[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    restarts: int = Field(default=8, ge=1)
    xatol: float = 1e-6
    fatol: float = 1e-8
    maxiter: int = Field(default=2000, ge=10)
    families: list[str] | None = None
    agree_tol: float = 1e-4
    seed: int | None = None
    hill_fraction: float = Field(default=0.05, gt=0, lt=1)
    stderr: bool = True
    grid_points: int | None = Field(default=None, ge=64)


class FitResult(BaseModel):
    family: str
    kind: DataKind
    params: dict[str, float]
    loglik: float
    aic: float
    k: int
    n: int
    converged: bool
    boundary: bool = False
    stderr: dict[str, float] | None = None
    restart_nll: list[float] = Field(default_factory=list)
    message: str | None = None


class FitReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_: str = Field(default=SCHEMA_VERSION, alias="schema")
    kind: DataKind
    n: int
    estimator: str
    candidates: list[FitResult]
    failed: dict[str, str] = Field(default_factory=dict)
    winner: str | None = None
    status: StepStatus


class SweepEntry(BaseModel):
    s: float
    status: StepStatus
    is_quasi: bool = False
    negativity_region: list[tuple[float, float]] = Field(default_factory=list)
    integral: float | None = None
    modes: list[float] = Field(default_factory=list)
    upper_tail_mass: float | None = None
    elasticity_at_zero: float | None = None
    invariance_max_rel_dev: float | None = None
    grid_file: str | None = None
    error: str | None = None


class SweepReport(BaseModel):
    origin_r: float
    entries: list[SweepEntry]
    persistence: str


class MixingSummary(BaseModel):
    status: StepStatus
    upper_tail_mass: float | None = None
    modes: list[float] = Field(default_factory=list)
    verdict: TailVerdict | None = None
    heterogeneity: str | None = None
    error: str | None = None


class HeterogeneityReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_: str = Field(default=SCHEMA_VERSION, alias="schema")
    kind: DataKind
    n: int
    seed: int
    estimator: str
    identifiability_note: str
    step1: FitReport
    step2: MixingSummary
    step3: SweepReport | None
    step3_status: StepStatus
