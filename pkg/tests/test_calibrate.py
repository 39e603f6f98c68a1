import math
from pathlib import Path

import numpy as np
import pytest
from numpy.typing import ArrayLike
from scipy import special

from hetmix import reference
from hetmix.calibrate import (
    calibrate,
    calibrate_freq_down,
    calibrate_freq_up,
    calibrate_sev_down,
    dlog_dz,
    elasticity,
    elasticity_limit_at_zero,
    persistence,
    poisson_reconstruction,
    robustness_sweep,
    upper_tail_threshold,
)
from hetmix.errors import DomainError
from hetmix.mixing import HGSBLaw, HGSGLaw, MixingLaw
from hetmix.mixtures import FamilyModel
from hetmix.models import FreqMixParams, SevMixParams, StepStatus, SweepEntry

BETA_23 = HGSBLaw(FreqMixParams(a=2, b=3, c=1, d=1))
WARING_13 = HGSBLaw(FreqMixParams(a=1, b=3, c=1, d=1))
INV_GAMMA = HGSGLaw(SevMixParams(alpha=2, beta=1, gamma=1, delta=math.inf), inverse=True)
GAMMA_HALF = HGSGLaw(SevMixParams(alpha=0.5, beta=1, gamma=1, delta=math.inf))
GAMMA_15 = HGSGLaw(SevMixParams(alpha=1.5, beta=1, gamma=1, delta=math.inf))


class _PlainBeta(MixingLaw):
    label = "plain-beta"
    unit_support = True

    def __init__(self, a: float, b: float) -> None:
        self.a = a
        self.b = b

    def log_pdf(self, t: ArrayLike) -> np.ndarray:
        q = np.asarray(t, dtype=float)
        return (self.a - 1.0) * np.log(q) + (self.b - 1.0) * np.log1p(-q) - special.betaln(self.a, self.b)

    def log_pdf_z(self, z: ArrayLike) -> np.ndarray:
        q = special.expit(np.asarray(z, dtype=float))
        return self.log_pdf(q) + np.log(q) + np.log1p(-q)


def test_same_shape_returns_the_law() -> None:
    cal = calibrate(BETA_23, 1.0, 1.0, grid_n=512)
    inner = slice(100, 400)
    assert np.allclose(cal.density[inner], BETA_23.pdf(cal.t[inner]), rtol=1e-12)
    assert cal.integral == pytest.approx(1.0, abs=1e-6)
    assert not cal.is_quasi


def test_severity_up_calibration_preserves_mixture() -> None:
    cal = calibrate(INV_GAMMA, 1.0, 2.0)
    assert not cal.is_quasi
    assert cal.integral == pytest.approx(1.0, abs=1e-4)
    y = np.array([0.2, 1.0, 5.0])
    assert np.allclose(cal.reconstruct(y), 2.0 / (1.0 + y) ** 3, rtol=1e-3)


def test_frequency_up_calibration_preserves_mixture() -> None:
    cal = calibrate(WARING_13, 1.0, 2.0)
    assert cal.integral == pytest.approx(1.0, abs=1e-4)
    x = np.arange(5, dtype=float)
    waring = 3.0 / ((x + 1) * (x + 2) * (x + 3) * (x + 4)) * 6.0
    assert np.allclose(cal.reconstruct(x), waring, rtol=1e-3)


def test_pointwise_transforms_check_arguments() -> None:
    assert calibrate_freq_up(WARING_13, 1.0, 2.0, 0.3) > 0
    with pytest.raises(DomainError):
        calibrate_freq_up(WARING_13, 1.0, 0.5, 0.3)
    with pytest.raises(DomainError):
        calibrate_freq_up(INV_GAMMA, 1.0, 2.0, 0.3)
    with pytest.raises(DomainError):
        calibrate_freq_up(WARING_13, 1.0, 2.0, 1.5)
    with pytest.raises(DomainError, match="s < r"):
        calibrate_sev_down(INV_GAMMA, 2.0, 2.0, 1.0)
    with pytest.raises(DomainError, match="positive"):
        calibrate(INV_GAMMA, 2.0, -0.5)


def test_down_calibration_value_and_sign_flag() -> None:
    # Gamma(1.5) при r = 2 калибруется вниз в Gamma(2) при s = 1.5
    value, negative = calibrate_sev_down(GAMMA_15, 2.0, 1.5, 1.0)
    assert value == pytest.approx(math.exp(-1.0), rel=1e-6)
    assert negative is False
    value, negative = calibrate_sev_down(INV_GAMMA, 1.0, 0.5, 1e-3)
    assert value == pytest.approx(-1.0, abs=0.05)
    assert negative is True


def test_down_calibration_over_several_unit_steps() -> None:
    value, _ = calibrate_sev_down(GAMMA_HALF, 2.0, 0.5, 1.0)
    assert value == pytest.approx(math.exp(-1.0), rel=1e-5)
    # r − s = 1: только целый шаг h − h′
    value, _ = calibrate_sev_down(GAMMA_HALF, 2.0, 1.0, 1.0)
    assert value == pytest.approx(1.5 * math.exp(-1.0) / math.sqrt(math.pi), rel=1e-5)
    value, negative = calibrate_freq_down(BETA_23, 2.0, 0.5, 0.3)
    assert math.isfinite(value)
    assert negative is (value < 0)


def test_severity_down_calibration_from_two_to_half() -> None:
    cal = calibrate(GAMMA_HALF, 2.0, 0.5, grid_n=4096)
    inner = (cal.t > 0.1) & (cal.t < 5.0)
    theta = cal.t[inner]
    assert np.allclose(cal.density[inner], theta * np.exp(-theta), rtol=1e-3)
    assert cal.integral == pytest.approx(1.0, abs=1e-3)
    y = np.array([0.5, 1.0, 3.0])
    want = [reference.quad_mixture_pdf(2.0, GAMMA_HALF, float(v)) for v in y]
    assert np.allclose(cal.reconstruct(y), want, rtol=1e-3)


def test_frequency_down_calibration_preserves_mixture() -> None:
    cal = calibrate(BETA_23, 2.0, 0.5)
    x = np.arange(5, dtype=float)
    want = [reference.quad_mixture_pmf(2.0, BETA_23, int(k)) for k in x]
    assert np.allclose(cal.reconstruct(x), want, rtol=2e-3)


def test_down_calibration_flags_quasi_density() -> None:
    cal = calibrate(INV_GAMMA, 1.0, 0.5)
    assert cal.is_quasi
    assert cal.negativity_region
    assert cal.negativity_region[0][0] < 0.05
    assert cal.integral == pytest.approx(1.0, abs=1e-3)
    y = np.array([0.5, 1.0, 3.0])
    assert np.allclose(cal.reconstruct(y), 2.0 / (1.0 + y) ** 3, rtol=2e-3)


def test_derivatives_share_stencil_for_plain_laws() -> None:
    law = _PlainBeta(2.0, 3.0)
    q = np.array([0.2, 0.5, 0.7])
    assert np.allclose(law.dlog_pdf(q), 1.0 / q - 2.0 / (1.0 - q), rtol=1e-7)
    z = np.log(q) - np.log1p(-q)
    assert np.allclose(dlog_dz(law, z), (1.0 - q) - 2.0 * q, rtol=1e-7)


def test_elasticity_of_beta_law() -> None:
    assert float(elasticity(BETA_23, 0.5)) == pytest.approx(-1.0, rel=1e-9)
    assert elasticity_limit_at_zero(BETA_23) == pytest.approx(1.0, abs=1e-6)
    gamma = HGSGLaw(SevMixParams(alpha=2, beta=1, gamma=1, delta=math.inf))
    assert elasticity_limit_at_zero(gamma) == pytest.approx(1.0, abs=1e-6)


def test_upper_tail_threshold_tracks_intensity() -> None:
    assert upper_tail_threshold(WARING_13, 1.0, 1.0) == pytest.approx(0.9)
    assert upper_tail_threshold(WARING_13, 1.0, 2.0) == pytest.approx(4.5 / 5.5)


def test_upper_tail_mass_and_modes() -> None:
    cal = calibrate(BETA_23, 1.0, 1.0, grid_n=1024)
    assert cal.upper_tail_mass(0.9) == pytest.approx(0.0037, abs=2e-4)
    modes = cal.modes()
    assert len(modes) == 1
    # мода плотности в логит-координате: q(1−q)·g(q) максимальна при q = a/(a+b)
    assert modes[0] == pytest.approx(0.4, abs=0.02)


def test_persistence_verdicts() -> None:
    ok = SweepEntry(s=2.0, status=StepStatus.ok, upper_tail_mass=0.2, modes=[0.1, 0.8])
    assert persistence(0.2, 2, [ok]) == "persistent"
    faded = ok.model_copy(update={"upper_tail_mass": 0.05})
    assert persistence(0.2, 2, [ok, faded]) == "vanishing"
    quasi = ok.model_copy(update={"is_quasi": True})
    assert persistence(0.2, 2, [quasi]) == "undetermined"
    failed = SweepEntry(s=4.0, status=StepStatus.failed, error="boom")
    assert persistence(0.2, 2, [ok, failed]) == "undetermined"
    assert persistence(0.2, 2, [failed]) == "undetermined"


@pytest.mark.slow
def test_poisson_reconstruction_matches_waring() -> None:
    x = [0, 1, 2]
    got = poisson_reconstruction(WARING_13, 1.0, x, grid_n=256)
    want = [3.0 * 6.0 / ((k + 1) * (k + 2) * (k + 3) * (k + 4)) for k in x]
    assert np.allclose(got, want, rtol=1e-3)


def test_robustness_sweep_writes_grids(tmp_path: Path) -> None:
    model = FamilyModel(family="pareto2", free={"alpha": 2.0, "beta": 1.0})
    report = robustness_sweep(model, [1.0, 3.0], grid_n=1024, out_dir=tmp_path)
    assert report.origin_r == 1.0
    assert [e.s for e in report.entries] == [1.0, 3.0]
    assert all(e.status is StepStatus.ok for e in report.entries)
    first = report.entries[0]
    assert first.invariance_max_rel_dev is not None
    assert first.invariance_max_rel_dev < 1e-4
    assert (tmp_path / "mixing_s1.csv").read_text().startswith("t,z,density\n")
    assert report.persistence in {"persistent", "vanishing", "undetermined"}
    with pytest.raises(DomainError):
        robustness_sweep(model, [3.0, 1.0])
