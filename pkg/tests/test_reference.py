import math

import numpy as np
import pytest

from hetmix.errors import DomainError, QuadratureError
from hetmix.mixing import HGSBLaw, HGSGLaw
from hetmix.models import FreqMixParams, SevMixParams
from hetmix.reference import (
    brute_pmf_sum,
    brute_sigma_beta,
    integrate_log,
    mc_moment,
    quad_law_moment,
    quad_mixture_pdf,
    quad_mixture_pmf,
    scan_window,
)

UNIFORM = HGSBLaw(FreqMixParams(a=1, b=1, c=1, d=1))
INV_EXP = HGSGLaw(SevMixParams(alpha=1, beta=1, gamma=1, delta=math.inf), inverse=True)


def test_integrate_log_gaussian() -> None:
    value, bound = integrate_log(lambda z: -0.5 * z**2, (-50.0, 50.0))
    assert value == pytest.approx(math.sqrt(2 * math.pi), rel=1e-10)
    assert bound >= 0


def test_scan_window_rejects_vanishing_integrand() -> None:
    with pytest.raises(QuadratureError):
        scan_window(lambda z: np.full_like(z, -np.inf), -1.0, 1.0)


@pytest.mark.parametrize("x", [0, 1, 7, 30])
def test_oracle_pmf_waring(x: int) -> None:
    assert quad_mixture_pmf(1.0, UNIFORM, x) == pytest.approx(1.0 / ((x + 1) * (x + 2)), rel=1e-9)


def test_oracle_pdf_lomax() -> None:
    assert quad_mixture_pdf(1.0, INV_EXP, 1.0) == pytest.approx(0.25, rel=1e-9)
    assert quad_mixture_pdf(1.0, INV_EXP, 3.0) == pytest.approx(1 / 16, rel=1e-9)


def test_oracle_domain_checks() -> None:
    with pytest.raises(DomainError):
        quad_mixture_pmf(1.0, INV_EXP, 0)
    with pytest.raises(DomainError):
        quad_mixture_pmf(1.0, UNIFORM, -1)
    with pytest.raises(DomainError):
        quad_mixture_pdf(1.0, INV_EXP, 0.0)
    with pytest.raises(DomainError):
        quad_mixture_pdf(1.0, UNIFORM, 1.0)


def test_law_moment_of_beta() -> None:
    law = HGSBLaw(FreqMixParams(a=2, b=3, c=1, d=1))
    assert quad_law_moment(law, np.log) == pytest.approx(0.4, rel=1e-9)


def test_brute_sigma_beta_brackets_beta_function() -> None:
    partial, tail = brute_sigma_beta(1.0, 2.0, 3.0, 2000)
    assert partial <= 1 / 12 <= partial + tail


def test_brute_pmf_sum_telescopes() -> None:
    def log_pmf(x: np.ndarray) -> np.ndarray:
        return -np.log((x + 1) * (x + 2))

    assert brute_pmf_sum(log_pmf, 10) == pytest.approx(1 - 1 / 12, rel=1e-14)


def test_mc_moment() -> None:
    mean, se = mc_moment(np.array([1.0, 2.0, 3.0]), 1)
    assert mean == pytest.approx(2.0)
    assert se == pytest.approx(1 / math.sqrt(3))
    with pytest.raises(DomainError):
        mc_moment(np.array([1.0]), 1)
