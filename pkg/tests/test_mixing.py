import math

import numpy as np
import pytest
from scipy import integrate

from hetmix.errors import DomainError
from hetmix.mixing import (
    CATALOG,
    EDGES,
    FamilyId,
    HGSBLaw,
    HGSGLaw,
    ZetaLaw,
    check_free,
    family_mixing_law,
    freq_params,
    get_node,
    mixing_law,
    node_mixing_log_pdf,
    registry,
    restrict,
    sev_params,
)
from hetmix.models import FreqMixParams, MixingSide, SevMixParams

FREE = {
    "zeta": {"b": 1.5},
    "yule": {"b": 2.0},
    "quadratic": {"c": 2.0},
    "zy": {"b": 2.0, "c": 0.5},
    "waring": {"a": 1.5, "b": 2.0},
    "kmix": {"b": 2.0, "c": 1.5},
    "gzy": {"a": 1.2, "b": 2.0, "c": 0.7},
    "gw2": {"a": 1.2, "b": 2.0, "c": 0.7},
    "hgzy": {"r": 1.5, "a": 1.2, "b": 2.0, "c": 0.7, "d": 1.3},
    "gen_waring": {"r": 2.0, "a": 1.5, "b": 2.5},
    "pareto2_a1": {"beta": 2.0},
    "weimix_b1": {"gamma": 1.5},
    "ss": {"beta": 2.0, "gamma": 1.5},
    "pareto2": {"alpha": 1.5, "beta": 2.0},
    "weimix": {"beta": 2.0, "gamma": 1.5},
    "gss": {"alpha": 1.2, "beta": 2.0, "gamma": 1.5},
    "gp2": {"alpha": 1.2, "beta": 2.0, "gamma": 1.5},
    "hgss": {"r": 1.5, "alpha": 1.2, "beta": 2.0, "gamma": 1.5, "delta": 3.0},
}


def free_for(fid: FamilyId) -> dict[str, float]:
    return dict(FREE[fid.value.removesuffix("_prime")])


def _z_integral(law: HGSBLaw | HGSGLaw | ZetaLaw) -> float:
    value, _ = integrate.quad(lambda z: math.exp(float(law.log_pdf_z(np.array([z]))[0])), -60, 60, limit=400)
    return float(value)


def test_uniform_and_beta_special_cases() -> None:
    uniform = HGSBLaw(FreqMixParams(a=1, b=1, c=1, d=1))
    assert uniform.log_pdf(np.array([0.3]))[0] == pytest.approx(0.0, abs=1e-14)
    beta = HGSBLaw(FreqMixParams(a=2, b=3, c=1, d=1))
    assert beta.pdf(np.array([0.5]))[0] == pytest.approx(1.5, rel=1e-13)


def test_complementary_law_mirrors() -> None:
    p = FreqMixParams(a=1.3, b=2.1, c=0.8, d=1.6)
    q = np.array([0.1, 0.45, 0.9])
    assert np.allclose(HGSBLaw(p, complementary=True).log_pdf(q), HGSBLaw(p).log_pdf(1 - q), rtol=1e-12)


@pytest.mark.parametrize(
    "law",
    [
        HGSBLaw(FreqMixParams(a=1.5, b=2.0, c=0.7, d=1.3)),
        HGSBLaw(FreqMixParams(a=0.6, b=0.8, c=2.0, d=0.5), complementary=True),
        ZetaLaw(1.5),
        HGSGLaw(SevMixParams(alpha=1.2, beta=2.0, gamma=1.5, delta=3.0)),
        HGSGLaw(SevMixParams(alpha=1.2, beta=2.0, gamma=1.5, delta=3.0), inverse=True),
        HGSGLaw(SevMixParams(alpha=2.0, beta=1.5, gamma=1.0, delta=2.0)),
    ],
)
def test_laws_are_normalized(law: HGSBLaw | HGSGLaw | ZetaLaw) -> None:
    assert _z_integral(law) == pytest.approx(1.0, rel=1e-7)


def test_gamma_and_inverse_gamma_special_cases() -> None:
    g = HGSGLaw(SevMixParams(alpha=2.0, beta=3.0, gamma=1.0, delta=math.inf))
    assert g.pdf(np.array([0.5]))[0] == pytest.approx(9 * 0.5 * math.exp(-1.5), rel=1e-13)
    ig = HGSGLaw(SevMixParams(alpha=1.0, beta=1.0, gamma=1.0, delta=math.inf), inverse=True)
    assert ig.pdf(np.array([1.0]))[0] == pytest.approx(math.exp(-1.0), rel=1e-13)


def test_severity_params_enforce_integrability() -> None:
    with pytest.raises(DomainError, match="γ"):
        sev_params(alpha=1.0, beta=1.0, gamma=0.5, delta=1.0)
    with pytest.raises(DomainError, match="β > 1/δ"):
        sev_params(alpha=1.0, beta=0.5, gamma=1.0, delta=1.0)
    with pytest.raises(DomainError):
        freq_params(a=-1.0, b=1.0, c=1.0, d=1.0)


def test_elasticity_matches_numeric_derivative() -> None:
    law = HGSGLaw(SevMixParams(alpha=1.2, beta=2.0, gamma=1.5, delta=3.0), inverse=True)
    z = np.array([-1.0, 0.0, 0.8])
    h = 1e-5
    numeric = (law.log_pdf_z(z + h) - law.log_pdf_z(z - h)) / (2 * h) - 1.0
    assert np.allclose(law.elasticity_z(z), numeric, rtol=1e-6, atol=1e-7)
    freq = HGSBLaw(FreqMixParams(a=1.5, b=2.0, c=0.7, d=1.3))
    t = np.array([0.2, 0.6])
    assert np.allclose(freq.elasticity(t), t * freq.dlog_pdf(t), rtol=1e-12)


def test_mixing_law_factory_checks_side() -> None:
    p = FreqMixParams(a=1, b=1, c=1, d=1)
    assert mixing_law(MixingSide.chgsb, p).side is MixingSide.chgsb
    with pytest.raises(DomainError):
        mixing_law(MixingSide.hgsg, p)


def test_restrictions_follow_catalog() -> None:
    zy = restrict("zy", {"b": 2.0, "c": 0.5})
    assert isinstance(zy, FreqMixParams)
    assert (zy.a, zy.b, zy.c, zy.d) == (2.0, 2.0, 0.5, 1.0)
    ss = restrict("ss", {"beta": 2.0, "gamma": 1.5})
    assert isinstance(ss, SevMixParams)
    assert ss.alpha == pytest.approx(1 / 1.5)
    assert ss.delta == 1.0
    assert math.isinf(restrict("pareto2", {"alpha": 1.0, "beta": 1.0}).delta)  # type: ignore[union-attr]
    with pytest.raises(DomainError, match="limit"):
        restrict("zeta", {"b": 1.5})


def test_check_free_rejects_wrong_names_and_r() -> None:
    node = get_node("waring")
    with pytest.raises(DomainError):
        check_free(node, {"a": 1.0})
    with pytest.raises(DomainError, match="r = 1"):
        check_free(node, {"a": 1.0, "b": 1.0, "r": 2.0})
    assert check_free(get_node("gen_waring"), {"r": 2.0, "a": 1.0, "b": 1.0})["r"] == 2.0
    with pytest.raises(DomainError):
        get_node("nope")


@pytest.mark.parametrize("fid", list(CATALOG))
def test_node_closed_form_matches_parent_law(fid: FamilyId) -> None:
    free = free_for(fid)
    law = family_mixing_law(fid, free)
    t = np.array([0.05, 0.3, 0.7, 0.95]) if law.unit_support else np.array([0.1, 0.8, 2.5])
    assert np.allclose(node_mixing_log_pdf(fid, free, t), law.log_pdf(t), rtol=1e-10, atol=1e-10)


def test_edges_connect_catalog_nodes() -> None:
    for child, parent, mapping in EDGES:
        assert child in CATALOG
        assert parent in CATALOG
        assert set(mapping) - {"r"} <= set(CATALOG[parent].mixing_free)


def test_registry_lists_every_node() -> None:
    reg = registry()
    assert len(reg) == len(CATALOG)
    names = {row["name"] for row in reg}
    assert {"hgzy", "hgss_prime", "gen_waring", "zeta_prime"} <= names
    zeta = next(row for row in reg if row["name"] == "zeta")
    assert zeta["limit"] is not None
    assert zeta["side"] == "hgsb"


def test_zeta_law_is_limit_of_zy() -> None:
    q = np.array([0.2, 0.5, 0.8])
    target = ZetaLaw(1.5).log_pdf(q)
    errs = []
    for c in (1e-2, 1e-3):
        approx = family_mixing_law("zy", {"b": 1.5, "c": c}).log_pdf(q)
        errs.append(float(np.max(np.abs(np.exp(approx) - np.exp(target)))))
    assert errs[1] < errs[0]
    assert errs[1] < 1e-2


def test_zeta_law_rejects_bad_b() -> None:
    with pytest.raises(DomainError):
        ZetaLaw(0.0)
