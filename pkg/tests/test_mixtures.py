import math
from collections.abc import Mapping

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import special

from hetmix import mixtures
from hetmix.errors import CancellationError, ConsistencyError, DomainError
from hetmix.mixing import EDGES, LIMIT_EDGES, FamilyId, HGSBLaw, HGSGLaw, family_mixing_law, get_node, resolve
from hetmix.mixtures import (
    FamilyModel,
    MixtureModel,
    family_log_density,
    fallback_count,
    hgss_log_pdf,
    hgzy_log_pmf,
    pmf_pdf_by_family,
)
from hetmix.models import FreqMixParams, MixtureKind, SevMixParams
from hetmix.reference import brute_pmf_sum, quad_mixture_pdf, quad_mixture_pmf
from hetmix.rng import make_stream

FREQ = FreqMixParams(a=1.2, b=2.0, c=0.7, d=1.3)
SEV = SevMixParams(alpha=1.2, beta=2.0, gamma=1.5, delta=3.0)


def test_waring_one_one_closed_form() -> None:
    m = MixtureModel(kind=MixtureKind.hgzy, params=FreqMixParams(a=1, b=1, c=1, d=1))
    x = np.array([0, 1, 5, 40])
    assert np.allclose(np.exp(m.log_density(x)), 1.0 / ((x + 1) * (x + 2)), rtol=1e-10)
    assert math.exp(hgzy_log_pmf(m, 0)) == pytest.approx(0.5, rel=1e-12)


def test_yule_and_pareto_reference_values() -> None:
    assert math.exp(family_log_density("yule", {"b": 2.0}, [0])[0]) == pytest.approx(2 / 3, rel=1e-12)
    assert math.exp(family_log_density("pareto2", {"alpha": 1.0, "beta": 1.0}, [1.0])[0]) == pytest.approx(0.25, rel=1e-12)
    m = MixtureModel(kind=MixtureKind.hgss, params=SevMixParams(alpha=1, beta=1, gamma=1, delta=math.inf))
    assert math.exp(hgss_log_pdf(m, 1.0)) == pytest.approx(0.25, rel=1e-12)


def test_generalized_waring_via_general_formula() -> None:
    r, a, b = 2.0, 1.5, 2.5
    x = np.arange(6, dtype=float)
    expected = (
        special.gammaln(r + x) - special.gammaln(r) - special.gammaln(x + 1) + special.betaln(a + x, b + r) - special.betaln(a, b)
    )
    m = MixtureModel(kind=MixtureKind.hgzy, r=r, params=FreqMixParams(a=a, b=b, c=1, d=1))
    assert np.allclose(m.log_density(x), expected, rtol=1e-7, atol=1e-9)
    own = family_log_density("gen_waring", {"r": r, "a": a, "b": b}, x)
    assert np.allclose(own, expected, rtol=1e-12)


@pytest.mark.parametrize(
    ("kind", "r", "points"),
    [
        (MixtureKind.hgzy, 1.0, [0, 1, 4]),
        (MixtureKind.hgzy, 1.5, [0, 2, 7]),
        (MixtureKind.hgzy_prime, 1.0, [0, 3]),
        (MixtureKind.hgzy_prime, 1.5, [0, 2]),
    ],
)
def test_frequency_mixtures_match_oracle(kind: MixtureKind, r: float, points: list[int]) -> None:
    m = MixtureModel(kind=kind, r=r, params=FREQ)
    law = HGSBLaw(FREQ, complementary=kind is MixtureKind.hgzy_prime)
    got = np.exp(m.log_density(points))
    want = [quad_mixture_pmf(r, law, x) for x in points]
    assert np.allclose(got, want, rtol=1e-7)


@pytest.mark.parametrize(
    ("kind", "r", "points"),
    [
        (MixtureKind.hgss, 1.0, [0.5, 2.0, 10.0]),
        (MixtureKind.hgss, 2.5, [0.3, 4.0]),
        (MixtureKind.hgss_prime, 1.0, [0.5, 2.0]),
        (MixtureKind.hgss_prime, 1.5, [1.0]),
    ],
)
def test_severity_mixtures_match_oracle(kind: MixtureKind, r: float, points: list[float]) -> None:
    m = MixtureModel(kind=kind, r=r, params=SEV)
    law = HGSGLaw(SEV, inverse=kind is MixtureKind.hgss)
    got = np.exp(m.log_density(points))
    want = [quad_mixture_pdf(r, law, y) for y in points]
    assert np.allclose(got, want, rtol=1e-7)


def test_gamma_one_prime_uses_bessel_form() -> None:
    p = SevMixParams(alpha=2.0, beta=1.5, gamma=1.0, delta=math.inf)
    m = MixtureModel(kind=MixtureKind.hgss_prime, params=p)
    y = 0.7
    want = 2 * 1.5**1.5 / special.gamma(2.0) * y**0.5 * special.kv(1.0, 2 * math.sqrt(1.5 * y))
    assert math.exp(m.log_density([y])[0]) == pytest.approx(want, rel=1e-12)
    assert math.exp(family_log_density("pareto2_prime", {"alpha": 2.0, "beta": 1.5}, [y])[0]) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize(
    ("family", "free", "point"),
    [
        ("zeta", {"b": 1.5}, 2),
        ("yule", {"b": 2.0}, 3),
        ("quadratic", {"c": 1.5}, 2),
        ("zy", {"b": 2.0, "c": 0.5}, 1),
        ("waring", {"a": 1.5, "b": 2.0}, 4),
        ("kmix", {"b": 2.0, "c": 1.5}, 2),
        ("gzy", {"a": 1.2, "b": 2.0, "c": 0.7}, 3),
        ("gw2", {"a": 1.2, "b": 2.0, "c": 0.7}, 2),
        ("gen_waring", {"r": 2.0, "a": 1.5, "b": 2.5}, 3),
        ("yule_prime", {"b": 2.0}, 3),
        ("quadratic_prime", {"c": 1.5}, 2),
        ("waring_prime", {"a": 1.5, "b": 2.0}, 2),
        ("kmix_prime", {"b": 2.0, "c": 1.5}, 2),
        ("gw2_prime", {"a": 1.2, "b": 2.0, "c": 0.7}, 2),
        ("pareto2_a1", {"beta": 2.0}, 1.5),
        ("pareto2", {"alpha": 1.5, "beta": 2.0}, 0.5),
        ("pareto2_a1_prime", {"beta": 2.0}, 1.5),
        ("pareto2_prime", {"alpha": 1.5, "beta": 2.0}, 0.5),
    ],
)
def test_node_closed_forms_agree_with_parent(family: str, free: dict[str, float], point: float) -> None:
    assert pmf_pdf_by_family(family, free, point, rel_tol=1e-7) > 0


def test_consistency_error_on_wrong_closed_form(monkeypatch: pytest.MonkeyPatch) -> None:
    def broken(node: object, f: object, x: np.ndarray) -> np.ndarray:
        return np.full(len(x), math.log(0.5))

    monkeypatch.setattr(mixtures, "_freq_node_log_pmf", broken)
    with pytest.raises(ConsistencyError):
        pmf_pdf_by_family("waring", {"a": 1.0, "b": 1.0}, 3)


def test_series_failure_falls_back_to_oracle(monkeypatch: pytest.MonkeyPatch) -> None:
    def failing(r: float, x: int, ladder: object) -> tuple[float, float]:
        raise CancellationError("forced", math.nan, math.inf)

    monkeypatch.setattr(mixtures, "_abel_series", failing)
    r, a, b = 2.0, 1.5, 2.5
    m = MixtureModel(kind=MixtureKind.hgzy, r=r, params=FreqMixParams(a=a, b=b, c=1, d=1))
    before = fallback_count()
    got = m.log_density([1])[0]
    want = math.log(r) + special.betaln(a + 1, b + r) - special.betaln(a, b)
    assert got == pytest.approx(want, rel=1e-8)
    assert fallback_count() == before + 1


def test_model_validation() -> None:
    with pytest.raises(ValidationError):
        MixtureModel(kind=MixtureKind.hgzy, params=SEV)
    with pytest.raises(ValidationError):
        MixtureModel(kind=MixtureKind.hgss, r=0.0, params=SEV)
    with pytest.raises(ValidationError):
        FamilyModel(family="waring", free={"a": 1.0})
    m = MixtureModel(kind=MixtureKind.hgzy, params=FREQ)
    with pytest.raises(DomainError):
        m.log_density([-1])
    with pytest.raises(DomainError):
        m.log_density([1.5])
    with pytest.raises(DomainError):
        hgss_log_pdf(m, 1.0)
    with pytest.raises(DomainError):
        MixtureModel(kind=MixtureKind.hgss, params=SEV).log_density([0.0])


def test_sampling_is_deterministic_per_stream() -> None:
    m = FamilyModel(family="waring", free={"a": 1.0, "b": 3.0})
    first = m.sample(500, make_stream(7, 1))
    again = m.sample(500, make_stream(7, 1))
    other = m.sample(500, make_stream(7, 2))
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)
    assert first.dtype == np.int64
    assert first.min() >= 0
    with pytest.raises(DomainError):
        m.sample(0, make_stream(7, 1))


def test_sample_means_match_closed_forms() -> None:
    waring = FamilyModel(family="waring", free={"a": 1.0, "b": 3.0})
    counts = waring.sample(20_000, make_stream(11, 0))
    assert counts.mean() == pytest.approx(0.5, abs=0.05)
    pareto = FamilyModel(family="pareto2", free={"alpha": 3.0, "beta": 2.0})
    losses = pareto.sample(20_000, make_stream(11, 1))
    assert losses.min() > 0
    assert losses.mean() == pytest.approx(1.0, abs=0.1)


def _random_freq(seed: int) -> FreqMixParams:
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.6, 2.5, size=2)
    c, d = rng.uniform(0.5, 1.6, size=2)
    return FreqMixParams(a=a, b=b, c=c, d=d)


def _random_sev(seed: int) -> SevMixParams:
    rng = np.random.default_rng(seed)
    return SevMixParams(
        alpha=rng.uniform(0.6, 2.5),
        beta=rng.uniform(0.8, 3.0),
        gamma=rng.uniform(1.1, 2.0),
        delta=rng.uniform(1.5, 6.0),
    )


@pytest.mark.parametrize("seed", [3, 17, 29])
@pytest.mark.parametrize("r", [0.5, 2.0, 3.7])
@pytest.mark.parametrize("kind", [MixtureKind.hgzy, MixtureKind.hgzy_prime])
def test_random_frequency_mixtures_match_oracle(kind: MixtureKind, r: float, seed: int) -> None:
    p = _random_freq(seed)
    m = MixtureModel(kind=kind, r=r, params=p)
    law = HGSBLaw(p, complementary=kind is MixtureKind.hgzy_prime)
    points = [0, 1, 3, 8]
    want = [quad_mixture_pmf(r, law, x) for x in points]
    assert np.allclose(np.exp(m.log_density(points)), want, rtol=1e-7, atol=0.0)


@pytest.mark.parametrize("seed", [5, 11, 23])
@pytest.mark.parametrize("r", [0.5, 2.0, 3.7])
@pytest.mark.parametrize("kind", [MixtureKind.hgss, MixtureKind.hgss_prime])
def test_random_severity_mixtures_match_oracle(kind: MixtureKind, r: float, seed: int) -> None:
    p = _random_sev(seed)
    m = MixtureModel(kind=kind, r=r, params=p)
    law = HGSGLaw(p, inverse=kind is MixtureKind.hgss)
    points = [0.2, 1.0, 3.5, 12.0]
    want = [quad_mixture_pdf(r, law, y) for y in points]
    assert np.allclose(np.exp(m.log_density(points)), want, rtol=1e-7, atol=0.0)


@pytest.mark.parametrize("r", [0.5, 2.0, 3.7])
def test_frequency_mixture_pmf_sums_to_one(r: float) -> None:
    # b = 6 даёт хвост x^{-7}: остаток после x = 400 пренебрежим
    m = MixtureModel(kind=MixtureKind.hgzy, r=r, params=FreqMixParams(a=1.2, b=6.0, c=0.7, d=1.3))
    assert brute_pmf_sum(m.log_density, 400) == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("b", [1.0, 2.0])
def test_zeta_pmf_matches_zeta_closed_form(b: float) -> None:
    x = np.arange(12, dtype=float)
    got = np.exp(family_log_density("zeta", {"b": b}, x))
    assert np.allclose(got, (x + 1.0) ** (-(b + 1.0)) / special.zeta(b + 1.0), rtol=1e-10, atol=0.0)
    if b == 1.0:
        assert got[0] == pytest.approx(6.0 / math.pi**2, rel=1e-12)
    law = family_mixing_law("zeta", {"b": b})
    want = [quad_mixture_pmf(1.0, law, int(xv)) for xv in x[:4]]
    assert np.allclose(got[:4], want, rtol=1e-7, atol=0.0)


def test_waring_one_one_over_first_hundred_counts() -> None:
    x = np.arange(101, dtype=float)
    want = 1.0 / ((x + 1.0) * (x + 2.0))
    m = MixtureModel(kind=MixtureKind.hgzy, params=FreqMixParams(a=1, b=1, c=1, d=1))
    assert np.allclose(np.exp(m.log_density(x)), want, rtol=1e-12, atol=0.0)
    own = family_log_density("waring", {"a": 1.0, "b": 1.0}, x)
    assert np.allclose(np.exp(own), want, rtol=1e-12, atol=0.0)


@pytest.mark.parametrize("alpha", [1.0, 2.5])
@pytest.mark.parametrize(("r", "delta"), [(1.0, math.inf), (2.0, 4.0)])
def test_bessel_branch_matches_oracle(alpha: float, r: float, delta: float) -> None:
    p = SevMixParams(alpha=alpha, beta=1.5, gamma=1.0, delta=delta)
    m = MixtureModel(kind=MixtureKind.hgss_prime, r=r, params=p)
    points = [0.3, 1.0, 4.0]
    want = [quad_mixture_pdf(r, HGSGLaw(p), y) for y in points]
    assert np.allclose(np.exp(m.log_density(points)), want, rtol=1e-8, atol=0.0)


_NODE_VALUES = {"r": 1.7, "a": 1.3, "b": 2.2, "c": 0.8, "alpha": 1.4, "beta": 1.7, "gamma": 1.3}


@pytest.mark.parametrize(("child", "parent", "mapping"), EDGES, ids=[f"{c.value}->{p.value}" for c, p, _ in EDGES])
def test_child_density_equals_restricted_parent(child: FamilyId, parent: FamilyId, mapping: Mapping[str, str]) -> None:
    node = get_node(child)
    free = {name: _NODE_VALUES[name] for name in node.free}
    parent_free = {name: resolve(expr, free) for name, expr in mapping.items()}
    if node.kind in (MixtureKind.hgzy, MixtureKind.hgzy_prime):
        points = np.arange(25, dtype=float)
    else:
        points = np.geomspace(0.05, 40.0, 25)
    got = np.exp(family_log_density(child, free, points))
    want = np.exp(family_log_density(parent, parent_free, points))
    assert np.allclose(got, want, rtol=1e-7, atol=0.0)


def test_zy_approaches_zeta_as_c_vanishes() -> None:
    (child, parent, _), *_ = LIMIT_EDGES
    x = np.arange(25, dtype=float)
    limit = np.exp(family_log_density(child, {"b": 2.0}, x))
    near = np.exp(family_log_density(parent, {"b": 2.0, "c": 1e-3}, x))
    assert np.allclose(near, limit, rtol=1e-2, atol=0.0)
