import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize

from nlch.errors import DomainViolation
from nlch.kernel import build_kernel, build_symbol
from nlch.potential import GraphKind, MonotoneGraph, preset, resolvent, total_free_energy, yosida, yosida_primitive
from nlch.torus import ScalarField, TorusGrid

KINDS = ["cubic", "logarithmic", "obstacle"]
LAMBDAS = [1.0, 1e-2, 1e-4]
reals = st.floats(-20, 20, allow_nan=False)


def graph(kind):
    return preset(kind).graph


def _bisect_resolvent(g, lam, s):
    if g.kind is GraphKind.OBSTACLE:
        return float(np.clip(s, -1, 1))
    lo, hi = g.domain
    lo, hi = max(lo, -abs(s) - 1), min(hi, abs(s) + 1)
    if g.kind is GraphKind.LOGARITHMIC:
        lo, hi = -1 + 1e-15, 1 - 1e-15
        f = lambda r: r + lam * float(g.gamma(r)) - abs(s)
        if f(hi) < 0:
            return float(np.sign(s))  # root closer to the boundary than double precision resolves
    return optimize.brentq(lambda r: r + lam * float(g.gamma(r)) - s, lo, hi, xtol=1e-15, rtol=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_resolvent_at_zero(kind):
    for lam in LAMBDAS:
        assert resolvent(graph(kind), lam, 0.0) == 0.0
        assert yosida(graph(kind), lam, 0.0) == 0.0
        assert yosida_primitive(graph(kind), lam, 0.0) == 0.0


def test_closed_form_examples():
    ob = graph("obstacle")
    assert resolvent(ob, 0.3, 1.5) == 1.0
    assert yosida(ob, 0.5, 1.5) == 1.0
    assert yosida_primitive(ob, 0.5, 1.5) == 0.25
    assert resolvent(graph("cubic"), 1.0, 2.0) == pytest.approx(1.0, abs=1e-15)
    assert abs(yosida(graph("cubic"), 1e-4, 1.3) - 2.197) < 1e-2


@given(st.sampled_from(KINDS), st.sampled_from(LAMBDAS), st.floats(-3, 3))
def test_resolvent_against_bisection(kind, lam, s):
    g = graph(kind)
    r = float(resolvent(g, lam, s))
    oracle = _bisect_resolvent(g, lam, s)
    # log clamp keeps r within 1e-12 of the boundary
    assert r == pytest.approx(oracle, abs=2e-12)


@given(st.sampled_from(LAMBDAS), reals)
def test_cubic_consistency(lam, s):
    r = resolvent(graph("cubic"), lam, s)
    assert float(yosida(graph("cubic"), lam, s)) == pytest.approx(float(r) ** 3, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("kind", ["cubic", "logarithmic"])
@pytest.mark.parametrize("lam", [1e-1, 1e-2])
def test_primitive_against_quadrature(kind, lam):
    g = graph(kind)
    for s in (-1.7, -0.4, 0.3, 0.95, 2.5):
        oracle, _ = integrate.quad(lambda r: float(yosida(g, lam, r)), 0, s, epsabs=1e-13, epsrel=1e-11, limit=200)
        assert float(yosida_primitive(g, lam, s)) == pytest.approx(oracle, rel=1e-8, abs=1e-12)


def test_cubic_primitive_increases_as_lambda_decreases():
    g = graph("cubic")
    s = np.linspace(-2, 2, 41)
    vals = [yosida_primitive(g, lam, s) for lam in (1e-1, 1e-2, 1e-3)]
    assert np.all(vals[0] <= vals[1] + 1e-15) and np.all(vals[1] <= vals[2] + 1e-15)
    assert np.all(vals[2] <= 0.25 * s**4 + 1e-15)
    assert np.max(np.abs(vals[2] - 0.25 * s**4)) < 0.05


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("lam", LAMBDAS)
def test_primitive_convex_nonnegative_below_gamma_hat(kind, lam):
    g = graph(kind)
    s = np.linspace(-3, 3, 601)
    p = yosida_primitive(g, lam, s)
    assert np.all(p >= 0)
    assert np.all(np.diff(p, 2) >= -1e-12)
    assert np.all(p <= g.primitive(s) + 1e-12)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("lam", LAMBDAS)
def test_yosida_properties_on_sampled_pairs(kind, lam):
    g = graph(kind)
    rng = np.random.default_rng(hash((kind, lam)) % 2**32)
    a = rng.uniform(-3, 3, 10_000)
    b = rng.uniform(-3, 3, 10_000)
    ga, gb = yosida(g, lam, a), yosida(g, lam, b)
    assert np.all((ga - gb) * (a - b) >= -1e-12)
    assert np.all(np.abs(ga - gb) <= np.abs(a - b) / lam * (1 + 1e-9) + 1e-12)
    ra, rb = resolvent(g, lam, a), resolvent(g, lam, b)
    assert np.all(np.abs(ra - rb) <= np.abs(a - b) + 1e-12)


@pytest.mark.parametrize("kind,slope", [("cubic", 1.0), ("obstacle", 1.0), ("logarithmic", 1.0)])
def test_lipschitz_part_constants(kind, slope):
    split = preset(kind)
    s = np.linspace(-2, 2, 4001)
    sampled = np.max(np.abs(np.diff(split.lip(s)) / np.diff(s)))
    assert sampled == pytest.approx(slope, rel=1e-12)
    assert split.lip.lipschitz_const == pytest.approx(slope)


def test_log_lipschitz_is_two_c():
    split = preset("logarithmic", theta=0.2, c=0.8)
    assert split.lip.lipschitz_const == pytest.approx(1.6)


@pytest.mark.parametrize("kind", KINDS)
def test_potential_normalized_to_zero_minimum(kind):
    split = preset(kind)
    s = np.linspace(-1, 1, 200_001) if kind != "cubic" else np.linspace(-2, 2, 400_001)
    F = split.F(s)
    assert F.min() >= -1e-12
    assert F.min() < 1e-9


def test_graph_domains():
    log = MonotoneGraph(GraphKind.LOGARITHMIC, 0.3)
    with pytest.raises(DomainViolation):
        log.gamma(1.0)
    assert np.isinf(log.primitive(1.5))
    assert np.isfinite(log.primitive(1.0))
    ob = MonotoneGraph(GraphKind.OBSTACLE)
    assert ob.gamma(0.5) == 0 and np.isinf(ob.primitive(1.01))


def test_log_resolvent_near_boundary():
    g = graph("logarithmic")
    r = resolvent(g, 1e-4, np.array([5.0, -50.0, 0.999]))
    assert np.all(np.abs(r) < 1)
    assert np.all(np.diff(resolvent(g, 1e-2, np.linspace(-3, 3, 1001))) >= 0)


def test_invalid_lambda():
    with pytest.raises(ValueError):
        resolvent(graph("cubic"), 0.0, 1.0)


def test_total_free_energy_examples():
    g = TorusGrid(2, 16)
    split = preset("cubic")
    sym = build_symbol(build_kernel("smooth_bump", 0.5, 2), g)
    for model in (sym, "local"):
        assert total_free_energy(split, model, ScalarField.constant(g, 1.0), 0.0) == pytest.approx(0.0, abs=1e-13)
        assert total_free_energy(split, model, ScalarField.constant(g, 0.0), 1e-2) == pytest.approx(np.pi**2, rel=1e-13)


def test_total_free_energy_domain_violation():
    g = TorusGrid(2, 16)
    with pytest.raises(DomainViolation):
        total_free_energy(preset("logarithmic"), "local", ScalarField.constant(g, 1.5), 0.0)
    # regularized path stays finite
    assert np.isfinite(total_free_energy(preset("logarithmic"), "local", ScalarField.constant(g, 1.5), 1e-2))
