import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from mixdyn.localvol import LocalVolModel
from mixdyn.market import MixtureSpec, YieldCurve, integrated_rate, mixture_density
from mixdyn.pricing import (
    ImpliedVolError,
    OptionQuote,
    SmilePoint,
    StepSizeError,
    bs_call,
    bs_put,
    implied_density,
    implied_vol,
    mixture_call,
    mixture_implied_vol,
    mixture_put,
)


def test_bs_textbook_value():
    # S=42, K=40, r=10%, sigma=20%, six months
    c = bs_call(42.0, 40.0, 0.5, 0.05, 0.0, 0.2 * math.sqrt(0.5))
    assert c == pytest.approx(4.759422392871532, rel=1e-12)
    p = bs_put(42.0, 40.0, 0.5, 0.05, 0.0, 0.2 * math.sqrt(0.5))
    assert p == pytest.approx(0.8085993729000922, rel=1e-11)


def test_bs_matches_quadrature_with_carry():
    s, K, Rd, Rf, V = 1.07, 1.1, 0.03, 0.012, 0.17
    fwd = s * math.exp(Rd - Rf)
    dist = stats.lognorm(s=V, scale=fwd * math.exp(-0.5 * V * V))
    val, _ = integrate.quad(lambda x: (x - K) * dist.pdf(x), K, np.inf, epsabs=1e-14)
    assert bs_call(s, K, 1.0, Rd, Rf, V) == pytest.approx(math.exp(-Rd) * val, rel=1e-10)


def test_bs_edge_cases():
    assert bs_call(1.0, 0.9, 1.0, 0.02, 0.01, 0.0) == pytest.approx(math.exp(-0.01) - 0.9 * math.exp(-0.02))
    assert bs_call(1.0, 1.2, 1.0, 0.0, 0.0, 0.0) == 0.0
    assert bs_call(1.3, 0.0, 1.0, 0.02, 0.01, 0.2) == pytest.approx(1.3 * math.exp(-0.01))
    with pytest.raises(ValueError):
        bs_call(1.0, 1.0, 0.0, 0, 0, 0.1)
    with pytest.raises(ValueError):
        bs_call(-1.0, 1.0, 1.0, 0, 0, 0.1)


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0.2, 5.0), k=st.floats(0.5, 2.0), V=st.floats(0.01, 1.5),
       rd=st.floats(-0.02, 0.1), rf=st.floats(-0.02, 0.1))
def test_put_call_parity(s, k, V, rd, rf):
    K = k * s
    lhs = bs_call(s, K, 1.0, rd, rf, V) - bs_put(s, K, 1.0, rd, rf, V)
    assert lhs == pytest.approx(s * math.exp(-rf) - K * math.exp(-rd), abs=1e-12 * max(s, K))


@settings(max_examples=60, deadline=None)
@given(m=st.floats(0.6, 1.6), sig=st.floats(0.03, 1.2), tau=st.floats(0.05, 8.0),
       rd=st.floats(-0.01, 0.08), rf=st.floats(-0.01, 0.08))
def test_implied_vol_round_trip(m, sig, tau, rd, rf):
    s = 1.07
    K = m * s
    V = sig * math.sqrt(tau)
    price = bs_call(s, K, tau, rd * tau, rf * tau, V)
    lo = max(s * math.exp(-rf * tau) - K * math.exp(-rd * tau), 0.0)
    # skip prices indistinguishable from the bounds in double precision
    if price - lo < 1e-12 * s or s * math.exp(-rf * tau) - price < 1e-12 * s:
        return
    got = implied_vol(price, s, K, tau, rd * tau, rf * tau)
    assert bs_call(s, K, tau, rd * tau, rf * tau, got) == pytest.approx(price, rel=1e-11, abs=1e-15)
    if price - lo > 1e-8 * s:
        assert got == pytest.approx(V, rel=1e-6)


def test_implied_vol_bounds():
    with pytest.raises(ImpliedVolError) as e:
        implied_vol(0.0, 1.0, 1.2, 1.0, 0.0, 0.0)
    assert e.value.bound == "lower"
    with pytest.raises(ImpliedVolError) as e:
        implied_vol(1.0, 1.0, 1.2, 1.0, 0.0, 0.0)
    assert e.value.bound == "upper"


def test_implied_vol_vectorized():
    K = np.linspace(0.7, 1.4, 15)
    V = 0.1 + 0.2 * (K - 1.0) ** 2
    prices = bs_call(1.0, K, 2.0, 0.04, 0.01, V)
    assert np.allclose(implied_vol(prices, 1.0, K, 2.0, 0.04, 0.01), V, rtol=1e-10)


def test_single_component_mixture_is_black_scholes():
    model = LocalVolModel(MixtureSpec.lognormal([1.0], [0.22], 1.1), YieldCurve.flat(0.03, 0.01))
    K = np.linspace(0.8, 1.4, 7)
    iv = mixture_implied_vol(model, K, 2.5)
    # the regularization level equals the vol itself, so the smile is exactly flat
    assert np.allclose(iv, 0.22, rtol=1e-12)


def test_mixture_call_is_weighted_black_scholes(fx_model):
    T, K = 2.0, 1.1
    Rd = integrated_rate(fx_model.curve, 0, T, "domestic")
    Rf = integrated_rate(fx_model.curve, 0, T, "foreign")
    V = np.sqrt(fx_model.spec.variances(T))
    want = sum(l * bs_call(1.07, K, T, Rd, Rf, v) for l, v in zip(fx_model.spec.weights, V))
    assert mixture_call(fx_model, K, T) == pytest.approx(want, rel=1e-15)


def test_mixture_call_matches_density_quadrature(three_comp):
    T, K = 1.5, 1.3
    Rd = integrated_rate(three_comp.curve, 0, T, "domestic")
    # in log coordinates so the heavy right tail is covered
    f = lambda z: (math.exp(z) - K) * mixture_density(three_comp.spec, three_comp.curve, T, math.exp(z)) * math.exp(z)
    val, _ = integrate.quad(f, math.log(K), 12.0, limit=300, epsabs=1e-14)
    assert mixture_call(three_comp, K, T) == pytest.approx(math.exp(-Rd) * val, rel=1e-9)


def test_mixture_parity(fx_model):
    K = np.linspace(0.8, 1.3, 6)
    T = 3.0
    Rd = integrated_rate(fx_model.curve, 0, T, "domestic")
    Rf = integrated_rate(fx_model.curve, 0, T, "foreign")
    diff = mixture_call(fx_model, K, T) - mixture_put(fx_model, K, T)
    assert np.allclose(diff, 1.07 * math.exp(-Rf) - K * math.exp(-Rd), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(w=st.floats(0.05, 0.95), v1=st.floats(0.05, 0.4), v2=st.floats(0.2, 1.2), T=st.floats(0.1, 5.0))
def test_mixture_prices_monotone_and_convex_in_strike(w, v1, v2, T):
    model = LocalVolModel(MixtureSpec.lognormal([w, 1 - w], [v1, v2], 1.0), YieldCurve.flat(0.02, 0.01))
    K = np.linspace(0.5, 2.0, 61)
    c = mixture_call(model, K, T)
    tol = 1e-13
    assert np.all(np.diff(c) <= tol)
    assert np.all(np.diff(c, 2) >= -tol)


def test_implied_density_recovers_mixture(fx_model):
    T = 1.0
    Rd = integrated_rate(fx_model.curve, 0, T, "domestic")
    for K in (0.95, 1.07, 1.2):
        got = implied_density(lambda k: mixture_call(fx_model, k, T), T, K, 1e-4, Rd)
        want = mixture_density(fx_model.spec, fx_model.curve, T, K)
        assert got == pytest.approx(want, rel=1e-5)


def test_implied_density_rejects_tiny_step(fx_model):
    with pytest.raises(StepSizeError):
        implied_density(lambda k: mixture_call(fx_model, k, 1.0), 1.0, 1.07, 1e-9, 0.0)


def test_value_types():
    with pytest.raises(ValueError):
        OptionQuote(0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        SmilePoint(1.0, 1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        SmilePoint(0.0, 1.0, 1.0, -0.1)
    assert math.isnan(SmilePoint(0.0, 1.0, 1.0, math.nan, status="na").implied_vol)
