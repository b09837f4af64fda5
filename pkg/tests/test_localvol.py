
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixdyn.localvol import (
    LocalVolModel,
    LogSigmaEvaluator,
    exp_transform_coefficients,
    general_coefficient_oracle,
    lognormal_drift,
    normal_mixture_coefficients,
    normal_mixture_coefficients_dy,
    normal_mixture_drift,
    sigma_mix_squared,
    sigma_mix_squared_dy,
)
from mixdyn.market import MixtureSpec, YieldCurve

SAMPLE = [(0.05, 0.95), (0.3, 1.1), (0.5, 1.0), (1.0, 1.07), (1.0, 1.4), (2.0, 0.9), (3.3, 0.6), (5.5, 1.8)]


def test_sigma_mix_lies_between_component_vols(fx_model):
    y = np.geomspace(0.3, 4.0, 200)
    for t in (0.01, 0.5, 2.0, 7.5):
        s2 = sigma_mix_squared(fx_model, t, y)
        nu2 = fx_model.spec.vols_at(t) ** 2
        assert np.all(s2 >= nu2.min() - 1e-15) and np.all(s2 <= nu2.max() + 1e-15)


def test_sigma_mix_on_regularization_segment(fx_model):
    eps = fx_model.spec.epsilon
    s2 = sigma_mix_squared(fx_model, eps / 2, np.array([0.9, 1.07, 1.3]))
    assert np.allclose(s2, 0.9747 * 0.0899 ** 2 + 0.0253 * 0.7572 ** 2, rtol=1e-14)


def test_single_component_is_flat():
    model = LocalVolModel(MixtureSpec.lognormal([1.0], [0.23], 1.0), YieldCurve.flat(0.02))
    s2 = sigma_mix_squared(model, 1.3, np.geomspace(0.1, 10, 50))
    assert np.allclose(s2, 0.23 ** 2, rtol=0, atol=1e-16)


def test_fast_evaluator_matches_closed_form(fx_model, three_comp):
    for model in (fx_model, three_comp):
        ev = LogSigmaEvaluator(model)
        y = np.geomspace(0.2, 5.0, 300)
        for t in (1e-5, 0.2, 1.0, 4.0):
            assert np.allclose(ev(t, np.log(y)), sigma_mix_squared(model, t, y), rtol=1e-12, atol=0)


def test_slope_matches_finite_difference(three_comp):
    y = np.array([0.7, 1.0, 1.25, 1.9])
    h = 1e-6
    fd = (sigma_mix_squared(three_comp, 0.8, y + h) - sigma_mix_squared(three_comp, 0.8, y - h)) / (2 * h)
    assert np.allclose(sigma_mix_squared_dy(three_comp, 0.8, y), fd, rtol=1e-6, atol=1e-9)


def test_normal_mixture_slopes_match_finite_difference(normal_model):
    y = np.array([-0.5, 0.1, 0.8])
    h = 1e-6
    f_hi, s_hi = normal_mixture_coefficients(normal_model, 1.5, y + h)
    f_lo, s_lo = normal_mixture_coefficients(normal_model, 1.5, y - h)
    df, ds = normal_mixture_coefficients_dy(normal_model, 1.5, y)
    assert np.allclose(df, (f_hi - f_lo) / (2 * h), rtol=1e-6)
    assert np.allclose(ds, (s_hi - s_lo) / (2 * h), rtol=1e-6)


@pytest.mark.parametrize("t,y", SAMPLE)
def test_oracle_reproduces_lognormal_closed_form(fx_model, t, y):
    got = general_coefficient_oracle(fx_model, lognormal_drift(fx_model), t, y)
    want = sigma_mix_squared(fx_model, t, y) * y * y
    assert got == pytest.approx(want, rel=1e-9)


@pytest.mark.parametrize("t,y", [(0.5, 1.0), (1.0, 1.2), (2.0, 0.9)])
def test_oracle_with_numerical_time_derivative(fx_model, t, y):
    got = general_coefficient_oracle(fx_model, lognormal_drift(fx_model), t, y, analytic=False)
    want = sigma_mix_squared(fx_model, t, y) * y * y
    assert got == pytest.approx(want, rel=1e-7)


@pytest.mark.parametrize("t,y", [(0.2, -0.3), (1.0, 0.0), (1.0, 0.35), (3.0, 1.2)])
def test_oracle_reproduces_normal_closed_form(normal_model, t, y):
    got = general_coefficient_oracle(normal_model, normal_mixture_drift(normal_model), t, y)
    _, want = normal_mixture_coefficients(normal_model, t, y)
    assert got == pytest.approx(want, rel=1e-9)


def test_oracle_rejects_bad_points(fx_model):
    with pytest.raises(ValueError):
        general_coefficient_oracle(fx_model, lognormal_drift(fx_model), 0.0, 1.0)
    with pytest.raises(ValueError):
        general_coefficient_oracle(fx_model, lognormal_drift(fx_model), 1.0, -1.0)


def test_normal_mixture_with_common_drift_has_constant_drift():
    spec = MixtureSpec.normal([0.3, 0.7], [0.05, 0.05], [0.1, 0.4])
    f, _ = normal_mixture_coefficients(LocalVolModel(spec), 2.0, np.linspace(-2, 2, 9))
    assert np.allclose(f, 0.05, rtol=1e-14)


def test_exp_transform(normal_model):
    s = np.array([0.5, 1.0, 2.0])
    drift, diff = exp_transform_coefficients(normal_model, 1.0, s)
    f, s2 = normal_mixture_coefficients(normal_model, 1.0, np.log(s))
    assert np.allclose(drift, s * (f + 0.5 * s2))
    assert np.allclose(diff, s * np.sqrt(s2))
    with pytest.raises(ValueError):
        exp_transform_coefficients(normal_model, 1.0, -1.0)


def test_mode_mismatch_raises(fx_model, normal_model):
    with pytest.raises(ValueError):
        sigma_mix_squared(normal_model, 1.0, 1.0)
    with pytest.raises(ValueError):
        normal_mixture_coefficients(fx_model, 1.0, 1.0)
    with pytest.raises(ValueError):
        sigma_mix_squared(fx_model, 1.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(w=st.floats(0.01, 0.99), v1=st.floats(0.05, 0.5), v2=st.floats(0.05, 1.5),
       t=st.floats(0.001, 10.0), y=st.floats(0.05, 20.0))
def test_local_variance_is_convex_combination(w, v1, v2, t, y):
    model = LocalVolModel(MixtureSpec.lognormal([w, 1 - w], [v1, v2], 1.0), YieldCurve.flat(0.01))
    s2 = sigma_mix_squared(model, t, y)
    assert min(v1, v2) ** 2 * (1 - 1e-12) <= s2 <= max(v1, v2) ** 2 * (1 + 1e-12)
