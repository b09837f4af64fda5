"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (also collected in the
pytest terminal summary). Run standalone with ``python tests/test_acceptance.py``.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from mixdyn.analysis import (
    default_fp_grid,
    fokker_planck_evolve,
    fp_l1_distance,
    mixture_covariance_formula,
    normal_mixture_covariance,
    normal_mixture_covariance_mc,
    posterior_mc,
    posterior_weights_check,
    quadrature_moments,
    terminal_corr_avg_variance,
    terminal_corr_spot_vol,
)
from mixdyn.calibration import CalibrationProblem, calibrate
from mixdyn.forward_smile import ForwardSmileRequest, conditional_future_smile
from mixdyn.localvol import (
    LocalVolModel,
    general_coefficient_oracle,
    lognormal_drift,
    normal_mixture_coefficients,
    normal_mixture_drift,
    sigma_mix_squared,
)
from mixdyn.market import (
    DATA_DIR,
    MixtureSpec,
    YieldCurve,
    component_moments,
    integrated_rate,
    lambda_weights,
    mixture_cdf,
    mixture_density,
)
from mixdyn.pricing import SmilePoint, bs_call, bs_put, mixture_call, mixture_implied_vol
from mixdyn.simulation import SimConfig, mc_price, simulate_local_vol, simulate_uncertain_vol

N_PATHS = 200_000
SMILES = json.loads((DATA_DIR / "eurusd_2003_forward_smiles.json").read_text())
MNY = np.asarray(SMILES["moneyness"])


def record(log, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    print(line)
    log.append(line)
    return ok


@pytest.fixture(scope="module")
def fx():
    return LocalVolModel.from_config(DATA_DIR / "fx_eurusd_2003.json")


@pytest.fixture(scope="module")
def two():
    return LocalVolModel.from_config(DATA_DIR / "two_component.json")


@pytest.fixture(scope="module")
def ensembles(two):
    """Local-vol ensembles of the two-component fixture at each test horizon."""
    steps = {0.25: 1e-3, 1.0: 1e-3, 5.0: 2.5e-3}
    return {T: simulate_local_vol(two, SimConfig(N_PATHS, dt=dt, horizon=T, seed=2024))
            for T, dt in steps.items()}


# ---------------------------------------------------------------------------


def test_criterion_1_closed_form_row(fx, acceptance_log):
    ref = np.asarray(SMILES["rows"][0]["vols"])
    start = time.perf_counter()
    row = conditional_future_smile(ForwardSmileRequest(fx, 0.0, 1.0, MNY))
    elapsed = time.perf_counter() - start
    got = np.array([100 * p.implied_vol for p in row])
    dev = np.max(np.abs(got - ref))
    ok = dev <= 0.05 and elapsed < 1.0
    printed = LocalVolModel.from_config(DATA_DIR / "fx_eurusd_2003_as_printed.json")
    alt = conditional_future_smile(ForwardSmileRequest(printed, 0.0, 1.0, MNY))
    alt_dev = np.max(np.abs(np.array([100 * p.implied_vol for p in alt]) - ref))
    record(acceptance_log, 1, ok,
           f"max |dev| {dev:.3f} vol pts (tol 0.05), {elapsed * 1e3:.1f} ms; weights {list(fx.spec.weights)} "
           f"with vols {fx.spec.vols_at(1.0).tolist()}; as-printed pairing max |dev| {alt_dev:.1f}")
    assert ok


def test_criterion_2_simulated_rows(fx, acceptance_log):
    sim = SimConfig(N_PATHS, dt=1e-3, seed=0)
    worst, bad = 0.0, []
    start = time.perf_counter()
    for r in SMILES["rows"][1:]:
        t = float(r["t"])
        row = conditional_future_smile(ForwardSmileRequest(fx, t, t + 1.0, MNY, sim))
        got = np.array([100 * p.implied_vol for p in row])
        dev = got - np.asarray(r["vols"])
        worst = max(worst, float(np.nanmax(np.abs(dev))))
        bad += [f"{t:g}y@{m:.2f}:{d:+.2f}" for m, d in zip(MNY, dev) if not abs(d) <= 0.3]
    elapsed = time.perf_counter() - start
    ok = not bad
    record(acceptance_log, 2, ok,
           f"max |dev| {worst:.3f} vol pts (tol 0.3), {len(bad)}/45 cells out {bad}, {elapsed:.0f} s")
    assert ok


def test_criterion_3_decorrelation(two, ensembles, acceptance_log):
    lines, ok = [], True
    lam = np.asarray(two.spec.weights)
    for T, ens in ensembles.items():
        rs = terminal_corr_spot_vol(ens, two, T)
        rv = terminal_corr_avg_variance(ens, T)
        q = quadrature_moments(two, T)
        closed = math.exp(integrated_rate(two.curve, 0, T)) * two.s0 * lam @ two.spec.vols_at(T) ** 2
        rel = abs(q["E_sigma2_S"] / closed - 1)
        ok &= rs.consistent_with_zero() and rv.consistent_with_zero() and rel < 1e-8
        lines.append(f"T={T:g}: z(S,sig2)={rs.z_score:+.2f} z(S,v)={rv.z_score:+.2f} moment rel {rel:.1e}")
    record(acceptance_log, 3, ok, "; ".join(lines) + " (tol |z|<3, rel<1e-8)")
    assert ok


def test_criterion_4_marginal_tracking(two, ensembles, acceptance_log):
    ens = ensembles[1.0]
    p = stats.kstest(ens.terminal(), lambda x: mixture_cdf(two.spec, two.curve, 1.0, x)).pvalue
    grid = default_fp_grid(two, 1.0, 2000)
    res = fokker_planck_evolve(two, grid, 1.0, n_steps=2000)
    l1 = fp_l1_distance(two, res)
    ok = p > 0.01 and l1 < 1e-3
    record(acceptance_log, 4, ok, f"KS p={p:.3f} (n={ens.terminal().size}, need >0.01); "
                                  f"Fokker-Planck L1={l1:.2e} (tol 1e-3), mass drift {res.mass_drift:.1e}")
    assert ok


def test_criterion_5_oracle_equivalence(fx, acceptance_log):
    rng = np.random.default_rng(5)
    worst = 0.0
    normal = LocalVolModel(MixtureSpec.normal([0.4, 0.6], [0.1, -0.05], [0.2, 0.45], s0=0.0))
    for _ in range(10):
        t, y = rng.uniform(0.05, 6.0), fx.s0 * math.exp(rng.uniform(-0.5, 0.5))
        want = sigma_mix_squared(fx, t, y) * y * y
        worst = max(worst, abs(general_coefficient_oracle(fx, lognormal_drift(fx), t, y) / want - 1))
    for _ in range(10):
        t, y = rng.uniform(0.05, 6.0), rng.uniform(-1.0, 1.0)
        want = normal_mixture_coefficients(normal, t, y)[1]
        worst = max(worst, abs(general_coefficient_oracle(normal, normal_mixture_drift(normal), t, y) / want - 1))
    ok = worst < 1e-6
    record(acceptance_log, 5, ok, f"max relative gap {worst:.2e} over 20 (t, y) points (tol 1e-6)")
    assert ok


def test_criterion_6_uncertain_vol_equivalence(two, ensembles, acceptance_log):
    T = 1.0
    xs = np.geomspace(0.5, 2.0, 50)
    _, cond = posterior_weights_check(two, T, xs)
    ident = float(np.max(np.abs(cond - sigma_mix_squared(two, T, xs))))
    unc = simulate_uncertain_vol(two, SimConfig(N_PATHS, dt=1e-3, seed=77))
    zs = []
    for x in (0.85, 1.0, 1.2):
        freq, se, _ = posterior_mc(unc, x)
        zs.append(float(np.max(np.abs(freq - two.weights(T, x)) / se)))
    lv = ensembles[1.0]
    disc = math.exp(-integrated_rate(two.curve, 0, T, "domestic"))
    zp = []
    for k in np.linspace(0.8, 1.2, 9) * two.s0:
        a, sa = mc_price(lv, lambda s: np.maximum(s - k, 0.0), disc)
        b, sb = mc_price(unc, lambda s: np.maximum(s - k, 0.0), disc)
        zp.append(abs(a - b) / math.hypot(sa, sb))
    ok = ident < 1e-12 and max(zs) < 3 and max(zp) < 3
    record(acceptance_log, 6, ok, f"identity gap {ident:.1e} (tol 1e-12); posterior max z {max(zs):.2f}; "
                                  f"LV vs UV price max z {max(zp):.2f} (tol 3)")
    assert ok


def test_criterion_7_normal_covariance(acceptance_log):
    equal = MixtureSpec.normal([0.3, 0.7], [0.1, 0.1], [0.2, 0.6], s0=0.5)
    c0 = normal_mixture_covariance(equal, 2.0)
    hand = mixture_covariance_formula([0.5, 0.5], [1.0, -1.0], [1.0, 4.0])
    spread = MixtureSpec.normal([0.5, 0.5], [1.0, -1.0], [1.0, 2.0], s0=0.0, epsilon=0.0)
    model = LocalVolModel(spread)
    exact = normal_mixture_covariance(spread, 1.0)
    ens = simulate_local_vol(model, SimConfig(N_PATHS, dt=1e-3, scheme="euler-level", seed=7))
    est, se = normal_mixture_covariance_mc(model, ens)
    z = (est - exact) / se
    ok = c0 == 0.0 and hand == -1.5 and exact == -1.5 and abs(z) < 3
    record(acceptance_log, 7, ok, f"equal means {c0}, hand case {hand}, model {exact}; MC {est:.4f} "
                                  f"+- {se:.4f} (z {z:+.2f})")
    assert ok


def test_criterion_8_calibration_round_trip(fx, acceptance_log):
    gen = LocalVolModel(MixtureSpec.lognormal([0.65, 0.35], [0.11, 0.32], 1.07), fx.curve)
    K = 1.07 * MNY
    quotes = [SmilePoint(0.0, 1.0, k, v) for k, v in zip(K, mixture_implied_vol(gen, K, 1.0))]
    res = calibrate(CalibrationProblem(quotes, 2, 1.07, fx.curve))
    worst = float(np.max(np.abs(res.residuals)))
    ok = res.loss_value < 1e-10 and worst < 1e-6
    record(acceptance_log, 8, ok, f"loss {res.loss_value:.1e} (tol 1e-10), max vol residual {worst:.1e} "
                                  f"(tol 1e-6), recovered weights {np.round(res.spec.weights, 8).tolist()} "
                                  f"vols {np.round(res.spec.vols_at(1.0), 8).tolist()}")
    assert ok


def test_criterion_9_property_suites(acceptance_log):
    rng = np.random.default_rng(9)
    fails = []
    curve = YieldCurve.flat(0.03, 0.01)
    for case in range(40):
        m = rng.integers(1, 4)
        w = rng.dirichlet(np.ones(m))
        vols = np.sort(rng.uniform(0.05, 0.9, m))
        spec = MixtureSpec.lognormal(w, vols, rng.uniform(0.5, 2.0))
        model = LocalVolModel(spec, curve)
        t = rng.uniform(0.01, 5.0)
        y = spec.s0 * np.exp(rng.normal(0, 0.5, 20))
        if np.max(np.abs(lambda_weights(spec, curve, t, y).sum(axis=-1) - 1)) > 1e-14:
            fails.append(f"Lambda normalization case {case}")
        loc, var = component_moments(spec, curve, t)
        z = np.linspace(np.min(loc - 12 * np.sqrt(var)), np.max(loc + 12 * np.sqrt(var)), 40001)
        dens = mixture_density(spec, curve, t, np.exp(z)) * np.exp(z)
        if abs(integrate.trapezoid(dens, z) - 1) > 1e-8:
            fails.append(f"density normalization case {case}")
        K = spec.s0 * np.linspace(0.5, 2.0, 31)
        Rd, Rf = integrated_rate(curve, 0, t, "domestic"), integrated_rate(curve, 0, t, "foreign")
        V = rng.uniform(0.01, 1.0)
        par = bs_call(spec.s0, K, t, Rd, Rf, V) - bs_put(spec.s0, K, t, Rd, Rf, V)
        if np.max(np.abs(par - (spec.s0 * math.exp(-Rf) - K * math.exp(-Rd)))) > 1e-12 * spec.s0:
            fails.append(f"parity case {case}")
        c = mixture_call(model, K, t)
        if np.any(np.diff(c) > 1e-13) or np.any(np.diff(c, 2) < -1e-13):
            fails.append(f"monotone/convex case {case}")
    flat = LocalVolModel(MixtureSpec.lognormal([1.0], [0.21], 1.0), curve)
    if np.max(np.abs(mixture_implied_vol(flat, np.linspace(0.7, 1.4, 15), 2.0) - 0.21)) > 1e-10:
        fails.append("flat smile")
    cfg = SimConfig(5000, dt=0.01, seed=3, block_size=2000)
    if not np.array_equal(simulate_local_vol(flat, cfg).paths, simulate_local_vol(flat, cfg).paths):
        fails.append("seed determinism")
    ok = not fails
    record(acceptance_log, 9, ok, "Lambda/density normalization, parity, monotone+convex prices, flat smile, "
                                  f"seed determinism over 40 random cases; failures: {fails or 'none'}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
