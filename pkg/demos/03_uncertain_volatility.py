"""The local-vol diffusion and the uncertain-volatility model share marginals.

Draw one of the component vols at time zero with the mixture weights and
run geometric Brownian motion with it: every marginal is the same mixture,
so vanilla prices coincide. Conditional on S_t = x the posterior over the
drawn vol is Lambda(t, x), and its expected squared vol is sigma_mix^2.
"""

import math

import numpy as np

from mixdyn.analysis import posterior_mc, posterior_weights_check
from mixdyn.localvol import LocalVolModel, sigma_mix_squared
from mixdyn.market import DATA_DIR, integrated_rate
from mixdyn.pricing import mixture_call
from mixdyn.simulation import SimConfig, mc_price, simulate_local_vol, simulate_uncertain_vol

model = LocalVolModel.from_config(DATA_DIR / "two_component.json")
T = 1.0
xs = np.array([0.8, 1.0, 1.25])
post, cond = posterior_weights_check(model, T, xs)
print("x      Bayes posterior      E[xi^2|x]   sigma_mix^2")
for x, p, c, s in zip(xs, post, cond, sigma_mix_squared(model, T, xs)):
    print(f"{x:4}  {np.round(p, 4)}  {c:.6f}   {s:.6f}")

cfg = SimConfig(100_000, dt=2e-3, horizon=T, seed=3)
lv = simulate_local_vol(model, cfg)
uv = simulate_uncertain_vol(model, cfg)
disc = math.exp(-integrated_rate(model.curve, 0, T, "domestic"))
print("\nK      local-vol MC     uncertain-vol MC   closed form")
for k in (0.8, 1.0, 1.2):
    a, sa = mc_price(lv, lambda s: np.maximum(s - k, 0), disc)
    b, sb = mc_price(uv, lambda s: np.maximum(s - k, 0), disc)
    print(f"{k:4}  {a:.5f}+-{sa:.5f}  {b:.5f}+-{sb:.5f}  {mixture_call(model, k, T):.5f}")

freq, se, n = posterior_mc(uv, 1.0)
print(f"\nlabel frequencies near x=1: {np.round(freq, 4)} +- {np.round(se, 4)} ({n} paths), "
      f"Lambda = {np.round(model.weights(T, 1.0), 4)}")
