"""A two-component lognormal mixture and the smile it implies.

Prices are weighted Black-Scholes prices, so the whole smile is closed form.
The local volatility that reproduces this law is printed next to it: it
bottoms out near the forward, where the narrow component dominates, and
climbs towards the wide component's vol in both wings.
"""

import numpy as np

from mixdyn import LocalVolModel, mixture_implied_vol, sigma_mix_squared
from mixdyn.market import DATA_DIR

model = LocalVolModel.from_config(DATA_DIR / "fx_eurusd_2003.json")
print(f"weights {model.spec.weights}, vols {model.spec.vols_at(1.0)}, s0 {model.s0}")

moneyness = np.linspace(0.8, 1.2, 9)
for T in (0.5, 1.0, 3.0):
    iv = mixture_implied_vol(model, moneyness * model.s0, T)
    print(f"T={T:>4}: " + " ".join(f"{100 * v:6.2f}" for v in iv))

# the local vol surface sigma_mix(t, y)
levels = model.s0 * np.array([0.7, 0.85, 1.0, 1.15, 1.3])
print("\nsigma_mix(t, y) in %, y =", levels.round(3))
for t in (0.05, 0.25, 1.0, 4.0):
    s = np.sqrt(sigma_mix_squared(model, t, levels))
    print(f"t={t:>5}: " + " ".join(f"{100 * v:6.2f}" for v in s))
