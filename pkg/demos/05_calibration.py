"""Fit a two-component mixture to a one-year smile.

The quotes here are the time-zero row of the EUR/USD conditional-smile
fixture. Eight deterministic starts feed a bounded trust-region
least-squares solver; the residuals are in vol points.
"""

import json

import numpy as np

from mixdyn.calibration import CalibrationProblem, calibrate
from mixdyn.market import DATA_DIR, eurusd_2003_curve
from mixdyn.pricing import SmilePoint

doc = json.loads((DATA_DIR / "eurusd_2003_forward_smiles.json").read_text())
row = doc["rows"][0]
s0 = row["expected_spot"]
quotes = [SmilePoint(0.0, 1.0, s0 * m, v / 100) for m, v in zip(doc["moneyness"], row["vols"])]

res = calibrate(CalibrationProblem(quotes, 2, s0, eurusd_2003_curve()))
print("weights", np.round(res.spec.weights, 5), "vols", np.round(res.spec.vols_at(1.0), 5))
print("loss", f"{res.loss_value:.3e}", "converged", res.converged)
print("residuals (vol pts):", np.round(100 * res.residuals, 3))
print("starts:", [round(s["cost"], 10) for s in res.starts])
