"""Conditional future smiles: the local-vol smile flattens, the uncertain-vol one does not.

Both models price today's options identically. Seen from a future date t,
conditional on the spot sitting at its expected level, the local-vol
diffusion forgets its initial mixture and the one-year smile flattens. The
uncertain-vol model keeps a mixture of two flat smiles weighted by the
posterior. Pass a path count as the first argument (default 20 000).
"""

import sys

import numpy as np

from mixdyn.forward_smile import ForwardSmileRequest, conditional_future_smile, smile_flattening_metric
from mixdyn.localvol import LocalVolModel
from mixdyn.market import DATA_DIR
from mixdyn.simulation import SimConfig

n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
model = LocalVolModel.from_config(DATA_DIR / "fx_eurusd_2003.json")
mny = np.linspace(0.8, 1.2, 9)
sim = SimConfig(n_paths, dt=1e-3, seed=0)

print("K/S_bar:  " + " ".join(f"{m:6.2f}" for m in mny))
for engine in ("local-vol", "uncertain-vol"):
    print(f"\n{engine}")
    rows = []
    for t in (0, 1, 2, 3, 6, 7):
        row = conditional_future_smile(ForwardSmileRequest(model, t, t + 1, mny, sim, engine=engine))
        rows.append(row)
        print(f"t={t}y:    " + " ".join(f"{100 * p.implied_vol:6.2f}" for p in row))
    rep = smile_flattening_metric(rows)
    print("excursion (vol pts):", np.round(100 * rep.excursions, 2), "shrinking:", rep.monotone_decreasing)
