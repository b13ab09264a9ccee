"""
Monte-Carlo check of a funnel
=============================

Starts closed-loop simulations on the boundary of the entry ellipsoid,
drives them with random unit-norm disturbances held over short intervals
and records the largest Lyapunov value each run reaches.  A valid funnel
keeps every run at or below one.  The same check on a funnel whose
ellipsoids were shrunk by a factor of 10^4 (radii by 100, gains unchanged)
fails: with a disturbance this weak only a drastic shrink breaks invariance.
"""

import numpy as np

from funnelsyn.config import RunConfig
from funnelsyn.model import unicycle
from funnelsyn.pipeline import synthesize
from funnelsyn.verify import DisturbancePolicy, dlmi_scan, monte_carlo

cfg = RunConfig.from_dict({"mode": "lemma4", "sampling": {"safety_gamma": 1.0, "safety_beta": 1.0}})
f = synthesize(cfg).funnel
model = unicycle()

mc = monte_carlo(f, model, n_samples=200, seed=0, workers=4)
print(f"200 runs: worst max V = {mc.worst:.6f}  passed = {mc.passed}")

# After the first instant the runs settle well inside the funnel.
inside = np.nanmax(mc.V[:, mc.times > 1.0], axis=1)
qs = np.percentile(inside, [50, 90, 100])
print("max V after t = 1 s: median {:.3f}, 90% {:.3f}, max {:.3f}".format(*qs))

# Heavier and slower disturbances: held for a whole segment.
slow = monte_carlo(f, model, 200, seed=1, policy=DisturbancePolicy("random-unit", dwell=f.grid.dt))
print(f"segment-long gusts: worst max V = {slow.worst:.6f}  passed = {slow.passed}")

small = f.with_Q(f.Q / 1e4, f.Y / 1e4)
bad = monte_carlo(small, model, 50, seed=0)
print(f"shrunk funnel: worst max V = {bad.worst:.2f}  passed = {bad.passed}  "
      f"({len({i for i, _, _ in bad.failures()})} of 50 runs leave it)")

scan = dlmi_scan(f, model)
print(f"certificate scan: worst lambda_max {scan.lam_max.max():.2e}  passed = {scan.passed}")
