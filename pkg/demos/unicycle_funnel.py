"""
Funnel around a unicycle trajectory
===================================

Synthesizes an invariant funnel for the unicycle demo: a 10 s path from the
origin to (4, 8) that threads between two discs, under a bounded heading
and turn-rate disturbance.  The run uses the configuration next to this
script, prints the solve summary and the funnel size along the path, and
writes the funnel plus plot-ready CSV files to ``demos/out``.

Run with ``python demos/unicycle_funnel.py [--out DIR]``.
"""

import argparse
from pathlib import Path

import numpy as np

from funnelsyn.config import load_config
from funnelsyn.funnel import input_extent
from funnelsyn.pipeline import summary_lines, synthesize, write_outputs
from funnelsyn.verify import node_margins

here = Path(__file__).resolve().parent
parser = argparse.ArgumentParser()
parser.add_argument("--out", default=str(here / "out"))
args = parser.parse_args()

cfg = load_config(here / "unicycle_raw_bounds.json")
result = synthesize(cfg)
print("\n".join(summary_lines(result)))
if not result.optimal:
    raise SystemExit("no funnel: the SDP was not solved to optimality")

f = result.funnel

# Semi-axes of the position ellipse and the heading half-width at each node.
# The objective rewards a large entry and a small exit.
print("\n  t     pos. semi-axes    heading  |u1|<=    |u2|<=")
for k, t in enumerate(f.grid.nodes):
    axes = np.sqrt(np.linalg.eigvalsh(f.Q[k][:2, :2]))[::-1]
    head = np.degrees(np.sqrt(f.Q[k][2, 2]))
    w1, w2 = (input_extent(f, t, j)[1] for j in range(2))
    print(f"{t:5.1f}   {axes[0]:6.3f} {axes[1]:6.3f}   {head:6.2f} deg  {w1:7.4f}  {w2:7.4f}")

# Clearance of every ellipse from the linearized obstacle halfspaces and the
# input box, node by node.
nm = node_margins(f, result.constraints)
print(f"\nsmallest state margin {nm.state.min():.3e}, input margin {nm.input.min():.3e}")

path = write_outputs(result, cfg, args.out)
print(f"wrote {path} and projections next to it")
