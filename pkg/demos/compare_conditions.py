"""
Two copositivity conditions, two grid sizes
===========================================

The same instance is solved with the cheaper three-LMI condition
(``lemma4``) and with the slack-variable condition (``lemma5``), once on
the 20-segment grid and once on 40 segments.  The slack condition must
reach an objective at least as good.  The funnel is only enforced on the
constraint set at the nodes, so between nodes the ellipses may poke out a
little; the table shows that overshoot getting smaller on the finer grid.
"""

from pathlib import Path

from funnelsyn.config import load_config
from funnelsyn.pipeline import synthesize
from funnelsyn.verify import between_node_margins, node_margins

cfg = load_config(Path(__file__).resolve().parent / "unicycle_raw_bounds.json")

print(" mode     N   objective   solve [s]   node margin   between-node violation")
rows = {}
for N in (20, 40):
    for mode in ("lemma4", "lemma5"):
        res = synthesize(cfg.replace(mode=mode, grid={"N": N}))
        if not res.optimal:
            print(f"{mode}  {N:3d}   {res.report.status}")
            continue
        nm = node_margins(res.funnel, res.constraints).min_margin
        bv = between_node_margins(res.funnel, res.constraints).max_violation
        rows[mode, N] = res.report.objective
        print(f"{mode}  {N:3d}   {res.report.objective:9.5f}   {res.timings['solve']:8.2f}"
              f"   {nm:11.2e}   {bv:10.5f}")

for N in (20, 40):
    if ("lemma4", N) in rows and ("lemma5", N) in rows:
        gain = rows["lemma4", N] - rows["lemma5", N]
        print(f"N={N}: slack condition improves the objective by {gain:.2e}")
