"""
When the slack condition helps
==============================

Over a segment the matrix inequality is a quadratic form in the two
interpolation weights ``(s1, s2) >= 0``::

    s1^2 H11 + s1 s2 (H12 + H21) + s2^2 H22  >=  0.

A scalar example with ``H11 = H22 = 1`` and ``H12 = H21 = -1`` equals
``(s1 - s2)^2``, nonnegative everywhere, but the three-LMI test demands
``H12 + H21 >= 0`` and rejects it.  The slack test accepts it with all
slacks zero.  Random 2x2 blocks show how often each test succeeds.
"""

import numpy as np
import scipy.sparse as sp

from funnelsyn.lmi import AffineMatrixExpr, VariableRegistry, copositivity_lemma4, copositivity_lemma5, is_psd
from funnelsyn.sdp import SdpProblem, solve


def const(M):
    M = np.atleast_2d(np.asarray(M, float))
    return AffineMatrixExpr(M, np.zeros(0, np.int64), sp.csr_matrix((0, M.size)))


def blocks(H11, H22, H12, H21):
    return {(0, 0): const(H11), (1, 1): const(H22), (0, 1): const(H12), (1, 0): const(H21)}


def lemma4_holds(b):
    return all(is_psd(c.expr.evaluate(np.zeros(0))) for c in copositivity_lemma4(b, 0))


def lemma5_holds(b, m):
    reg = VariableRegistry()
    reg.slacks[0] = tuple(reg.symmetric(n, m) for n in ("X11", "X21", "X22"))
    cons = copositivity_lemma5(b, 0, reg)
    rep = solve(SdpProblem(list(reg.names), np.zeros(len(reg), bool), cons, np.zeros(len(reg))))
    return rep.status == "optimal" and all(is_psd(c.expr.evaluate(rep.values), 1e-7) for c in cons)


scalar = blocks(1.0, 1.0, -1.0, -1.0)
print(f"scalar example: three-LMI test {lemma4_holds(scalar)}, slack test {lemma5_holds(scalar, 1)}")

rng = np.random.default_rng(0)
counts = {"both": 0, "slack only": 0, "neither": 0, "three-LMI only": 0}
copositive = 0
for _ in range(300):
    S = [rng.normal(size=(2, 2)) for _ in range(4)]
    H11, H22 = [(A + A.T) / 2 + 1.5 * np.eye(2) for A in S[:2]]
    H12, H21 = [(A + A.T) / 2 for A in S[2:]]
    b = blocks(H11, H22, H12, H21)
    l4, l5 = lemma4_holds(b), lemma5_holds(b, 2)
    key = "both" if l4 and l5 else "slack only" if l5 else "three-LMI only" if l4 else "neither"
    counts[key] += 1
    sig = np.vstack([rng.random((400, 2)), np.eye(2)])
    copositive += all(
        np.linalg.eigvalsh(a * a * H11 + a * c * (H12 + H21) + c * c * H22)[0] >= -1e-9 for a, c in sig)

print("300 random instances:", ", ".join(f"{k} {v}" for k, v in counts.items()))
print(f"copositive on 400 sampled weight pairs: {copositive}")
