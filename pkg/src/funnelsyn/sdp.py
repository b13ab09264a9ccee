"""Solver-agnostic SDP container, conic-solver adapters and funnel extraction.

A problem is ``minimize c'x`` subject to ``M_c(x) >= 0`` for every PSD
constraint ``c`` and ``x_i >= 0`` for variables flagged non-negative.

Solvers are selected by name (``"clarabel"`` or ``"cvxopt"``) or through the
``FUNNELSYN_SOLVER`` environment variable.

Text export format (``write_problem_text``)::

    funnelsyn-sdp 1
    variables <n> constraints <m>
    var <id> <name> <free|nonneg> <objective coefficient>
    con <cid> <dim> <kind> <k> <index>
    ...
    <cid> <vid|CONST> <row> <col> <value>
    ...

Matrix entries are 0-based and only the upper triangle (``row <= col``) is
listed; ``CONST`` marks the constant term.
"""

from __future__ import annotations

import os
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ExtractionError, FunnelIOError
from .lmi import (
    AffineMatrixExpr,
    LmiConstraint,
    VariableRegistry,
    bound_lmis,
    copositivity_lemma4,
    copositivity_lemma5,
    input_containment_lmi,
    psd_margin,
    segment_H_blocks,
    segment_H_blocks_specs,
    state_containment_lmi,
)

__all__ = [
    "SynthesisSettings",
    "SdpProblem",
    "SolveReport",
    "build_problem",
    "solve",
    "audit",
    "extract_funnel",
    "write_problem_text",
    "read_problem_text",
    "write_sdpa",
    "OBJECTIVES",
]

OBJECTIVES = ("entry_exit", "sum_trace", "exit_trace")
SOLVER_ENV = "FUNNELSYN_SOLVER"
CLARABEL_GAP_TOL = 1e-7
REDUCED_ACCURACY_AUDIT_TOL = 1e-9


@dataclass(frozen=True)
class SynthesisSettings:
    """Parameters of the funnel SDP.

    ``objective`` is one of ``"entry_exit"`` (``-tr Q_0 + tr Q_N``),
    ``"sum_trace"`` (``-sum_k tr Q_k``) or ``"exit_trace"`` (``tr Q_N``).
    ``lmi_margin`` tightens every copositivity constraint to ``>= margin I``.
    ``balanced`` selects the normalized multipliers (see
    :func:`funnelsyn.lmi.assemble_H`), which keep the problem well scaled when
    some ``beta_k`` are tiny.
    """

    Q_max: np.ndarray
    lambda_w: float = 0.4
    mode: str = "lemma5"
    objective: str = "entry_exit"
    eps_pd: float = 1e-6
    balanced: bool = True
    lmi_margin: float = 0.0

    def __post_init__(self):
        if self.mode not in ("lemma4", "lemma5"):
            raise ValueError(f"mode must be lemma4 or lemma5, got {self.mode!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.lambda_w <= 0:
            raise ValueError("lambda_w must be positive")
        Q = np.array(self.Q_max, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q)[0] <= 0:
            raise ValueError("Q_max must be symmetric positive definite")
        Q.setflags(write=False)
        object.__setattr__(self, "Q_max", Q)


@dataclass
class SdpProblem:
    """Variables, PSD constraints and a linear objective."""

    names: list
    nonneg: np.ndarray
    constraints: list
    objective: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nonneg = np.asarray(self.nonneg, dtype=bool)
        self.objective = np.asarray(self.objective, dtype=float)
        n = len(self.names)
        if self.nonneg.shape != (n,) or self.objective.shape != (n,):
            raise ValueError("objective / bounds must have one entry per variable")
        for c in self.constraints:
            if len(c.expr.var_ids) and (c.expr.var_ids.min() < 0 or c.expr.var_ids.max() >= n):
                raise ValueError(f"constraint ({c.k}, {c.kind}) references an unknown variable")

    @property
    def n_vars(self):
        return len(self.names)

    def census(self):
        """Number of PSD constraints per kind."""
        return dict(Counter(c.kind for c in self.constraints))


@dataclass
class SolveReport:
    status: str
    objective: float | None
    values: np.ndarray | None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.values is not None) != (self.status == "optimal"):
            raise ValueError("values must be present exactly when the status is optimal")


def _objective(reg: VariableRegistry, n_x, N, kind):
    c = np.zeros(len(reg))
    diag = lambda k: [reg.Q[k][i, i] for i in range(n_x)]  # noqa: E731
    if kind == "entry_exit":
        c[diag(0)] -= 1.0
        c[diag(N)] += 1.0
    elif kind == "sum_trace":
        for k in range(N + 1):
            c[diag(k)] -= 1.0
    else:
        c[diag(N)] += 1.0
    return c


def build_problem(ltv, bounds, settings: SynthesisSettings, state_halfspaces=None, input_halfspaces=None):
    """Assemble the funnel SDP.

    Parameters
    ----------
    ltv : LtvData
    bounds : SegmentBounds
    settings : SynthesisSettings
    state_halfspaces, input_halfspaces : list of (A, b), optional
        One ``(A, b)`` pair per node (``A x <= b``); ``None`` for no constraints.

    Returns
    -------
    problem : SdpProblem
    registry : VariableRegistry
    """
    grid = ltv.grid
    N = grid.N
    m = ltv.model
    if bounds is None or bounds.N != N:
        raise ValueError("segment bounds beta/gamma are required for every segment")
    for name, hs in (("state", state_halfspaces), ("input", input_halfspaces)):
        if hs is not None and len(hs) != N + 1:
            raise ValueError(f"{name} halfspaces must be given for each of the {N + 1} nodes")
    sides = [segment_H_blocks_specs(ltv, bounds, k, settings.lambda_w)[(k, k)].side for k in range(N)]
    reg = VariableRegistry.for_funnel(m.n_x, m.n_u, N, settings.mode, slack_dim=sides)
    cons: list[LmiConstraint] = []
    for k in range(N):
        H = segment_H_blocks(ltv, bounds, k, reg, settings.lambda_w, settings.balanced)
        if settings.mode == "lemma4":
            cons += copositivity_lemma4(H, k, settings.lmi_margin)
        else:
            cons += copositivity_lemma5(H, k, reg, settings.lmi_margin)
    nodes = grid.nodes
    for k, t in enumerate(nodes):
        xbar, ubar = ltv.traj.state(t), ltv.traj.input(t)
        if state_halfspaces is not None:
            A, b = state_halfspaces[k]
            for i in range(len(b)):
                cons.append(state_containment_lmi(k, A[i], b[i], xbar, reg, index=i))
        if input_halfspaces is not None:
            A, b = input_halfspaces[k]
            for i in range(len(b)):
                cons.append(input_containment_lmi(k, A[i], b[i], ubar, reg, index=i))
        cons += bound_lmis(k, settings.Q_max, settings.eps_pd, reg)
    obj = _objective(reg, m.n_x, N, settings.objective)
    meta = {"mode": settings.mode, "objective": settings.objective, "N": N}
    return SdpProblem(list(reg.names), reg.nonneg, cons, obj, meta), reg


# --------------------------------------------------------------------------
# solver adapters


def _svec_index(m):
    rows, cols, scale = [], [], []
    r2 = np.sqrt(2.0)
    for j in range(m):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
            scale.append(1.0 if i == j else r2)
    return np.array(rows), np.array(cols), np.array(scale)


def _conic_data(problem: SdpProblem):
    """Clarabel form ``A x + s = b``, ``s in K``."""
    n = problem.n_vars
    blocks_A, blocks_b, cones = [], [], []
    nn = np.nonzero(problem.nonneg)[0]
    import clarabel

    if len(nn):
        blocks_A.append(sp.csr_matrix((-np.ones(len(nn)), (np.arange(len(nn)), nn)), shape=(len(nn), n)))
        blocks_b.append(np.zeros(len(nn)))
        cones.append(clarabel.NonnegativeConeT(len(nn)))
    cache = {}
    for c in problem.constraints:
        e = c.expr
        m = e.dim
        if m not in cache:
            cache[m] = _svec_index(m)
        r, cl, s = cache[m]
        flat = r * m + cl
        coef = e.coeffs[:, flat].multiply(s[None, :]).tocsr() if len(e.var_ids) else None
        T = len(flat)
        if coef is not None:
            coo = coef.tocoo()
            blk = sp.csr_matrix((-coo.data, (coo.col, e.var_ids[coo.row])), shape=(T, n))
        else:
            blk = sp.csr_matrix((T, n))
        blocks_A.append(blk)
        blocks_b.append(e.constant[r, cl] * s)
        cones.append(clarabel.PSDTriangleConeT(m) if m > 1 else clarabel.NonnegativeConeT(1))
    A = sp.vstack(blocks_A).tocsc() if blocks_A else sp.csc_matrix((0, n))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    return A, b, cones


def _solve_clarabel(problem: SdpProblem, options):
    import clarabel

    A, b, cones = _conic_data(problem)
    n = problem.n_vars
    settings = clarabel.DefaultSettings()
    settings.verbose = bool(options.get("verbose", False))
    # the default 1e-8 gap target stalls on these problems one digit short
    settings.tol_gap_abs = settings.tol_gap_rel = CLARABEL_GAP_TOL
    for key in ("tol_gap_abs", "tol_gap_rel", "tol_feas", "max_iter", "tol_infeas_abs", "tol_infeas_rel"):
        if key in options:
            setattr(settings, key, options[key])
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), problem.objective, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    stats = {"solver": "clarabel", "raw_status": status, "iterations": int(sol.iterations),
             "solve_time": float(sol.solve_time)}
    if status == "Solved":
        x = np.array(sol.x)
        return SolveReport("optimal", float(problem.objective @ x), x, stats)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible", "DualInfeasible", "AlmostDualInfeasible"):
        return SolveReport("infeasible", None, None, stats)
    if status == "AlmostSolved":
        # reduced-accuracy stop; accepted only if the primal point itself is feasible
        x = np.array(sol.x)
        if audit(problem, x) >= -REDUCED_ACCURACY_AUDIT_TOL:
            stats["accuracy"] = "reduced"
            return SolveReport("optimal", float(problem.objective @ x), x, stats)
        stats["almost_x"] = x
    return SolveReport("numerical-trouble", None, None, stats)


def _solve_cvxopt(problem: SdpProblem, options):
    from cvxopt import matrix, solvers, spmatrix

    n = problem.n_vars
    nn = np.nonzero(problem.nonneg)[0]
    Gl = spmatrix(-1.0, list(range(len(nn))), [int(i) for i in nn], (len(nn), n)) if len(nn) else None
    hl = matrix(0.0, (len(nn), 1)) if len(nn) else None
    Gs, hs = [], []
    for c in problem.constraints:
        e = c.expr
        m = e.dim
        coo = e.coeffs.tocoo()
        r, cl = np.divmod(coo.col, m)
        colmajor = cl * m + r
        Gs.append(spmatrix((-coo.data).tolist(), colmajor.tolist(), e.var_ids[coo.row].tolist(), (m * m, n)))
        hs.append(matrix(e.constant))
    solvers.options["show_progress"] = bool(options.get("verbose", False))
    for key in ("abstol", "reltol", "feastol", "maxiters"):
        if key in options:
            solvers.options[key] = options[key]
    t0 = time.perf_counter()
    kw = {"Gs": Gs, "hs": hs}
    if Gl is not None:
        kw.update(Gl=Gl, hl=hl)
    res = solvers.sdp(matrix(problem.objective), **kw)
    stats = {"solver": "cvxopt", "raw_status": res["status"], "iterations": int(res.get("iterations", -1)),
             "solve_time": time.perf_counter() - t0}
    if res["status"] == "optimal":
        x = np.array(res["x"]).ravel()
        return SolveReport("optimal", float(problem.objective @ x), x, stats)
    if res["status"] in ("primal infeasible", "dual infeasible"):
        return SolveReport("infeasible", None, None, stats)
    return SolveReport("numerical-trouble", None, None, stats)


_ADAPTERS = {"clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}


def solve(problem: SdpProblem, solver=None, **options) -> SolveReport:
    """Solve with the named adapter (default: ``$FUNNELSYN_SOLVER`` or clarabel)."""
    name = (solver or os.environ.get(SOLVER_ENV) or "clarabel").lower()
    if name not in _ADAPTERS:
        raise ValueError(f"unknown solver {name!r}; available: {sorted(_ADAPTERS)}")
    t0 = time.perf_counter()
    try:
        report = _ADAPTERS[name](problem, options)
    except (ArithmeticError, ValueError) as exc:
        report = SolveReport("numerical-trouble", None, None, {"solver": name, "error": repr(exc)})
    report.stats["wall_time"] = time.perf_counter() - t0
    if report.status == "optimal":
        worst = audit(problem, report.values)
        report.stats["audit_min_margin"] = worst
    return report


def audit(problem: SdpProblem, x):
    """Smallest scale-aware PSD margin over all constraints at ``x``."""
    worst = np.inf
    for c in problem.constraints:
        worst = min(worst, psd_margin(c.expr.evaluate(x)))
    nn = problem.nonneg
    if nn.any():
        worst = min(worst, float(np.min(np.asarray(x)[nn])))
    return float(worst)


def extract_funnel(report: SolveReport, reg: VariableRegistry, ltv, bounds, settings: SynthesisSettings,
                   metadata=None):
    """Build the :class:`~funnelsyn.funnel.Funnel` certificate from an optimal solve."""
    from .funnel import Funnel

    if report.status != "optimal":
        raise ExtractionError(f"cannot extract a funnel from status {report.status!r}")
    x = report.values
    Q = np.array([x[ids] for ids in reg.Q])
    Q = 0.5 * (Q + Q.transpose(0, 2, 1))
    Y = np.array([x[ids] for ids in reg.Y])
    for k, Qk in enumerate(Q):
        if np.linalg.eigvalsh(Qk)[0] < settings.eps_pd / 10:
            raise ExtractionError(f"Q_{k} is numerically singular")
    lam_b = np.maximum(x[reg.lam_beta], 0.0)
    lam_g = np.maximum(x[reg.lam_gamma], 0.0)
    meta = {
        "mode": settings.mode,
        "objective_kind": settings.objective,
        "objective": report.objective,
        "eps_pd": settings.eps_pd,
        "Q_max": settings.Q_max.tolist(),
        "balanced": settings.balanced,
        "lmi_margin": settings.lmi_margin,
        "model": {"name": ltv.model.name, "params": dict(ltv.model.params)},
    }
    meta.update(metadata or {})
    return Funnel(ltv.grid, Q, Y, lam_b, lam_g, ltv.traj, bounds, settings.lambda_w, meta,
                  normalized_multipliers=settings.balanced)


# --------------------------------------------------------------------------
# text export


def write_problem_text(problem: SdpProblem, path):
    lines = ["funnelsyn-sdp 1", f"variables {problem.n_vars} constraints {len(problem.constraints)}"]
    for i, name in enumerate(problem.names):
        kind = "nonneg" if problem.nonneg[i] else "free"
        lines.append(f"var {i} {name} {kind} {float(problem.objective[i])!r}")
    for cid, c in enumerate(problem.constraints):
        lines.append(f"con {cid} {c.expr.dim} {c.kind} {c.k} {c.index}")
    for cid, c in enumerate(problem.constraints):
        e = c.expr
        m = e.dim
        r, cl = np.triu_indices(m)
        for i, j in zip(r, cl):
            v = e.constant[i, j]
            if v != 0.0:
                lines.append(f"{cid} CONST {i} {j} {float(v)!r}")
        coo = e.coeffs.tocoo()
        rr, cc = np.divmod(coo.col, m)
        order = np.lexsort((cc, rr, coo.row))
        for t in order:
            if rr[t] <= cc[t]:
                lines.append(f"{cid} {int(e.var_ids[coo.row[t]])} {rr[t]} {cc[t]} {float(coo.data[t])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_problem_text(path) -> SdpProblem:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FunnelIOError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].split() != ["funnelsyn-sdp", "1"]:
        raise FunnelIOError(f"{path}: not a funnelsyn-sdp v1 file")
    head = lines[1].split()
    n, mcon = int(head[1]), int(head[3])
    names, nonneg, obj = [], [], []
    pos = 2
    for _ in range(n):
        _, _, name, kind, c = lines[pos].split()
        names.append(name)
        nonneg.append(kind == "nonneg")
        obj.append(float(c))
        pos += 1
    heads = []
    for _ in range(mcon):
        _, _, dim, kind, k, idx = lines[pos].split()
        heads.append((int(dim), kind, int(k), int(idx)))
        pos += 1
    consts = [np.zeros((d, d)) for d, *_ in heads]
    entries = [dict() for _ in heads]
    for line in lines[pos:]:
        if not line.strip():
            continue
        cid, vid, i, j, v = line.split()
        cid, i, j, v = int(cid), int(i), int(j), float(v)
        if vid == "CONST":
            consts[cid][i, j] = consts[cid][j, i] = v
        else:
            entries[cid].setdefault(int(vid), []).append((i, j, v))
    cons = []
    for cid, (d, kind, k, idx) in enumerate(heads):
        ids = sorted(entries[cid])
        rows, cols, vals = [], [], []
        for t, vid in enumerate(ids):
            for i, j, v in entries[cid][vid]:
                rows.append(t)
                cols.append(i * d + j)
                vals.append(v)
                if i != j:
                    rows.append(t)
                    cols.append(j * d + i)
                    vals.append(v)
        coef = sp.csr_matrix((vals, (rows, cols)), shape=(len(ids), d * d))
        cons.append(LmiConstraint(AffineMatrixExpr(consts[cid], ids, coef), kind, k, idx))
    return SdpProblem(names, nonneg, cons, obj)


def write_sdpa(problem: SdpProblem, path):
    """Export in SDPA sparse format (``.dat-s``) as the dual-form problem.

    SDPA's primal-dual pair uses ``F(x) = sum_i x_i F_i - F_0 >= 0``; here
    ``F_0 = -M_0`` and ``F_i = M_i``.  Non-negative variables become a
    diagonal block.
    """
    nn = np.nonzero(problem.nonneg)[0]
    blocks = [c.expr.dim for c in problem.constraints]
    if len(nn):
        blocks.append(-len(nn))
    lines = [
        '"funnelsyn SDP export"',
        str(problem.n_vars),
        str(len(blocks)),
        " ".join(str(b) for b in blocks),
        " ".join(repr(float(v)) for v in problem.objective),
    ]
    for b_id, c in enumerate(problem.constraints, start=1):
        e = c.expr
        r, cl = np.triu_indices(e.dim)
        for i, j in zip(r, cl):
            if e.constant[i, j] != 0.0:
                lines.append(f"0 {b_id} {i + 1} {j + 1} {-float(e.constant[i, j])!r}")
        coo = e.coeffs.tocoo()
        rr, cc = np.divmod(coo.col, e.dim)
        for t in range(coo.nnz):
            if rr[t] <= cc[t]:
                lines.append(f"{int(e.var_ids[coo.row[t]]) + 1} {b_id} {rr[t] + 1} {cc[t] + 1} {float(coo.data[t])!r}")
    if len(nn):
        b_id = len(problem.constraints) + 1
        for pos, vid in enumerate(nn, start=1):
            lines.append(f"{int(vid) + 1} {b_id} {pos} {pos} 1.0")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
