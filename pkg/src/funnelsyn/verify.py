"""Independent checks of a synthesized funnel.

* Monte-Carlo invariance: closed-loop RK4 simulation of the nonlinear model
  from the boundary of the entry ellipsoid under bounded disturbances.
* Certificate scan: the dense matrix inequality at interior times.
* Support-function margins of the state and input constraints.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet, support_margin
from .errors import PropagationError
from .funnel import Funnel, interp, multipliers
from .incremental import build_ltv
from .lmi import dlmi_eval
from .model import SystemModel

__all__ = [
    "DisturbancePolicy",
    "closed_loop_rhs",
    "propagate",
    "propagate_batch",
    "boundary_samples",
    "monte_carlo",
    "richardson_ratio",
    "dlmi_scan",
    "node_margins",
    "between_node_margins",
    "VerificationReport",
    "verify_funnel",
]

TOL_INV = 1e-4
TOL_PSD = 1e-7
TOL_MARGIN = 1e-7
STEPS_PER_SEGMENT = 100


@dataclass(frozen=True)
class DisturbancePolicy:
    """How ``w(t)`` is generated during simulation.

    ``kind`` is ``"zero"``, ``"random-unit"`` (independent unit-norm values,
    held for ``dwell`` seconds) or ``"fixed"`` (``sequence[i]`` is held on the
    ``i``-th dwell interval, the last value repeating).
    """

    kind: str = "random-unit"
    dwell: float | None = None
    sequence: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "random-unit", "fixed"):
            raise ValueError(f"unknown disturbance policy {self.kind!r}")
        if self.dwell is not None and self.dwell <= 0:
            raise ValueError("dwell must be positive")
        if self.kind == "fixed":
            if self.sequence is None:
                raise ValueError("a fixed policy needs a sequence")
            seq = np.array(self.sequence, dtype=float)
            if seq.ndim != 2 or np.any(np.linalg.norm(seq, axis=1) > 1 + 1e-12):
                raise ValueError("sequence must be an (n, n_w) array of vectors with norm <= 1")
            object.__setattr__(self, "sequence", seq)

    def pieces(self, rng, n_samples, n_w, t0, tf, default_dwell):
        """Per-sample disturbance pieces ``(n_samples, n_pieces, n_w)`` and the dwell time."""
        dwell = self.dwell or default_dwell
        n = max(int(np.ceil((tf - t0) / dwell - 1e-9)), 1)
        if self.kind == "zero":
            return np.zeros((n_samples, n, n_w)), dwell
        if self.kind == "fixed":
            seq = self.sequence
            if seq.shape[1] != n_w:
                raise ValueError(f"sequence has {seq.shape[1]} columns, model has n_w={n_w}")
            idx = np.minimum(np.arange(n), len(seq) - 1)
            return np.broadcast_to(seq[idx], (n_samples, n, n_w)).copy(), dwell
        z = rng.standard_normal((n_samples, n, n_w))
        return z / np.linalg.norm(z, axis=-1, keepdims=True), dwell


def _f_batch(model: SystemModel, t, X, U, W):
    if model.vectorized:
        return np.asarray(model.f(t, X, U, W), dtype=float)
    return np.array([model.f(t, x, u, w) for x, u, w in zip(X, U, W)], dtype=float)


def closed_loop_rhs(funnel: Funnel, model: SystemModel):
    """``rhs(t, X, W) -> (Xdot, U)`` for a batch of states under ``u = ubar + K eta``."""
    nom = funnel.nominal

    def rhs(t, X, W):
        Q, Y, _ = interp(funnel, t)
        K = np.linalg.solve(Q, Y.T).T
        eta = X - nom.state(t)
        U = nom.input(t) + eta @ K.T
        return _f_batch(model, t, X, U, W), U

    return rhs


def _bound_value(funnel, t, eta):
    Q, _, _ = interp(funnel, t)
    return np.sum(eta * np.linalg.solve(Q, eta.T).T, axis=-1)


def propagate_batch(funnel: Funnel, model: SystemModel, X0, W_pieces, dwell, h=None, record=False,
                    errors=None):
    """RK4 simulation of a batch of closed-loop trajectories.

    The disturbance is sampled at the start of each step and held over it;
    every value used is checked to have norm at most one.

    Parameters
    ----------
    X0 : (S, n_x) array
    W_pieces : (S, P, n_w) array
        Piecewise-constant disturbance values, piece ``i`` covering
        ``[t0 + i dwell, t0 + (i + 1) dwell)``.
    dwell : float
    h : float, optional
        Step size; defaults to ``dt / STEPS_PER_SEGMENT``.  ``tf - t0`` is
        split into an integer number of steps of at most this size.
    record : bool
        Also return the full state history.
    errors : dict, optional
        If given, a trajectory whose state becomes non-finite is recorded as
        ``errors[row] = t`` and its later values are NaN.  Otherwise
        :class:`PropagationError` is raised.

    Returns
    -------
    times : (M,) array
    V : (S, M) array
        Lyapunov values ``eta' Q(t)^{-1} eta``.
    X : (S, M, n_x) array, only when ``record``.
    """
    g = funnel.grid
    h = g.dt / STEPS_PER_SEGMENT if h is None else float(h)
    n_steps = max(int(np.ceil((g.tf - g.t0) / h - 1e-9)), 1)
    times = np.linspace(g.t0, g.tf, n_steps + 1)
    X = np.array(X0, dtype=float)
    S = len(X)
    W_pieces = np.asarray(W_pieces, dtype=float)
    alive = np.ones(S, dtype=bool)
    rhs = closed_loop_rhs(funnel, model)
    V = np.empty((S, n_steps + 1))
    hist = [X.copy()] if record else None
    V[:, 0] = _bound_value(funnel, times[0], X - funnel.nominal.state(times[0]))
    rows = np.arange(S)
    for i in range(n_steps):
        ta, tb = times[i], times[i + 1]
        hi = tb - ta
        piece = min(int((ta - g.t0) / dwell + 1e-9), W_pieces.shape[1] - 1)
        W = W_pieces[rows, piece]
        if np.any(np.linalg.norm(W, axis=-1) > 1.0 + 1e-12):
            raise ValueError(f"disturbance norm exceeds one at t={ta}")
        k1, _ = rhs(ta, X, W)
        k2, _ = rhs(ta + hi / 2, X + hi / 2 * k1, W)
        k3, _ = rhs(ta + hi / 2, X + hi / 2 * k2, W)
        k4, _ = rhs(tb, X + hi * k3, W)
        X = X + hi / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        bad = alive & ~np.all(np.isfinite(X), axis=1)
        if np.any(bad):
            if errors is None:
                raise PropagationError("closed-loop state became non-finite", float(tb))
            for r in np.flatnonzero(bad):
                errors[int(r)] = float(tb)
            alive &= ~bad
        # dead rows are parked on the nominal so the batch stays finite
        X[~alive] = funnel.nominal.state(tb)
        V[:, i + 1] = _bound_value(funnel, tb, X - funnel.nominal.state(tb))
        V[~alive, i + 1] = np.nan
        if record:
            hist.append(X.copy())
    if record:
        return times, V, np.stack(hist, axis=1)
    return times, V


def propagate(funnel: Funnel, model: SystemModel, x0, policy=None, rng=None, h=None):
    """Single trajectory; returns ``(times, states, V)``."""
    policy = policy or DisturbancePolicy("zero")
    rng = np.random.default_rng(rng)
    g = funnel.grid
    W, dwell = policy.pieces(rng, 1, model.n_w, g.t0, g.tf, g.dt / 4)
    times, V, X = propagate_batch(funnel, model, np.atleast_2d(x0), W, dwell, h, record=True)
    return times, X[0], V[0]


def boundary_samples(funnel: Funnel, n_samples, rng):
    """Points ``xbar(t0) + Q_0^{1/2} d`` with ``d`` uniform on the unit sphere (``V = 1``)."""
    d = rng.standard_normal((n_samples, funnel.n_x))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    L = np.linalg.cholesky(funnel.Q[0])
    return funnel.nominal.state(funnel.grid.t0) + d @ L.T


@dataclass
class MonteCarloResult:
    """Per-sample maxima of ``V``; ``errors`` maps failed samples to the failure time."""

    max_V: np.ndarray
    t_of_max: np.ndarray
    times: np.ndarray
    V: np.ndarray
    tol: float = TOL_INV
    seed: int | None = None
    errors: dict = field(default_factory=dict)

    @property
    def worst(self):
        return float(np.nanmax(self.max_V)) if np.any(np.isfinite(self.max_V)) else np.nan

    @property
    def passed(self):
        return not self.errors and self.worst <= 1.0 + self.tol

    def failures(self):
        """``(sample, t, V)`` for every recorded value above ``1 + tol``."""
        rows, cols = np.nonzero(np.nan_to_num(self.V, nan=-np.inf) > 1.0 + self.tol)
        return [(int(r), float(self.times[c]), float(self.V[r, c])) for r, c in zip(rows, cols)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["sample", "t_of_max", "max_V"])
            for i, (t, v) in enumerate(zip(self.t_of_max, self.max_V)):
                wr.writerow([i, repr(float(t)), repr(float(v))])


def _sample_inputs(funnel, model, policy, seed, samples):
    g = funnel.grid
    X0, W = [], []
    for i in samples:
        rng = np.random.default_rng([seed, i])
        X0.append(boundary_samples(funnel, 1, rng)[0])
        w, dwell = policy.pieces(rng, 1, model.n_w, g.t0, g.tf, g.dt / 4)
        W.append(w[0])
    return np.array(X0), np.array(W), dwell


def monte_carlo(funnel: Funnel, model: SystemModel, n_samples=200, seed=0, policy=None, h=None, tol=TOL_INV,
                workers=1):
    """Boundary-initialized closed-loop runs; ``passed`` iff ``max V <= 1 + tol``.

    Sample ``i`` draws its start point and disturbance from the substream
    ``default_rng([seed, i])``, so results do not depend on ``workers``
    (threads over contiguous chunks of samples).  Samples whose state blows
    up are listed in ``errors`` and fail the test.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    policy = policy or DisturbancePolicy("random-unit")
    chunks = np.array_split(np.arange(n_samples), max(1, min(int(workers), n_samples)))

    def run(idx):
        X0, W, dwell = _sample_inputs(funnel, model, policy, seed, idx)
        errs = {}
        times, V = propagate_batch(funnel, model, X0, W, dwell, h, errors=errs)
        return times, V, {int(idx[r]): t for r, t in errs.items()}

    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
    times = parts[0][0]
    V = np.vstack([p[1] for p in parts])
    errors = {k: v for p in parts for k, v in p[2].items()}
    filled = np.nan_to_num(V, nan=-np.inf)
    idx = np.argmax(filled, axis=1)
    max_V = filled[np.arange(n_samples), idx]
    max_V[np.isneginf(max_V)] = np.nan
    return MonteCarloResult(max_V, times[idx], times, V, tol, seed, errors)


def richardson_ratio(funnel: Funnel, model: SystemModel, x0, h, policy=None):
    """``|x_h - x_{h/2}| / |x_{h/2} - x_{h/4}|`` at ``tf``; about 16 for a fourth-order scheme.

    Uses a disturbance that is constant over every step of all three runs
    (zero by default).
    """
    policy = policy or DisturbancePolicy("zero")
    g = funnel.grid
    W, dwell = policy.pieces(np.random.default_rng(0), 1, model.n_w, g.t0, g.tf, g.dt)
    ends = []
    for hh in (h, h / 2, h / 4):
        _, _, X = propagate_batch(funnel, model, np.atleast_2d(x0), W, dwell, hh, record=True)
        ends.append(X[0, -1])
    return float(np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2]))


# --------------------------------------------------------------------------
# certificate scan


@dataclass
class ScanResult:
    """Per segment: largest eigenvalue, its tolerance and the balanced-form eigenvalue."""

    lam_max: np.ndarray
    threshold: np.ndarray
    lam_max_balanced: np.ndarray
    times: np.ndarray

    @property
    def passed(self):
        return bool(np.all(self.lam_max <= self.threshold))


def dlmi_scan(funnel: Funnel, model: SystemModel, n_points=10, tol=TOL_PSD, ltv=None):
    """Dense matrix inequality at ``n_points`` uniform interior times of each segment.

    The plain form (``N1 = lambda / bound^2``) is the one tested; the balanced
    form is reported alongside when the multipliers are normalized.
    """
    if n_points < 2:
        raise ValueError("the scan needs at least 2 points per segment")
    g = funnel.grid
    ltv = ltv or build_ltv(model, funnel.nominal, g)
    lam = np.full(g.N, -np.inf)
    thr = np.zeros(g.N)
    lam_bal = np.full(g.N, np.nan)
    scan_t = []
    for k in range(g.N):
        beta, gamma = float(funnel.bounds.beta[k]), float(funnel.bounds.gamma[k])
        worst_ratio = -np.inf
        for s in np.arange(1, n_points + 1) / (n_points + 1):
            t = g.t0 + (k + s) * g.dt
            scan_t.append(t)
            Q, Y, Qdot = interp(funnel, t, k)
            A, B, F = ltv.interpolated(t, k)
            lb, lg = multipliers(funnel, t, k)
            M = dlmi_eval(Q, Qdot, Y, lb, lg, funnel.lambda_w, A, B, F, beta, gamma,
                          model.E_o, model.C_o, model.D_o, model.G_o)
            top = float(np.linalg.eigvalsh(M)[-1])
            bound = tol * (1.0 + np.linalg.norm(M, 2))
            if top - bound > worst_ratio:
                worst_ratio = top - bound
                lam[k], thr[k] = top, bound
            if funnel.normalized_multipliers:
                s1, s2 = g.weights(t, k)
                mb = s1 * funnel.lam_beta[k] + s2 * funnel.lam_beta[k + 1]
                mg = s1 * funnel.lam_gamma[k] + s2 * funnel.lam_gamma[k + 1]
                Mb = dlmi_eval(Q, Qdot, Y, mb, mg, funnel.lambda_w, A, B, F, beta, gamma,
                               model.E_o, model.C_o, model.D_o, model.G_o, balanced=True)
                lam_bal[k] = np.fmax(lam_bal[k], np.linalg.eigvalsh(Mb)[-1])
    return ScanResult(lam, thr, lam_bal, np.array(scan_t))


# --------------------------------------------------------------------------
# constraint margins


def _margins_at(funnel: Funnel, cs: ConstraintSet, t, segment=None):
    Q, Y, _ = interp(funnel, t, segment)
    xbar, ubar = funnel.nominal.state(t), funnel.nominal.input(t)
    A, b = cs.state_halfspaces_at(xbar)
    sm = np.array([support_margin(a, bi, xbar, Q) for a, bi in zip(A, b)])
    S_u = Y @ np.linalg.solve(Q, Y.T)
    A, b = cs.input_halfspaces_at(ubar)
    um = np.array([support_margin(a, bi, ubar, S_u) for a, bi in zip(A, b)])
    return sm, um


@dataclass
class MarginResult:
    times: np.ndarray
    state: np.ndarray
    input: np.ndarray

    @property
    def min_margin(self):
        vals = [m.min() for m in (self.state, self.input) if m.size]
        return float(min(vals)) if vals else np.inf

    @property
    def max_violation(self):
        return max(0.0, -self.min_margin)


def node_margins(funnel: Funnel, cs: ConstraintSet):
    """Support-function margins at every node (obstacles linearized at the node)."""
    g = funnel.grid
    sm, um = [], []
    for k, t in enumerate(g.nodes):
        s, u = _margins_at(funnel, cs, t, min(k, g.N - 1))
        sm.append(s)
        um.append(u)
    return MarginResult(g.nodes, np.array(sm).reshape(g.N + 1, -1), np.array(um).reshape(g.N + 1, -1))


def between_node_margins(funnel: Funnel, cs: ConstraintSet, n_points=20):
    """Margins at ``n_points`` interior times per segment with the interpolated funnel.

    Obstacles are linearized at the nominal state of each time, which keeps
    the test conservative with respect to the discs themselves.
    """
    g = funnel.grid
    ts, sm, um = [], [], []
    for k in range(g.N):
        for s in np.arange(1, n_points + 1) / (n_points + 1):
            t = g.t0 + (k + s) * g.dt
            a, b = _margins_at(funnel, cs, t, k)
            ts.append(t)
            sm.append(a)
            um.append(b)
    n = len(ts)
    return MarginResult(np.array(ts), np.array(sm).reshape(n, -1), np.array(um).reshape(n, -1))


# --------------------------------------------------------------------------
# report


@dataclass
class VerificationReport:
    monte_carlo: MonteCarloResult
    scan: ScanResult
    nodes: MarginResult | None = None
    between: MarginResult | None = None
    tol_margin: float = TOL_MARGIN
    extra: dict = field(default_factory=dict)

    @property
    def margins_ok(self):
        return self.nodes is None or self.nodes.min_margin >= -self.tol_margin

    @property
    def passed(self):
        return self.monte_carlo.passed and self.scan.passed and self.margins_ok

    def text(self):
        mc, sc = self.monte_carlo, self.scan
        lines = [
            f"invariance: {'PASS' if mc.passed else 'FAIL'}  samples={len(mc.max_V)}  "
            f"max V={mc.worst:.6f}  (limit 1 + {mc.tol:g})  seed={mc.seed}"
            + (f"  propagation errors={len(mc.errors)}" if mc.errors else ""),
            f"certificate scan: {'PASS' if sc.passed else 'FAIL'}  worst lambda_max={np.max(sc.lam_max):.3e}  "
            f"segments over tolerance={int(np.sum(sc.lam_max > sc.threshold))}",
        ]
        if self.nodes is not None:
            lines.append(f"node margins: {'PASS' if self.margins_ok else 'FAIL'}  "
                         f"min={self.nodes.min_margin:.3e}")
        if self.between is not None:
            lines.append(f"between-node margins (informational): min={self.between.min_margin:.3e}  "
                         f"max violation={self.between.max_violation:.3e}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def verify_funnel(funnel: Funnel, model: SystemModel, constraints: ConstraintSet | None = None,
                  n_samples=200, seed=0, policy=None, h=None, n_scan=10, workers=1):
    """Run all checks and collect them in a :class:`VerificationReport`."""
    mc = monte_carlo(funnel, model, n_samples, seed, policy, h, workers=workers)
    scan = dlmi_scan(funnel, model, n_scan)
    nodes = between = None
    if constraints is not None:
        nodes = node_margins(funnel, constraints)
        between = between_node_margins(funnel, constraints)
    return VerificationReport(mc, scan, nodes, between)
