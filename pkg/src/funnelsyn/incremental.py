"""Incremental LTV data along the nominal and its sampled uncertainty bounds.

The error system in ``eta = x - xbar``, ``xi = u - ubar`` is

    eta_dot = A(t) eta + B(t) xi + F(t) w + E_o dphi,

with ``A, B, F`` the Jacobians on the nominal.  On each subinterval the
Jacobians are replaced by the first-order-hold interpolation of their node
values; the mismatch ``Delta(t)`` and the nonlinearity increment ``dphi``
are bounded per segment by ``beta_k`` and ``gamma_k``.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import EstimationError, FunnelIOError
from .model import NominalTrajectory, SystemModel, jacobians, phi_jacobian

__all__ = [
    "TimeGrid",
    "LtvData",
    "SegmentBounds",
    "SamplingConfig",
    "build_ltv",
    "foh_interp",
    "delta_matrix",
    "delta_phi",
    "estimate_beta",
    "estimate_gamma",
    "estimate_bounds",
    "segment_seed",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform nodes ``t_k = t0 + k (tf - t0) / N``, ``k = 0..N``."""

    t0: float
    tf: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.tf > self.t0:
            raise ValueError("tf must be greater than t0")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "tf", float(self.tf))

    @property
    def dt(self):
        return (self.tf - self.t0) / self.N

    @property
    def nodes(self):
        nodes = self.t0 + np.arange(self.N + 1) / self.N * (self.tf - self.t0)
        nodes[-1] = self.tf
        return nodes

    def check(self, t):
        tol = 1e-12 * (self.tf - self.t0)
        if not (self.t0 - tol <= t <= self.tf + tol):
            raise ValueError(f"t={t} outside horizon [{self.t0}, {self.tf}]")

    def segment(self, t):
        """Segment index of ``t``; nodes belong to the segment on their right."""
        self.check(t)
        k = int(np.floor((t - self.t0) / self.dt + 1e-12))
        return min(max(k, 0), self.N - 1)

    def weights(self, t, k=None):
        """FOH weights ``(sigma1, sigma2)`` of ``t`` in segment ``k``."""
        if k is None:
            k = self.segment(t)
        tk = self.t0 + k * self.dt
        s2 = (t - tk) / self.dt
        return 1.0 - s2, s2


def foh_interp(grid: TimeGrid, node_values, t, k=None):
    """First-order-hold interpolation of per-node arrays at time ``t``."""
    if k is None:
        k = grid.segment(t)
    s1, s2 = grid.weights(t, k)
    return s1 * node_values[k] + s2 * node_values[k + 1]


@dataclass(frozen=True)
class LtvData:
    """Node Jacobians ``A_k, B_k, F_k`` along the nominal (``w = 0``)."""

    model: SystemModel
    traj: NominalTrajectory
    grid: TimeGrid
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray

    def jacobians_at(self, t):
        """True Jacobians on the (interpolated) nominal at time ``t``."""
        x = self.traj.state(t)
        u = self.traj.input(t)
        return jacobians(self.model, t, x, u, np.zeros(self.model.n_w))

    def interpolated(self, t, k=None):
        """FOH-interpolated Jacobians ``(A~, B~, F~)`` at time ``t``."""
        return tuple(foh_interp(self.grid, M, t, k) for M in (self.A, self.B, self.F))


def build_ltv(model: SystemModel, traj: NominalTrajectory, grid: TimeGrid) -> LtvData:
    span = traj.tf - traj.t0
    if grid.t0 < traj.t0 - 1e-12 * span or grid.tf > traj.tf + 1e-12 * span:
        raise ValueError("time grid extends beyond the nominal trajectory")
    w0 = np.zeros(model.n_w)
    As, Bs, Fs = [], [], []
    for t in grid.nodes:
        A, B, F = jacobians(model, t, traj.state(t), traj.input(t), w0)
        As.append(A)
        Bs.append(B)
        Fs.append(F)
    arrs = [np.array(M) for M in (As, Bs, Fs)]
    for a in arrs:
        a.setflags(write=False)
    return LtvData(model, traj, grid, *arrs)


def delta_matrix(ltv: LtvData, t: float) -> np.ndarray:
    """``[A - A~, B - B~, F - F~]`` at time ``t``."""
    ltv.grid.check(t)
    true = ltv.jacobians_at(t)
    approx = ltv.interpolated(t)
    return np.hstack([a - b for a, b in zip(true, approx)])


def delta_phi(ltv: LtvData, t: float, eta, xi, w) -> np.ndarray:
    """Nonlinearity increment of the nominal-centred split.

    With the linear part set to the nominal Jacobians, the nonlinearity is
    ``phi(t, q) - J(t) q`` where ``J`` is the Jacobian of ``phi`` at ``qbar``.
    The increment is therefore ``phi(qbar + dq) - phi(qbar) - J dq``, so that
    ``E_o dphi = f(xbar + eta, ubar + xi, w) - f(xbar, ubar, 0) - (A eta + B xi + F w)``.
    """
    ltv.grid.check(t)
    m = ltv.model
    xbar = ltv.traj.state(t)
    ubar = ltv.traj.input(t)
    qbar = m.C_o @ xbar + m.D_o @ ubar
    dq = m.C_o @ np.asarray(eta, float) + m.D_o @ np.asarray(xi, float) + m.G_o @ np.asarray(w, float)
    J = phi_jacobian(m, t, qbar)
    return np.asarray(m.phi(t, qbar + dq), float) - np.asarray(m.phi(t, qbar), float) - J @ dq


def estimate_beta(ltv: LtvData, k: int, n_samples=20, safety=1.1, times=None) -> float:
    """Largest spectral norm of ``Delta`` over sample times in segment ``k``.

    ``times`` overrides the default ``n_samples`` uniformly spaced instants
    in ``[t_k, t_{k+1}]``.
    """
    if times is None:
        if n_samples < 2:
            raise ValueError("need at least two Delta samples per segment")
        nodes = ltv.grid.nodes
        times = np.linspace(nodes[k], nodes[k + 1], n_samples)
    best = 0.0
    for t in times:
        best = max(best, float(np.linalg.norm(delta_matrix(ltv, float(t)), 2)))
    return safety * best


def _unit_sphere(rng, n, size):
    d = rng.standard_normal((size, n))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _polytope_box(A, b):
    n = A.shape[1]
    lo, hi = np.empty(n), np.empty(n)
    for i in range(n):
        c = np.zeros(n)
        c[i] = 1.0
        r1 = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * n)
        r2 = linprog(-c, A_ub=A, b_ub=b, bounds=[(None, None)] * n)
        if r1.status != 0 or r2.status != 0:
            raise ValueError("input polytope must be non-empty and bounded for sampling")
        lo[i], hi[i] = r1.x[i], r2.x[i]
    return lo, hi


def _sample_polytope(rng, A, b, size, box=None, max_rounds=1000):
    lo, hi = box if box is not None else _polytope_box(A, b)
    out = []
    count = 0
    for _ in range(max_rounds):
        cand = lo + (hi - lo) * rng.random((size, len(lo)))
        keep = cand[np.all(cand @ A.T <= b + 1e-12, axis=1)]
        out.append(keep)
        count += len(keep)
        if count >= size:
            break
    pts = np.vstack(out)
    if len(pts) < size:
        raise EstimationError("rejection sampling of the input polytope failed")
    return pts[:size]


@dataclass(frozen=True)
class SamplingConfig:
    """Sampling protocol for ``beta_k`` and ``gamma_k``.

    State deviations are drawn in the ``Q_max`` ellipsoid (a
    ``boundary_fraction`` of them on its surface), inputs uniformly in the
    input polytope ``{u : input_A u <= input_b}`` and disturbances uniformly
    in the unit ball.  Without an input polytope, input deviations are drawn
    in a ball of radius ``xi_radius``.
    """

    Q_max: np.ndarray
    input_A: np.ndarray | None = None
    input_b: np.ndarray | None = None
    n_triples: int = 100
    n_delta: int = 20
    safety_gamma: float = 1.1
    safety_beta: float = 1.1
    seed: int = 0
    boundary_fraction: float = 0.5
    xi_radius: float = 1.0
    min_dq: float = 1e-12


def segment_seed(master: int, k: int) -> int:
    """Deterministic per-segment seed derived from the master seed."""
    return int(np.random.SeedSequence([int(master), int(k)]).generate_state(1)[0])


def _sample_triples(ltv, cfg, rng, box):
    m = ltv.model
    n = cfg.n_triples
    L = np.linalg.cholesky(np.asarray(cfg.Q_max, float))
    n_b = int(round(cfg.boundary_fraction * n))
    radii = np.ones(n)
    radii[n_b:] = rng.random(n - n_b) ** (1.0 / m.n_x)
    eta = (_unit_sphere(rng, m.n_x, n) * radii[:, None]) @ L.T
    if cfg.input_A is not None:
        u_pts = _sample_polytope(rng, np.asarray(cfg.input_A, float), np.asarray(cfg.input_b, float), n, box)
        xi_ball = None
    else:
        u_pts = None
        r = cfg.xi_radius * rng.random(n) ** (1.0 / m.n_u)
        xi_ball = _unit_sphere(rng, m.n_u, n) * r[:, None]
    w = _unit_sphere(rng, m.n_w, n) * (rng.random(n) ** (1.0 / m.n_w))[:, None]
    return eta, u_pts, xi_ball, w


def estimate_gamma(ltv: LtvData, k: int, cfg: SamplingConfig, rng=None, box=None, return_samples=False):
    """Sampled local Lipschitz constant of the nonlinearity on segment ``k``.

    The ratio ``||dphi|| / ||dq||`` is maximised over the sampled triples at
    the two segment endpoints and the midpoint, then scaled by the safety
    factor.
    """
    m = ltv.model
    if m.n_phi == 0:
        return (0.0, []) if return_samples else 0.0
    rng = rng if rng is not None else np.random.default_rng(segment_seed(cfg.seed, k))
    if cfg.input_A is not None and box is None:
        box = _polytope_box(np.asarray(cfg.input_A, float), np.asarray(cfg.input_b, float))
    eta, u_pts, xi_ball, w = _sample_triples(ltv, cfg, rng, box)
    nodes = ltv.grid.nodes
    times = (nodes[k], 0.5 * (nodes[k] + nodes[k + 1]), nodes[k + 1])
    best = 0.0
    used = 0
    samples = []
    for t in times:
        ubar = ltv.traj.input(t)
        xi = u_pts - ubar if u_pts is not None else xi_ball
        for s in range(len(eta)):
            dq = m.C_o @ eta[s] + m.D_o @ xi[s] + m.G_o @ w[s]
            ndq = float(np.linalg.norm(dq))
            if ndq < cfg.min_dq:
                continue
            ratio = float(np.linalg.norm(delta_phi(ltv, t, eta[s], xi[s], w[s]))) / ndq
            used += 1
            best = max(best, ratio)
            if return_samples:
                samples.append((t, eta[s], xi[s], w[s], ratio))
    if used == 0:
        raise EstimationError(f"all gamma samples on segment {k} have a degenerate dq")
    gamma = cfg.safety_gamma * best
    return (gamma, samples) if return_samples else gamma


@dataclass(frozen=True)
class SegmentBounds:
    """Per-segment bounds ``beta_k`` (on ``||Delta||``) and ``gamma_k``."""

    beta: np.ndarray
    gamma: np.ndarray
    seeds: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("beta", "gamma"):
            a = np.array(getattr(self, name), dtype=float)
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite and non-negative")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        seeds = np.array(self.seeds, dtype=np.int64)
        seeds.setflags(write=False)
        object.__setattr__(self, "seeds", seeds)
        if not (len(self.beta) == len(self.gamma) == len(self.seeds)):
            raise ValueError("beta, gamma and seeds must have equal length")

    @property
    def N(self):
        return len(self.beta)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "beta_k", "gamma_k", "seed"])
            for k in range(self.N):
                wr.writerow([k, repr(float(self.beta[k])), repr(float(self.gamma[k])), int(self.seeds[k])])

    @classmethod
    def from_csv(cls, path):
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise FunnelIOError(f"cannot read bounds file {path}: {exc}") from exc
        if not rows or [h.strip() for h in rows[0]] != ["k", "beta_k", "gamma_k", "seed"]:
            raise FunnelIOError(f"{path}: bad header")
        body = [r for r in rows[1:] if r]
        if [int(r[0]) for r in body] != list(range(len(body))):
            raise FunnelIOError(f"{path}: segment indices must be 0..N-1 in order")
        return cls([float(r[1]) for r in body], [float(r[2]) for r in body], [int(r[3]) for r in body])

    def to_dict(self):
        return {
            "beta": [float(v) for v in self.beta],
            "gamma": [float(v) for v in self.gamma],
            "seeds": [int(v) for v in self.seeds],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["beta"], d["gamma"], d["seeds"], dict(d.get("meta", {})))


def estimate_bounds(ltv: LtvData, cfg: SamplingConfig, workers=1) -> SegmentBounds:
    """Estimate ``beta_k`` and ``gamma_k`` for every segment.

    Segments use independent generators seeded by :func:`segment_seed`, so the
    result does not depend on ``workers``.
    """
    box = None
    if cfg.input_A is not None:
        box = _polytope_box(np.asarray(cfg.input_A, float), np.asarray(cfg.input_b, float))
    N = ltv.grid.N
    seeds = [segment_seed(cfg.seed, k) for k in range(N)]

    def one(k):
        rng = np.random.default_rng(seeds[k])
        beta = estimate_beta(ltv, k, cfg.n_delta, cfg.safety_beta)
        gamma = estimate_gamma(ltv, k, cfg, rng=rng, box=box)
        return beta, gamma

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(N)))
    else:
        results = [one(k) for k in range(N)]
    meta = {
        "master_seed": int(cfg.seed),
        "n_triples": int(cfg.n_triples),
        "n_delta": int(cfg.n_delta),
        "safety_gamma": float(cfg.safety_gamma),
        "safety_beta": float(cfg.safety_beta),
    }
    return SegmentBounds([r[0] for r in results], [r[1] for r in results], seeds, meta)
