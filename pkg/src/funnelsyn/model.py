"""Uncertain nonlinear system models and nominal trajectories.

A :class:`SystemModel` carries the dynamics ``f(t, x, u, w)`` together with a
linear-fractional split

    f(t, x, u, w) = A x + B u + F w + E_o phi(t, q),    q = C_o x + D_o u + G_o w,

where ``E_o, C_o, D_o, G_o`` are constant 0/1 selectors.  The stored
``A_dec, B_dec, F_dec`` are the fixed matrices of that split; the
incremental module re-centres the split on the nominal Jacobians.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import FunnelIOError, NumericError

__all__ = [
    "SystemModel",
    "NominalTrajectory",
    "UnicycleParams",
    "DemoConfig",
    "FeasibilityResult",
    "eval_dynamics",
    "jacobians",
    "finite_difference_jacobians",
    "phi_jacobian",
    "check_nominal_feasibility",
    "integrate_open_loop",
    "unicycle",
    "generic_split",
    "build_unicycle_demo",
    "scripted_unicycle_inputs",
    "get_model",
    "MODEL_REGISTRY",
]


def _frozen(a, ndim=None):
    a = np.array(a, dtype=float)
    if ndim is not None and a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


def _is_selector(M):
    return bool(np.all((M == 0.0) | (M == 1.0)))


@dataclass(frozen=True)
class SystemModel:
    """Dynamics, Jacobians and the LFT structure of an uncertain system.

    Parameters
    ----------
    name : str
        Registry name.
    n_x, n_u, n_w : int
        State, input and disturbance dimensions.
    f : callable
        ``f(t, x, u, w) -> xdot``.
    E_o, C_o, D_o, G_o : array_like
        Selector matrices of shapes ``(n_x, n_phi)``, ``(n_q, n_x)``,
        ``(n_q, n_u)`` and ``(n_q, n_w)``.
    phi : callable
        ``phi(t, q) -> R^{n_phi}``.
    A_dec, B_dec, F_dec : array_like
        Fixed linear part of the split.
    jac : callable, optional
        Analytic ``jac(t, x, u, w) -> (A, B, F)``.  Central differences are
        used when missing.
    phi_jac : callable, optional
        Analytic ``phi_jac(t, q) -> (n_phi, n_q)``.
    params : dict
        Model parameters, recorded in funnel files.
    vectorized : bool
        ``f`` accepts stacked arguments of shape ``(..., n)`` and returns
        ``(..., n_x)``; used for batch simulation.
    """

    name: str
    n_x: int
    n_u: int
    n_w: int
    f: Callable
    E_o: np.ndarray
    C_o: np.ndarray
    D_o: np.ndarray
    G_o: np.ndarray
    phi: Callable
    A_dec: np.ndarray
    B_dec: np.ndarray
    F_dec: np.ndarray
    jac: Callable | None = None
    phi_jac: Callable | None = None
    params: dict = field(default_factory=dict)
    vectorized: bool = False

    def __post_init__(self):
        for name in ("E_o", "C_o", "D_o", "G_o", "A_dec", "B_dec", "F_dec"):
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim=2))
        n_phi = self.E_o.shape[1]
        n_q = self.C_o.shape[0]
        expected = {
            "E_o": (self.n_x, n_phi),
            "C_o": (n_q, self.n_x),
            "D_o": (n_q, self.n_u),
            "G_o": (n_q, self.n_w),
            "A_dec": (self.n_x, self.n_x),
            "B_dec": (self.n_x, self.n_u),
            "F_dec": (self.n_x, self.n_w),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in ("E_o", "C_o", "D_o", "G_o"):
            if not _is_selector(getattr(self, name)):
                raise ValueError(f"{name} must contain only 0/1 entries")
        if not np.array_equal(self.E_o.T @ self.E_o, np.eye(n_phi)):
            raise ValueError("E_o must have orthonormal columns")

    @property
    def n_phi(self):
        return self.E_o.shape[1]

    @property
    def n_q(self):
        return self.C_o.shape[0]

    def q_of(self, x, u, w):
        """Nonlinearity argument ``q = C_o x + D_o u + G_o w``."""
        return self.C_o @ x + self.D_o @ u + self.G_o @ w

    def lft_residual(self, t, x, u, w):
        """``f - (A_dec x + B_dec u + F_dec w + E_o phi(q))``; zero for a valid split."""
        x, u, w = (np.asarray(v, dtype=float) for v in (x, u, w))
        rhs = self.A_dec @ x + self.B_dec @ u + self.F_dec @ w
        rhs = rhs + self.E_o @ np.asarray(self.phi(t, self.q_of(x, u, w)), dtype=float)
        return np.asarray(self.f(t, x, u, w), dtype=float) - rhs


def _check_vec(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
    return v


def eval_dynamics(model: SystemModel, t: float, x, u, w) -> np.ndarray:
    """Evaluate ``f(t, x, u, w)`` after checking dimensions."""
    x = _check_vec(x, model.n_x, "x")
    u = _check_vec(u, model.n_u, "u")
    w = _check_vec(w, model.n_w, "w")
    return np.asarray(model.f(t, x, u, w), dtype=float)


def finite_difference_jacobians(fun, args, rel_step=1e-6):
    """Central-difference Jacobians of ``fun(*args)`` w.r.t. each argument.

    The step for argument ``a`` is ``rel_step * max(1, ||a||_inf)``.
    """
    args = [np.asarray(a, dtype=float) for a in args]
    f0 = np.asarray(fun(*args), dtype=float)
    out = []
    for i, a in enumerate(args):
        h = rel_step * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
        J = np.empty((f0.size, a.size))
        for j in range(a.size):
            ap = a.copy()
            am = a.copy()
            ap[j] += h
            am[j] -= h
            argp = list(args)
            argm = list(args)
            argp[i] = ap
            argm[i] = am
            J[:, j] = (np.asarray(fun(*argp)) - np.asarray(fun(*argm))) / (2 * h)
        out.append(J)
    return out


def jacobians(model: SystemModel, t: float, x, u, w, method="auto"):
    """Partial derivatives ``(df/dx, df/du, df/dw)`` at one point.

    ``method`` is ``"auto"`` (analytic when available), ``"analytic"`` or
    ``"fd"``.
    """
    x = _check_vec(x, model.n_x, "x")
    u = _check_vec(u, model.n_u, "u")
    w = _check_vec(w, model.n_w, "w")
    if method not in ("auto", "analytic", "fd"):
        raise ValueError(f"unknown jacobian method {method!r}")
    if method == "analytic" and model.jac is None:
        raise ValueError(f"model {model.name!r} has no analytic Jacobian")
    if model.jac is not None and method != "fd":
        A, B, F = (np.asarray(M, dtype=float) for M in model.jac(t, x, u, w))
    else:
        A, B, F = finite_difference_jacobians(lambda x_, u_, w_: model.f(t, x_, u_, w_), (x, u, w))
    for M in (A, B, F):
        if not np.all(np.isfinite(M)):
            raise NumericError(f"non-finite Jacobian at t={t}")
    return A, B, F


def phi_jacobian(model: SystemModel, t: float, q) -> np.ndarray:
    """Jacobian of ``phi(t, q)`` with respect to ``q``."""
    q = _check_vec(q, model.n_q, "q")
    if model.phi_jac is not None:
        J = np.asarray(model.phi_jac(t, q), dtype=float)
    else:
        (J,) = finite_difference_jacobians(lambda q_: model.phi(t, q_), (q,))
    return J.reshape(model.n_phi, model.n_q)


@dataclass(frozen=True)
class NominalTrajectory:
    """Densely sampled disturbance-free trajectory.

    Inputs are interpolated linearly.  States are interpolated linearly, or
    with cubic Hermite splines when ``rates`` (the state derivatives at the
    samples) are given, which keeps the interpolant on the true trajectory to
    fourth order between samples.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    rates: np.ndarray | None = None

    def __post_init__(self):
        times = _frozen(self.times, ndim=1)
        states = _frozen(self.states, ndim=2)
        inputs = _frozen(self.inputs, ndim=2)
        if len(times) < 2:
            raise ValueError("a trajectory needs at least two samples")
        if not np.all(np.diff(times) > 0):
            raise ValueError("trajectory times must be strictly increasing")
        if states.shape[0] != len(times) or inputs.shape[0] != len(times):
            raise ValueError("states/inputs must have one row per sample time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        spline = None
        if self.rates is not None:
            rates = _frozen(self.rates, ndim=2)
            if rates.shape != states.shape:
                raise ValueError("rates must have the shape of states")
            object.__setattr__(self, "rates", rates)
            spline = CubicHermiteSpline(times, states, rates, axis=0, extrapolate=True)
        object.__setattr__(self, "_spline", spline)

    def with_rates(self, model: "SystemModel") -> "NominalTrajectory":
        """Copy whose state interpolant uses ``f(t, x, u, 0)`` as sample derivatives."""
        w0 = np.zeros(model.n_w)
        rates = np.array([eval_dynamics(model, t, x, u, w0) for t, x, u in zip(self.times, self.states, self.inputs)])
        return NominalTrajectory(self.times, self.states, self.inputs, rates)

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def tf(self):
        return float(self.times[-1])

    @property
    def n_x(self):
        return self.states.shape[1]

    @property
    def n_u(self):
        return self.inputs.shape[1]

    def _check_t(self, t):
        t = np.asarray(t, dtype=float)
        span = self.tf - self.t0
        if np.any(t < self.t0 - 1e-12 * span) or np.any(t > self.tf + 1e-12 * span):
            raise ValueError(f"time outside the nominal horizon [{self.t0}, {self.tf}]")
        return t

    def _interp(self, t, values):
        t = self._check_t(t)
        cols = [np.interp(t, self.times, values[:, i]) for i in range(values.shape[1])]
        return np.stack(cols, axis=-1)

    def state(self, t):
        """Interpolated nominal state; vectorised over ``t``."""
        if self._spline is None:
            return self._interp(t, self.states)
        return self._spline(self._check_t(t))

    def input(self, t):
        """Interpolated nominal input; vectorised over ``t``."""
        return self._interp(t, self.inputs)

    def to_csv(self, path):
        header = ["t"] + [f"x{i + 1}" for i in range(self.n_x)] + [f"u{i + 1}" for i in range(self.n_u)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, x, u in zip(self.times, self.states, self.inputs):
                writer.writerow([repr(float(v)) for v in (t, *x, *u)])

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise FunnelIOError(f"cannot read nominal trajectory {path}: {exc}") from exc
        if not rows:
            raise FunnelIOError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        n_x = sum(1 for h in header if h.startswith("x"))
        n_u = sum(1 for h in header if h.startswith("u"))
        expected = ["t"] + [f"x{i + 1}" for i in range(n_x)] + [f"u{i + 1}" for i in range(n_u)]
        if header != expected:
            raise FunnelIOError(f"{path}: bad header {header}")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise FunnelIOError(f"{path}: non-numeric entry ({exc})") from exc
        return cls(data[:, 0], data[:, 1 : 1 + n_x], data[:, 1 + n_x :])


@dataclass(frozen=True)
class FeasibilityResult:
    residual: float
    passed: bool
    worst_index: int


def check_nominal_feasibility(model: SystemModel, traj: NominalTrajectory, tol=1e-4) -> FeasibilityResult:
    """Max central-difference residual ``||dx/dt - f(t, x, u, 0)||`` at interior samples."""
    if len(traj.times) < 3:
        raise ValueError("feasibility check needs at least 3 samples")
    t, X, U = traj.times, traj.states, traj.inputs
    dxdt = (X[2:] - X[:-2]) / (t[2:] - t[:-2])[:, None]
    w0 = np.zeros(model.n_w)
    res = np.array(
        [np.linalg.norm(dxdt[i - 1] - eval_dynamics(model, t[i], X[i], U[i], w0)) for i in range(1, len(t) - 1)]
    )
    worst = int(np.argmax(res))
    return FeasibilityResult(float(res[worst]), bool(res[worst] <= tol), worst + 1)


def _rk4_step(fun, t, x, h):
    k1 = fun(t, x)
    k2 = fun(t + h / 2, x + h / 2 * k1)
    k3 = fun(t + h / 2, x + h / 2 * k2)
    k4 = fun(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_open_loop(model: SystemModel, x0, input_fn, times, substeps=4) -> NominalTrajectory:
    """RK4 integration of ``f(t, x, u(t), 0)``, recorded at ``times``.

    ``input_fn`` is sampled at ``times`` and ``u(t)`` is the linear
    interpolant of those samples, so that the returned trajectory follows
    its own interpolated inputs.  The result carries Hermite rates.
    """
    times = np.asarray(times, dtype=float)
    x = _check_vec(x0, model.n_x, "x0").copy()
    w0 = np.zeros(model.n_w)
    inputs = np.array([input_fn(t) for t in times], dtype=float).reshape(len(times), model.n_u)

    states = [x.copy()]
    for k, (ta, tb) in enumerate(zip(times[:-1], times[1:])):
        ua, du = inputs[k], (inputs[k + 1] - inputs[k]) / (tb - ta)

        def rhs(t, x_, ta=ta, ua=ua, du=du):
            return np.asarray(model.f(t, x_, ua + (t - ta) * du, w0), dtype=float)

        h = (tb - ta) / substeps
        for s in range(substeps):
            x = _rk4_step(rhs, ta + s * h, x, h)
        states.append(x.copy())
    return NominalTrajectory(times, np.array(states), inputs).with_rates(model)


# --------------------------------------------------------------------------
# unicycle


@dataclass(frozen=True)
class UnicycleParams:
    c1: float = 0.01
    c2: float = 0.02

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("unicycle disturbance gains must be non-negative")


def unicycle(params: UnicycleParams | None = None) -> SystemModel:
    """Unicycle with yaw-estimation and turn-rate disturbances.

    ``q = (x3, u1, w1)`` and ``phi(q) = (u1 cos(x3 + c1 w1), u1 sin(x3 + c1 w1))``;
    the third state row is exactly linear and stays in ``B_dec, F_dec``.
    """
    p = params or UnicycleParams()
    c1, c2 = p.c1, p.c2

    def f(t, x, u, w):
        th = x[..., 2] + c1 * w[..., 0]
        return np.stack([u[..., 0] * np.cos(th), u[..., 0] * np.sin(th), u[..., 1] + c2 * w[..., 1]], axis=-1)

    def jac(t, x, u, w):
        th = x[2] + c1 * w[0]
        c, s = np.cos(th), np.sin(th)
        A = np.array([[0.0, 0.0, -u[0] * s], [0.0, 0.0, u[0] * c], [0.0, 0.0, 0.0]])
        B = np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])
        F = np.array([[-u[0] * s * c1, 0.0], [u[0] * c * c1, 0.0], [0.0, c2]])
        return A, B, F

    def phi(t, q):
        th = q[0] + c1 * q[2]
        return np.array([q[1] * np.cos(th), q[1] * np.sin(th)])

    def phi_jac(t, q):
        th = q[0] + c1 * q[2]
        c, s = np.cos(th), np.sin(th)
        return np.array([[-q[1] * s, c, -q[1] * s * c1], [q[1] * c, s, q[1] * c * c1]])

    return SystemModel(
        name="unicycle",
        n_x=3,
        n_u=2,
        n_w=2,
        f=f,
        E_o=[[1, 0], [0, 1], [0, 0]],
        C_o=[[0, 0, 1], [0, 0, 0], [0, 0, 0]],
        D_o=[[0, 0], [1, 0], [0, 0]],
        G_o=[[0, 0], [0, 0], [1, 0]],
        phi=phi,
        A_dec=np.zeros((3, 3)),
        B_dec=[[0, 0], [0, 0], [0, 1]],
        F_dec=[[0, 0], [0, 0], [0, c2]],
        jac=jac,
        phi_jac=phi_jac,
        params={"c1": c1, "c2": c2},
        vectorized=True,
    )


def generic_split(model: SystemModel) -> SystemModel:
    """The always-valid split ``E = I``, ``q = (x, u, w)``, ``phi = f``."""
    n_x, n_u, n_w = model.n_x, model.n_u, model.n_w
    n_q = n_x + n_u + n_w
    C = np.zeros((n_q, n_x))
    D = np.zeros((n_q, n_u))
    G = np.zeros((n_q, n_w))
    C[:n_x] = np.eye(n_x)
    D[n_x : n_x + n_u] = np.eye(n_u)
    G[n_x + n_u :] = np.eye(n_w)

    def phi(t, q):
        return model.f(t, q[:n_x], q[n_x : n_x + n_u], q[n_x + n_u :])

    phi_jac = None
    if model.jac is not None:
        def phi_jac(t, q):
            return np.hstack(model.jac(t, q[:n_x], q[n_x : n_x + n_u], q[n_x + n_u :]))

    return SystemModel(
        name=model.name,
        n_x=n_x,
        n_u=n_u,
        n_w=n_w,
        f=model.f,
        E_o=np.eye(n_x),
        C_o=C,
        D_o=D,
        G_o=G,
        phi=phi,
        A_dec=np.zeros((n_x, n_x)),
        B_dec=np.zeros((n_x, n_u)),
        F_dec=np.zeros((n_x, n_w)),
        jac=model.jac,
        phi_jac=phi_jac,
        params=dict(model.params, split="generic"),
    )


MODEL_REGISTRY = {"unicycle": lambda **kw: unicycle(UnicycleParams(**kw))}


def get_model(name: str, **params) -> SystemModel:
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}") from None
    return factory(**params)


@dataclass(frozen=True)
class DemoConfig:
    """Horizon and sampling of the built-in unicycle nominal.

    ``dense_dt`` is the spacing of stored samples; each sample interval is
    integrated with ``substeps`` RK4 steps.  ``profile`` is ``"scripted"`` or
    ``"zero"`` (all inputs zero: the unicycle stays put).
    """

    t0: float = 0.0
    tf: float = 10.0
    dense_dt: float = 0.01
    substeps: int = 4
    heading0: float = 0.65262
    profile: str = "scripted"


TURN_RATE = 0.45453
RAMP_WIDTH = 1.5


def _smooth_levels(s, knots, levels, width):
    v = np.full_like(s, levels[0], dtype=float)
    for sk, a, b in zip(knots, levels[:-1], levels[1:]):
        r = np.clip((s - (sk - width / 2)) / width, 0.0, 1.0)
        v = v + (b - a) * (0.5 - 0.5 * np.cos(np.pi * r))
    return v


def scripted_unicycle_inputs(t, t0=0.0, tf=10.0):
    """Unit speed and an S-shaped turn-rate profile joined by cosine ramps.

    Tuned on a 10 s horizon so the unicycle starting at the origin with
    heading ``DemoConfig.heading0`` ends within 1e-3 of (4, 8).  Other
    horizons reuse the same profile in rescaled time.
    """
    s = 10.0 * (np.asarray(t, dtype=float) - t0) / (tf - t0)
    speed = np.ones_like(s)
    turn = _smooth_levels(s, [3.0, 7.0], [TURN_RATE, -TURN_RATE, TURN_RATE], width=RAMP_WIDTH)
    return np.stack([speed, turn], axis=-1)


def build_unicycle_demo(params: UnicycleParams | None = None, config: DemoConfig | None = None):
    """Unicycle model plus a dynamically feasible nominal trajectory."""
    cfg = config or DemoConfig()
    if cfg.tf <= cfg.t0:
        raise ValueError("tf must be greater than t0")
    model = unicycle(params)
    n = int(round((cfg.tf - cfg.t0) / cfg.dense_dt))
    times = np.linspace(cfg.t0, cfg.tf, max(n, 2) + 1)
    if cfg.profile == "scripted":
        def input_fn(t):
            return scripted_unicycle_inputs(t, cfg.t0, cfg.tf)
    elif cfg.profile == "zero":
        def input_fn(t):
            return np.zeros(2)
    else:
        raise ValueError(f"unknown input profile {cfg.profile!r}")
    x0 = np.array([0.0, 0.0, cfg.heading0])
    return model, integrate_open_loop(model, x0, input_fn, times, substeps=cfg.substeps)
