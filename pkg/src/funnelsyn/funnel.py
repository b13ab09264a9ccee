"""The synthesized funnel: FOH-interpolated ellipsoids, feedback law and file format."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FunnelIOError, NumericError
from .incremental import SegmentBounds, TimeGrid
from .model import NominalTrajectory

__all__ = [
    "Funnel",
    "interp",
    "multipliers",
    "gain",
    "lyapunov_value",
    "control",
    "project",
    "project_state",
    "input_extent",
    "save",
    "load",
    "write_ellipses_csv",
    "write_input_bands_csv",
    "FORMAT_NAME",
    "FORMAT_VERSION",
]

FORMAT_NAME = "funnelsyn-funnel"
FORMAT_VERSION = 1
MAX_COND = 1e12


def _ro(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Funnel:
    """Node matrices ``Q_k`` (state ellipsoids) and ``Y_k = K_k Q_k`` with their context.

    ``lam_beta`` / ``lam_gamma`` are the node multipliers of the solution,
    kept so the certificate can be re-checked at arbitrary times.  With
    ``normalized_multipliers`` they are stored divided by the segment bound,
    i.e. the multiplier on segment ``k`` is ``beta_k * lam_beta(t)``; see
    :func:`multipliers`.
    """

    grid: TimeGrid
    Q: np.ndarray
    Y: np.ndarray
    lam_beta: np.ndarray
    lam_gamma: np.ndarray
    nominal: NominalTrajectory
    bounds: SegmentBounds
    lambda_w: float
    metadata: dict = field(default_factory=dict)
    normalized_multipliers: bool = False

    def __post_init__(self):
        Q, Y = _ro(self.Q), _ro(self.Y)
        N = self.grid.N
        if Q.ndim != 3 or Q.shape[0] != N + 1 or Q.shape[1] != Q.shape[2]:
            raise ValueError(f"Q must have shape (N+1, n_x, n_x), got {Q.shape}")
        if Y.shape != (N + 1, Y.shape[1], Q.shape[1]):
            raise ValueError(f"Y must have shape (N+1, n_u, n_x), got {Y.shape}")
        if not np.allclose(Q, Q.transpose(0, 2, 1), atol=1e-12, rtol=0):
            raise ValueError("Q_k must be symmetric")
        for k, Qk in enumerate(Q):
            if np.linalg.eigvalsh(Qk)[0] <= 0:
                raise ValueError(f"Q_{k} is not positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "lam_beta", _ro(self.lam_beta))
        object.__setattr__(self, "lam_gamma", _ro(self.lam_gamma))
        if self.lam_beta.shape != (N + 1,) or self.lam_gamma.shape != (N + 1,):
            raise ValueError("multipliers must be given per node")
        if self.bounds.N != N:
            raise ValueError("bounds and grid disagree on the number of segments")

    @property
    def n_x(self):
        return self.Q.shape[1]

    @property
    def n_u(self):
        return self.Y.shape[1]

    @property
    def K(self):
        """Node gains ``K_k = Y_k Q_k^{-1}``."""
        return np.array([np.linalg.solve(Qk, Yk.T).T for Qk, Yk in zip(self.Q, self.Y)])

    def with_Q(self, Q, Y=None):
        """Copy with replaced node matrices (used to build tampered certificates)."""
        return Funnel(self.grid, Q, self.Y if Y is None else Y, self.lam_beta, self.lam_gamma,
                      self.nominal, self.bounds, self.lambda_w, dict(self.metadata),
                      self.normalized_multipliers)


def interp(funnel: Funnel, t, segment=None):
    """``(Q(t), Y(t), Qdot)``; at a node the segment to its right supplies ``Qdot``."""
    g = funnel.grid
    k = g.segment(t) if segment is None else segment
    s1, s2 = g.weights(t, k)
    Q = s1 * funnel.Q[k] + s2 * funnel.Q[k + 1]
    Y = s1 * funnel.Y[k] + s2 * funnel.Y[k + 1]
    Qdot = (funnel.Q[k + 1] - funnel.Q[k]) / g.dt
    return Q, Y, Qdot


def multipliers(funnel: Funnel, t, segment=None):
    """True ``(lambda_beta(t), lambda_gamma(t))`` on the segment containing ``t``."""
    g = funnel.grid
    k = g.segment(t) if segment is None else segment
    s1, s2 = g.weights(t, k)
    lb = s1 * funnel.lam_beta[k] + s2 * funnel.lam_beta[k + 1]
    lg = s1 * funnel.lam_gamma[k] + s2 * funnel.lam_gamma[k + 1]
    if funnel.normalized_multipliers:
        lb, lg = lb * funnel.bounds.beta[k], lg * funnel.bounds.gamma[k]
    return float(lb), float(lg)


def _checked_Q(Q):
    if np.linalg.cond(Q) > MAX_COND:
        raise NumericError("Q(t) is ill-conditioned")
    return Q


def gain(funnel: Funnel, t):
    """``K(t) = Y(t) Q(t)^{-1}``."""
    Q, Y, _ = interp(funnel, t)
    return np.linalg.solve(_checked_Q(Q), Y.T).T


def lyapunov_value(funnel: Funnel, t, eta):
    """``V = eta' Q(t)^{-1} eta``; ``eta`` may be a batch of row vectors."""
    Q, _, _ = interp(funnel, t)
    eta = np.asarray(eta, float)
    Z = np.linalg.solve(_checked_Q(Q), eta.T).T
    return np.sum(eta * Z, axis=-1)


def control(funnel: Funnel, t, x):
    """``u = ubar(t) + K(t) (x - xbar(t))``."""
    eta = np.asarray(x, float) - funnel.nominal.state(t)
    return funnel.nominal.input(t) + eta @ gain(funnel, t).T


def project_state(funnel: Funnel, t, dims=(0, 1), n_points=64, centered=False):
    """Boundary of the state ellipsoid projected on two coordinates, shape ``(n_points, 2)``."""
    dims = _check_dims(dims, funnel.n_x, 2)
    Q, _, _ = interp(funnel, t)
    S = Q[np.ix_(dims, dims)]
    L = np.linalg.cholesky(S)
    ang = np.linspace(0.0, 2 * np.pi, n_points, endpoint=False)
    pts = np.stack([np.cos(ang), np.sin(ang)], axis=1) @ L.T
    if not centered:
        pts = pts + funnel.nominal.state(t)[dims]
    return pts


def input_extent(funnel: Funnel, t, j):
    """``(ubar_j(t), sqrt((K Q K')_jj))``: centre and half-width of the input funnel."""
    (j,) = _check_dims((j,), funnel.n_u, 1)
    Q, Y, _ = interp(funnel, t)
    K = np.linalg.solve(Q, Y.T).T
    S = K @ Q @ K.T
    return float(funnel.nominal.input(t)[j]), float(np.sqrt(max(S[j, j], 0.0)))


def project(funnel: Funnel, t, kind="state", dims=(0, 1), n_points=64):
    """Dispatch to :func:`project_state` or :func:`input_extent`."""
    if kind == "state":
        return project_state(funnel, t, dims, n_points)
    if kind == "input":
        j = dims if np.isscalar(dims) else dims[0]
        return input_extent(funnel, t, j)
    raise ValueError(f"kind must be 'state' or 'input', got {kind!r}")


def _check_dims(dims, n, count):
    dims = [int(d) for d in (dims if np.iterable(dims) else (dims,))]
    if len(dims) != count or len(set(dims)) != count or any(d < 0 or d >= n for d in dims):
        raise ValueError(f"invalid projection dims {dims} for dimension {n}")
    return dims


# --------------------------------------------------------------------------
# serialization


def _to_doc(f: Funnel):
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "grid": {"t0": f.grid.t0, "tf": f.grid.tf, "N": f.grid.N},
        "lambda_w": float(f.lambda_w),
        "Q": f.Q.tolist(),
        "Y": f.Y.tolist(),
        "lam_beta": f.lam_beta.tolist(),
        "lam_gamma": f.lam_gamma.tolist(),
        "nominal": {
            "times": f.nominal.times.tolist(),
            "states": f.nominal.states.tolist(),
            "inputs": f.nominal.inputs.tolist(),
            "rates": None if f.nominal.rates is None else f.nominal.rates.tolist(),
        },
        "bounds": f.bounds.to_dict(),
        "metadata": f.metadata,
        "normalized_multipliers": bool(f.normalized_multipliers),
    }


def dumps(funnel: Funnel) -> str:
    return json.dumps(_to_doc(funnel), sort_keys=True, indent=1, allow_nan=False) + "\n"


def save(funnel: Funnel, path):
    """Write the funnel as versioned JSON (shortest round-trip float repr)."""
    try:
        with open(path, "w") as fh:
            fh.write(dumps(funnel))
    except OSError as exc:
        raise FunnelIOError(f"cannot write funnel file {path}: {exc}") from exc


def loads(text: str, source="<string>") -> Funnel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FunnelIOError(f"{source}: corrupt funnel file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise FunnelIOError(f"{source}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise FunnelIOError(f"{source}: unsupported schema version {doc.get('version')!r}")
    try:
        g = doc["grid"]
        grid = TimeGrid(g["t0"], g["tf"], g["N"])
        nom = doc["nominal"]
        nominal = NominalTrajectory(nom["times"], nom["states"], nom["inputs"], nom.get("rates"))
        return Funnel(
            grid,
            doc["Q"],
            doc["Y"],
            doc["lam_beta"],
            doc["lam_gamma"],
            nominal,
            SegmentBounds.from_dict(doc["bounds"]),
            float(doc["lambda_w"]),
            doc.get("metadata", {}),
            bool(doc.get("normalized_multipliers", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FunnelIOError(f"{source}: invalid funnel file ({exc})") from exc


def load(path) -> Funnel:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise FunnelIOError(f"cannot read funnel file {path}: {exc}") from exc
    return loads(text, str(path))


def write_ellipses_csv(funnel: Funnel, path, dims=(0, 1), n_points=64):
    """Per node: ``node, t_k, point, x, y`` rows of the projected state ellipse."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["node", "t_k", "point", f"x{dims[0] + 1}", f"x{dims[1] + 1}"])
        for k, t in enumerate(funnel.grid.nodes):
            for i, p in enumerate(project_state(funnel, t, dims, n_points)):
                wr.writerow([k, repr(float(t)), i, repr(float(p[0])), repr(float(p[1]))])


def write_input_bands_csv(funnel: Funnel, path):
    """Per node and input: ``node, t_k, j, center, half_width``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["node", "t_k", "j", "center", "half_width"])
        for k, t in enumerate(funnel.grid.nodes):
            for j in range(funnel.n_u):
                c, hw = input_extent(funnel, t, j)
                wr.writerow([k, repr(float(t)), j, repr(c), repr(hw)])
