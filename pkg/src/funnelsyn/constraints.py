"""State and input polytopes, including circular obstacles linearized on the nominal."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["CircularObstacle", "ConstraintSet", "box_halfspaces", "support_margin"]


def box_halfspaces(lower, upper):
    """``(A, b)`` of the box ``lower <= v <= upper`` (``None`` / ``inf`` entries skipped)."""
    rows, rhs = [], []
    n = len(lower)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        if upper[i] is not None and np.isfinite(upper[i]):
            rows.append(e)
            rhs.append(float(upper[i]))
        if lower[i] is not None and np.isfinite(lower[i]):
            rows.append(-e)
            rhs.append(-float(lower[i]))
    return np.array(rows).reshape(-1, n), np.array(rhs)


def support_margin(a, b, center, S):
    """``b - a'c - sqrt(a' S a)``: slack of the ellipsoid ``{c} + E_S`` in ``a'x <= b``."""
    a = np.asarray(a, float)
    return float(b - a @ np.asarray(center, float) - np.sqrt(max(a @ S @ a, 0.0)))


@dataclass(frozen=True)
class CircularObstacle:
    """Disc ``||x[dims] - center|| >= radius`` to be avoided."""

    center: tuple
    radius: float
    dims: tuple = (0, 1)

    def halfspace(self, x, n_x):
        """Linearization at ``x``: ``a'x <= b`` with ``b - a'x = ||p - c|| - radius``."""
        c = np.asarray(self.center, float)
        p = np.asarray(x, float)[list(self.dims)]
        d = p - c
        dist = float(np.linalg.norm(d))
        if dist == 0.0:
            raise ValueError("cannot linearize an obstacle at its centre")
        n_out = d / dist
        a = np.zeros(n_x)
        a[list(self.dims)] = -n_out
        b = -float(n_out @ c) - self.radius
        return a, b


@dataclass(frozen=True)
class ConstraintSet:
    """Fixed halfspaces on state and input plus obstacles linearized node by node."""

    n_x: int
    n_u: int
    state_A: np.ndarray = None
    state_b: np.ndarray = None
    input_A: np.ndarray = None
    input_b: np.ndarray = None
    obstacles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for nm, n in (("state", self.n_x), ("input", self.n_u)):
            A = getattr(self, f"{nm}_A")
            b = getattr(self, f"{nm}_b")
            A = np.zeros((0, n)) if A is None else np.asarray(A, float).reshape(-1, n)
            b = np.zeros(0) if b is None else np.asarray(b, float).ravel()
            if len(A) != len(b):
                raise ValueError(f"{nm} halfspace A and b disagree in length")
            A.setflags(write=False)
            b.setflags(write=False)
            object.__setattr__(self, f"{nm}_A", A)
            object.__setattr__(self, f"{nm}_b", b)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def m_x(self):
        return len(self.state_b) + len(self.obstacles)

    @property
    def m_u(self):
        return len(self.input_b)

    def state_halfspaces_at(self, xbar):
        rows = [*self.state_A]
        rhs = [*self.state_b]
        for ob in self.obstacles:
            a, b = ob.halfspace(xbar, self.n_x)
            rows.append(a)
            rhs.append(b)
        return np.array(rows).reshape(-1, self.n_x), np.array(rhs)

    def input_halfspaces_at(self, ubar=None):
        return self.input_A, self.input_b

    def node_halfspaces(self, traj, grid):
        """Per-node ``(A, b)`` lists for states and inputs."""
        states = [self.state_halfspaces_at(traj.state(t)) for t in grid.nodes]
        inputs = [self.input_halfspaces_at() for _ in grid.nodes]
        return states, inputs

    def to_dict(self):
        return {
            "state_A": self.state_A.tolist(),
            "state_b": self.state_b.tolist(),
            "input_A": self.input_A.tolist(),
            "input_b": self.input_b.tolist(),
            "obstacles": [
                {"center": [float(v) for v in o.center], "radius": float(o.radius), "dims": list(o.dims)}
                for o in self.obstacles
            ],
        }

    @classmethod
    def from_dict(cls, d, n_x, n_u):
        obs = tuple(
            CircularObstacle(tuple(o["center"]), float(o["radius"]), tuple(o.get("dims", (0, 1))))
            for o in d.get("obstacles", [])
        )
        return cls(n_x, n_u, d.get("state_A"), d.get("state_b"), d.get("input_A"), d.get("input_b"), obs)
