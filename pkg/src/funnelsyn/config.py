"""Run configuration: one JSON document describing an experiment.

Schema (all keys optional; defaults reproduce the unicycle demo)::

    {
      "model": {"name": "unicycle", "params": {"c1": 0.01, "c2": 0.02}},
      "nominal": {"source": "demo"}            # or {"source": "csv", "path": "nominal.csv"}
      "grid": {"t0": 0.0, "tf": 10.0, "N": 20},
      "lambda_w": 0.4,
      "Q_max": [4.0, 4.0, 0.2742],             # diagonal, or a full matrix
      "constraints": {
        "state_A": [[...]], "state_b": [...],  # fixed halfspaces A x <= b
        "obstacles": [{"center": [2.0, 3.2], "radius": 0.5, "dims": [0, 1]}],
        "input_lower": [0.0, -1.5], "input_upper": [2.0, 1.5],
        "input_A": [[...]], "input_b": [...]   # extra input halfspaces
      },
      "mode": "lemma5",                        # or "lemma4"
      "objective": "entry_exit",               # "sum_trace", "exit_trace"
      "sampling": {"n_triples": 100, "n_delta": 20, "seed": 0,
                   "safety_gamma": 1.1, "safety_beta": 1.1, "workers": 1},
      "solver": null,                          # "clarabel" | "cvxopt"; null: $FUNNELSYN_SOLVER
      "tolerances": {"eps_pd": 1e-6, "invariance": 1e-4, "psd": 1e-7, "margin": 1e-7},
      "verify": {"samples": 200, "seed": 0},
      "output_dir": "out"
    }

A relative CSV path is resolved against the directory of the config file.
The safety factors inflate the sampled bounds; 1.0 uses the raw sampled
maxima.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import CircularObstacle, ConstraintSet, box_halfspaces
from .errors import FunnelIOError

__all__ = ["RunConfig", "DEMO_OBSTACLES", "default_config_dict", "load_config"]

DEMO_OBSTACLES = (((2.0, 3.2), 0.5), ((1.3, 6.9), 0.5))


def default_config_dict():
    """The demo experiment as a plain dictionary."""
    return {
        "model": {"name": "unicycle", "params": {"c1": 0.01, "c2": 0.02}},
        "nominal": {"source": "demo"},
        "grid": {"t0": 0.0, "tf": 10.0, "N": 20},
        "lambda_w": 0.4,
        "Q_max": [4.0, 4.0, (np.pi / 6) ** 2],
        "constraints": {
            "obstacles": [{"center": list(c), "radius": r, "dims": [0, 1]} for c, r in DEMO_OBSTACLES],
            "input_lower": [0.0, -1.5],
            "input_upper": [2.0, 1.5],
        },
        "mode": "lemma5",
        "objective": "entry_exit",
        "sampling": {"n_triples": 100, "n_delta": 20, "seed": 0,
                     "safety_gamma": 1.1, "safety_beta": 1.1, "workers": 1},
        "solver": None,
        "tolerances": {"eps_pd": 1e-6, "invariance": 1e-4, "psd": 1e-7, "margin": 1e-7},
        "verify": {"samples": 200, "seed": 0},
        "output_dir": "out",
    }


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "constraints":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated experiment description; build with :meth:`from_dict` or :func:`load_config`."""

    data: dict = field(default_factory=default_config_dict)
    base_dir: str = "."

    def __post_init__(self):
        d = _merge(default_config_dict(), self.data)
        unknown = set(d) - set(default_config_dict())
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        if int(d["grid"]["N"]) < 1:
            raise ValueError("grid.N must be at least 1")
        if float(d["grid"]["tf"]) <= float(d["grid"]["t0"]):
            raise ValueError("grid.tf must exceed grid.t0")
        if d["mode"] not in ("lemma4", "lemma5"):
            raise ValueError(f"mode must be lemma4 or lemma5, got {d['mode']!r}")
        if float(d["lambda_w"]) <= 0:
            raise ValueError("lambda_w must be positive")
        Q = self._q_max(d["Q_max"])
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q)[0] <= 0:
            raise ValueError("Q_max must be symmetric positive definite")
        src = d["nominal"].get("source")
        if src not in ("demo", "csv") or (src == "csv" and not d["nominal"].get("path")):
            raise ValueError("nominal.source must be 'demo' or 'csv' (with a path)")
        object.__setattr__(self, "data", d)

    @staticmethod
    def _q_max(v):
        Q = np.array(v, dtype=float)
        return np.diag(Q) if Q.ndim == 1 else Q

    @classmethod
    def from_dict(cls, d, base_dir="."):
        return cls(dict(d), str(base_dir))

    def to_dict(self):
        return copy.deepcopy(self.data)

    def dumps(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def save(self, path):
        try:
            Path(path).write_text(self.dumps())
        except OSError as exc:
            raise FunnelIOError(f"cannot write config {path}: {exc}") from exc

    def replace(self, **changes):
        """Copy with top-level keys (or nested dicts, merged) replaced."""
        return RunConfig(_merge(self.data, changes), self.base_dir)

    # typed accessors

    @property
    def Q_max(self):
        return self._q_max(self.data["Q_max"])

    @property
    def N(self):
        return int(self.data["grid"]["N"])

    @property
    def mode(self):
        return self.data["mode"]

    def nominal_path(self):
        p = Path(self.data["nominal"]["path"])
        return p if p.is_absolute() else Path(self.base_dir) / p

    def constraint_set(self, n_x, n_u):
        c = self.data["constraints"]
        state_A = np.asarray(c.get("state_A", np.zeros((0, n_x))), float).reshape(-1, n_x)
        state_b = np.asarray(c.get("state_b", []), float).ravel()
        rows, rhs = [np.asarray(c.get("input_A", np.zeros((0, n_u))), float).reshape(-1, n_u)], [
            np.asarray(c.get("input_b", []), float).ravel()]
        if "input_lower" in c or "input_upper" in c:
            lo = c.get("input_lower", [None] * n_u)
            hi = c.get("input_upper", [None] * n_u)
            A, b = box_halfspaces(lo, hi)
            rows.append(A)
            rhs.append(b)
        obstacles = tuple(
            CircularObstacle(tuple(o["center"]), float(o["radius"]), tuple(o.get("dims", (0, 1))))
            for o in c.get("obstacles", [])
        )
        return ConstraintSet(n_x, n_u, state_A, state_b, np.vstack(rows), np.concatenate(rhs), obstacles)


def load_config(path) -> RunConfig:
    """Read a JSON run configuration."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FunnelIOError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FunnelIOError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise FunnelIOError(f"{path}: configuration must be a JSON object")
    return RunConfig.from_dict(d, Path(path).resolve().parent)
