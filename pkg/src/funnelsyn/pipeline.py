"""End-to-end runs: configuration in, funnel and reports out."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .constraints import ConstraintSet
from .errors import FunnelIOError, SynthesisError
from .funnel import Funnel, save, write_ellipses_csv, write_input_bands_csv
from .incremental import SamplingConfig, SegmentBounds, TimeGrid, build_ltv, estimate_bounds
from .model import NominalTrajectory, UnicycleParams, build_unicycle_demo, get_model
from .sdp import SolveReport, SynthesisSettings, build_problem, extract_funnel, solve
from .verify import VerificationReport, verify_funnel

__all__ = ["SynthesisResult", "prepare", "synthesize", "lambda_w_search", "write_outputs", "model_from_funnel",
           "constraints_from_funnel", "verify_file_funnel", "summary_lines"]


@dataclass
class SynthesisResult:
    funnel: Funnel | None
    report: SolveReport
    bounds: SegmentBounds
    constraints: ConstraintSet
    census: dict
    timings: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.report.status == "optimal"


def _nominal(cfg: RunConfig, model):
    src = cfg.data["nominal"]
    if src["source"] == "csv":
        traj = NominalTrajectory.from_csv(cfg.nominal_path())
        if traj.n_x != model.n_x or traj.n_u != model.n_u:
            raise FunnelIOError("nominal CSV dimensions do not match the model")
        return traj.with_rates(model)
    if cfg.data["model"]["name"] != "unicycle":
        raise ValueError("the built-in nominal exists only for the unicycle")
    _, traj = build_unicycle_demo(UnicycleParams(**cfg.data["model"].get("params", {})))
    return traj


def prepare(cfg: RunConfig):
    """Model, nominal, grid, LTV data, constraint set and sampled bounds."""
    model = get_model(cfg.data["model"]["name"], **cfg.data["model"].get("params", {}))
    traj = _nominal(cfg, model)
    g = cfg.data["grid"]
    grid = TimeGrid(float(g["t0"]), float(g["tf"]), int(g["N"]))
    ltv = build_ltv(model, traj, grid)
    cs = cfg.constraint_set(model.n_x, model.n_u)
    s = cfg.data["sampling"]
    scfg = SamplingConfig(
        Q_max=cfg.Q_max,
        input_A=cs.input_A if cs.m_u else None,
        input_b=cs.input_b if cs.m_u else None,
        n_triples=int(s["n_triples"]),
        n_delta=int(s["n_delta"]),
        safety_gamma=float(s["safety_gamma"]),
        safety_beta=float(s["safety_beta"]),
        seed=int(s["seed"]),
    )
    bounds = estimate_bounds(ltv, scfg, workers=int(s.get("workers", 1)))
    return model, traj, grid, ltv, cs, bounds


def synthesize(cfg: RunConfig, solver=None, bounds=None) -> SynthesisResult:
    """Sample bounds, assemble and solve the SDP, extract the funnel.

    ``funnel`` is ``None`` unless the solve is optimal.
    """
    t0 = time.perf_counter()
    model, traj, grid, ltv, cs, sampled = prepare(cfg)
    bounds = bounds or sampled
    t1 = time.perf_counter()
    settings = SynthesisSettings(
        Q_max=cfg.Q_max,
        lambda_w=float(cfg.data["lambda_w"]),
        mode=cfg.mode,
        objective=cfg.data["objective"],
        eps_pd=float(cfg.data["tolerances"]["eps_pd"]),
    )
    sh, ih = cs.node_halfspaces(traj, grid)
    problem, reg = build_problem(ltv, bounds, settings, sh if cs.m_x else None, ih if cs.m_u else None)
    t2 = time.perf_counter()
    report = solve(problem, solver=solver or cfg.data.get("solver"))
    t3 = time.perf_counter()
    funnel = None
    if report.status == "optimal":
        meta = {
            "constraints": cs.to_dict(),
            "solver": report.stats.get("solver"),
            "solve_time": report.stats.get("wall_time"),
        }
        funnel = extract_funnel(report, reg, ltv, bounds, settings, meta)
    timings = {"prepare": t1 - t0, "assemble": t2 - t1, "solve": t3 - t2}
    return SynthesisResult(funnel, report, bounds, cs, problem.census(), timings)


def lambda_w_search(cfg: RunConfig, values, solver=None):
    """Solve once per ``lambda_w`` in ``values`` on the same sampled bounds.

    Returns ``(best, table)``: the optimal result with the lowest objective
    (``None`` if none is optimal) and ``(lambda_w, status, objective)`` rows.
    """
    bounds = prepare(cfg)[-1]
    best, table = None, []
    for lw in values:
        res = synthesize(cfg.replace(lambda_w=float(lw)), solver=solver, bounds=bounds)
        table.append((float(lw), res.report.status, res.report.objective))
        if res.optimal and (best is None or res.report.objective < best.report.objective):
            best = res
    return best, table


def write_outputs(result: SynthesisResult, cfg: RunConfig, out_dir):
    """Write ``funnel.json``, ``bounds.csv``, ``nominal.csv``, projections and the config used."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        result.bounds.to_csv(out / "bounds.csv")
        if result.funnel is None:
            raise SynthesisError(f"synthesis ended with status {result.report.status!r}", result.report.status)
        save(result.funnel, out / "funnel.json")
        result.funnel.nominal.to_csv(out / "nominal.csv")
        write_ellipses_csv(result.funnel, out / "ellipses_x1_x2.csv", (0, 1))
        write_input_bands_csv(result.funnel, out / "input_bands.csv")
    except OSError as exc:
        raise FunnelIOError(f"cannot write outputs to {out}: {exc}") from exc
    return out / "funnel.json"


def model_from_funnel(funnel: Funnel):
    """Recreate the model recorded in the funnel metadata."""
    info = funnel.metadata.get("model")
    if not info:
        raise FunnelIOError("funnel file does not record its model")
    return get_model(info["name"], **info.get("params", {}))


def constraints_from_funnel(funnel: Funnel):
    """The constraint set recorded in the funnel metadata, or ``None``."""
    d = funnel.metadata.get("constraints")
    if d is None:
        return None
    return ConstraintSet.from_dict(d, funnel.n_x, funnel.n_u)


def verify_file_funnel(funnel: Funnel, n_samples=200, seed=0) -> VerificationReport:
    model = model_from_funnel(funnel)
    return verify_funnel(funnel, model, constraints_from_funnel(funnel), n_samples=n_samples, seed=seed)


def summary_lines(result: SynthesisResult):
    r = result.report
    lines = [f"status: {r.status}"]
    if r.objective is not None:
        lines.append(f"objective: {r.objective:.6f}")
    lines.append(f"solver: {r.stats.get('solver')} ({r.stats.get('raw_status')})")
    lines.append("constraints: " + ", ".join(f"{k}={v}" for k, v in sorted(result.census.items())))
    lines.append("time: " + ", ".join(f"{k} {v:.2f}s" for k, v in result.timings.items()))
    b = result.bounds
    lines.append(f"gamma_k in [{np.min(b.gamma):.4f}, {np.max(b.gamma):.4f}], "
                 f"beta_k in [{np.min(b.beta):.4f}, {np.max(b.beta):.4f}]")
    return lines
