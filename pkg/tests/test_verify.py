import dataclasses

import numpy as np
import pytest

from funnelsyn.constraints import support_margin
from funnelsyn.errors import PropagationError
from funnelsyn.funnel import interp, lyapunov_value, multipliers
from funnelsyn.incremental import build_ltv
from funnelsyn.lmi import VariableRegistry, dlmi_eval, segment_H_blocks
from funnelsyn.model import unicycle
from funnelsyn.verify import (
    DisturbancePolicy,
    boundary_samples,
    dlmi_scan,
    monte_carlo,
    node_margins,
    propagate,
    propagate_batch,
    richardson_ratio,
    verify_funnel,
)

MODEL = unicycle()


@pytest.fixture(scope="module")
def funnel(solved_l4):
    return solved_l4.funnel


def test_boundary_samples_start_on_the_boundary(funnel, rng):
    X0 = boundary_samples(funnel, 200, rng)
    V = lyapunov_value(funnel, 0.0, X0 - funnel.nominal.state(0.0))
    assert np.max(np.abs(V - 1)) <= 1e-12


def test_nominal_is_tracked_without_disturbance(funnel):
    times, X, V = propagate(funnel, MODEL, funnel.nominal.state(0.0))
    ref = np.array([funnel.nominal.state(t) for t in times])
    assert np.max(np.linalg.norm(X - ref, axis=1)) <= 1e-8
    assert np.max(V) <= 1e-14


def test_richardson_ratio_is_fourth_order(funnel, rng):
    x0 = boundary_samples(funnel, 1, rng)[0]
    assert 12 <= richardson_ratio(funnel, MODEL, x0, 0.01) <= 20


def test_zero_disturbance_stays_inside(funnel, rng):
    mc = monte_carlo(funnel, MODEL, 20, seed=4, policy=DisturbancePolicy("zero"))
    assert mc.worst <= 1 + 1e-6
    # the Lyapunov value decays under the nominal feedback
    assert np.all(mc.V[:, -1] < 1)


def test_disturbance_policies(rng):
    W, dwell = DisturbancePolicy("random-unit").pieces(rng, 5, 2, 0.0, 10.0, 0.125)
    assert W.shape == (5, 80, 2) and dwell == 0.125
    assert np.allclose(np.linalg.norm(W, axis=-1), 1.0)
    seq = np.array([[1.0, 0.0], [0.0, -1.0]])
    W, _ = DisturbancePolicy("fixed", dwell=1.0, sequence=seq).pieces(rng, 2, 2, 0.0, 5.0, 0.1)
    assert np.array_equal(W[0, :3], [[1, 0], [0, -1], [0, -1]])
    with pytest.raises(ValueError):
        DisturbancePolicy("fixed", sequence=[[1.0, 0.5]])
    with pytest.raises(ValueError):
        DisturbancePolicy("fixed")
    with pytest.raises(ValueError):
        DisturbancePolicy("gusty")
    with pytest.raises(ValueError):
        DisturbancePolicy(dwell=0.0)


def test_propagation_rejects_large_disturbance(funnel):
    W = np.full((1, 4, 2), 0.8)
    with pytest.raises(ValueError, match="norm"):
        propagate_batch(funnel, MODEL, funnel.nominal.state(0.0)[None], W, 2.5)


def test_monte_carlo_is_deterministic_across_workers(funnel):
    a = monte_carlo(funnel, MODEL, 12, seed=9, workers=1)
    b = monte_carlo(funnel, MODEL, 12, seed=9, workers=3)
    assert np.array_equal(a.max_V, b.max_V) and np.array_equal(a.t_of_max, b.t_of_max)
    c = monte_carlo(funnel, MODEL, 13, seed=9)
    # sample i depends on (seed, i) only
    assert np.array_equal(c.max_V[:12], a.max_V)
    with pytest.raises(ValueError):
        monte_carlo(funnel, MODEL, 0)


def test_monte_carlo_invariance(funnel):
    mc = monte_carlo(funnel, MODEL, 50, seed=1)
    assert mc.passed and mc.failures() == []
    assert np.all(mc.max_V >= 1 - 1e-12)


def test_failures_and_csv(funnel, tmp_path):
    mc = monte_carlo(funnel.with_Q(funnel.Q / 1e4, funnel.Y / 1e4), MODEL, 6, seed=2)
    assert not mc.passed
    fails = mc.failures()
    assert fails and all(v > 1 + mc.tol for _, _, v in fails)
    mc.write_csv(tmp_path / "mc.csv")
    lines = (tmp_path / "mc.csv").read_text().splitlines()
    assert lines[0] == "sample,t_of_max,max_V" and len(lines) == 7


def test_propagation_errors_are_recorded(funnel):
    def bad_f(t, x, u, w):
        out = np.array(MODEL.f(t, x, u, w), dtype=float)
        if t > 5.0:
            out[np.asarray(w)[..., 0] > 0.5] = np.nan
        return out

    bad = dataclasses.replace(MODEL, f=bad_f)
    mc = monte_carlo(funnel, bad, 8, seed=3)
    assert mc.errors and all(t > 5.0 for t in mc.errors.values())
    assert not mc.passed
    for r in mc.errors:
        assert np.all(np.isnan(mc.V[r, mc.times > mc.errors[r]]))
    x0 = boundary_samples(funnel, 1, np.random.default_rng(0))
    W = np.tile([[1.0, 0.0]], (1, 40, 1))
    with pytest.raises(PropagationError):
        propagate_batch(funnel, bad, x0, W, 0.25)


def test_scan_passes_and_detects_tampering(funnel):
    scan = dlmi_scan(funnel, MODEL, 10)
    assert scan.passed and len(scan.times) == 10 * funnel.grid.N
    assert np.all(np.isfinite(scan.lam_max_balanced))
    tampered = dlmi_scan(funnel.with_Q(funnel.Q * 10), MODEL, 10)
    assert not tampered.passed and np.max(tampered.lam_max) > 0
    with pytest.raises(ValueError):
        dlmi_scan(funnel, MODEL, 1)


def test_dense_inequality_at_nodes_matches_hkk(funnel):
    g = funnel.grid
    ltv = build_ltv(MODEL, funnel.nominal, g)
    reg = VariableRegistry.for_funnel(3, 2, g.N)
    for k in (0, 7, g.N - 1):
        x = np.zeros(len(reg))
        for j in (k, k + 1):
            x[reg.Q[j]] = funnel.Q[j]
            x[reg.Y[j]] = funnel.Y[j]
        t = g.nodes[k]
        lb, lg = multipliers(funnel, t, k)
        x[reg.lam_beta[k]], x[reg.lam_gamma[k]] = lb, lg
        H = segment_H_blocks(ltv, funnel.bounds, k, reg, funnel.lambda_w, balanced=False)[(k, k)].evaluate(x)
        Q, Y, Qdot = interp(funnel, t, k)
        D = dlmi_eval(Q, Qdot, Y, lb, lg, funnel.lambda_w, ltv.A[k], ltv.B[k], ltv.F[k],
                      funnel.bounds.beta[k], funnel.bounds.gamma[k], MODEL.E_o, MODEL.C_o, MODEL.D_o, MODEL.G_o)
        assert np.max(np.abs(H + D)) <= 1e-9 * (1 + np.max(np.abs(D)))


def test_support_margin():
    S = np.diag([4.0, 1.0])
    assert support_margin([0.0, 0.0], 1.0, [3.0, 3.0], S) == 1.0
    assert support_margin([1.0, 0.0], 5.0, [1.0, 0.0], S) == pytest.approx(2.0)
    assert support_margin([0.0, 1.0], 0.0, [0.0, 2.0], S) == pytest.approx(-3.0)


def test_node_margins_and_report(solved_l4):
    f = solved_l4.funnel
    nm = node_margins(f, solved_l4.constraints)
    assert nm.state.shape == (21, 2) and nm.input.shape == (21, 4)
    assert nm.min_margin >= -1e-7
    rep = verify_funnel(f, MODEL, solved_l4.constraints, n_samples=10, seed=5)
    assert rep.passed
    text = rep.text()
    assert "invariance: PASS" in text and "seed=5" in text and text.endswith("overall: PASS")
