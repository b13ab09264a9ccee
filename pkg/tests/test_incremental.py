import numpy as np
import pytest

from funnelsyn.constraints import box_halfspaces
from funnelsyn.errors import EstimationError, FunnelIOError
from funnelsyn.incremental import (
    SamplingConfig,
    SegmentBounds,
    TimeGrid,
    build_ltv,
    delta_matrix,
    delta_phi,
    estimate_beta,
    estimate_bounds,
    estimate_gamma,
    foh_interp,
    segment_seed,
)
from funnelsyn.model import NominalTrajectory, SystemModel, jacobians

Q_MAX = np.diag([4.0, 4.0, (np.pi / 6) ** 2])
U_A, U_B = box_halfspaces([0.0, -1.5], [2.0, 1.5])


def scfg(**kw):
    base = dict(Q_max=Q_MAX, input_A=U_A, input_b=U_B)
    base.update(kw)
    return SamplingConfig(**base)


@pytest.fixture(scope="module")
def ltv20():
    from funnelsyn.model import build_unicycle_demo

    m, traj = build_unicycle_demo()
    return build_ltv(m, traj, TimeGrid(0.0, 10.0, 20))


def linear_model():
    A0 = np.array([[0.0, 1.0], [-1.0, -1.0]])
    B0 = np.array([[0.0], [1.0]])
    F0 = np.array([[0.0], [0.1]])
    return SystemModel("lin", 2, 1, 1, lambda t, x, u, w: A0 @ x + B0 @ u + F0 @ w,
                       np.zeros((2, 0)), np.zeros((0, 2)), np.zeros((0, 1)), np.zeros((0, 1)),
                       lambda t, q: np.zeros(0), A0, B0, F0)


def sine_model():
    """Scalar ``x' = u + sin(x)`` split as ``phi(q) = sin(q)``, ``q = x``."""
    return SystemModel("sine", 1, 1, 1, lambda t, x, u, w: u + np.sin(x) + 0.1 * w,
                       np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                       lambda t, q: np.sin(q), np.zeros((1, 1)), np.ones((1, 1)), 0.1 * np.ones((1, 1)))


def test_grid_nodes_and_segments():
    g = TimeGrid(0.0, 10.0, 20)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 10.0 and len(g.nodes) == 21
    assert np.allclose(np.diff(g.nodes), 0.5)
    assert g.segment(0.5) == 1  # nodes belong to the segment on their right
    assert g.segment(10.0) == 19
    assert g.weights(0.5, 1) == (1.0, 0.0)
    assert g.weights(0.75) == pytest.approx((0.5, 0.5))
    with pytest.raises(ValueError):
        g.segment(10.5)
    for bad in ((0.0, 1.0, 0), (1.0, 1.0, 3), (0.0, 1.0, 2.5)):
        with pytest.raises(ValueError):
            TimeGrid(*bad)


def test_foh_interpolation():
    g = TimeGrid(0.0, 2.0, 2)
    vals = np.array([[0.0], [1.0], [3.0]])
    assert foh_interp(g, vals, 0.5)[0] == pytest.approx(0.5)
    assert foh_interp(g, vals, 1.5)[0] == pytest.approx(2.0)
    assert foh_interp(g, vals, 1.0)[0] == 1.0


def test_ltv_node_jacobians(ltv20):
    assert ltv20.A.shape == (21, 3, 3) and ltv20.B.shape == (21, 3, 2) and ltv20.F.shape == (21, 3, 2)
    assert all(np.all(np.isfinite(M)) for M in (ltv20.A, ltv20.B, ltv20.F))
    m, traj = ltv20.model, ltv20.traj
    for k in (0, 7, 20):
        t = ltv20.grid.nodes[k]
        A, B, F = jacobians(m, t, traj.state(t), traj.input(t), np.zeros(2))
        assert np.array_equal(A, ltv20.A[k]) and np.array_equal(B, ltv20.B[k]) and np.array_equal(F, ltv20.F[k])


def test_ltv_grid_must_fit_nominal(ltv20):
    with pytest.raises(ValueError):
        build_ltv(ltv20.model, ltv20.traj, TimeGrid(0.0, 12.0, 4))


def test_delta_vanishes_at_nodes(ltv20):
    for t in ltv20.grid.nodes:
        assert np.max(np.abs(delta_matrix(ltv20, t))) <= 1e-14


def test_delta_positive_and_shrinks_with_refinement(ltv20):
    ltv40 = build_ltv(ltv20.model, ltv20.traj, TimeGrid(0.0, 10.0, 40))
    mids = ltv20.grid.nodes[:-1] + 0.25  # midpoints of the N = 20 segments
    n20 = np.array([np.linalg.norm(delta_matrix(ltv20, t), 2) for t in mids])
    n40 = np.array([np.linalg.norm(delta_matrix(ltv40, t), 2) for t in mids - 0.125])
    assert np.all(n20 > 0)
    assert n40.sum() < n20.sum()


def test_lti_has_no_approximation_error():
    m = linear_model()
    t = np.linspace(0, 1, 21)
    traj = NominalTrajectory(t, np.zeros((21, 2)), np.zeros((21, 1))).with_rates(m)
    ltv = build_ltv(m, traj, TimeGrid(0, 1, 4))
    assert np.all(ltv.A == ltv.A[0])
    # finite-difference Jacobians: rounding only, below the channel-drop threshold
    assert np.max(np.abs(delta_matrix(ltv, 0.37))) <= 1e-14
    assert estimate_beta(ltv, 0) <= 1e-12
    assert estimate_gamma(ltv, 0, SamplingConfig(Q_max=np.eye(2))) == 0.0


def test_delta_phi_zero_increment(ltv20):
    assert np.array_equal(delta_phi(ltv20, 3.3, np.zeros(3), np.zeros(2), np.zeros(2)), np.zeros(2))
    with pytest.raises(ValueError):
        delta_phi(ltv20, 11.0, np.zeros(3), np.zeros(2), np.zeros(2))


def test_delta_phi_reconstructs_residual(ltv20, rng):
    """``E_o dphi`` equals the nonlinear residual of the linearization."""
    m, traj = ltv20.model, ltv20.traj
    for _ in range(200):
        t = rng.uniform(0, 10)
        eta, xi, w = rng.normal(size=3), rng.normal(size=2), rng.normal(size=2)
        xbar, ubar = traj.state(t), traj.input(t)
        A, B, F = ltv20.jacobians_at(t)
        rhs = m.f(t, xbar + eta, ubar + xi, w) - m.f(t, xbar, ubar, np.zeros(2)) - (A @ eta + B @ xi + F @ w)
        assert np.allclose(m.E_o @ delta_phi(ltv20, t, eta, xi, w), rhs, atol=1e-12)


def test_gamma_is_the_scaled_sample_maximum(ltv20):
    cfg = scfg(safety_gamma=1.1)
    gamma, samples = estimate_gamma(ltv20, 4, cfg, return_samples=True)
    assert len(samples) == 3 * cfg.n_triples
    assert gamma == pytest.approx(1.1 * max(s[-1] for s in samples), rel=1e-15)
    # re-evaluating every stored sample reproduces its ratio
    m = ltv20.model
    for t, eta, xi, w, ratio in samples[:: 17]:
        dq = m.C_o @ eta + m.D_o @ xi + m.G_o @ w
        assert np.linalg.norm(delta_phi(ltv20, t, eta, xi, w)) / np.linalg.norm(dq) == pytest.approx(ratio)
        assert ratio <= gamma / 1.1 + 1e-15


def test_gamma_samples_respect_regions(ltv20):
    _, samples = estimate_gamma(ltv20, 2, scfg(), return_samples=True)
    Qi = np.linalg.inv(Q_MAX)
    for t, eta, xi, w, _ in samples:
        assert eta @ Qi @ eta <= 1 + 1e-12
        assert np.all(U_A @ (ltv20.traj.input(t) + xi) <= U_B + 1e-12)
        assert np.linalg.norm(w) <= 1 + 1e-12


def test_beta_holds_at_fresh_times(ltv20, rng):
    b = estimate_bounds(ltv20, scfg(n_triples=10))
    nodes = ltv20.grid.nodes
    for k in range(ltv20.grid.N):
        ts = rng.uniform(nodes[k], nodes[k + 1], 100)
        assert max(np.linalg.norm(delta_matrix(ltv20, t), 2) for t in ts) <= b.beta[k]


@pytest.mark.parametrize("k", [0, 9, 19])
def test_gamma_consistent_on_1000_samples(ltv20, k):
    cfg = scfg(n_triples=1000, safety_gamma=1.1)
    gamma, samples = estimate_gamma(ltv20, k, cfg, return_samples=True)
    ratios = np.array([s[-1] for s in samples])
    assert np.all(ratios <= gamma / 1.1 * (1 + 1e-15))
    assert ratios.max() == pytest.approx(gamma / 1.1, rel=1e-15)


def test_sine_lipschitz_bound():
    m = sine_model()
    t = np.linspace(0, 1, 21)
    traj = NominalTrajectory(t, 0.3 * np.ones((21, 1)), np.zeros((21, 1))).with_rates(m)
    ltv = build_ltv(m, traj, TimeGrid(0, 1, 2))
    # the re-centred increment sin(q) - sin(qbar) - cos(qbar) dq has slope at most 2
    g = estimate_gamma(ltv, 0, SamplingConfig(Q_max=np.eye(1) * 9.0, safety_gamma=1.0))
    assert 0 < g <= 2.0


def test_degenerate_samples_raise(ltv20):
    tiny = scfg(Q_max=np.eye(3) * 1e-40, input_A=None, input_b=None, xi_radius=1e-40, min_dq=1.0)
    with pytest.raises(EstimationError):
        estimate_gamma(ltv20, 0, tiny)


def test_beta_superset_monotone(ltv20):
    g = ltv20.grid
    ts = np.linspace(g.nodes[3], g.nodes[4], 41)
    assert estimate_beta(ltv20, 3, times=ts[::4], safety=1.0) <= estimate_beta(ltv20, 3, times=ts, safety=1.0)
    with pytest.raises(ValueError):
        estimate_beta(ltv20, 3, n_samples=1)


def test_bounds_deterministic_across_workers(ltv20):
    cfg = scfg(n_triples=30)
    a = estimate_bounds(ltv20, cfg, workers=1)
    b = estimate_bounds(ltv20, cfg, workers=4)
    assert np.array_equal(a.beta, b.beta) and np.array_equal(a.gamma, b.gamma)
    assert list(a.seeds) == [segment_seed(0, k) for k in range(20)]
    c = estimate_bounds(ltv20, scfg(n_triples=30, seed=1))
    assert not np.array_equal(a.gamma, c.gamma)
    assert np.all(a.beta > 0) and np.all(np.isfinite(a.gamma)) and np.all(a.gamma > 0)


def test_bounds_csv_round_trip(tmp_path):
    b = SegmentBounds([0.1, 1 / 3], [0.2, np.pi], [1, 2])
    p = tmp_path / "bounds.csv"
    b.to_csv(p)
    assert p.read_text().splitlines()[0] == "k,beta_k,gamma_k,seed"
    back = SegmentBounds.from_csv(p)
    assert np.array_equal(back.beta, b.beta) and np.array_equal(back.gamma, b.gamma)
    assert np.array_equal(back.seeds, b.seeds)
    p.write_text("k,beta_k,gamma_k,seed\n1,0.1,0.2,3\n")
    with pytest.raises(FunnelIOError):
        SegmentBounds.from_csv(p)


def test_bounds_validation():
    with pytest.raises(ValueError):
        SegmentBounds([-0.1], [0.0], [0])
    with pytest.raises(ValueError):
        SegmentBounds([0.1, 0.2], [0.0], [0])
