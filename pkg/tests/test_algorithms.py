import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import pdqn.algorithms as alg
from pdqn.algorithms import (
    AlgoConfig,
    BaselineSolver,
    PrimalDualSolver,
    dpdm_iterate,
    dual_step,
    extra_iterate,
    gdpdm_iterate,
    gdpdm_plus_inner,
    gdpdm_plus_iterate,
    gt_iterate,
    init_baseline,
    init_state,
    primal_step,
)
from pdqn.diagnostics import QuadraticPotential
from pdqn.errors import ConsistencyError, InvalidArgumentError, UnsupportedProblemError
from pdqn.problems import centralized_solve, make_logistic, make_quadratic
from pdqn.quasinewton import SpectralBounds
from pdqn.runner import preset, run_experiment
from pdqn.topology import RoundCounter, generate_graph, metropolis_weights


def _instance(n=6, p=4, kappa=10.0, seed=0, density=0.6):
    objs = make_quadratic(n, p, kappa, seed)
    m = metropolis_weights(generate_graph(n, "random", density, seed))
    return objs, m


@st.composite
def pd_setups(draw):
    n = draw(st.integers(2, 7))
    p = draw(st.integers(1, 4))
    seed = draw(st.integers(0, 2**12))
    density = draw(st.floats(2.0 / n, 1.0))
    objs = make_quadratic(n, max(p, 2), draw(st.sampled_from([2.0, 10.0, 50.0])), seed)
    m = metropolis_weights(generate_graph(n, "random", density, seed))
    cfg = AlgoConfig(
        alpha=draw(st.floats(0.5, 4.0)),
        beta=draw(st.floats(0.01, 0.2)),
        gamma=draw(st.floats(0.1, 1.0)),
        theta=draw(st.sampled_from([0.0, 0.1, 0.2])),
        S=draw(st.integers(1, 3)),
        c=draw(st.floats(0.0, 2.0)),
        bounds=SpectralBounds(omega_lo=draw(st.sampled_from([0.3, 1.0]))),
    )
    variant = draw(st.sampled_from(["dpdm", "gdpdm", "gdpdm_plus"]))
    if variant == "dpdm":
        cfg = dataclasses.replace(cfg, S=1)
    return objs, m, cfg, variant


# ---------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize(
    "kw",
    [
        {"alpha": 0.0},
        {"beta": -1.0},
        {"gamma": 0.0},
        {"theta": 1.0},
        {"theta": -0.1},
        {"S": 0},
        {"c": -0.5},
        {"b_mode": "newton"},
        {"p_mode": "bb"},
        {"b_mode": "fixed_scalar"},
        {"b_mode": "exact_hessian_plus_eps", "b_param": -1.0},
    ],
)
def test_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        AlgoConfig(**kw)


def test_exact_hessian_mode_rejects_logistic():
    objs = make_logistic(3, 4, 30, 0)
    m = metropolis_weights(generate_graph(3, "line"))
    with pytest.raises(UnsupportedProblemError):
        init_state(objs, m, AlgoConfig(b_mode="exact_hessian_plus_eps", b_param=0.1))


def test_dpdm_requires_single_inner_step():
    objs, m = _instance()
    with pytest.raises(InvalidArgumentError):
        PrimalDualSolver(objs, m, AlgoConfig(S=2), "dpdm")


def test_stale_u_cache_is_detected():
    objs, m = _instance()
    cfg = AlgoConfig()
    state = init_state(objs, m, cfg)
    state.nodes[2].x = state.nodes[2].x + 1.0
    with pytest.raises(ConsistencyError):
        primal_step(state, cfg, objs, m, None)


# ---------------------------------------------------------------------------
# primal and dual steps


def test_single_node_primal_step_is_quasi_newton_descent():
    obj = make_quadratic(1, 3, 10.0, 4)
    m = metropolis_weights(generate_graph(1, "complete"))
    cfg = AlgoConfig(beta=0.3, theta=0.2)
    x0 = np.array([[1.0, -2.0, 0.5]])
    state = init_state(obj, m, cfg, x0=x0)
    h = state.nodes[0].h.copy()
    primal_step(state, cfg, obj, m, None)
    np.testing.assert_allclose(state.nodes[0].x, x0[0] - 0.3 * h @ obj[0].gradient(x0[0]), atol=1e-15)
    dual_step(state, cfg, m, None)
    assert np.all(state.nodes[0].v == 0)


def test_fixed_scalar_primal_step_formula():
    objs, m = _instance()
    alpha = 1.7
    cfg = AlgoConfig(alpha=alpha, beta=1.0, b_mode="fixed_scalar", b_param=2 * alpha)
    rng = np.random.default_rng(1)
    x0, v0 = rng.standard_normal((2, m.n, 4))
    state = init_state(objs, m, cfg, x0=x0, v0=v0)
    primal_step(state, cfg, objs, m, None)
    grad = np.vstack([o.gradient(x0[i]) for i, o in enumerate(objs)])
    expected = x0 - (grad + v0 + alpha * m.laplacian() @ x0) / (2 * alpha)
    np.testing.assert_allclose(state.x(), expected, atol=1e-13)


def test_dual_step_leaves_v_on_consensus():
    objs, m = _instance()
    cfg = AlgoConfig()
    x0 = np.tile([0.3, -1.0, 2.0, 0.1], (m.n, 1))
    v0 = np.random.default_rng(0).standard_normal((m.n, 4))
    state = init_state(objs, m, cfg, x0=x0, v0=v0)
    dual_step(state, cfg, m, None)
    np.testing.assert_allclose(state.v(), v0, atol=1e-14)


def test_dual_step_without_correction_is_plain_ascent():
    objs, m = _instance()
    cfg = AlgoConfig(alpha=2.0, gamma=1.0, p_mode="zero")
    rng = np.random.default_rng(2)
    x0, v0 = rng.standard_normal((2, m.n, 4))
    state = init_state(objs, m, cfg, x0=x0, v0=v0)
    counter = RoundCounter()
    dual_step(state, cfg, m, counter)
    np.testing.assert_allclose(state.v(), v0 + 2.0 * m.laplacian() @ x0, atol=1e-13)
    assert counter.scalar_rounds == 0


def test_fixed_point_at_primal_dual_solution():
    objs, m = _instance(kappa=20.0)
    z = centralized_solve(objs)
    x0 = np.tile(z, (m.n, 1))
    v0 = -np.vstack([o.gradient(z) for o in objs])
    for theta in (0.0, 0.2):
        cfg = AlgoConfig(theta=theta, beta=0.3)
        solver = PrimalDualSolver(objs, m, cfg, "dpdm", x0=x0, v0=v0)
        for _ in range(50):
            solver.step()
            assert np.max(np.abs(solver.state.x() - x0)) <= 1e-10
            assert np.max(np.abs(solver.state.v() - v0)) <= 1e-10


@given(pd_setups())
def test_dual_mean_is_conserved(setup):
    objs, m, cfg, variant = setup
    solver = PrimalDualSolver(objs, m, cfg, variant)
    for _ in range(15):
        solver.step()
        v = solver.state.v()
        assert np.linalg.norm(v.sum(axis=0)) <= 1e-10 * (1 + np.abs(v).sum())


@given(pd_setups())
def test_p_tilde_stays_in_projection_interval(setup):
    objs, m, cfg, variant = setup
    solver = PrimalDualSolver(objs, m, cfg, variant)
    b = cfg.bounds
    for _ in range(15):
        solver.step()
        for nd in solver.state.nodes:
            r = nd.spectral.r
            assert r == pytest.approx(b.r(solver.t))
            assert 1 / (b.omega_hi + r) <= nd.spectral.p_tilde <= 1 / (b.omega_lo + r)


@given(pd_setups())
def test_consensus_trackers_keep_local_mean(setup):
    objs, m, cfg, variant = setup
    solver = PrimalDualSolver(objs, m, cfg, variant)
    for _ in range(15):
        solver.step()
        sp = [nd.spectral for nd in solver.state.nodes]
        for tracker, local in (("a", "a_tilde"), ("b", "b_tilde")):
            mt = np.mean([getattr(s, tracker) for s in sp])
            ml = np.mean([getattr(s, local) for s in sp])
            assert abs(mt - ml) <= 1e-12 * (1 + abs(ml))


@given(pd_setups())
def test_runs_are_deterministic(setup):
    objs, m, cfg, variant = setup
    a = PrimalDualSolver(objs, m, cfg, variant)
    b = PrimalDualSolver(objs, m, cfg, variant)
    for _ in range(10):
        a.step()
        b.step()
    assert np.array_equal(a.state.x(), b.state.x())
    assert np.array_equal(a.state.v(), b.state.v())
    assert a.counter.snapshot() == b.counter.snapshot()


# ---------------------------------------------------------------------------
# communication counts


@pytest.mark.parametrize("theta", [0.0, 0.3])
def test_dpdm_round_counts(theta):
    objs, m = _instance()
    counter = RoundCounter()
    solver = PrimalDualSolver(objs, m, AlgoConfig(theta=theta, beta=0.1), "dpdm", counter=counter)
    e, p = m.graph.num_edges, 4
    vec = 2 + (theta > 0)
    for t in range(1, 6):
        solver.step()
        assert counter.snapshot() == (vec * t, 2 * t, vec * t * e * p, 2 * t * e)


@pytest.mark.parametrize("S,theta", [(1, 0.0), (2, 0.0), (4, 0.0), (4, 0.2)])
def test_gdpdm_round_counts(S, theta):
    objs, m = _instance()
    counter = RoundCounter()
    solver = PrimalDualSolver(objs, m, AlgoConfig(S=S, theta=theta, beta=0.1), "gdpdm", counter=counter)
    per = S + 1 + (S if theta > 0 else 0)
    for t in range(1, 5):
        solver.step()
        assert counter.vector_rounds == per * t
        assert counter.scalar_rounds == 2 * t


def test_gdpdm_plus_round_counts_follow_substeps():
    objs, m = _instance()
    cfg = AlgoConfig(S=4, theta=0.2, beta=0.1, c=0.5)
    state = init_state(objs, m, cfg)
    counter = RoundCounter()
    for _ in range(10):
        before = counter.vector_rounds
        ran = gdpdm_plus_inner(state, cfg, objs, m, counter)
        dual_step(state, cfg, m, counter)
        state.t += 1
        assert counter.vector_rounds - before == 2 * ran + 1


@pytest.mark.parametrize("variant,rounds", [("extra", 1), ("gt", 2)])
def test_baseline_round_counts(variant, rounds):
    objs, m = _instance()
    counter = RoundCounter()
    solver = BaselineSolver(objs, m, 0.01, variant, counter=counter)
    for t in range(1, 6):
        solver.step()
        assert counter.snapshot() == (rounds * t, 0, rounds * t * m.graph.num_edges * 4, 0)


# ---------------------------------------------------------------------------
# GDPDM and GDPDM+


def test_gdpdm_with_one_inner_step_matches_dpdm():
    objs, m = _instance()
    cfg = AlgoConfig(theta=0.2, beta=0.2)
    a, b = init_state(objs, m, cfg), init_state(objs, m, cfg)
    for _ in range(30):
        dpdm_iterate(a, cfg, objs, m, None)
        gdpdm_iterate(b, cfg, objs, m, None)
    assert np.array_equal(a.x(), b.x()) and np.array_equal(a.v(), b.v())


def test_gdpdm_inner_steps_decrease_augmented_lagrangian():
    objs, m = _instance(n=8, p=6, seed=3)
    cfg = AlgoConfig(alpha=2.8, beta=0.17, S=4)
    pot = QuadraticPotential(objs, m, cfg.alpha)
    state = init_state(objs, m, cfg)
    orig = alg.primal_step
    values: list[float] = []

    def recording_step(*args, **kwargs):
        orig(*args, **kwargs)
        values.append(pot.lagrangian(state.x().ravel(), v_now))

    try:
        alg.primal_step = recording_step
        for _ in range(60):
            v_now = state.v().ravel()
            values.clear()
            values.append(pot.lagrangian(state.x().ravel(), v_now))
            gdpdm_iterate(state, cfg, objs, m, None)
            assert all(b < a for a, b in zip(values, values[1:])), values
    finally:
        alg.primal_step = orig


def test_gdpdm_plus_with_zero_constant_matches_gdpdm():
    objs, m = _instance()
    cfg = AlgoConfig(S=3, c=0.0, theta=0.1, beta=0.15)
    a, b = init_state(objs, m, cfg), init_state(objs, m, cfg)
    for _ in range(20):
        gdpdm_iterate(a, cfg, objs, m, None)
        gdpdm_plus_iterate(b, cfg, objs, m, None)
    assert np.array_equal(a.x(), b.x()) and np.array_equal(a.v(), b.v())


def test_gdpdm_plus_with_huge_constant_matches_dpdm_after_first_iteration():
    objs, m = _instance()
    cfg = AlgoConfig(S=3, c=1e12, theta=0.1, beta=0.15)
    single = dataclasses.replace(cfg, S=1)
    a, b = init_state(objs, m, cfg), init_state(objs, m, cfg)
    # no dual history at t = 0, so every node runs all S sub-steps there
    gdpdm_iterate(a, cfg, objs, m, None)
    gdpdm_plus_iterate(b, cfg, objs, m, None)
    for _ in range(20):
        dpdm_iterate(a, single, objs, m, None)
        gdpdm_plus_iterate(b, cfg, objs, m, None)
    np.testing.assert_array_equal(a.x(), b.x())
    np.testing.assert_array_equal(a.v(), b.v())


def test_gdpdm_plus_mixed_freeze_on_three_nodes():
    objs = make_quadratic(3, 3, 10.0, 5)
    m = metropolis_weights(generate_graph(3, "line"))
    cfg = AlgoConfig(S=4, c=1.0, beta=0.2)
    state = init_state(objs, m, cfg)
    dpdm_iterate(state, dataclasses.replace(cfg, S=1), objs, m, None)
    # node 0 has a large dual move and freezes after its first sub-step; the others never freeze
    state.nodes[0].spectral.prev_v = state.nodes[0].v - 1e6
    for nd in state.nodes[1:]:
        nd.spectral.prev_v = nd.v.copy()
    snapshots = []
    orig = alg.primal_step

    def recording_step(*args, **kwargs):
        orig(*args, **kwargs)
        snapshots.append((state.x(), [nd.frozen for nd in state.nodes]))

    counter = RoundCounter()
    try:
        alg.primal_step = recording_step
        ran = gdpdm_plus_inner(state, cfg, objs, m, counter)
    finally:
        alg.primal_step = orig
    assert ran == 4
    xs = [s[0] for s in snapshots]
    for k in range(1, 4):
        np.testing.assert_array_equal(xs[k][0], xs[0][0])
        assert not np.array_equal(xs[k][1], xs[k - 1][1])
        assert not np.array_equal(xs[k][2], xs[k - 1][2])
    assert all(not nd.frozen for nd in state.nodes)
    # the frozen node kept transmitting: every refresh was a full round
    assert counter.vector_rounds == 3


# ---------------------------------------------------------------------------
# baselines


def test_single_node_baselines_are_gradient_descent():
    obj = make_quadratic(1, 3, 10.0, 2)
    m = metropolis_weights(generate_graph(1, "complete"))
    eta = 0.05
    x = np.array([1.0, 2.0, -1.0])
    for variant in ("extra", "gt"):
        solver = BaselineSolver(obj, m, eta, variant, x0=x)
        ref = x.copy()
        for _ in range(20):
            solver.step()
            ref = ref - eta * obj[0].gradient(ref)
            np.testing.assert_allclose(solver.x[0], ref, atol=1e-12)


def test_extra_steady_state_at_solution():
    objs, m = _instance()
    z = centralized_solve(objs)
    bs = init_baseline(objs, np.tile(z, (m.n, 1)))
    bs.x_prev, bs.grad_prev, bs.wx_prev, bs.t = bs.x.copy(), bs.grad.copy(), m.w @ bs.x, 1
    for _ in range(50):
        extra_iterate(bs, 0.05, objs, m, None)
        assert np.max(np.abs(bs.x - z)) <= 1e-12


def test_extra_equals_reduced_dpdm():
    objs, m = _instance(n=8, p=5, seed=4)
    # eta = 1/(2 alpha) = 0.05 keeps EXTRA convergent for L = 10
    alpha = 10.0
    cfg = AlgoConfig(alpha=alpha, beta=1.0, gamma=1.0, theta=0.0, b_mode="fixed_scalar", b_param=2 * alpha,
                     p_mode="zero")
    pd = PrimalDualSolver(objs, m, cfg, "dpdm")
    ex = BaselineSolver(objs, m, 1 / (2 * alpha), "extra")
    for _ in range(100):
        pd.step()
        ex.step()
        assert np.max(np.abs(pd.x - ex.x)) <= 1e-10
    assert np.max(np.abs(ex.x - centralized_solve(objs))) < 1e-2


@given(st.integers(0, 2**12), st.floats(1e-3, 5e-2))
def test_gradient_tracking_identity(seed, eta):
    objs, m = _instance(seed=seed)
    bs = init_baseline(objs)
    for _ in range(30):
        gt_iterate(bs, eta, objs, m, None)
        assert np.max(np.abs(bs.y.sum(axis=0) - bs.grad.sum(axis=0))) <= 1e-10 * (1 + np.abs(bs.grad).sum())


def test_baseline_rejects_nonpositive_stepsize():
    objs, m = _instance()
    with pytest.raises(InvalidArgumentError):
        BaselineSolver(objs, m, 0.0, "gt").step()


def test_gradient_tracking_converges_with_table_stepsize():
    cfg = preset("linreg-k100", "gt")
    cfg.budget, cfg.target, cfg.timing = 5000, 1e-6, False
    assert run_experiment(cfg).reached


def test_dpdm_error_decreases_after_burn_in():
    cfg = preset("linreg-k10")
    cfg.budget, cfg.target, cfg.timing = 300, 1e-12, False
    errs = [r.rel_error for r in run_experiment(cfg).trace]
    rising = [t for t in range(10, len(errs) - 1) if errs[t + 1] >= errs[t]]
    assert not rising, f"error rose at iterations {rising[:10]}"
