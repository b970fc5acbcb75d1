"""Barrier definitions, the Riccati solve, and the exit-probability bound."""

import numpy as np
import pytest
import scipy.linalg

from orio import barrier, geom, sim
from orio.errors import ConvergenceError

DT = 1.0 / 333.0


def quad_spec(C=650.0, z0=1.4, alpha=0.9975, lam_pen=0.25, dt=DT):
    P = barrier.dare_solve(np.array([[1.0, dt], [0.0, 1.0]]), np.array([0.0, dt]),
                           np.eye(2), np.array([[1.0]]))
    return barrier.BarrierSpec(kind="quadrotor", P=P, C=C, z0=z0,
                               alpha=alpha, lam_pen=lam_pen)


def di_spec(C=40.0, z0=0.0, alpha=0.99, dt=0.01):
    P = barrier.dare_solve(np.array([[1.0, dt], [0.0, 1.0]]), np.array([0.0, dt]),
                           np.eye(2), np.array([[1.0]]))
    return barrier.BarrierSpec(kind="quadratic", P=P, C=C, z0=z0, alpha=alpha)


# ---------------------------------------------------------------------------
# DARE
# ---------------------------------------------------------------------------


def test_dare_deadbeat_identity():
    P = barrier.dare_solve(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2))
    assert np.allclose(P, np.eye(2), atol=1e-12)


def test_dare_scalar_closed_form():
    a, b, q, r = 1.0, 0.01, 1.0, 1.0
    P = barrier.dare_solve(np.array([[a]]), np.array([b]), np.array([[q]]),
                           np.array([[r]]))
    # p = a^2 p - (a b p)^2 / (r + b^2 p) + q reduces to a quadratic in p
    roots = np.roots([b * b, r - a * a * r - q * b * b, -q * r])
    p_exact = float(max(roots))
    assert abs(P[0, 0] - p_exact) <= 1e-9


def test_dare_double_integrator_residual_and_pd():
    A = np.array([[1.0, 0.01], [0.0, 1.0]])
    B = np.array([0.0, 0.01])
    Q, R = np.eye(2), np.array([[1.0]])
    P = barrier.dare_solve(A, B, Q, R)
    Bc = B[:, None]
    gain = np.linalg.solve(R + Bc.T @ P @ Bc, Bc.T @ P @ A)
    residual = P - (A.T @ P @ A - (A.T @ P @ Bc) @ gain + Q)
    assert np.abs(residual).max() <= 1e-9
    assert np.linalg.eigvalsh(P).min() > 0.0


def test_dare_matches_scipy():
    A = np.array([[1.0, DT], [0.0, 1.0]])
    B = np.array([0.0, DT])
    P = barrier.dare_solve(A, B, np.eye(2), np.array([[1.0]]))
    P_ref = scipy.linalg.solve_discrete_are(A, B[:, None], np.eye(2), np.array([[1.0]]))
    assert np.abs(P - P_ref).max() <= 1e-7


def test_dare_nonconvergence_reported():
    # A unstable with no control authority: no stabilizing solution exists
    with pytest.raises(ConvergenceError):
        barrier.dare_solve(2.0 * np.eye(2), np.zeros((2, 1)), np.eye(2),
                           np.array([[1.0]]), max_iter=200)


# ---------------------------------------------------------------------------
# barrier_eval
# ---------------------------------------------------------------------------


def test_barrier_peak_at_hover():
    spec = quad_spec()
    state = sim.quad_hover_state(spec.z0)
    assert barrier.barrier_eval(spec, state) == pytest.approx(spec.C)


def test_barrier_rotated_90_deg_costs_penalty():
    spec = quad_spec()
    state = sim.quad_hover_state(spec.z0)
    state[geom.QUAT] = geom.quat_from_axis_angle(np.array([np.pi / 2, 0.0, 0.0]))
    assert barrier.barrier_eval(spec, state) == pytest.approx(spec.C - spec.lam_pen)


def test_quadratic_barrier_explicit_arithmetic():
    spec = di_spec()
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = rng.standard_normal(2) * 2
        z = np.array([x[0] - spec.z0, x[1]])
        by_hand = spec.C - (spec.P[0, 0] * z[0] ** 2 + 2 * spec.P[0, 1] * z[0] * z[1]
                            + spec.P[1, 1] * z[1] ** 2)
        assert barrier.barrier_eval(spec, x) == pytest.approx(by_hand, abs=1e-12)


def test_barrier_rejects_non_unit_quaternion():
    spec = quad_spec()
    state = sim.quad_hover_state(spec.z0)
    state[3] = 1.001
    with pytest.raises(ValueError, match="quaternion"):
        barrier.barrier_eval(spec, state)


def test_barrier_upper_bounded_random_sweep():
    rng = np.random.default_rng(6)
    spec_q = quad_spec()
    spec_d = di_spec()
    M_q, M_d = barrier.upper_bound(spec_q), barrier.upper_bound(spec_d)
    for _ in range(100_000 // 200):
        states_d = rng.standard_normal((200, 2)) * 10
        vals = [barrier.barrier_eval(spec_d, s) for s in states_d[:5]]
        assert all(v <= M_d + 1e-12 for v in vals)
    for _ in range(500):
        state = np.concatenate([rng.standard_normal(3) * 5,
                                geom.quat_normalize(rng.standard_normal(4)),
                                rng.standard_normal(3) * 5])
        assert barrier.barrier_eval(spec_q, state) <= M_q + 1e-12


# ---------------------------------------------------------------------------
# exit_prob_bound
# ---------------------------------------------------------------------------


def test_exit_bound_k_zero():
    assert barrier.exit_prob_bound(5.0, 5.0, 0.5, 0) == 0.0


def test_exit_bound_direct_substitution():
    assert barrier.exit_prob_bound(0.5, 1.0, 0.5, 1) == pytest.approx(0.75)


def test_exit_bound_flight_scenario():
    # calibrated start: h0/M = 0.9536 at alpha = 0.9975 over a 2 s horizon at 333 Hz
    bound = barrier.exit_prob_bound(0.9536, 1.0, 0.9975, 666)
    assert bound == pytest.approx(0.82, abs=0.005)


def test_exit_bound_edge_cases():
    assert barrier.exit_prob_bound(-0.1, 1.0, 0.5, 3) == 1.0
    with pytest.raises(ValueError):
        barrier.exit_prob_bound(1.5, 1.0, 0.5, 3)


def test_exit_bound_monotonicity():
    rng = np.random.default_rng(7)
    for _ in range(500):
        M = rng.uniform(0.5, 10.0)
        h0 = rng.uniform(0.0, M)
        alpha = rng.uniform(0.05, 0.95)
        K = int(rng.integers(0, 200))
        base = barrier.exit_prob_bound(h0, M, alpha, K)
        assert barrier.exit_prob_bound(min(h0 * 1.1, M), M, alpha, K) <= base + 1e-12
        assert barrier.exit_prob_bound(h0, M, alpha, K + 5) >= base - 1e-12
        assert barrier.exit_prob_bound(h0, M, min(alpha * 1.05, 0.999), K) <= base + 1e-12


# ---------------------------------------------------------------------------
# jensen_margin
# ---------------------------------------------------------------------------


def test_jensen_margin_zero_disturbance_reduction():
    spec = di_spec()
    system = sim.DoubleIntegrator(dt=0.01)
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = rng.standard_normal(2)
        u = rng.standard_normal(1)
        margin = barrier.jensen_margin(spec, x, u, np.zeros(2), np.zeros((2, 2)),
                                       system.model_step)
        plain = (barrier.barrier_eval(spec, system.model_step(x, u))
                 - spec.alpha * barrier.barrier_eval(spec, x))
        assert margin == pytest.approx(plain, abs=1e-12)


def test_jensen_margin_trace_linearity():
    spec = di_spec()
    system = sim.DoubleIntegrator(dt=0.01)
    x, u = np.array([1.0, -0.5]), np.array([0.3])
    lam = barrier.hessian_bound(spec)
    m0 = barrier.jensen_margin(spec, x, u, np.zeros(2), np.zeros((2, 2)), system.model_step)
    for sigma2 in (0.1, 0.5, 2.0):
        m = barrier.jensen_margin(spec, x, u, np.zeros(2), sigma2 * np.eye(2),
                                  system.model_step)
        assert m == pytest.approx(m0 - lam * sigma2, abs=1e-10)


def test_jensen_margin_implies_expectation_condition():
    # for the quadratic barrier, E[h(F + d)] = h(F + mean) - tr(P cov) exactly
    spec = di_spec(C=60.0, alpha=0.9)
    system = sim.DoubleIntegrator(dt=0.01)
    rng = np.random.default_rng(9)
    nonvacuous = 0
    for _ in range(300):
        x = rng.standard_normal(2) * 0.5
        u = rng.standard_normal(1) * 0.5
        mean = rng.standard_normal(2) * 0.05
        root = rng.standard_normal((2, 2)) * 0.1
        cov = root @ root.T
        margin = barrier.jensen_margin(spec, x, u, mean, cov, system.model_step)
        if margin >= 0.0:
            nonvacuous += 1
            nxt = system.model_step(x, u) + mean
            zeta = np.array([nxt[0] - spec.z0, nxt[1]])
            expected_h = spec.C - float(zeta @ spec.P @ zeta) - float(np.trace(spec.P @ cov))
            assert expected_h - spec.alpha * barrier.barrier_eval(spec, x) >= -1e-10
    assert nonvacuous >= 20


# ---------------------------------------------------------------------------
# hessian_bound / upper_bound
# ---------------------------------------------------------------------------


def test_hessian_bound_identity_and_diag():
    for P, expect in ((np.eye(2), 2.0), (np.diag([4.0, 1.0]), 8.0)):
        spec = barrier.BarrierSpec(kind="quadratic", P=P, C=1.0, z0=0.0, alpha=0.5)
        assert barrier.hessian_bound(spec) == pytest.approx(expect)


def _fd_hessian(f, dim, step=1e-4):
    H = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(dim):
            e_i, e_j = np.zeros(dim), np.zeros(dim)
            e_i[i], e_j[j] = step, step
            H[i, j] = (f(e_i + e_j) - f(e_i - e_j) - f(e_j - e_i) + f(-e_i - e_j)) \
                / (4.0 * step * step)
    return H


def test_hessian_bound_dominates_numeric_hessian():
    rng = np.random.default_rng(10)
    spec_d = di_spec()
    lam_d = barrier.hessian_bound(spec_d)
    for _ in range(50):
        x = rng.standard_normal(2) * 3
        H = _fd_hessian(lambda t: barrier.barrier_eval(spec_d, x + t), 2)
        assert np.linalg.norm(H, ord=2) <= lam_d * (1.0 + 1e-6)
    spec_q = quad_spec()
    lam_q = barrier.hessian_bound(spec_q)
    for _ in range(50):
        state = np.concatenate([rng.standard_normal(3),
                                geom.quat_normalize(rng.standard_normal(4)),
                                rng.standard_normal(3)])
        H = _fd_hessian(
            lambda t: barrier.barrier_eval(spec_q, geom.apply_tangent(state, t)), 9)
        assert np.linalg.norm(H, ord=2) <= lam_q * (1.0 + 1e-6)


# ---------------------------------------------------------------------------
# feasibility_probe
# ---------------------------------------------------------------------------


def quad_dynamics(spec_dt=DT):
    system = sim.Quadrotor(params=sim.QuadrotorParams(dt=spec_dt))
    return system, system.model_step


def test_probe_interior_hover_feasible():
    spec = quad_spec()
    system, dyn = quad_dynamics()
    state = sim.quad_hover_state(spec.z0)
    mg = system.params.mass * system.params.gravity
    assert barrier.feasibility_probe(spec, state, m_delta=0.0, m_c=0.0, dynamics=dyn,
                                     input_low=[0.0, -2, -2, -2],
                                     input_high=[3 * mg, 2, 2, 2],
                                     points_per_dim=5)


def test_probe_boundary_state_feasible():
    spec = quad_spec()
    system, dyn = quad_dynamics()
    z_top = spec.z0 + np.sqrt(spec.C / spec.P[0, 0]) * (1.0 - 1e-9)
    state = sim.quad_hover_state(z_top)
    assert 0.0 <= barrier.barrier_eval(spec, state) <= 1e-5
    mg = system.params.mass * system.params.gravity
    assert barrier.feasibility_probe(spec, state, m_delta=0.005, m_c=0.5, dynamics=dyn,
                                     input_low=[0.0, -2, -2, -2],
                                     input_high=[3 * mg, 2, 2, 2],
                                     points_per_dim=5, n_delta=32, seed=1)


def test_probe_precondition_c_vs_penalty():
    spec = quad_spec(C=0.4, lam_pen=0.25)  # violates C >= 2 lam_pen
    system, dyn = quad_dynamics()
    state = sim.quad_hover_state(spec.z0)
    with pytest.raises(ValueError, match="2\\*lam_pen"):
        barrier.feasibility_probe(spec, state, 0.0, 0.0, dyn,
                                  [0.0, -1, -1, -1], [20.0, 1, 1, 1])
