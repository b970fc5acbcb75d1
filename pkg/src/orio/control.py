"""Nominal controllers and the optimization-based safety filters.

The filter solves  min ||u - u_nom||^2  s.t.  g(u) >= 0  where
g(u) = u'Q_c u + b_c'u + r_c is the barrier constraint composed through the
modeled dynamics, concave in u (Q_c negative semidefinite). Stationarity of
the Lagrangian gives the dual path

    u(nu) = (I - nu Q_c)^{-1} (u_nom + (nu/2) b_c),   nu >= 0,

along which g is nondecreasing, so the active case reduces to a bracketed
bisection for the root of g(u(nu)). The returned iterate always sits on the
feasible side of the bracket, so g(u*) >= 0 up to evaluation roundoff.

For the double integrator the constraint composition is exact. For the
quadrotor, thrust enters the vertical dynamics exactly (linearly) while the
orientation penalty is linearized in omega about 0, which keeps the composed
constraint a concave quadratic without an external conic solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .barrier import BarrierSpec, barrier_eval, hessian_bound, zeta_of
from .cvae import CvaeModel, MlpRegressor, ResidualDataset, estimate_moments_gmm
from .errors import DimensionError, InfeasibleError
from .geom import E_Z, QUAT, body_z_axis, quat_to_rot, quat_from_axis_angle, tilt_cosine
from .sim import DoubleIntegrator, Quadrotor, QuadrotorParams

ABLATION_KINDS = ("standard", "jed", "mlp", "true", "orio")


@dataclass(frozen=True)
class FilterProblem:
    """Projection of u_nom onto {g(u) >= 0} with concave quadratic g."""

    u_nom: np.ndarray
    Q_c: np.ndarray
    b_c: np.ndarray
    r_c: float

    def __post_init__(self):
        u = np.asarray(self.u_nom, dtype=np.float64)
        Q = np.asarray(self.Q_c, dtype=np.float64)
        b = np.asarray(self.b_c, dtype=np.float64)
        m = u.shape[0]
        if Q.shape != (m, m) or b.shape != (m,):
            raise DimensionError(f"problem shapes u{u.shape} Q{Q.shape} b{b.shape}")
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise ValueError("Q_c must be symmetric")
        if np.linalg.eigvalsh(Q).max() > 1e-10:
            raise ValueError("Q_c must be negative semidefinite (non-concave constraint)")
        object.__setattr__(self, "u_nom", u)
        object.__setattr__(self, "Q_c", 0.5 * (Q + Q.T))
        object.__setattr__(self, "b_c", b)

    @property
    def dim(self) -> int:
        return self.u_nom.shape[0]

    def g(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=np.float64)
        return float(u @ self.Q_c @ u + self.b_c @ u + self.r_c)


@dataclass(frozen=True)
class FilterSolution:
    u: np.ndarray
    nu: float
    active: bool
    margin: float  # g(u)


def solve_safety_filter(problem: FilterProblem, g_tol: float = 1e-8,
                        nu_max: float = 1e12) -> FilterSolution:
    """Project u_nom onto the constraint set (see module docstring).

    Returns u_nom untouched when it is already feasible. Otherwise finds
    nu* > 0 with g(u(nu*)) in [0, g_tol] by geometric bracket expansion and
    bisection. Raises InfeasibleError carrying sup_u g when the constraint is
    unattainable.
    """
    g_nom = problem.g(problem.u_nom)
    if g_nom >= 0.0:
        return FilterSolution(u=problem.u_nom.copy(), nu=0.0, active=False, margin=g_nom)

    eye = np.eye(problem.dim)

    def u_of(nu: float) -> np.ndarray:
        return np.linalg.solve(eye - nu * problem.Q_c,
                               problem.u_nom + 0.5 * nu * problem.b_c)

    nu_hi, g_hi = 1.0, problem.g(u_of(1.0))
    while g_hi < 0.0 and nu_hi < nu_max:
        nu_hi *= 2.0
        g_hi = problem.g(u_of(nu_hi))
    if g_hi < 0.0:
        sup_g = _sup_g(problem)
        raise InfeasibleError(
            f"constraint unattainable: sup_u g = {sup_g:.6g} after bracket limit {nu_max:g}",
            sup_g=sup_g)

    nu_lo = 0.0 if nu_hi == 1.0 else nu_hi / 2.0
    u_hi = u_of(nu_hi)
    for _ in range(300):
        if g_hi <= g_tol:
            break
        nu_mid = 0.5 * (nu_lo + nu_hi)
        u_mid = u_of(nu_mid)
        g_mid = problem.g(u_mid)
        if g_mid >= 0.0:
            nu_hi, u_hi, g_hi = nu_mid, u_mid, g_mid
        else:
            nu_lo = nu_mid
    return FilterSolution(u=u_hi, nu=nu_hi, active=True, margin=g_hi)


def _sup_g(problem: FilterProblem) -> float:
    """Maximum achievable constraint value (for infeasibility reporting)."""
    # stationary point of g: 2 Q_c u + b_c = 0 (least squares for singular Q_c)
    u_star, _, _, _ = np.linalg.lstsq(2.0 * problem.Q_c, -problem.b_c, rcond=None)
    # b_c components outside range(Q_c) make g unbounded above
    if not np.allclose(2.0 * problem.Q_c @ u_star, -problem.b_c, atol=1e-9):
        return float("inf")
    return problem.g(u_star)


# ---------------------------------------------------------------------------
# Barrier-constraint composition
# ---------------------------------------------------------------------------


def build_constraint(spec: BarrierSpec, state: np.ndarray, u_nom: np.ndarray,
                     m_vec: np.ndarray, c_val: float, system) -> FilterProblem:
    """Quadratic coefficients of g(u) = h(F(x,u) + m) - c - alpha h(x).

    Double integrator: exact. Quadrotor: the vertical dynamics are linear in
    thrust (exact); the attitude penalty after one step,
    e_z' expm(dt hat(omega)) R(q) expm(hat(m_att)) e_z, is linearized in
    omega at 0.
    """
    m_vec = np.asarray(m_vec, dtype=np.float64)
    h_x = barrier_eval(spec, state)
    if spec.kind == "quadratic":
        if not isinstance(system, DoubleIntegrator):
            raise DimensionError("quadratic barrier expects the double-integrator system")
        A, B = system.matrices()
        if m_vec.shape != (2,):
            raise DimensionError(f"residual mean must be 2-dim, got {m_vec.shape}")
        w = A @ np.asarray(state, dtype=np.float64) + m_vec
        w = w - np.array([spec.z0, 0.0])
        PB = spec.P @ B
        Q_c = -np.array([[float(B @ PB)]])
        b_c = -2.0 * np.array([float(w @ PB)])
        r_c = spec.C - float(w @ spec.P @ w) - c_val - spec.alpha * h_x
        return FilterProblem(u_nom=np.atleast_1d(u_nom), Q_c=Q_c, b_c=b_c, r_c=r_c)

    if not isinstance(system, Quadrotor):
        raise DimensionError("quadrotor barrier expects the quadrotor system")
    if m_vec.shape != (9,):
        raise DimensionError(f"residual mean must be 9-dim, got {m_vec.shape}")
    params = system.params
    state = np.asarray(state, dtype=np.float64)
    q = state[QUAT]
    dt = params.dt
    r_zz = tilt_cosine(q)
    # zeta after step and mean shift: zeta_next = a + s * tau
    a = np.array([
        state[2] + dt * state[9] + m_vec[2] - spec.z0,
        state[9] - dt * params.gravity + m_vec[8],
    ])
    s = np.array([0.0, dt * r_zz / params.mass])
    Pa, Ps = spec.P @ a, spec.P @ s
    Q_c = np.zeros((4, 4))
    Q_c[0, 0] = -float(s @ Ps)
    b_c = np.zeros(4)
    b_c[0] = -2.0 * float(a @ Ps)
    # attitude penalty, linearized in omega: tilt = t0 + dt (w x e_z) . omega
    w_axis = quat_to_rot(q) @ quat_to_rot(quat_from_axis_angle(m_vec[3:6])) @ E_Z
    t0 = float(w_axis[2])
    b_c[1:4] = spec.lam_pen * dt * np.cross(w_axis, E_Z)
    r_c = (spec.C - float(a @ Pa) - spec.lam_pen * (1.0 - t0)
           - c_val - spec.alpha * h_x)
    return FilterProblem(u_nom=np.asarray(u_nom, dtype=np.float64),
                         Q_c=Q_c, b_c=b_c, r_c=r_c)


# ---------------------------------------------------------------------------
# Ablations: how (m(x), c(x)) are supplied to the filter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ablation:
    """Named source of the residual-mean shift m(x) and trace correction c(x)."""

    kind: str
    moments: Callable[[np.ndarray, int], tuple]

    def m(self, x: np.ndarray, k: int = 0) -> np.ndarray:
        return self.moments(x, k)[0]

    def c(self, x: np.ndarray, k: int = 0) -> float:
        return self.moments(x, k)[1]


def make_ablation(kind: str, spec: BarrierSpec, dataset: ResidualDataset = None,
                  regressor: MlpRegressor = None, model: CvaeModel = None,
                  true_moments: Callable = None, n_samples: int = 200,
                  seed: int = 0, moment_fn: Callable = None) -> Ablation:
    """Build the (m, c) source for one comparison controller.

    standard: m = 0, c = 0.
    jed:      m = dataset sample mean, c = (lam_max/2) tr(sample cov), constant.
    mlp:      m = regressor(x), c = 0.
    true:     m, cov from the true conditional law; c = (lam_max/2) tr(cov).
    orio:     m, cov from the mixture estimator of the trained model at
              n_samples latent draws; per-step seed derived from (seed, step).
              moment_fn, when given, replaces the estimator call and must map
              x -> (mean, cov).
    """
    d = spec.disturbance_dim
    lam_half = 0.5 * hessian_bound(spec)
    if kind == "standard":
        zero = np.zeros(d)
        return Ablation(kind, lambda x, k: (zero, 0.0))
    if kind == "jed":
        if dataset is None:
            raise ValueError("jed ablation needs the training dataset")
        if dataset.residual_dim != d:
            raise DimensionError(f"dataset residual dim {dataset.residual_dim} != {d}")
        mean = dataset.residuals.mean(axis=0)
        cov = np.cov(dataset.residuals.T, ddof=1)
        c = lam_half * float(np.trace(np.atleast_2d(cov)))
        return Ablation(kind, lambda x, k: (mean, c))
    if kind == "mlp":
        if regressor is None:
            raise ValueError("mlp ablation needs the trained regressor")
        return Ablation(kind, lambda x, k: (regressor.predict(x), 0.0))
    if kind == "true":
        if true_moments is None:
            raise ValueError("true ablation needs the true moment function")

        def true_mc(x, k):
            gp = true_moments(x)
            return gp.mean, lam_half * float(np.trace(gp.cov))

        return Ablation(kind, true_mc)
    if kind == "orio":
        if moment_fn is not None:
            return Ablation(kind, lambda x, k: _with_trace(moment_fn(x), lam_half))
        if model is None:
            raise ValueError("orio ablation needs the trained residual model")

        def orio_mc(x, k):
            est = estimate_moments_gmm(
                model, x, n_samples, seed=np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
            return est.mean, lam_half * float(np.trace(est.cov))

        return Ablation(kind, orio_mc)
    raise ValueError(f"unknown ablation kind {kind!r}; expected one of {ABLATION_KINDS}")


def _with_trace(moments: tuple, lam_half: float) -> tuple:
    mean, cov = moments
    return np.asarray(mean, dtype=np.float64), lam_half * float(np.trace(np.atleast_2d(cov)))


# ---------------------------------------------------------------------------
# Nominal controllers
# ---------------------------------------------------------------------------


def lqr_gain(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Infinite-horizon discrete LQR feedback K with u = -K (x - target)."""
    from .barrier import dare_solve

    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    P = dare_solve(A, B, Q, R)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def make_nominal_lqr(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                     target: np.ndarray) -> Callable[[np.ndarray, int], np.ndarray]:
    K = lqr_gain(A, B, Q, R)
    target = np.asarray(target, dtype=np.float64)

    def controller(x: np.ndarray, k: int = 0) -> np.ndarray:
        return -K @ (np.asarray(x, dtype=np.float64) - target)

    return controller


def make_nominal_se3(params: QuadrotorParams, target_pos: np.ndarray,
                     kp: float = 6.0, kd: float = 4.0,
                     k_att: float = 8.0) -> Callable[[np.ndarray, int], np.ndarray]:
    """Position PD with thrust along the body z-axis and attitude P on the tilt.

    At the target with identity attitude this returns exact hover
    (tau = m g, omega = 0). Thrust is clipped at zero; omega is the world-frame
    axis-angle rate driving the body z-axis toward the desired acceleration.
    """
    target = np.asarray(target_pos, dtype=np.float64)

    def controller(x: np.ndarray, k: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p, q, v = x[0:3], x[QUAT], x[7:10]
        a_des = kp * (target - p) - kd * v + params.gravity * E_Z
        b3 = body_z_axis(q)
        tau = max(0.0, params.mass * float(a_des @ b3))
        norm = np.linalg.norm(a_des)
        b3_des = a_des / norm if norm > 1e-9 else E_Z
        axis = np.cross(b3, b3_des)
        sin_a = np.linalg.norm(axis)
        cos_a = float(np.clip(b3 @ b3_des, -1.0, 1.0))
        if sin_a > 1e-12:
            omega = k_att * np.arctan2(sin_a, cos_a) * (axis / sin_a)
        else:
            omega = np.zeros(3)
        return np.concatenate(([tau], omega))

    return controller


# ---------------------------------------------------------------------------
# Filtered controller
# ---------------------------------------------------------------------------


@dataclass
class SafetyFilterController:
    """Nominal controller wrapped by the barrier projection filter.

    Optional input box: the solution is clipped componentwise and the barrier
    constraint re-checked; a clipped input that violates it raises
    InfeasibleError (reported as a truncation by the rollout harness).
    """

    spec: BarrierSpec
    system: object
    nominal: Callable[[np.ndarray, int], np.ndarray]
    ablation: Ablation
    input_low: np.ndarray = None
    input_high: np.ndarray = None
    g_tol: float = 1e-8
    log: list = None  # when a list, receives (k, active, nu, margin) per call

    def __call__(self, x: np.ndarray, k: int = 0) -> np.ndarray:
        m_vec, c_val = self.ablation.moments(x, k)
        u_nom = np.atleast_1d(np.asarray(self.nominal(x, k), dtype=np.float64))
        problem = build_constraint(self.spec, x, u_nom, m_vec, c_val, self.system)
        sol = solve_safety_filter(problem, g_tol=self.g_tol)
        u = sol.u
        if self.input_low is not None or self.input_high is not None:
            clipped = np.clip(u, self.input_low, self.input_high)
            if not np.array_equal(clipped, u):
                g_clipped = problem.g(clipped)
                if g_clipped < -self.g_tol:
                    raise InfeasibleError(
                        f"input-box projection violates the barrier constraint "
                        f"(g = {g_clipped:.3e})", sup_g=g_clipped)
                u = clipped
        if self.log is not None:
            self.log.append((k, sol.active, sol.nu, sol.margin))
        return u
