"""Ground-truth systems, closed-loop rollouts, and residual-dataset collection.

Systems expose the same small surface: `model_step` is the modeled
(disturbance-free) dynamics F, `step` advances the true system one tick and
returns the realized residual d with x_next = model_step(x, u) (+) d, and
`true_moments` gives the exact conditional residual distribution. The double
integrator adds d in state space; the quadrotor applies a 9-dim tangent
residual (position, attitude, velocity) to its manifold state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cvae import ResidualDataset
from .errors import DimensionError, InfeasibleError
from .geom import (E_Z, POS, QUAT, VEL, QUAD_STATE_DIM, QUAD_TANGENT_DIM,
                   apply_tangent, body_z_axis, quat_check_unit, quat_mul,
                   quat_normalize)
from .nn import GaussianParams


# ---------------------------------------------------------------------------
# Double integrator with a state-dependent Gaussian residual
# ---------------------------------------------------------------------------


def di_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Discrete (A, B) of the double integrator with acceleration input."""
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([0.5 * dt * dt, dt])
    return A, B


def di_true_disturbance(state: np.ndarray) -> GaussianParams:
    """Heteroscedastic residual law: mean and covariance depend on position.

    mean = [0, sin(pos)];
    cov  = 0.5 * [[2 + cos(pos), exp(-|pos|)], [exp(-|pos|), 2 + sin(pos)]].
    """
    pos = float(np.asarray(state, dtype=np.float64)[0])
    mean = np.array([0.0, np.sin(pos)])
    off = np.exp(-abs(pos))
    cov = 0.5 * np.array([[2.0 + np.cos(pos), off], [off, 2.0 + np.sin(pos)]])
    return GaussianParams(mean=mean, cov=cov)


@dataclass(frozen=True)
class DoubleIntegrator:
    """pos/vel system x+ = A x + B u + d with the heteroscedastic residual."""

    dt: float = 0.01
    disturbed: bool = True

    state_dim = 2
    input_dim = 1
    residual_dim = 2
    tag = "double_integrator"

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        return di_matrices(self.dt)

    def model_step(self, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        A, B = self.matrices()
        return A @ np.asarray(state, dtype=np.float64) + B * float(np.atleast_1d(u)[0])

    def true_moments(self, state: np.ndarray) -> GaussianParams:
        return di_true_disturbance(state)

    def step(self, state: np.ndarray, u: np.ndarray,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        nominal = self.model_step(state, u)
        if not self.disturbed:
            return nominal, np.zeros(2)
        gp = di_true_disturbance(state)
        d = gp.mean + np.linalg.cholesky(gp.cov) @ rng.standard_normal(2)
        return nominal + d, d

    def apply_residual(self, state: np.ndarray, d: np.ndarray) -> np.ndarray:
        return np.asarray(state, dtype=np.float64) + np.asarray(d, dtype=np.float64)


def di_step(state: np.ndarray, u: float, rng: np.random.Generator,
            dt: float = 0.01, disturbed: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """One true double-integrator step; returns (next state, realized residual)."""
    return DoubleIntegrator(dt=dt, disturbed=disturbed).step(state, u, rng)


# ---------------------------------------------------------------------------
# Quadrotor with thrust / angular-rate inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 1.0      # kg
    gravity: float = 9.81  # m/s^2
    dt: float = 1.0 / 333.0

    def __post_init__(self):
        if min(self.mass, self.gravity, self.dt) <= 0.0:
            raise ValueError("mass, gravity, and dt must be positive")


def quad_euler_step(state: np.ndarray, u: np.ndarray,
                    params: QuadrotorParams) -> np.ndarray:
    """Manifold Euler step of [p, q, v] under thrust tau and world rate omega.

    p+ = p + dt v;  v+ = v + dt (-g e_z + (tau/m) R(q) e_z);
    q+ = normalize(q + dt * 0.5 * (0, omega) x q).
    """
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (QUAD_STATE_DIM,):
        raise DimensionError(f"quadrotor state must be 10-dim, got {state.shape}")
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (4,):
        raise DimensionError(f"quadrotor input must be (tau, omega), got {u.shape}")
    q = quat_check_unit(state[QUAT])
    tau, omega = u[0], u[1:4]
    out = np.empty(QUAD_STATE_DIM)
    out[POS] = state[POS] + params.dt * state[VEL]
    thrust_acc = (tau / params.mass) * body_z_axis(q)
    out[VEL] = state[VEL] + params.dt * (-params.gravity * E_Z + thrust_acc)
    q_omega = np.concatenate(([0.0], omega))
    out[QUAT] = quat_normalize(q + params.dt * 0.5 * quat_mul(q_omega, q))
    return out


def quad_disturbance(state: np.ndarray) -> GaussianParams:
    """Ground-effect residual: zero mean, cov (1 + 50 e^{-30 z^2}) 1e-5 I_9."""
    z = float(np.asarray(state, dtype=np.float64)[2])
    var = (1.0 + 50.0 * np.exp(-30.0 * z * z)) * 1e-5
    return GaussianParams(mean=np.zeros(9), cov=var * np.eye(9))


@dataclass(frozen=True)
class Quadrotor:
    params: QuadrotorParams = field(default_factory=QuadrotorParams)
    disturbed: bool = True

    state_dim = QUAD_STATE_DIM
    input_dim = 4
    residual_dim = QUAD_TANGENT_DIM
    tag = "quadrotor"

    @property
    def dt(self) -> float:
        return self.params.dt

    def model_step(self, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        return quad_euler_step(state, u, self.params)

    def true_moments(self, state: np.ndarray) -> GaussianParams:
        return quad_disturbance(state)

    def step(self, state: np.ndarray, u: np.ndarray,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        nominal = self.model_step(state, u)
        if not self.disturbed:
            return nominal, np.zeros(QUAD_TANGENT_DIM)
        gp = quad_disturbance(state)
        d = np.sqrt(gp.cov[0, 0]) * rng.standard_normal(QUAD_TANGENT_DIM)
        return apply_tangent(nominal, d), d

    def apply_residual(self, state: np.ndarray, d: np.ndarray) -> np.ndarray:
        return apply_tangent(state, d)


def quad_hover_state(altitude: float, xy: tuple = (0.0, 0.0)) -> np.ndarray:
    state = np.zeros(QUAD_STATE_DIM)
    state[0], state[1], state[2] = xy[0], xy[1], altitude
    state[3] = 1.0  # identity attitude
    return state


def quad_energy(state: np.ndarray, params: QuadrotorParams) -> float:
    """Kinetic plus potential energy per unit mass."""
    state = np.asarray(state, dtype=np.float64)
    return 0.5 * float(state[VEL] @ state[VEL]) + params.gravity * float(state[2])


# ---------------------------------------------------------------------------
# Rollouts and dataset collection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop log: K+1 states, K inputs/residuals, h per state."""

    states: np.ndarray
    inputs: np.ndarray
    residuals: np.ndarray
    h_values: np.ndarray
    min_h: float
    exited: bool
    truncated: bool = False
    infeasible_step: int | None = None

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]


def rollout(system, controller: Callable[[np.ndarray, int], np.ndarray],
            x0: np.ndarray, K: int, seed,
            h_fn: Callable[[np.ndarray], float]) -> Trajectory:
    """Simulate the closed loop for K steps, logging h along the way.

    The exit flag is min_k h(x_k) < 0 over the realized states. A controller
    raising InfeasibleError truncates the trajectory, which is flagged
    separately from exits.
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=np.float64).copy()
    states = [x.copy()]
    inputs, residuals, h_values = [], [], [h_fn(x)]
    truncated, infeasible_step = False, None
    for k in range(K):
        try:
            u = np.atleast_1d(np.asarray(controller(x, k), dtype=np.float64))
        except InfeasibleError:
            truncated, infeasible_step = True, k
            break
        x, d = system.step(x, u, rng)
        states.append(x.copy())
        inputs.append(u)
        residuals.append(d)
        h_values.append(h_fn(x))
    h_arr = np.array(h_values)
    min_h = float(h_arr.min())
    if inputs:
        inputs_arr = np.array(inputs)
        residuals_arr = np.array(residuals)
    else:
        inputs_arr = np.zeros((0, system.input_dim))
        residuals_arr = np.zeros((0, system.residual_dim))
    return Trajectory(
        states=np.array(states),
        inputs=inputs_arr,
        residuals=residuals_arr,
        h_values=h_arr,
        min_h=min_h,
        exited=bool(min_h < 0.0),
        truncated=truncated,
        infeasible_step=infeasible_step,
    )


def save_trajectory(traj: Trajectory, path) -> None:
    """One row per step k: k, state..., input..., residual..., h."""
    n_state = traj.states.shape[1]
    n_in = traj.inputs.shape[1] if traj.steps else 0
    n_res = traj.residuals.shape[1] if traj.steps else 0
    cols = (["k"] + [f"state_{i}" for i in range(n_state)]
            + [f"input_{i}" for i in range(n_in)]
            + [f"residual_{i}" for i in range(n_res)] + ["h"])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(traj.states.shape[0]):
            row = [str(k)] + [repr(float(v)) for v in traj.states[k]]
            if k < traj.steps:
                row += [repr(float(v)) for v in traj.inputs[k]]
                row += [repr(float(v)) for v in traj.residuals[k]]
            else:
                row += [""] * (n_in + n_res)
            row.append(repr(float(traj.h_values[k])))
            fh.write(",".join(row) + "\n")


def collect_dataset(system, pilot: Callable[[np.ndarray, int], np.ndarray],
                    n_traj: int, duration: float, rate: float, seed,
                    x0_fn: Callable[[int], np.ndarray]) -> ResidualDataset:
    """Fly `n_traj` trajectories and log (x_k, d_k) rows against the model F.

    rate must match the system tick (dt = 1/rate); each trajectory contributes
    round(duration * rate) rows, so the row count is exactly
    n_traj * duration * rate for integral products.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    if abs(system.dt * rate - 1.0) > 1e-9:
        raise ValueError(f"system dt {system.dt} does not match rate {rate} Hz")
    steps = int(round(duration * rate))
    if steps < 1:
        raise ValueError("duration * rate must be at least one step")
    seeds = np.random.SeedSequence(seed).spawn(n_traj)
    xs = np.empty((n_traj * steps, system.state_dim))
    ds = np.empty((n_traj * steps, system.residual_dim))
    row = 0
    for i in range(n_traj):
        rng = np.random.default_rng(seeds[i])
        x = np.asarray(x0_fn(i), dtype=np.float64).copy()
        for k in range(steps):
            u = np.atleast_1d(np.asarray(pilot(x, k), dtype=np.float64))
            x_next, d = system.step(x, u, rng)
            xs[row] = x
            ds[row] = d
            row += 1
            x = x_next
    return ResidualDataset(states=xs, residuals=ds, dt=system.dt, system=system.tag)
