"""Barrier functions, certificates, and the finite-horizon exit-probability bound.

Two barrier kinds share the quadratic core h = C - zeta' P zeta on
zeta = [altitude - z0, vertical velocity], with P from a discrete-time
algebraic Riccati equation:

  * "quadratic": the double-integrator barrier, evaluated on a (pos, vel) state;
  * "quadrotor": the same quadratic plus an orientation penalty
    -lam_pen * (1 - e_z' R(q) e_z), evaluated on a flat 10-dim quadrotor state.

Both are upper-bounded by M = C, with Hessian 2-norm bounded by
2*||P||_2 (+ lam_pen for the quadrotor kind, covering the penalty curvature
under the 3-vector attitude tangent). When the barrier condition holds in
expectation with decay alpha, the chance of leaving {h >= 0} within K steps
is at most 1 - (h(x0)/M) * alpha^K; enforcing the condition at the mean-shifted
next state minus (lam_max/2) * tr(cov) is a sufficient, tractable surrogate
for concave h.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DimensionError
from .geom import QUAD_STATE_DIM, QUAD_TANGENT_DIM, apply_tangent, quat_check_unit, tilt_cosine

BARRIER_KINDS = ("quadratic", "quadrotor")


def dare_solve(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
               tol: float = 1e-12, max_iter: int = 100_000,
               residual_tol: float = 1e-9) -> np.ndarray:
    """Fixed-point solve of P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q from P = Q.

    Iterates until successive iterates agree to `tol` in max-abs, then checks
    the fixed-point residual against `residual_tol`. Requires (A, B)
    stabilizable and Q psd, R pd in the usual way; divergence or a residual
    above tolerance raises ConvergenceError carrying the final residual.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    Q = np.asarray(Q, dtype=np.float64)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n):
        raise DimensionError(f"dare_solve shapes A{A.shape} B{B.shape} Q{Q.shape}")

    def step(P: np.ndarray) -> np.ndarray:
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        Pn = A.T @ P @ A - (A.T @ P @ B) @ gain + Q
        return 0.5 * (Pn + Pn.T)

    P = Q.copy()
    for _ in range(max_iter):
        Pn = step(P)
        if not np.isfinite(Pn).all():
            raise ConvergenceError("dare_solve diverged to non-finite iterates")
        if np.max(np.abs(Pn - P)) <= tol:
            P = Pn
            break
        P = Pn
    residual = float(np.max(np.abs(P - step(P))))
    if residual > residual_tol:
        raise ConvergenceError(f"dare_solve residual {residual:.3e} exceeds {residual_tol:.1e}")
    if np.linalg.eigvalsh(P).min() <= 0.0:
        raise ConvergenceError("dare_solve produced a non-positive-definite P")
    return P


@dataclass(frozen=True)
class BarrierSpec:
    """Barrier definition plus the constants its certificates need."""

    kind: str
    P: np.ndarray           # 2x2 symmetric positive definite
    C: float                # level constant; also the upper bound M of h
    z0: float               # target altitude / position offset (m)
    alpha: float            # per-step decay rate in (0, 1)
    lam_pen: float = 0.0    # orientation penalty weight (quadrotor kind only)

    def __post_init__(self):
        if self.kind not in BARRIER_KINDS:
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        P = np.asarray(self.P, dtype=np.float64)
        if P.shape != (2, 2):
            raise DimensionError(f"P must be 2x2, got {P.shape}")
        if not np.allclose(P, P.T, atol=1e-10) or np.linalg.eigvalsh(P).min() <= 0.0:
            raise ValueError("P must be symmetric positive definite")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.C <= 0.0:
            raise ValueError("C must be positive")
        if self.lam_pen < 0.0:
            raise ValueError("lam_pen must be nonnegative")
        if self.kind == "quadratic" and self.lam_pen != 0.0:
            raise ValueError("quadratic kind has no orientation penalty")
        object.__setattr__(self, "P", 0.5 * (P + P.T))

    @property
    def disturbance_dim(self) -> int:
        return 2 if self.kind == "quadratic" else QUAD_TANGENT_DIM


def upper_bound(spec: BarrierSpec) -> float:
    """Global upper bound M of h; both kinds peak at C (zeta = 0, level attitude)."""
    return spec.C


def hessian_bound(spec: BarrierSpec) -> float:
    """Bound on sup ||hessian h||_2 over the disturbance coordinates.

    The quadratic core contributes exactly 2*||P||_2. The quadrotor
    orientation penalty adds at most lam_pen: along any unit tangent
    direction, e_z' R exp(hat(t)) e_z has second derivative bounded by 1.
    """
    lam = 2.0 * float(np.abs(np.linalg.eigvalsh(spec.P)).max())
    if spec.kind == "quadrotor":
        lam += spec.lam_pen
    return lam


def zeta_of(spec: BarrierSpec, state: np.ndarray) -> np.ndarray:
    """[altitude - z0, vertical velocity] for the spec's state convention."""
    state = np.asarray(state, dtype=np.float64)
    if spec.kind == "quadratic":
        if state.shape != (2,):
            raise DimensionError(f"quadratic barrier expects a 2-state, got {state.shape}")
        return np.array([state[0] - spec.z0, state[1]])
    if state.shape != (QUAD_STATE_DIM,):
        raise DimensionError(f"quadrotor barrier expects a 10-state, got {state.shape}")
    return np.array([state[2] - spec.z0, state[9]])


def barrier_eval(spec: BarrierSpec, state: np.ndarray) -> float:
    """h(x); raises on a quadrotor state whose quaternion is not unit (1e-6)."""
    zeta = zeta_of(spec, state)
    h = spec.C - float(zeta @ spec.P @ zeta)
    if spec.kind == "quadrotor":
        q = quat_check_unit(np.asarray(state, dtype=np.float64)[3:7])
        h -= spec.lam_pen * (1.0 - tilt_cosine(q))
    return h


def exit_prob_bound(h0: float, M: float, alpha: float, K: int) -> float:
    """Bound on the K-step exit probability: 1 - (h0/M) * alpha^K, in [0, 1].

    h0 < 0 means the start is already outside the safe set: returns 1.
    h0 > M contradicts the upper bound and raises.
    """
    if M <= 0.0:
        raise ValueError("M must be positive")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if K < 0:
        raise ValueError("K must be nonnegative")
    if h0 < 0.0:
        return 1.0
    if h0 > M * (1.0 + 1e-12):
        raise ValueError(f"h0 = {h0} exceeds the upper bound M = {M}")
    return float(np.clip(1.0 - (h0 / M) * alpha ** K, 0.0, 1.0))


def shift_state(spec: BarrierSpec, state: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Apply a disturbance to a state in the spec's convention.

    quadratic: plain vector addition on (pos, vel); quadrotor: 9-dim tangent
    perturbation of (position, attitude, velocity).
    """
    delta = np.asarray(delta, dtype=np.float64)
    if spec.kind == "quadratic":
        if delta.shape != (2,):
            raise DimensionError(f"quadratic disturbance must be 2-dim, got {delta.shape}")
        return np.asarray(state, dtype=np.float64) + delta
    return apply_tangent(state, delta)


def jensen_margin(spec: BarrierSpec, state: np.ndarray, u: np.ndarray,
                  mean: np.ndarray, cov: np.ndarray,
                  dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """h(F(x,u) shifted by the residual mean) - (lam_max/2) tr(cov) - alpha h(x).

    Nonnegativity of this margin is the tractable sufficient condition for the
    barrier inequality to hold in expectation under the residual distribution.
    """
    cov = np.asarray(cov, dtype=np.float64)
    d = spec.disturbance_dim
    if cov.shape != (d, d):
        raise DimensionError(f"cov must be {d}x{d}, got {cov.shape}")
    nxt = shift_state(spec, dynamics(state, u), mean)
    correction = 0.5 * hessian_bound(spec) * float(np.trace(cov))
    return barrier_eval(spec, nxt) - correction - spec.alpha * barrier_eval(spec, state)


def feasibility_probe(spec: BarrierSpec, state: np.ndarray, m_delta: float, m_c: float,
                      dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      input_low: np.ndarray, input_high: np.ndarray,
                      points_per_dim: int = 7, n_delta: int = 64,
                      seed: int = 0) -> bool:
    """Empirical feasibility check: search the input box for a u with

        h(F(x, u) + delta) - m_c >= alpha h(x)

    under the worst of n_delta sampled disturbances of norm m_delta (worst
    admissible constraint slack is taken as -m_c). Requires h(x) >= 0 and,
    for the quadrotor kind, C >= 2 * lam_pen. False is a reportable outcome.
    """
    if barrier_eval(spec, state) < 0.0:
        raise ValueError("feasibility_probe requires h(x) >= 0")
    if spec.kind == "quadrotor" and spec.C < 2.0 * spec.lam_pen:
        raise ValueError(f"requires C >= 2*lam_pen, got C={spec.C}, lam_pen={spec.lam_pen}")
    input_low = np.atleast_1d(np.asarray(input_low, dtype=np.float64))
    input_high = np.atleast_1d(np.asarray(input_high, dtype=np.float64))
    d = spec.disturbance_dim
    rng = np.random.default_rng(seed)
    if m_delta > 0.0:
        dirs = rng.standard_normal((n_delta, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        deltas = m_delta * dirs  # adversarial shell of the admissible ball
    else:
        deltas = np.zeros((1, d))
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(input_low, input_high)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    target = spec.alpha * barrier_eval(spec, state)
    for u in grid:
        nxt = dynamics(state, u)
        worst = min(barrier_eval(spec, shift_state(spec, nxt, delta)) for delta in deltas)
        if worst - m_c >= target:
            return True
    return False
