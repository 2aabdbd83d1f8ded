"""
Finite-horizon LQR tracking on a kinematic bicycle.

Model (Euler at the trajectory step ``dt``), state ``[x, y, θ, v]``,
control ``[a, δ]``::

    x⁺ = x + dt·v·cos θ
    y⁺ = y + dt·v·sin θ
    θ⁺ = θ + dt·v·tan δ / L
    v⁺ = v + dt·a
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import math
from typing import Any

import numpy as np
import scipy.linalg

from ..core.exceptions import HorizonMismatchError, NumericalFailureError
from ..core.logging import get_logger
from ..domain.control import BicycleState, LqrConfig
from ..domain.models import HEADING, SPEED, FloatArray, Trajectory, wrap_angle

logger = get_logger(__name__)

# Reference speed below which curvature, and so steering, is taken as zero.
_MIN_REFERENCE_SPEED = 1e-6


def bicycle_step(state: FloatArray, control: FloatArray, cfg: LqrConfig) -> FloatArray:
    """One Euler step of the bicycle model (heading not wrapped)."""
    x, y, theta, v = state
    accel, steer = control
    return np.array(
        [
            x + cfg.dt * v * math.cos(theta),
            y + cfg.dt * v * math.sin(theta),
            theta + cfg.dt * v * math.tan(steer) / cfg.wheelbase,
            v + cfg.dt * accel,
        ]
    )


def linearize(ref_state: BicycleState, ref_control: tuple[float, float], cfg: LqrConfig) -> tuple[FloatArray, FloatArray]:
    """
    Discrete Jacobians of ``bicycle_step`` about a reference point.

    Returns:
        ``(A, B)`` with shapes ``(4, 4)`` and ``(4, 2)``
    """
    theta, v = ref_state.heading, ref_state.speed
    steer = ref_control[1]
    dt, wheelbase = cfg.dt, cfg.wheelbase
    A = np.eye(4)
    A[0, 2] = -dt * v * math.sin(theta)
    A[0, 3] = dt * math.cos(theta)
    A[1, 2] = dt * v * math.cos(theta)
    A[1, 3] = dt * math.sin(theta)
    A[2, 3] = dt * math.tan(steer) / wheelbase
    B = np.zeros((4, 2))
    B[2, 1] = dt * v / (wheelbase * math.cos(steer) ** 2)
    B[3, 0] = dt
    return A, B


def riccati_recursion(
    A_seq: Sequence[FloatArray],
    B_seq: Sequence[FloatArray],
    Q: FloatArray,
    R: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    """
    Backward Riccati recursion with terminal cost ``Q``.

    Returns:
        Gains ``(N, 2, 4)`` and cost-to-go matrices ``(N + 1, 4, 4)``

    Raises:
        NumericalFailureError: If an inner solve fails or produces non-finite values
    """
    horizon = len(A_seq)
    if len(B_seq) != horizon:
        raise NumericalFailureError("A and B sequences differ in length", a=horizon, b=len(B_seq))
    K = np.zeros((horizon, B_seq[0].shape[1] if horizon else 2, Q.shape[0]))
    P = np.zeros((horizon + 1,) + Q.shape)
    P[horizon] = Q
    for t in range(horizon - 1, -1, -1):
        A, B, Pn = A_seq[t], B_seq[t], P[t + 1]
        try:
            K[t] = scipy.linalg.solve(R + B.T @ Pn @ B, B.T @ Pn @ A, assume_a="pos")
        except (scipy.linalg.LinAlgError, ValueError) as e:
            raise NumericalFailureError("Riccati gain solve failed", step=t, error=str(e)) from e
        Pt = Q + A.T @ Pn @ (A - B @ K[t])
        P[t] = 0.5 * (Pt + Pt.T)
        if not np.all(np.isfinite(P[t])):
            raise NumericalFailureError("Riccati recursion diverged", step=t)
    return K, P


def solve_riccati(A_seq: Sequence[FloatArray], B_seq: Sequence[FloatArray], Q: FloatArray, R: FloatArray) -> FloatArray:
    """
    Time-varying LQR gains ``K_0 .. K_{N-1}``.

    Raises:
        NumericalFailureError: If an inner solve fails
    """
    return riccati_recursion(A_seq, B_seq, Q, R)[0]


def reference_controls(candidate: Trajectory, cfg: LqrConfig) -> FloatArray:
    """
    Controls that reproduce the candidate's speed and heading under the model.

    ``a = Δv/dt``; ``δ = atan(L·κ)`` with ``κ = Δθ / (v·dt)``.

    Returns:
        ``(N-1, 2)`` array of ``[accel, steer]``
    """
    if candidate.n < 2:
        return np.zeros((0, 2))
    v = candidate.speed[:-1]
    accel = np.diff(candidate.speed) / candidate.dt
    dtheta = wrap_angle(np.diff(candidate.heading))
    kappa = np.where(v > _MIN_REFERENCE_SPEED, dtheta / (np.maximum(v, _MIN_REFERENCE_SPEED) * candidate.dt), 0.0)
    return np.stack([accel, np.arctan(cfg.wheelbase * kappa)], axis=1)


def _clamp(control: FloatArray, speed: float, cfg: LqrConfig) -> FloatArray:
    lower = max(cfg.accel_min, -speed / cfg.dt)
    return np.array(
        [
            min(max(control[0], lower), cfg.accel_max),
            min(max(control[1], -cfg.steer_limit), cfg.steer_limit),
        ]
    )


@dataclass(frozen=True)
class TrackingResult:
    """
    Closed-loop rollout of one candidate.

    Attributes:
        simulated: Simulated trajectory (same sampling as the candidate)
        controls: ``(N-1, 2)`` applied ``[accel, steer]``
        max_pos_err: Largest position deviation from the candidate (m)
        feasible: ``max_pos_err`` within the configured tolerance
    """

    simulated: Trajectory
    controls: FloatArray
    max_pos_err: float
    feasible: bool

    @property
    def diagnostics(self) -> dict[str, Any]:
        return {"max_pos_err": self.max_pos_err, "feasible": self.feasible}


def _rollout(candidate: Trajectory, init: BicycleState, cfg: LqrConfig, gains: FloatArray | None) -> TrackingResult:
    ref = candidate.states
    u_ref = reference_controls(candidate, cfg)
    states = np.zeros_like(ref)
    states[0] = init.as_array()
    controls = np.zeros_like(u_ref)
    for t in range(candidate.n - 1):
        u = u_ref[t].copy()
        if gains is not None:
            err = states[t] - ref[t]
            err[HEADING] = wrap_angle(err[HEADING])
            u -= gains[t] @ err
        controls[t] = _clamp(u, states[t, SPEED], cfg)
        states[t + 1] = bicycle_step(states[t], controls[t], cfg)
        states[t + 1, SPEED] = max(states[t + 1, SPEED], 0.0)
    states[:, HEADING] = wrap_angle(states[:, HEADING])

    max_err = float(np.max(np.hypot(states[:, 0] - ref[:, 0], states[:, 1] - ref[:, 1])))
    simulated = Trajectory(states=states, dt=candidate.dt, t0=candidate.t0)
    return TrackingResult(
        simulated=simulated,
        controls=controls,
        max_pos_err=max_err,
        feasible=max_err <= cfg.feasibility_tolerance,
    )


def _check_horizon(candidate: Trajectory, cfg: LqrConfig) -> None:
    if abs(candidate.dt - cfg.dt) > 1e-9:
        raise HorizonMismatchError("Candidate step differs from the controller step", candidate=candidate.dt, controller=cfg.dt)


def track_trajectory(candidate: Trajectory, init: BicycleState, cfg: LqrConfig | None = None) -> TrackingResult:
    """
    Track a candidate with time-varying LQR about its own reference.

    ``u_t = u_ref,t − K_t (x_t − x_ref,t)`` with the heading error wrapped;
    acceleration is clamped to the limits and to ``-v/dt`` so speed never
    turns negative, steering to ``±steer_limit``. The simulated trajectory
    therefore satisfies the model and its curvature and acceleration bounds.

    Args:
        candidate: Reference trajectory
        init: Initial simulator state
        cfg: Controller configuration

    Returns:
        Simulated trajectory, controls and diagnostics

    Raises:
        HorizonMismatchError: If the candidate step differs from ``cfg.dt``
        NumericalFailureError: If the Riccati recursion fails
    """
    cfg = cfg or LqrConfig()
    _check_horizon(candidate, cfg)
    u_ref = reference_controls(candidate, cfg)
    linear = [
        linearize(BicycleState(*candidate.states[t]), (float(u_ref[t, 0]), float(u_ref[t, 1])), cfg)
        for t in range(candidate.n - 1)
    ]
    gains = solve_riccati([a for a, _ in linear], [b for _, b in linear], cfg.Q, cfg.R)
    result = _rollout(candidate, init, cfg, gains)
    if not result.feasible:
        logger.debug("lqr_infeasible", max_pos_err=result.max_pos_err)
    return result


def open_loop_rollout(candidate: Trajectory, init: BicycleState, cfg: LqrConfig | None = None) -> TrackingResult:
    """
    Apply the reference controls without feedback.

    Raises:
        HorizonMismatchError: If the candidate step differs from ``cfg.dt``
    """
    cfg = cfg or LqrConfig()
    _check_horizon(candidate, cfg)
    return _rollout(candidate, init, cfg, None)


def tracking_cost(result: TrackingResult, candidate: Trajectory, cfg: LqrConfig) -> float:
    """Quadratic state error plus control deviation cost of a rollout."""
    err = result.simulated.states - candidate.states
    err[:, HEADING] = wrap_angle(err[:, HEADING])
    du = result.controls - reference_controls(candidate, cfg)
    return float(np.einsum("ti,ij,tj->", err, cfg.Q, err) + np.einsum("ti,ij,tj->", du, cfg.R, du))


def initial_state(candidate: Trajectory) -> BicycleState:
    """Simulator start placed on the candidate's first sample."""
    x, y, heading, speed = candidate.states[0]
    return BicycleState(float(x), float(y), float(heading), float(speed))
