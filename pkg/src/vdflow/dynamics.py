"""Vehicle plant models and a fixed-step RK4 integrator.

All right-hand sides are written to broadcast over leading axes, so a
batch of states of shape ``(B, n_s)`` integrates in one call.  Angles
are kept unwrapped; wrapping would break the polynomial lifting maps
used downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DynamicsError(ValueError):
    """Invalid state/control fed to a plant model."""


class SingularityError(DynamicsError):
    """State entered a region where the model equations are singular."""


class DivergenceError(RuntimeError):
    """A rollout produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


@dataclass(frozen=True)
class SlipFreeParams:
    """Slip-free bicycle coefficients: input scalings and wheelbase."""

    b_u: float
    b_delta: float
    L: float

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("wheelbase L must be positive")


@dataclass(frozen=True)
class SlipParams:
    """Slip-based bicycle coefficients (linear tire model)."""

    b_u: float
    b_delta: float
    L_f: float
    L_r: float
    m: float
    I_z: float
    C_f: float
    C_r: float

    def __post_init__(self):
        for name in ("L_f", "L_r", "m", "I_z", "C_f", "C_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class DeadZoneParams:
    """Slip-free bicycle with a throttle dead zone below ``threshold``."""

    b_u: float
    b_delta: float
    L: float
    threshold: float = 0.13

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("wheelbase L must be positive")


@dataclass
class Trajectory:
    """Uniformly sampled trajectory: ``states[k]`` at ``times[k]``."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states length mismatch")

    def __len__(self) -> int:
        return len(self.times)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DynamicsError("non-finite input")


def unicycle_rhs(s, c):
    """d/dt of [x, y, psi] under controls [v, omega]."""
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_finite(s, c)
    psi = s[..., 2]
    v, omega = c[..., 0], c[..., 1]
    return np.stack([v * np.cos(psi), v * np.sin(psi), omega * np.ones_like(psi)], axis=-1)


def slipfree_rhs(s, c, params: SlipFreeParams):
    """d/dt of [x, y, v_x, psi] for the slip-free bicycle."""
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_finite(s, c)
    vx, psi = s[..., 2], s[..., 3]
    u, delta = c[..., 0], c[..., 1]
    steer = params.b_delta * delta
    if np.any(np.abs(steer) >= math.pi / 2):
        raise DynamicsError("steering angle b_delta*delta at tangent singularity")
    return np.stack(
        [
            vx * np.cos(psi),
            vx * np.sin(psi),
            params.b_u * u * np.ones_like(vx),
            vx / params.L * np.tan(steer),
        ],
        axis=-1,
    )


def slip_rhs(s, c, params: SlipParams, v_min: float = 1e-6):
    """d/dt of [x, y, v_x, psi, v_y, omega] for the slip-based bicycle.

    Forward force is ``F_x = m b_u u``; lateral forces use the linear
    small-slip-angle tire model, which divides by ``v_x``.
    """
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_finite(s, c)
    vx, psi, vy, omega = s[..., 2], s[..., 3], s[..., 4], s[..., 5]
    u, delta = c[..., 0], c[..., 1]
    if np.any(np.abs(vx) < v_min):
        raise SingularityError(f"|v_x| < {v_min}: slip angles undefined")
    steer = params.b_delta * delta
    F_x = params.m * params.b_u * u
    F_yf = -params.C_f * (steer - (vy + params.L_f * omega) / vx)
    F_yr = -params.C_r * ((vy + params.L_r * omega) / vx)
    cos_d, sin_d = np.cos(steer), np.sin(steer)
    return np.stack(
        [
            vx * np.cos(psi) - vy * np.sin(psi),
            vx * np.sin(psi) + vy * np.cos(psi),
            (F_x * cos_d - F_yf * sin_d) / params.m - omega * vy,
            omega,
            (F_yf * cos_d + F_x * sin_d + F_yr) / params.m - omega * vx,
            (params.L_f * (F_yf * cos_d + F_x * sin_d) - params.L_r * F_yr) / params.I_z,
        ],
        axis=-1,
    )


def experimental_prior_rhs(s, c, params: DeadZoneParams):
    """Slip-free bicycle with throttle dead zone: dv_x/dt = 0 for u below threshold."""
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    out = slipfree_rhs(s, c, SlipFreeParams(params.b_u, params.b_delta, params.L))
    u = c[..., 0]
    out[..., 2] = np.where(u >= params.threshold, params.b_u * u, 0.0)
    return out


def integrate_step(rhs, s, control_fn, t: float, dt: float, n_sub: int = 10):
    """Advance the state by ``dt`` with classical RK4 over ``n_sub`` substeps.

    ``control_fn(t)`` must return the control vector at absolute time
    ``t`` (broadcastable against the state batch).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = np.asarray(s, dtype=float)
    h = dt / n_sub
    for i in range(n_sub):
        ti = t + i * h
        k1 = rhs(s, control_fn(ti))
        k2 = rhs(s + 0.5 * h * k1, control_fn(ti + 0.5 * h))
        k3 = rhs(s + 0.5 * h * k2, control_fn(ti + 0.5 * h))
        k4 = rhs(s + h * k3, control_fn(ti + h))
        s = s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return s


def simulate(rhs, s0, control_fn, T: float, dt: float, n_sub: int = 10) -> Trajectory:
    """Roll out ``N_T = T/dt`` steps of :func:`integrate_step` from ``s0``."""
    n_steps = int(round(T / dt)) if T > 0 else 0
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError("T must be an integer multiple of dt")
    s = np.asarray(s0, dtype=float)
    states = np.empty((n_steps + 1,) + s.shape)
    states[0] = s
    for k in range(n_steps):
        s = integrate_step(rhs, s, control_fn, k * dt, dt, n_sub=n_sub)
        if not np.all(np.isfinite(s)):
            raise DivergenceError(k + 1)
        states[k + 1] = s
    return Trajectory(times=np.arange(n_steps + 1) * dt, states=states)
