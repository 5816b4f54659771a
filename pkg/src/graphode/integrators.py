"""Explicit time stepping of autonomous dynamics.

The primary scheme is the fourth-order Runge-Kutta 3/8 rule with weights
(1, 3, 3, 1)/8 and nodes (0, 1/3, 2/3, 1); forward Euler is kept for
comparison.  Step functions accept either plain ndarrays or autodiff
tensors, so training can backpropagate through the unrolled stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, NumericError
from .graph import BoundaryMask

__all__ = ["IntegratorConfig", "Trajectory", "rk4_38_step", "euler_step", "rollout"]

SCHEMES = ("rk4_38", "euler")


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "rk4_38"
    dt: float = 1e-3
    steps: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")


@dataclass(frozen=True)
class Trajectory:
    """States at every step, including the initial state at index 0."""

    states: np.ndarray  # [steps + 1, ...]
    dt: float

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1


def _check_stage(value, label: str):
    if isinstance(value, np.ndarray) and not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values in integrator stage {label}")
    return value


def rk4_38_step(f, u, dt: float):
    """One step of the 3/8-rule Runge-Kutta scheme for autonomous ``f``."""
    k1 = _check_stage(f(u), "k1")
    k2 = _check_stage(f(u + (dt / 3.0) * k1), "k2")
    k3 = _check_stage(f(u - (dt / 3.0) * k1 + dt * k2), "k3")
    k4 = _check_stage(f(u + dt * k1 - dt * k2 + dt * k3), "k4")
    return u + (dt / 8.0) * (k1 + 3.0 * k2 + 3.0 * k3 + k4)


def euler_step(f, u, dt: float):
    """One forward-Euler step."""
    k = _check_stage(f(u), "k1")
    return u + dt * k


_STEPPERS = {"rk4_38": rk4_38_step, "euler": euler_step}


def rollout(f, u0, config: IntegratorConfig, mask: BoundaryMask | None = None) -> Trajectory:
    """Iterate the configured step, recording every state.

    ``f`` must be autonomous (state only) and return arrays shaped like the
    state.  When ``mask`` is given, clamped nodes are re-pinned to their
    initial values after every step (node axis is -2).
    """
    if isinstance(u0, Tensor):
        raise TypeError("rollout operates on plain arrays; unroll tensors explicitly")
    u = np.array(u0, dtype=np.float64)
    step = _STEPPERS[config.scheme]
    states = [u.copy()]
    for s in range(config.steps):
        try:
            u = np.asarray(step(f, u, config.dt))
        except NumericError as exc:
            raise NumericError(f"step {s + 1}: {exc}") from exc
        if not np.all(np.isfinite(u)):
            raise NumericError(f"step {s + 1}: non-finite state")
        if mask is not None and mask.indices.size:
            u[..., mask.indices, :] = states[0][..., mask.indices, :]
        states.append(u.copy())
    return Trajectory(states=np.stack(states), dt=config.dt)
