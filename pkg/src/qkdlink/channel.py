"""Fiber channel: fixed loss plus a slowly drifting polarization rotation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import polstate
from .polstate import PolarizationState


@dataclass(frozen=True)
class ChannelConfig:
    fiber_km: float = 26.0
    fiber_db_per_km: float = 0.35
    voa_db: float = 0.0
    drift_rate_rad_per_s: float = 0.0
    drift_axis_correlation_time_s: float = 300.0
    drift_step_s: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.fiber_km, self.fiber_db_per_km, self.voa_db) < 0:
            raise ValueError("attenuations must be non-negative")
        if self.drift_rate_rad_per_s < 0:
            raise ValueError("drift rate must be non-negative")
        if not self.drift_axis_correlation_time_s > 0 or not self.drift_step_s > 0:
            raise ValueError("drift time constants must be positive")

    @property
    def loss_db(self) -> float:
        return self.fiber_km * self.fiber_db_per_km + self.voa_db


def with_channel_loss(cfg: ChannelConfig, loss_db: float) -> ChannelConfig:
    """Reach ``loss_db`` total by setting the VOA after the fiber.

    Losses below the fiber's own loss shorten the fiber instead.
    """
    if loss_db < 0:
        raise ValueError("loss must be non-negative")
    fiber = cfg.fiber_km * cfg.fiber_db_per_km
    if loss_db >= fiber:
        return replace(cfg, voa_db=loss_db - fiber)
    km = loss_db / cfg.fiber_db_per_km if cfg.fiber_db_per_km > 0 else 0.0
    return replace(cfg, fiber_km=km, voa_db=0.0 if cfg.fiber_db_per_km > 0 else loss_db)


def transmittance(cfg: ChannelConfig) -> float:
    return 10.0 ** (-cfg.loss_db / 10.0)


@dataclass
class ChannelState:
    unitary: np.ndarray = field(default_factory=lambda: polstate.IDENTITY.copy())
    time_s: float = 0.0
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    steps: int = 0

    def copy(self) -> "ChannelState":
        return ChannelState(self.unitary.copy(), self.time_s, self.axis.copy(), self.steps)


def initial_state(rng: np.random.Generator | None = None, random_unitary: bool = False) -> ChannelState:
    """Channel at t=0; random unitary and axis when ``rng`` is given."""
    if rng is None:
        return ChannelState()
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    u = polstate.random_unitary(rng) if random_unitary else polstate.IDENTITY.copy()
    return ChannelState(u, 0.0, axis)


REORTHONORMALIZE_EVERY = 64


def advance_drift(state: ChannelState, dt: float, cfg: ChannelConfig, rng: np.random.Generator) -> ChannelState:
    """One drift step of length ``dt``.

    The rotation angle is ``|N(0, rate*dt)|`` about the current axis; the axis
    diffuses on the sphere with correlation time
    ``drift_axis_correlation_time_s``.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return state.copy()
    out = state.copy()
    out.time_s = state.time_s + dt
    if cfg.drift_rate_rad_per_s == 0:
        return out
    angle = abs(rng.normal(0.0, cfg.drift_rate_rad_per_s * dt))
    u = polstate.rotation(state.axis, angle) @ state.unitary
    out.steps = state.steps + 1
    if out.steps % REORTHONORMALIZE_EVERY == 0:
        u = polstate.reorthonormalize(u)
    out.unitary = u
    # isotropic diffusion: <a(t).a(0)> = exp(-t/tau)
    kick = rng.normal(0.0, math.sqrt(dt / cfg.drift_axis_correlation_time_s), size=3)
    kick -= kick.dot(state.axis) * state.axis
    axis = state.axis + kick
    out.axis = axis / np.linalg.norm(axis)
    return out


def drift_trajectory(state: ChannelState, cfg: ChannelConfig, n_steps: int, rng: np.random.Generator) -> list[ChannelState]:
    """States after each of ``n_steps`` steps of ``cfg.drift_step_s``."""
    out = []
    for _ in range(n_steps):
        state = advance_drift(state, cfg.drift_step_s, cfg, rng)
        out.append(state)
    return out


def transmit(photons: int, state: ChannelState, pol: PolarizationState, cfg: ChannelConfig, rng: np.random.Generator):
    """Thin ``photons`` by the channel transmittance and rotate ``pol``."""
    if photons < 0:
        raise ValueError("photon number must be non-negative")
    surviving = int(rng.binomial(photons, transmittance(cfg))) if photons else 0
    return surviving, polstate.apply_unitary(state.unitary, pol)


def write_trajectory_csv(states: list[ChannelState], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["time_s"]
        for name in ("u00", "u01", "u10", "u11"):
            header += [f"{name}_re", f"{name}_im"]
        w.writerow(header)
        for s in states:
            row = [repr(float(s.time_s))]
            for z in s.unitary.ravel():
                row += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(row)
