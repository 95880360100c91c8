"""Closed-loop polarization compensation.

A four-actuator controller (alternating S1 and S2 retarders) sits in front
of Bob's analyzer. Once per feedback interval Bob compares his Z outcomes
on the public compensation string and his X outcomes on reconciled |+>
slots, and a coordinate-descent rule moves one actuator by a step
proportional to the measured QBER.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import polstate
from .polstate import PolarizationState

THETA_MAX = 4 * math.pi
N_ACTUATORS = 4


@dataclass(frozen=True)
class ActuatorBank:
    """Retardances (rad) of the four actuators; axes alternate S1, S2, S1, S2."""

    theta: tuple = (0.0, 0.0, 0.0, 0.0)
    theta_max: float = THETA_MAX

    def __post_init__(self):
        if len(self.theta) != N_ACTUATORS:
            raise ValueError("an actuator bank has exactly four retarders")
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if any(not 0.0 <= t <= self.theta_max for t in self.theta):
            raise ValueError(f"retardances must lie in [0, {self.theta_max}]")

    def unitary(self) -> np.ndarray:
        return actuator_unitary(self.theta)

    def moved(self, index: int, delta: float) -> "ActuatorBank":
        theta = list(self.theta)
        theta[index] = wrap_angle(theta[index] + delta, self.theta_max)
        return replace(self, theta=tuple(theta))


def wrap_angle(theta: float, theta_max: float = THETA_MAX) -> float:
    """Bring a retardance back into range using its 2*pi periodicity."""
    while theta > theta_max:
        theta -= 2 * math.pi
    while theta < 0:
        theta += 2 * math.pi
    return theta


def actuator_unitary(theta) -> np.ndarray:
    t0, t1, t2, t3 = theta
    return polstate.rotation_s1(t0) @ polstate.rotation_s2(t1) @ polstate.rotation_s1(t2) @ polstate.rotation_s2(t3)


def apply_compensator(bank: ActuatorBank, pol: PolarizationState) -> PolarizationState:
    return polstate.apply_unitary(bank.unitary(), pol)


@dataclass(frozen=True)
class QberSample:
    q_z: float
    q_x: float
    n_z: int
    n_x: int
    interval_index: int = 0
    low_stats: bool = False
    stale: bool = False

    def __post_init__(self):
        if self.n_z < 0 or self.n_x < 0:
            raise ValueError("counts must be non-negative")
        if not (0 <= self.q_z <= 1 and 0 <= self.q_x <= 1):
            raise ValueError("QBER must lie in [0, 1]")

    @property
    def cost(self) -> float:
        return max(self.q_z, self.q_x)


def sample_from_counts(n_z, e_z, n_x, e_x, interval_index=0, previous: QberSample | None = None) -> QberSample:
    """QBER sample from comparison counts; an empty basis carries the previous estimate."""
    stale = False
    if n_z:
        q_z = e_z / n_z
    else:
        q_z, stale = (previous.q_z if previous else 0.0), True
    if n_x:
        q_x = e_x / n_x
    else:
        q_x, stale = (previous.q_x if previous else 0.0), True
    return QberSample(q_z, q_x, int(n_z), int(n_x), interval_index, low_stats=(n_z == 0 or n_x == 0), stale=stale)


def estimate_qber(comp_sent, comp_measured, x_measured, interval_index=0, previous: QberSample | None = None) -> QberSample:
    """Online QBER from one interval.

    Args:
        comp_sent: public compensation bits of the slots Bob measured in Z.
        comp_measured: Bob's Z outcomes for those slots.
        x_measured: Bob's X outcomes on slots where both used X (Alice always
            sends |+>, so outcome 1 is an error).
        interval_index: feedback interval number.
        previous: sample carried forward when a basis has no comparisons.
    """
    sent = np.asarray(comp_sent)
    meas = np.asarray(comp_measured)
    x = np.asarray(x_measured)
    if sent.shape != meas.shape:
        raise ValueError("sent and measured compensation bits differ in length")
    return sample_from_counts(sent.size, int(np.sum(sent != meas)), x.size, int(np.sum(x != 0)), interval_index, previous)


@dataclass(frozen=True)
class CompensatorState:
    bank: ActuatorBank = field(default_factory=ActuatorBank)
    active_actuator: int = 0
    direction: int = 1
    reversals_this_round: int = 0
    gain: float = 5.0
    max_step: float = 0.3
    previous_cost: float | None = None

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ValueError("direction is +1 or -1")
        if not 0 <= self.active_actuator < N_ACTUATORS:
            raise ValueError("active actuator index out of range")
        if self.reversals_this_round not in (0, 1):
            raise ValueError("at most one reversal per round")


def controller_step(state: CompensatorState, sample: QberSample, min_comparisons: int = 100) -> CompensatorState:
    """One feedback update (pure function)."""
    if sample.n_z + sample.n_x < min_comparisons or sample.stale:
        return state
    cost = sample.cost
    active, direction, reversals = state.active_actuator, state.direction, state.reversals_this_round
    if state.previous_cost is not None and cost > state.previous_cost:
        if reversals == 0:
            direction, reversals = -direction, 1
        else:
            active, reversals = (active + 1) % N_ACTUATORS, 0
    step = min(state.gain * cost, state.max_step)
    bank = state.bank.moved(active, direction * step) if step > 0 else state.bank
    return replace(
        state,
        bank=bank,
        active_actuator=active,
        direction=direction,
        reversals_this_round=reversals,
        previous_cost=cost,
    )


LOG_FIELDS = ("interval", "q_z", "q_x", "n_z", "n_x", "theta0", "theta1", "theta2", "theta3", "active", "direction")


class PolarizationController:
    """Stateful wrapper around :func:`controller_step` with an audit log."""

    def __init__(self, state: CompensatorState | None = None, min_comparisons: int = 100, enabled: bool = True):
        self.state = state or CompensatorState()
        self.min_comparisons = min_comparisons
        self.enabled = enabled
        self.log: list[dict] = []
        self._round_reversals = [0]

    @property
    def unitary(self) -> np.ndarray:
        return self.state.bank.unitary()

    def update(self, sample: QberSample) -> CompensatorState:
        before = self.state
        if self.enabled:
            self.state = controller_step(before, sample, self.min_comparisons)
        after = self.state
        if after.active_actuator != before.active_actuator:
            self._round_reversals.append(0)
        elif after.direction != before.direction:
            self._round_reversals[-1] += 1
        # logged with the bank that produced the sample
        row = {"interval": sample.interval_index, "q_z": sample.q_z, "q_x": sample.q_x, "n_z": sample.n_z, "n_x": sample.n_x}
        row.update({f"theta{i}": before.bank.theta[i] for i in range(N_ACTUATORS)})
        row.update({"active": after.active_actuator, "direction": after.direction})
        self.log.append(row)
        return after

    def max_reversals_per_round(self) -> int:
        return max(self._round_reversals)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            for row in self.log:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def infidelity(theta, channel_unitary) -> float:
    """1 - |tr(C U)|^2 / 4: zero when the compensator undoes the channel up to a phase."""
    m = actuator_unitary(theta) @ channel_unitary
    return 1.0 - abs(np.trace(m)) ** 2 / 4.0


def find_compensation(channel_unitary, rng: np.random.Generator, n_starts: int = 8) -> ActuatorBank:
    """Offline multi-start search for a bank that inverts ``channel_unitary``."""
    best = None
    for _ in range(n_starts):
        x0 = rng.uniform(0, 2 * math.pi, size=N_ACTUATORS)
        res = minimize(infidelity, x0, args=(channel_unitary,), method="BFGS")
        if best is None or res.fun < best.fun:
            best = res
        if best.fun < 1e-12:
            break
    return ActuatorBank(tuple(wrap_angle(t % (2 * math.pi)) for t in best.x))
