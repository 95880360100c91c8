"""Alice: slot schedule for the three-state one-decoy protocol.

Slots are numbered from 0 at the repetition rate. The first ``sync_len``
slots carry the public synchronization string; every ``comp_period_s``
after that, a block of ``comp_string_len`` slots carries the public
compensation string; everything else is a key slot.

Slot attributes are a pure function of (seed, slot index), so any slot
can be looked up without generating the ones before it. Dense iteration
(:meth:`Schedule.blocks`) and random access (:func:`slot_records`) go
through the same code and agree bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import polstate
from .polstate import PolarizationState, X, Z
from .rng import hash_bits, hash_uniform, name_key

SYNC, COMP, KEY = 0, 1, 2
ROLE_NAMES = {SYNC: "SYNC", COMP: "COMP", KEY: "KEY"}
MU1, MU2 = 0, 1
INTENSITY_NAMES = {MU1: "MU1", MU2: "MU2"}

# Public strings are drawn from fixed, published keys, never from the run seed.
PUBLIC_SYNC_KEY = name_key("public", "sync-string")
PUBLIC_COMP_KEY = name_key("public", "compensation-string")

RECORD_DTYPE = np.dtype(
    [("slot", np.int64), ("role", np.int8), ("basis", np.int8), ("bit", np.int8), ("intensity", np.int8)]
)


@dataclass(frozen=True)
class TransmitterConfig:
    rate_hz: float = 5.0e7
    mu1: float = 0.80
    mu2: float = 0.28
    p_mu1: float = 0.7
    p_mu2: float = 0.3
    p_z_alice: float = 0.9
    sync_len: int = 1_000_000
    comp_string_len: int = 1_000_000
    comp_period_s: float = 1.0
    extinction_ratio_db: float = 33.0
    seed: int = 0

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        if not self.mu1 > self.mu2 > 0:
            raise ValueError("intensities must satisfy mu1 > mu2 > 0")
        if min(self.p_mu1, self.p_mu2) < 0 or abs(self.p_mu1 + self.p_mu2 - 1.0) > 1e-12:
            raise ValueError("p_mu1 + p_mu2 must equal 1")
        if not 0 < self.p_z_alice < 1:
            raise ValueError("p_z_alice must lie in (0, 1)")
        if self.sync_len < 1:
            raise ValueError("sync_len must be at least 1")
        if self.comp_string_len < 0:
            raise ValueError("comp_string_len must be non-negative")
        if self.comp_string_len and self.comp_string_len > self.comp_period_slots:
            raise ValueError("compensation string longer than its period")
        if not self.extinction_ratio_db > 0:
            raise ValueError("extinction_ratio_db must be positive")

    @property
    def period_ps(self) -> float:
        return 1e12 / self.rate_hz

    @property
    def comp_period_slots(self) -> int:
        return int(round(self.comp_period_s * self.rate_hz))

    @property
    def intensities(self) -> tuple[float, float]:
        return (self.mu1, self.mu2)

    @property
    def intensity_probs(self) -> tuple[float, float]:
        return (self.p_mu1, self.p_mu2)

    def slots_for(self, duration_s: float) -> int:
        return int(round(duration_s * self.rate_hz))


@dataclass(frozen=True)
class PreparedPulse:
    slot: int
    role: int
    basis: int
    bit: int
    intensity: int
    mean_photons: float

    def __post_init__(self):
        if self.role == COMP and (self.basis != Z or self.intensity != MU1):
            raise ValueError("compensation pulses are Z basis at mu1")
        if self.basis == X and self.bit != 0:
            raise ValueError("only |+> is prepared in the X basis")


def sync_string(length: int) -> np.ndarray:
    return hash_bits(PUBLIC_SYNC_KEY, np.arange(length))


def comp_string(length: int) -> np.ndarray:
    return hash_bits(PUBLIC_COMP_KEY, np.arange(length))


def slot_roles(cfg: TransmitterConfig, slots) -> np.ndarray:
    s = np.asarray(slots, dtype=np.int64)
    role = np.full(s.shape, KEY, dtype=np.int8)
    if cfg.comp_string_len:
        offset = (s - cfg.sync_len) % cfg.comp_period_slots
        role[(s >= cfg.sync_len) & (offset < cfg.comp_string_len)] = COMP
    role[s < cfg.sync_len] = SYNC
    return role


def slot_records(cfg: TransmitterConfig, slots) -> np.ndarray:
    """Attributes of arbitrary slots as a structured array (``RECORD_DTYPE``)."""
    s = np.asarray(slots, dtype=np.int64).ravel()
    out = np.empty(s.shape, dtype=RECORD_DTYPE)
    out["slot"] = s
    role = slot_roles(cfg, s)
    out["role"] = role

    u_basis = hash_uniform(name_key(cfg.seed, "basis"), s)
    u_int = hash_uniform(name_key(cfg.seed, "intensity"), s)
    basis = np.where(u_basis < cfg.p_z_alice, Z, X).astype(np.int8)
    bit = hash_bits(name_key(cfg.seed, "bit"), s)
    intensity = np.where(u_int < cfg.p_mu1, MU1, MU2).astype(np.int8)

    is_sync = role == SYNC
    if is_sync.any():
        bit[is_sync] = hash_bits(PUBLIC_SYNC_KEY, s[is_sync])
    is_comp = role == COMP
    if is_comp.any():
        offset = (s[is_comp] - cfg.sync_len) % cfg.comp_period_slots
        bit[is_comp] = hash_bits(PUBLIC_COMP_KEY, offset)
    public = is_sync | is_comp
    basis[public] = Z
    intensity[public] = MU1
    bit[basis == X] = 0

    out["basis"] = basis
    out["bit"] = bit
    out["intensity"] = intensity
    return out


def mean_photons(cfg: TransmitterConfig, intensity) -> np.ndarray:
    return np.where(np.asarray(intensity) == MU1, cfg.mu1, cfg.mu2)


class Schedule:
    """Lazily generated slot stream for a run of ``n_slots`` slots."""

    def __init__(self, cfg: TransmitterConfig, n_slots: int):
        self.cfg = cfg
        self.n_slots = int(n_slots)

    def __len__(self) -> int:
        return self.n_slots

    def records(self, slots) -> np.ndarray:
        s = np.asarray(slots, dtype=np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.n_slots):
            raise IndexError("slot index outside the schedule")
        return slot_records(self.cfg, s)

    def blocks(self, block_size: int = 1 << 20, start: int = 0, stop: int | None = None) -> Iterator[np.ndarray]:
        stop = self.n_slots if stop is None else min(stop, self.n_slots)
        for lo in range(start, stop, block_size):
            yield slot_records(self.cfg, np.arange(lo, min(lo + block_size, stop)))

    def __iter__(self) -> Iterator[PreparedPulse]:
        for block in self.blocks():
            for r in block:
                yield PreparedPulse(
                    slot=int(r["slot"]),
                    role=int(r["role"]),
                    basis=int(r["basis"]),
                    bit=int(r["bit"]),
                    intensity=int(r["intensity"]),
                    mean_photons=self.cfg.mu1 if r["intensity"] == MU1 else self.cfg.mu2,
                )

    def role_counts(self) -> dict[int, int]:
        # roles are periodic, so count analytically instead of hashing every slot
        n = self.n_slots
        n_sync = min(n, self.cfg.sync_len)
        n_comp = 0
        if self.cfg.comp_string_len and n > self.cfg.sync_len:
            rest = n - self.cfg.sync_len
            full, tail = divmod(rest, self.cfg.comp_period_slots)
            n_comp = full * self.cfg.comp_string_len + min(tail, self.cfg.comp_string_len)
        return {SYNC: n_sync, COMP: n_comp, KEY: n - n_sync - n_comp}


def build_schedule(cfg: TransmitterConfig, duration_s: float) -> Schedule:
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    n = cfg.slots_for(duration_s)
    if n < cfg.sync_len:
        raise ValueError(f"duration holds {n} slots, fewer than the {cfg.sync_len}-slot sync prefix")
    return Schedule(cfg, n)


def pulse_to_state(pulse: PreparedPulse) -> PolarizationState:
    if pulse.basis == Z:
        return polstate.STATE_L if pulse.bit == 0 else polstate.STATE_R
    if pulse.bit != 0:
        raise ValueError("(X, 1) is never prepared in the three-state protocol")
    return polstate.STATE_PLUS


def sample_photon_number(pulse: PreparedPulse, rng: np.random.Generator) -> int:
    if pulse.mean_photons <= 0:
        return 0
    return int(rng.poisson(pulse.mean_photons))


def write_schedule_csv(schedule: Schedule, path, stop: int | None = None) -> None:
    """Diagnostic dump, one ``slot,role,basis,bit,intensity`` record per line."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "role", "basis", "bit", "intensity"])
        for block in schedule.blocks(stop=stop):
            for r in block:
                w.writerow(
                    [
                        int(r["slot"]),
                        ROLE_NAMES[int(r["role"])],
                        polstate.BASIS_NAMES[int(r["basis"])],
                        int(r["bit"]),
                        INTENSITY_NAMES[int(r["intensity"])],
                    ]
                )


def expected_role_fraction(cfg: TransmitterConfig, duration_s: float) -> dict[int, float]:
    sched = build_schedule(cfg, duration_s)
    counts = sched.role_counts()
    return {k: v / len(sched) for k, v in counts.items()}


def prefix_duration_s(cfg: TransmitterConfig) -> float:
    return cfg.sync_len / cfg.rate_hz


def n_feedback_intervals(cfg: TransmitterConfig, n_slots: int) -> int:
    rest = n_slots - cfg.sync_len
    return max(0, math.ceil(rest / cfg.comp_period_slots))
