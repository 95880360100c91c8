"""Bob: passive basis choice, four threshold detectors, time tagging.

Detector ids: 0 = Z0 (|L>), 1 = Z1 (|R>), 2 = Xp (|+>), 3 = Xm (|->).
Bob's clock runs at ``1 + clock_skew`` times Alice's rate and reads
``clock_offset_ps`` when Alice's slot 0 arrives.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import polstate
from .polstate import PolarizationState, X, Z

Z0, Z1, XP, XM = 0, 1, 2, 3
DETECTOR_NAMES = ("Z0", "Z1", "Xp", "Xm")
DETECTOR_BASIS = np.array([Z, Z, X, X], dtype=np.int8)
DETECTOR_OUTCOME = np.array([0, 1, 0, 1], dtype=np.int8)

TIMETAG_DTYPE = np.dtype([("timetag_ps", np.int64), ("detector", np.int8)])

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def _default_eta():
    return {"Z0": 0.85, "Z1": 0.85, "Xp": 0.90, "Xm": 0.30}


@dataclass(frozen=True)
class ReceiverConfig:
    p_z_bob: float = 0.9
    eta: dict = field(default_factory=_default_eta)
    dark_hz: float = 200.0
    jitter_ps: float = 10.0
    pulse_fwhm_ps: float = 270.0
    gate_window_ps: float = 600.0
    insertion_loss_db: float = 2.0
    holdoff_ps: float = 0.0
    clock_skew: float = 1e-6
    clock_offset_ps: float = 1.0e8
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.p_z_bob <= 1:
            raise ValueError("p_z_bob must lie in [0, 1]")
        if set(self.eta) != set(DETECTOR_NAMES):
            raise ValueError(f"eta needs exactly the detectors {DETECTOR_NAMES}")
        if any(not 0 <= v <= 1 for v in self.eta.values()):
            raise ValueError("efficiencies must lie in [0, 1]")
        if self.dark_hz < 0 or self.jitter_ps < 0 or self.pulse_fwhm_ps < 0:
            raise ValueError("dark rate, jitter and pulse width must be non-negative")
        if not self.gate_window_ps > 0:
            raise ValueError("gate window must be positive")
        if self.insertion_loss_db < 0 or self.holdoff_ps < 0:
            raise ValueError("insertion loss and hold-off must be non-negative")

    @property
    def eta_array(self) -> np.ndarray:
        return np.array([self.eta[n] for n in DETECTOR_NAMES], dtype=float)

    @property
    def insertion_transmittance(self) -> float:
        return 10.0 ** (-self.insertion_loss_db / 10.0)

    @property
    def timing_sigma_ps(self) -> float:
        return math.hypot(self.pulse_fwhm_ps * FWHM_TO_SIGMA, self.jitter_ps)

    @property
    def route_probs(self) -> np.ndarray:
        """Probability that a photon reaches each detector's analyzer arm."""
        return np.array([self.p_z_bob, self.p_z_bob, 1 - self.p_z_bob, 1 - self.p_z_bob])

    @property
    def keep_probs(self) -> np.ndarray:
        """Per-detector keep probability that equalizes efficiencies within a basis."""
        eta = self.eta_array
        keep = np.ones(4)
        for pair in ((Z0, Z1), (XP, XM)):
            lo = min(eta[pair[0]], eta[pair[1]])
            for d in pair:
                keep[d] = lo / eta[d] if eta[d] > 0 else 1.0
        return keep

    @property
    def gate_capture(self) -> float:
        """Fraction of signal clicks landing inside the acceptance window."""
        s = self.timing_sigma_ps
        if s == 0:
            return 1.0
        return math.erf(self.gate_window_ps / 2 / (s * math.sqrt(2)))

    @property
    def dark_per_gate(self) -> float:
        return self.dark_hz * self.gate_window_ps * 1e-12

    def to_bob_time(self, alice_ps):
        return np.asarray(alice_ps, dtype=float) * (1.0 + self.clock_skew) + self.clock_offset_ps


@dataclass(frozen=True)
class DetectionEvent:
    timetag_ps: int
    detector: int


class TimeTags:
    """Time-tag stream: parallel ``timetag_ps`` (int64) and ``detector`` (int8) arrays."""

    def __init__(self, timetag_ps=(), detector=()):
        self.timetag_ps = np.asarray(timetag_ps, dtype=np.int64)
        self.detector = np.asarray(detector, dtype=np.int8)
        if self.timetag_ps.shape != self.detector.shape:
            raise ValueError("timetag and detector arrays differ in length")

    def __len__(self):
        return len(self.timetag_ps)

    def __getitem__(self, idx):
        return TimeTags(self.timetag_ps[idx], self.detector[idx])

    def sorted(self) -> "TimeTags":
        order = np.lexsort((self.detector, self.timetag_ps))
        return self[order]

    def events(self) -> list[DetectionEvent]:
        return [DetectionEvent(int(t), int(d)) for t, d in zip(self.timetag_ps, self.detector)]

    @classmethod
    def from_events(cls, events) -> "TimeTags":
        events = list(events)
        return cls([e.timetag_ps for e in events], [e.detector for e in events])

    @classmethod
    def concat(cls, parts) -> "TimeTags":
        parts = list(parts)
        if not parts:
            return cls()
        return cls(
            np.concatenate([p.timetag_ps for p in parts]),
            np.concatenate([p.detector for p in parts]),
        )


def detect_slot(
    photons: int,
    pol: PolarizationState,
    slot_time_ps: float,
    cfg: ReceiverConfig,
    rng: np.random.Generator,
    force_basis: int | None = None,
    dark_counts: bool = True,
) -> list[DetectionEvent]:
    """Photon-by-photon detection of one slot.

    Each photon picks an analyzer arm, a Born-rule outcome, and fires its
    detector with that detector's efficiency. A detector fires at most once
    per slot. ``slot_time_ps`` is in Bob's clock.
    """
    if photons < 0:
        raise ValueError("photon number must be non-negative")
    eta = cfg.eta_array
    fired = np.zeros(4, dtype=bool)
    for _ in range(photons):
        if force_basis is None:
            basis = Z if rng.random() < cfg.p_z_bob else X
        else:
            basis = force_basis
        p0 = polstate.measure_probability(pol, basis, 0)
        outcome = 0 if rng.random() < p0 else 1
        det = 2 * basis + outcome
        if rng.random() < eta[det]:
            fired[det] = True
    if dark_counts and cfg.dark_hz > 0:
        p_dark = -math.expm1(-cfg.dark_per_gate)
        fired |= rng.random(4) < p_dark
    events = []
    for det in np.flatnonzero(fired):
        t = slot_time_ps + (rng.normal(0.0, cfg.jitter_ps) if cfg.jitter_ps > 0 else 0.0)
        events.append(DetectionEvent(int(round(t)), int(det)))
    return events


def inject_dark_counts(duration_s: float, cfg: ReceiverConfig, rng: np.random.Generator, start_ps: float = 0.0) -> TimeTags:
    """Free-running dark counts on all four detectors, uniform in Bob's time."""
    if duration_s < 0:
        raise ValueError("duration must be non-negative")
    span_ps = duration_s * 1e12
    times, dets = [], []
    for det in range(4):
        n = rng.poisson(cfg.dark_hz * duration_s) if cfg.dark_hz > 0 else 0
        times.append(start_ps + rng.uniform(0.0, span_ps, size=n))
        dets.append(np.full(n, det, dtype=np.int8))
    tags = TimeTags(np.floor(np.concatenate(times)).astype(np.int64), np.concatenate(dets))
    return tags.sorted()


def balance_efficiencies(tags: TimeTags, cfg: ReceiverConfig, rng: np.random.Generator, return_mask: bool = False):
    """Randomly discard events so both detectors of a basis look equally efficient."""
    keep_p = cfg.keep_probs[tags.detector.astype(np.intp)] if len(tags) else np.zeros(0)
    keep = rng.random(len(tags)) < keep_p
    if return_mask:
        return keep
    return tags[keep]


def apply_holdoff(tags: TimeTags, holdoff_ps: float) -> TimeTags:
    """Non-paralyzable dead time per detector on a time-sorted stream."""
    if holdoff_ps <= 0 or len(tags) == 0:
        return tags
    return tags[holdoff_mask(tags.timetag_ps, tags.detector, holdoff_ps)]


def holdoff_mask(times, detectors, holdoff_ps: float) -> np.ndarray:
    keep = np.zeros(len(times), dtype=bool)
    for det in range(4):
        idx = np.flatnonzero(detectors == det)
        if idx.size == 0:
            continue
        idx = idx[np.argsort(times[idx], kind="stable")]
        t = times[idx]
        last = -math.inf
        for j, tj in enumerate(t.tolist()):
            if tj - last >= holdoff_ps:
                keep[idx[j]] = True
                last = tj
    return keep


def write_timetags(tags: TimeTags, path, binary: bool = False) -> None:
    """TDC-style dump sorted by tag: CSV ``timetag_ps,detector_id`` or packed binary."""
    tags = tags.sorted()
    if binary:
        rec = np.empty(len(tags), dtype=TIMETAG_DTYPE)
        rec["timetag_ps"] = tags.timetag_ps
        rec["detector"] = tags.detector
        rec.tofile(path)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timetag_ps", "detector_id"])
        w.writerows(zip(tags.timetag_ps.tolist(), tags.detector.tolist()))


def read_timetags(path, binary: bool = False) -> TimeTags:
    if binary:
        rec = np.fromfile(path, dtype=TIMETAG_DTYPE)
        return TimeTags(rec["timetag_ps"], rec["detector"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.size == 0:
        return TimeTags()
    return TimeTags(data[:, 0], data[:, 1].astype(np.int8))
