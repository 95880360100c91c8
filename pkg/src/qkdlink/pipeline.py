"""Bob's post-processing of synchronized detections.

Order: gate, efficiency balancing, multi-click rejection, role lookup,
sifting. Every input click ends up in exactly one audit category.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Clicks
from .keyrate import CountsTable, sift
from .polstate import X, Z
from .receiver import DETECTOR_BASIS, DETECTOR_OUTCOME, ReceiverConfig
from .sync import ClockTracker
from .transmitter import COMP, KEY, SYNC, TransmitterConfig, slot_records

AUDIT_KEYS = ("gated_out", "balanced_out", "multi_click", "out_of_schedule", "public", "basis_mismatch", "sifted")


@dataclass
class Audit:
    total: int = 0
    counts: dict = field(default_factory=lambda: dict.fromkeys(AUDIT_KEYS, 0))

    def add(self, other: "Audit") -> None:
        self.total += other.total
        for k in AUDIT_KEYS:
            self.counts[k] += other.counts[k]

    def balanced(self) -> bool:
        return self.total == sum(self.counts.values())


@dataclass
class Matched:
    """Single-click detections that survived gating and balancing, with Alice's records."""

    slot: np.ndarray
    detector: np.ndarray
    records: np.ndarray
    photons: np.ndarray
    audit: Audit

    @property
    def bob_basis(self):
        return DETECTOR_BASIS[self.detector.astype(np.intp)]

    @property
    def bob_bit(self):
        return DETECTOR_OUTCOME[self.detector.astype(np.intp)]

    def key_counts(self, t: float) -> CountsTable:
        return sift(self.records, self.bob_basis, self.bob_bit, t)

    def comp_comparisons(self):
        """(sent, measured) bits of compensation slots measured in Z."""
        sel = (self.records["role"] == COMP) & (self.bob_basis == Z)
        return self.records["bit"][sel], self.bob_bit[sel]

    def x_comparisons(self):
        """Bob's X outcomes on key slots where Alice also used X."""
        sel = (self.records["role"] == KEY) & (self.records["basis"] == X) & (self.bob_basis == X)
        return self.bob_bit[sel]

    def truth_z(self) -> dict:
        """True vacuum and single-photon origin of sifted Z detections."""
        sel = (self.records["role"] == KEY) & (self.records["basis"] == Z) & (self.bob_basis == Z)
        ph = self.photons[sel]
        return {"vacuum": int(np.sum(ph == 0)), "single": int(np.sum(ph == 1)), "n_z": int(sel.sum())}


def match(
    clicks: Clicks,
    tracker: ClockTracker,
    tx: TransmitterConfig,
    rx: ReceiverConfig,
    n_slots: int,
    rng: np.random.Generator,
) -> Matched:
    """Assign slots with ``tracker`` and run the processing chain.

    ``photons`` in the result is ground truth for the assigned slot when the
    assignment is correct; it is only used by soundness checks.
    """
    audit = Audit(total=len(clicks))
    slots, _, in_gate = tracker.assign(clicks.tags)
    det = clicks.detector.astype(np.intp)
    keep = rng.random(len(clicks)) < rx.keep_probs[det]

    audit.counts["gated_out"] = int(np.sum(~in_gate))
    audit.counts["balanced_out"] = int(np.sum(in_gate & ~keep))
    cand = np.flatnonzero(in_gate & keep)

    _, inverse, counts = np.unique(slots[cand], return_inverse=True, return_counts=True)
    single = counts[inverse] == 1
    audit.counts["multi_click"] = int(np.sum(~single))
    cand = cand[single]

    inside = (slots[cand] >= 0) & (slots[cand] < n_slots)
    audit.counts["out_of_schedule"] = int(np.sum(~inside))
    cand = cand[inside]

    records = slot_records(tx, slots[cand])
    public = np.isin(records["role"], (SYNC, COMP))
    bob_basis = DETECTOR_BASIS[det[cand]]
    agree = records["basis"] == bob_basis
    audit.counts["public"] = int(public.sum())
    audit.counts["basis_mismatch"] = int(np.sum(~public & ~agree))
    audit.counts["sifted"] = int(np.sum(~public & agree))
    # a true slot differing from the assigned one means the truth is not that slot's
    photons = np.where(clicks.slot[cand] == slots[cand], clicks.photons[cand], -1)
    return Matched(slots[cand], clicks.detector[cand], records, photons, audit)
