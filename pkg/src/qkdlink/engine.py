"""Vectorized discrete-event engine for the transmitter -> channel -> receiver path.

Only slots that produce at least one detector click are ever materialized.
For a block of slots with a fixed total polarization unitary ``M``:

1. Bound the per-slot detected-photon rate by ``lam_max = mu1 * T * q_max``
   and draw candidate slots as a Bernoulli(1 - exp(-lam_max)) process via
   geometric gaps.
2. For each candidate draw a zero-truncated Poisson(lam_max) number of
   potential photons and thin them onto the four detectors with the slot's
   true per-detector probabilities (intensity ratio times Born rule times
   routing times efficiency, over ``q_max``). By the Poisson splitting
   theorem the per-detector counts are exactly independent
   Poisson(mu_k * T * q_d), as in a slot-by-slot simulation.
3. The emitted photon number (ground truth for the decoy analysis) is the
   detected count plus an independent Poisson draw of the undetected ones.

Dark counts are independent Poisson processes in Bob's clock.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import polstate
from .channel import ChannelConfig, transmittance
from .polstate import BASIS_KETS
from .receiver import FWHM_TO_SIGMA, ReceiverConfig, TimeTags, holdoff_mask
from .rng import hash_uniform, name_key
from .transmitter import TransmitterConfig, slot_records

SIGNAL, DARK = 0, 1

_ALL_KETS = BASIS_KETS.reshape(4, 2)  # detector order Z0, Z1, Xp, Xm


@dataclass
class Clicks:
    """Detector clicks with their ground truth, aligned element by element."""

    timetag_ps: np.ndarray
    detector: np.ndarray
    slot: np.ndarray  # true slot (nearest slot for darks)
    origin: np.ndarray  # SIGNAL or DARK
    photons: np.ndarray  # photons emitted by Alice in ``slot``

    @classmethod
    def empty(cls) -> "Clicks":
        return cls(
            np.zeros(0, np.int64), np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(0, np.int8), np.zeros(0, np.int32)
        )

    def __len__(self):
        return len(self.timetag_ps)

    def take(self, idx) -> "Clicks":
        return Clicks(self.timetag_ps[idx], self.detector[idx], self.slot[idx], self.origin[idx], self.photons[idx])

    @classmethod
    def concat(cls, parts) -> "Clicks":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("timetag_ps", "detector", "slot", "origin", "photons")))

    @property
    def tags(self) -> TimeTags:
        return TimeTags(self.timetag_ps, self.detector)


def prepared_vectors(tx: TransmitterConfig, basis, bit, phase=None) -> np.ndarray:
    """Jones vectors of prepared pulses, with extinction-ratio leakage if ``phase`` is given."""
    ideal = BASIS_KETS[np.asarray(basis, dtype=np.intp), np.asarray(bit, dtype=np.intp)]
    if phase is None:
        return ideal
    eps = polstate.leakage_probability(tx.extinction_ratio_db)
    if eps == 0:
        return ideal
    perp = np.stack([-np.conj(ideal[:, 1]), np.conj(ideal[:, 0])], axis=1)
    return np.sqrt(1 - eps) * ideal + np.sqrt(eps) * np.exp(1j * np.asarray(phase))[:, None] * perp


def born_matrix(vectors: np.ndarray) -> np.ndarray:
    """Outcome probabilities for each detector, shape (n, 4)."""
    amps = vectors @ _ALL_KETS.conj().T
    return np.abs(amps) ** 2


def q_max(rx: ReceiverConfig) -> float:
    eta = rx.eta_array
    return rx.p_z_bob * max(eta[0], eta[1]) + (1 - rx.p_z_bob) * max(eta[2], eta[3])


def total_transmittance(ch: ChannelConfig, rx: ReceiverConfig) -> float:
    return transmittance(ch) * rx.insertion_transmittance


def bernoulli_positions(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices in [0, n) of successes of n Bernoulli(p) trials."""
    if p <= 0 or n <= 0:
        return np.zeros(0, dtype=np.int64)
    if p >= 0.05:
        chunks = []
        for lo in range(0, n, 1 << 24):
            m = min(1 << 24, n - lo)
            chunks.append(lo + np.flatnonzero(rng.random(m) < p))
        return np.concatenate(chunks).astype(np.int64)
    out = []
    pos = -1
    expected = n * p
    while True:
        size = int(expected + 6 * np.sqrt(expected) + 16)
        gaps = rng.geometric(p, size=size)
        idx = pos + np.cumsum(gaps)
        out.append(idx[idx < n])
        if idx[-1] >= n:
            break
        pos = int(idx[-1])
        expected = (n - pos) * p
    return np.concatenate(out).astype(np.int64)


def zero_truncated_poisson(lam: float, size: int, rng: np.random.Generator) -> np.ndarray:
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    p0 = np.exp(-lam)
    u = p0 + rng.random(size) * (1.0 - p0)
    k = stats.poisson.ppf(u, lam)
    return np.maximum(np.nan_to_num(k, nan=1.0), 1).astype(np.int64)


def simulate_signal(
    tx: TransmitterConfig,
    ch: ChannelConfig,
    rx: ReceiverConfig,
    slot_start: int,
    slot_stop: int,
    unitary: np.ndarray,
    rng: np.random.Generator,
) -> Clicks:
    """Photon clicks for slots ``[slot_start, slot_stop)`` under a fixed total unitary."""
    T = total_transmittance(ch, rx)
    qm = q_max(rx)
    lam_max = tx.mu1 * T * qm
    cand = slot_start + bernoulli_positions(slot_stop - slot_start, -np.expm1(-lam_max), rng)
    if cand.size == 0:
        return Clicks.empty()

    rec = slot_records(tx, cand)
    mu = np.where(rec["intensity"] == 0, tx.mu1, tx.mu2)
    phase = rng.uniform(0.0, 2 * np.pi, size=cand.size)
    psi = prepared_vectors(tx, rec["basis"], rec["bit"], phase) @ np.asarray(unitary).T
    q = born_matrix(psi) * (rx.route_probs * rx.eta_array)
    weights = (mu / tx.mu1)[:, None] * q / qm

    n_pot = zero_truncated_poisson(lam_max, cand.size, rng)
    owner = np.repeat(np.arange(cand.size), n_pot)
    cum = np.cumsum(weights, axis=1)[owner]
    det = (rng.random(owner.size)[:, None] >= cum).sum(axis=1)
    hit = det < 4
    owner, det = owner[hit], det[hit]
    detected = np.bincount(owner, minlength=cand.size)
    undetected = rng.poisson(mu * (1.0 - T * q.sum(axis=1)))
    photons = (detected + undetected).astype(np.int32)

    key = np.unique(owner * 4 + det)
    c_owner, c_det = key // 4, (key % 4).astype(np.int8)
    n = key.size
    alice_t = cand[c_owner] * tx.period_ps + rng.normal(0.0, rx.pulse_fwhm_ps * FWHM_TO_SIGMA, size=n)
    bob_t = rx.to_bob_time(alice_t)
    if rx.jitter_ps > 0:
        bob_t = bob_t + rng.normal(0.0, rx.jitter_ps, size=n)
    return Clicks(
        np.round(bob_t).astype(np.int64),
        c_det,
        cand[c_owner],
        np.full(n, SIGNAL, np.int8),
        photons[c_owner],
    )


def undetected_mean(tx: TransmitterConfig, ch: ChannelConfig, rx: ReceiverConfig, rec, unitary) -> np.ndarray:
    """Mean of the photons emitted in slots whose photons all went undetected."""
    mu = np.where(rec["intensity"] == 0, tx.mu1, tx.mu2)
    eps = polstate.leakage_probability(tx.extinction_ratio_db)
    ideal = prepared_vectors(tx, rec["basis"], rec["bit"])
    perp = np.stack([-np.conj(ideal[:, 1]), np.conj(ideal[:, 0])], axis=1)
    u = np.asarray(unitary).T
    born = (1 - eps) * born_matrix(ideal @ u) + eps * born_matrix(perp @ u)
    q = (born * (rx.route_probs * rx.eta_array)).sum(axis=1)
    return mu * (1.0 - total_transmittance(ch, rx) * q)


def simulate_darks(
    tx: TransmitterConfig,
    ch: ChannelConfig,
    rx: ReceiverConfig,
    bob_start_ps: float,
    bob_stop_ps: float,
    n_slots: int,
    unitary: np.ndarray,
    rng: np.random.Generator,
) -> Clicks:
    """Dark counts in Bob's time window, tagged with the slot they fall nearest to."""
    span = bob_stop_ps - bob_start_ps
    if rx.dark_hz <= 0 or span <= 0:
        return Clicks.empty()
    counts = rng.poisson(rx.dark_hz * span * 1e-12, size=4)
    det = np.repeat(np.arange(4, dtype=np.int8), counts)
    t = bob_start_ps + rng.random(det.size) * span
    alice_t = (t - rx.clock_offset_ps) / (1.0 + rx.clock_skew)
    slot = np.round(alice_t / tx.period_ps).astype(np.int64)
    photons = np.zeros(det.size, np.int32)
    inside = (slot >= 0) & (slot < n_slots)
    if inside.any():
        rec = slot_records(tx, slot[inside])
        lam = undetected_mean(tx, ch, rx, rec, unitary)
        u = hash_uniform(name_key(tx.seed, "vacuum-photons"), slot[inside])
        photons[inside] = stats.poisson.ppf(u, lam).astype(np.int32)
    return Clicks(np.floor(t).astype(np.int64), det, slot, np.full(det.size, DARK, np.int8), photons)


def finalize(clicks: Clicks, holdoff_ps: float = 0.0) -> Clicks:
    """Sort by time, reconcile dark/signal coincidences, apply dead time."""
    if len(clicks) == 0:
        return clicks
    order = np.lexsort((clicks.detector, clicks.timetag_ps))
    clicks = clicks.take(order)
    sig = clicks.origin == SIGNAL
    if sig.any() and (~sig).any():
        sig_slots = clicks.slot[sig]
        sig_ph = clicks.photons[sig]
        srt = np.argsort(sig_slots, kind="stable")
        sig_slots, sig_ph = sig_slots[srt], sig_ph[srt]
        dark_idx = np.flatnonzero(~sig)
        pos = np.searchsorted(sig_slots, clicks.slot[dark_idx])
        pos_c = np.minimum(pos, sig_slots.size - 1)
        same = sig_slots[pos_c] == clicks.slot[dark_idx]
        clicks.photons[dark_idx[same]] = sig_ph[pos_c[same]]
    # a detector fires once per slot: drop a dark that lands on an already-firing detector
    key = clicks.slot * 4 + clicks.detector
    _, first = np.unique(key, return_index=True)
    if first.size != len(clicks):
        keep = np.zeros(len(clicks), dtype=bool)
        keep[first] = True
        clicks = clicks.take(keep)
    if holdoff_ps > 0:
        clicks = clicks.take(holdoff_mask(clicks.timetag_ps, clicks.detector, holdoff_ps))
    return clicks
