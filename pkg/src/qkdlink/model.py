"""Closed-form expected detection statistics.

For a fixed total polarization unitary, each detector sees an independent
Poisson number of photons per slot, so the probability of every click
pattern is a product of per-detector terms. The model follows the same
processing chain as the Monte Carlo pipeline (gate, efficiency balancing,
multi-click rejection, sifting) and is used for the loss sweeps, the
cut-off search, and the per-interval surrogate of the compensation loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import polstate
from .channel import transmittance, with_channel_loss
from .keyrate import CountsTable, Mode, SecurityParams, decoy_bounds, skr_asymptotic, skr_finite
from .polstate import BASIS_KETS, X, Z
from .transmitter import KEY, Schedule, TransmitterConfig

N_PHASE = 16
_ALL_KETS = BASIS_KETS.reshape(4, 2)


def _leaky_states(tx: TransmitterConfig, basis: int, bit: int) -> np.ndarray:
    """Prepared vectors over a uniform grid of leakage phases, shape (N_PHASE, 2)."""
    ideal = BASIS_KETS[basis, bit]
    eps = polstate.leakage_probability(tx.extinction_ratio_db)
    perp = np.array([-np.conj(ideal[1]), np.conj(ideal[0])])
    ph = 2 * np.pi * (np.arange(N_PHASE) + 0.5) / N_PHASE
    return math.sqrt(1 - eps) * ideal[None, :] + math.sqrt(eps) * np.exp(1j * ph)[:, None] * perp[None, :]


def detector_fire_probs(tx, ch, rx, unitary, basis, bit, mu, dead_factor=None) -> np.ndarray:
    """In-gate, post-balancing fire probability per detector, shape (N_PHASE, 4)."""
    psi = _leaky_states(tx, basis, bit) @ np.asarray(unitary).T
    born = np.abs(psi @ _ALL_KETS.conj().T) ** 2
    lam = mu * transmittance(ch) * rx.insertion_transmittance * born * rx.route_probs * rx.eta_array * rx.gate_capture
    lam = lam + rx.dark_per_gate
    fire = -np.expm1(-lam) * rx.keep_probs
    if dead_factor is not None:
        fire = fire * dead_factor
    return fire


def single_click_probs(fire: np.ndarray) -> np.ndarray:
    """Probability that exactly detector d (and no other) fires, averaged over phases."""
    none = np.prod(1 - fire, axis=1, keepdims=True)
    only = fire / (1 - fire) * none
    return only.mean(axis=0)


@dataclass
class SlotStats:
    """Per-slot probabilities for one preparation class."""

    only: np.ndarray  # exactly one detector, by detector
    any_click: float  # at least one in-gate kept click
    raw_rate: np.ndarray  # mean clicks per slot per detector before gating or balancing


def slot_stats(tx, ch, rx, unitary, basis, bit, mu, dead_factor=None) -> SlotStats:
    fire = detector_fire_probs(tx, ch, rx, unitary, basis, bit, mu, dead_factor)
    psi = _leaky_states(tx, basis, bit) @ np.asarray(unitary).T
    born = (np.abs(psi @ _ALL_KETS.conj().T) ** 2).mean(axis=0)
    raw = -np.expm1(-mu * transmittance(ch) * rx.insertion_transmittance * born * rx.route_probs * rx.eta_array)
    return SlotStats(single_click_probs(fire), float(1 - np.prod(1 - fire, axis=1).mean()), raw)


CLASSES = [(Z, 0), (Z, 1), (X, 0)]


def dead_time_factor(tx, ch, rx, unitary) -> np.ndarray | None:
    """Non-paralyzable availability ``1 / (1 + R tau)`` per detector, or None without hold-off."""
    if rx.holdoff_ps <= 0:
        return None
    rate = np.zeros(4)
    for (basis, bit), w in zip(CLASSES, (tx.p_z_alice / 2, tx.p_z_alice / 2, 1 - tx.p_z_alice)):
        for mu, p in zip(tx.intensities, tx.intensity_probs):
            rate += w * p * slot_stats(tx, ch, rx, unitary, basis, bit, mu).raw_rate
    rate = rate * tx.rate_hz + rx.dark_hz
    return 1.0 / (1.0 + rate * rx.holdoff_ps * 1e-12)


@dataclass
class ExpectedCounts:
    """Expected key-slot counts plus the public-slot comparison rates."""

    counts: dict  # CountsTable fields as floats
    t: float
    q_cross: float

    def table(self, rng: np.random.Generator | None = None) -> CountsTable:
        """Rounded expectation, or a Poisson/binomial sample when ``rng`` is given."""
        vals = {}
        for b in ("z", "x"):
            for k in ("mu1", "mu2"):
                n = self.counts[f"n_{b}_{k}"]
                m = self.counts[f"m_{b}_{k}"]
                if rng is None:
                    ni = int(round(n))
                    mi = min(int(round(m)), ni)
                else:
                    ni = int(rng.poisson(n))
                    mi = int(rng.binomial(ni, m / n)) if n > 0 else 0
                vals[f"n_{b}_{k}"] = ni
                vals[f"m_{b}_{k}"] = mi
        return CountsTable(t=self.t, **vals)


def expected_counts(tx, ch, rx, duration_s: float, unitary=None, key_fraction: float | None = None) -> ExpectedCounts:
    """Expected sifted counts on key slots over ``duration_s``."""
    unitary = polstate.IDENTITY if unitary is None else unitary
    if key_fraction is None:
        n = tx.slots_for(duration_s)
        key_fraction = Schedule(tx, n).role_counts()[KEY] / n if n >= 1 else 1.0
    n_key = tx.rate_hz * duration_s * key_fraction
    dead = dead_time_factor(tx, ch, rx, unitary)
    out = {f"{c}_{b}_{k}": 0.0 for c in ("n", "m") for b in ("z", "x") for k in ("mu1", "mu2")}
    cross_err = cross_tot = 0.0
    for k_name, mu, p in (("mu1", tx.mu1, tx.p_mu1), ("mu2", tx.mu2, tx.p_mu2)):
        for basis, bit in CLASSES:
            w = (tx.p_z_alice / 2 if basis == Z else 1 - tx.p_z_alice) * p * n_key
            only = slot_stats(tx, ch, rx, unitary, basis, bit, mu, dead).only
            same = only[2 * basis : 2 * basis + 2]
            other = only[2 * (1 - basis) : 2 * (1 - basis) + 2]
            b = "z" if basis == Z else "x"
            out[f"n_{b}_{k_name}"] += w * same.sum()
            out[f"m_{b}_{k_name}"] += w * same[1 - bit]
            cross_tot += w * other.sum()
            cross_err += w * other[1 - bit]
    return ExpectedCounts(out, duration_s, cross_err / cross_tot if cross_tot else math.nan)


def expected_qber(tx, ch, rx, unitary=None) -> tuple[float, float]:
    """Expected (Q_Z, Q_X) for a given total unitary."""
    e = expected_counts(tx, ch, rx, 1.0, unitary, key_fraction=1.0).counts
    nz = e["n_z_mu1"] + e["n_z_mu2"]
    nx = e["n_x_mu1"] + e["n_x_mu2"]
    return (e["m_z_mu1"] + e["m_z_mu2"]) / nz, (e["m_x_mu1"] + e["m_x_mu2"]) / nx


@dataclass
class CurvePoint:
    loss_db: float
    sifted_rate: float
    q_z: float
    q_x: float
    skr_inf: float
    skr_fk: float


def curve_point(tx, ch, rx, loss_db: float, duration_s: float = 1.0, sec: SecurityParams = SecurityParams()) -> CurvePoint:
    """Analytic key rates at one channel loss."""
    ch = with_channel_loss(ch, loss_db)
    table = expected_counts(tx, ch, rx, duration_s).table()
    if table.n_z == 0 or table.n_x == 0:
        return CurvePoint(loss_db, table.n_z / duration_s, table.q_z, table.q_x, 0.0, 0.0)
    b = decoy_bounds(table, tx, sec, Mode.ASYMPTOTIC)
    fb = decoy_bounds(table, tx, sec, Mode.FINITE)
    return CurvePoint(
        loss_db,
        table.n_z / duration_s,
        table.q_z,
        table.q_x,
        skr_asymptotic(b, table, sec),
        skr_finite(skr_asymptotic(fb, table, sec), duration_s, sec),
    )


def skr_inf_exact(tx, ch, rx, loss_db: float, sec: SecurityParams = SecurityParams()) -> float:
    """Asymptotic rate from unrounded expected counts (1 s normalization)."""
    e = expected_counts(tx, with_channel_loss(ch, loss_db), rx, 1.0).counts
    # scale up so rounding to integers cannot bite near the cut-off
    scale = 1e6
    vals = {k: int(round(v * scale)) for k, v in e.items()}
    for b in ("z", "x"):
        for k in ("mu1", "mu2"):
            vals[f"m_{b}_{k}"] = min(vals[f"m_{b}_{k}"], vals[f"n_{b}_{k}"])
    table = CountsTable(t=scale, **vals)
    if table.n_x == 0:
        return 0.0
    return skr_asymptotic(decoy_bounds(table, tx, sec, Mode.ASYMPTOTIC), table, sec)


def skr_cutoff_db(tx, ch, rx, lo: float = 0.0, hi: float = 80.0, tol: float = 0.01, sec: SecurityParams = SecurityParams()) -> float:
    """Largest channel loss with positive asymptotic key rate (bisection)."""
    if skr_inf_exact(tx, ch, rx, lo, sec) <= 0:
        return math.nan
    if skr_inf_exact(tx, ch, rx, hi, sec) > 0:
        return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if skr_inf_exact(tx, ch, rx, mid, sec) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class IntervalRates:
    """Expected comparisons in one feedback interval."""

    n_comp: float  # Z single clicks on compensation slots
    q_comp: float
    n_x: float  # X single clicks on key slots with Alice in X
    q_x: float


def interval_rates(tx, ch, rx, unitary, interval_s: float = 1.0) -> IntervalRates:
    """Expected public-string and X comparisons in an interval (after the prefix)."""
    slots = tx.rate_hz * interval_s
    comp_frac = tx.comp_string_len / tx.comp_period_slots if tx.comp_string_len else 0.0
    n_comp = m_comp = 0.0
    for bit in (0, 1):
        only = slot_stats(tx, ch, rx, unitary, Z, bit, tx.mu1).only
        w = slots * comp_frac / 2
        n_comp += w * only[:2].sum()
        m_comp += w * only[1 - bit]
    n_x = m_x = 0.0
    for mu, p in zip(tx.intensities, tx.intensity_probs):
        only = slot_stats(tx, ch, rx, unitary, X, 0, mu).only
        w = slots * (1 - comp_frac) * (1 - tx.p_z_alice) * p
        n_x += w * only[2:].sum()
        m_x += w * only[3]
    return IntervalRates(n_comp, m_comp / n_comp if n_comp else 0.0, n_x, m_x / n_x if n_x else 0.0)


def sample_interval(rates: IntervalRates, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """(n_z, errors_z, n_x, errors_x) drawn around the expected rates."""
    nz = int(rng.poisson(rates.n_comp))
    nx = int(rng.poisson(rates.n_x))
    return nz, int(rng.binomial(nz, rates.q_comp)), nx, int(rng.binomial(nx, rates.q_x))

