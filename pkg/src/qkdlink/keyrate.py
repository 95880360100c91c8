"""Sifting, one-decoy bounds and secret key rates.

The bounds follow the standard one-decoy treatment for two intensities
``mu1 > mu2``. Every Hoeffding deviation uses ``eps_sec / 19`` so the
finite-key penalty term and the bounds share one epsilon budget.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum

import numpy as np

from .polstate import X, Z
from .transmitter import KEY, MU1, MU2, TransmitterConfig

log = logging.getLogger(__name__)

EPS_SPLIT = 19


class Mode(str, Enum):
    ASYMPTOTIC = "asymptotic"
    FINITE = "finite"


@dataclass(frozen=True)
class CountsTable:
    """Sifted detections and errors per basis and intensity over ``t`` seconds."""

    n_z_mu1: int = 0
    n_z_mu2: int = 0
    m_z_mu1: int = 0
    m_z_mu2: int = 0
    n_x_mu1: int = 0
    n_x_mu2: int = 0
    m_x_mu1: int = 0
    m_x_mu2: int = 0
    t: float = 1.0

    def __post_init__(self):
        for basis in ("z", "x"):
            for k in ("mu1", "mu2"):
                n = getattr(self, f"n_{basis}_{k}")
                m = getattr(self, f"m_{basis}_{k}")
                if not 0 <= m <= n:
                    raise ValueError(f"need 0 <= m_{basis}_{k} <= n_{basis}_{k}, got {m}, {n}")
        if not self.t > 0:
            raise ValueError("acquisition time must be positive")

    @property
    def n_z(self):
        return self.n_z_mu1 + self.n_z_mu2

    @property
    def m_z(self):
        return self.m_z_mu1 + self.m_z_mu2

    @property
    def n_x(self):
        return self.n_x_mu1 + self.n_x_mu2

    @property
    def m_x(self):
        return self.m_x_mu1 + self.m_x_mu2

    @property
    def q_z(self) -> float:
        return self.m_z / self.n_z if self.n_z else 0.0

    @property
    def q_x(self) -> float:
        return self.m_x / self.n_x if self.n_x else 0.0

    def __add__(self, other: "CountsTable") -> "CountsTable":
        vals = {f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)}
        return CountsTable(**vals)


@dataclass(frozen=True)
class SecurityParams:
    eps_sec: float = 1e-10
    eps_conf: float = 1e-15
    f_ec: float = 1.06

    def __post_init__(self):
        if not (0 < self.eps_sec < 1 and 0 < self.eps_conf < 1):
            raise ValueError("epsilons must lie in (0, 1)")
        if self.f_ec < 1:
            raise ValueError("error-correction efficiency must be >= 1")


@dataclass(frozen=True)
class DecoyBounds:
    s_z0: float
    s_z1: float
    phi_z: float
    s_x1: float = 0.0
    v_x1: float = 0.0
    s_z0_upper: float = 0.0


@dataclass
class KeyRateReport:
    s_z0_lower: float
    s_z1_lower: float
    phi_z_upper: float
    q_z: float
    q_x: float
    skr_inf: float
    skr_fk: float | None
    tau0: float
    tau1: float
    n_z: int = 0
    t: float = 1.0
    finite: DecoyBounds | None = None

    def as_row(self, loss_db: float = math.nan) -> dict:
        return {
            "loss_db": loss_db,
            "t_s": self.t,
            "n_z": self.n_z,
            "q_z": self.q_z,
            "q_x": self.q_x,
            "s_z0": self.s_z0_lower,
            "s_z1": self.s_z1_lower,
            "phi_z": self.phi_z_upper,
            "skr_inf": self.skr_inf,
            "skr_fk": "not computed" if self.skr_fk is None else self.skr_fk,
        }


CSV_FIELDS = ("loss_db", "t_s", "n_z", "q_z", "q_x", "s_z0", "s_z1", "phi_z", "skr_inf", "skr_fk")


def write_report_csv(rows, path) -> None:
    """``rows`` are dicts from :meth:`KeyRateReport.as_row` (extra keys allowed)."""
    rows = list(rows)
    extra = [k for k in (rows[0] if rows else {}) if k not in CSV_FIELDS]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(CSV_FIELDS) + extra)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def binary_entropy(p) -> float:
    """Shannon entropy of a Bernoulli(p) variable, in bits."""
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def tau(n: int, cfg: TransmitterConfig) -> float:
    """Probability that a pulse carries exactly ``n`` photons, averaged over intensities."""
    return sum(p * math.exp(-mu) * mu**n / math.factorial(n) for mu, p in zip(cfg.intensities, cfg.intensity_probs))


def hoeffding(n: float, eps: float) -> float:
    return math.sqrt(max(n, 0.0) / 2.0 * math.log(EPS_SPLIT / eps))


def gamma_term(a: float, b: float, c: float, d: float) -> float:
    """Statistical fluctuation of the phase-error rate between two random samples."""
    if c <= 0 or d <= 0 or b <= 0 or b >= 1:
        return 0.0
    inner = (c + d) / (c * d * (1 - b) * b) * EPS_SPLIT**2 / a**2
    return math.sqrt((c + d) * (1 - b) * b / (c * d * math.log(2)) * math.log2(inner))


def _clamp(name: str, value: float, lo: float, hi: float = math.inf) -> float:
    if value < lo or value > hi:
        clamped = min(max(value, lo), hi)
        log.info("clamped %s from %.6g to %.6g", name, value, clamped)
        return clamped
    return value


def decoy_bounds(
    counts: CountsTable,
    cfg: TransmitterConfig,
    sec: SecurityParams = SecurityParams(),
    mode: Mode | str = Mode.ASYMPTOTIC,
    deviation_override: float | None = None,
) -> DecoyBounds:
    """Vacuum and single-photon lower bounds in Z and the phase-error upper bound.

    Args:
        counts: sifted counts.
        cfg: intensities and their probabilities.
        sec: security parameters.
        mode: ``ASYMPTOTIC`` uses the counts as expectations; ``FINITE``
            shifts every count by its Hoeffding deviation in the
            pessimistic direction and adds the phase-error fluctuation.
        deviation_override: if given, replaces every deviation (and the
            phase-error fluctuation) in finite mode; 0 reproduces the
            asymptotic numbers.
    """
    mode = Mode(mode)
    mu1, mu2 = cfg.mu1, cfg.mu2
    p1, p2 = cfg.p_mu1, cfg.p_mu2
    if not mu1 > mu2:
        raise ValueError("one-decoy bounds need mu1 > mu2")
    t0, t1 = tau(0, cfg), tau(1, cfg)
    finite = mode is Mode.FINITE

    def dev(n):
        if not finite:
            return 0.0
        if deviation_override is not None:
            return deviation_override
        return hoeffding(n, sec.eps_sec)

    def rescaled(n1, n2, d):
        hi = (math.exp(mu1) / p1 * (n1 + d), math.exp(mu2) / p2 * (n2 + d))
        lo = (math.exp(mu1) / p1 * (n1 - d), math.exp(mu2) / p2 * (n2 - d))
        return hi, lo

    def single_photon(n1, n2, m2, m_tot, n_tot):
        (hi1, _), (_, lo2) = rescaled(n1, n2, dev(n_tot))
        s0_up = 2 * (t0 * math.exp(mu2) / p2 * (m2 + dev(m_tot)) + dev(n_tot))
        s1 = t1 * mu1 / (mu2 * (mu1 - mu2)) * (lo2 - (mu2 / mu1) ** 2 * hi1 - (mu1**2 - mu2**2) / mu1**2 * s0_up / t0)
        return s1, s0_up

    c = counts
    (hi1, _), (_, lo2) = rescaled(c.n_z_mu1, c.n_z_mu2, dev(c.n_z))
    s_z0 = _clamp("s_z0", t0 * (mu1 * lo2 - mu2 * hi1) / (mu1 - mu2), 0.0)
    s_z1, s0_up = single_photon(c.n_z_mu1, c.n_z_mu2, c.m_z_mu2, c.m_z, c.n_z)
    s_z1 = _clamp("s_z1", s_z1, 0.0, max(c.n_z - s_z0, 0.0))
    s_x1, _ = single_photon(c.n_x_mu1, c.n_x_mu2, c.m_x_mu2, c.m_x, c.n_x)
    s_x1 = _clamp("s_x1", s_x1, 0.0)

    d_mx = dev(c.m_x)
    m_hi1 = math.exp(mu1) / p1 * (c.m_x_mu1 + d_mx)
    m_lo2 = math.exp(mu2) / p2 * (c.m_x_mu2 - d_mx)
    v_x1 = _clamp("v_x1", t1 * (m_hi1 - m_lo2) / (mu1 - mu2), 0.0)

    if s_x1 <= 0:
        phi = 0.5
        log.info("no single-photon X detections bounded; phase error set to 0.5")
    else:
        ratio = v_x1 / s_x1
        phi = ratio
        if finite:
            if deviation_override is not None:
                phi += deviation_override
            else:
                phi += gamma_term(sec.eps_sec, min(ratio, 0.5), s_z1, s_x1)
        phi = _clamp("phi_z", phi, 0.0, 0.5)
    return DecoyBounds(s_z0, s_z1, phi, s_x1, v_x1, s0_up)


def _bracket(b: DecoyBounds, counts: CountsTable, sec: SecurityParams) -> float:
    return b.s_z0 + b.s_z1 * (1 - binary_entropy(b.phi_z)) - sec.f_ec * counts.n_z * binary_entropy(min(counts.q_z, 1.0))


def skr_asymptotic(bounds: DecoyBounds, counts: CountsTable, sec: SecurityParams = SecurityParams()) -> float:
    """Secret key rate in bits/s without the finite-key penalty, clamped at 0."""
    if not counts.t > 0:
        raise ValueError("acquisition time must be positive")
    return max(0.0, _bracket(bounds, counts, sec) / counts.t)


def finite_key_penalty(sec: SecurityParams = SecurityParams()) -> float:
    """Bits removed by the finite-key analysis, independent of the block size."""
    return 6 * math.log2(EPS_SPLIT / sec.eps_sec) + math.log2(2 / sec.eps_conf)


def skr_finite(skr_inf_finite_bounds: float, t: float, sec: SecurityParams = SecurityParams()) -> float:
    """Subtract the finite-key penalty from a rate computed with finite-mode bounds."""
    if not t > 0:
        raise ValueError("acquisition time must be positive")
    return max(0.0, skr_inf_finite_bounds - finite_key_penalty(sec) / t)


def analyze(counts: CountsTable, cfg: TransmitterConfig, sec: SecurityParams = SecurityParams(), finite: bool = True) -> KeyRateReport:
    """Asymptotic bounds and rate, plus the finite-key rate when ``finite``."""
    b = decoy_bounds(counts, cfg, sec, Mode.ASYMPTOTIC)
    rep = KeyRateReport(
        s_z0_lower=b.s_z0,
        s_z1_lower=b.s_z1,
        phi_z_upper=b.phi_z,
        q_z=counts.q_z,
        q_x=counts.q_x,
        skr_inf=skr_asymptotic(b, counts, sec),
        skr_fk=None,
        tau0=tau(0, cfg),
        tau1=tau(1, cfg),
        n_z=counts.n_z,
        t=counts.t,
    )
    if finite:
        fb = decoy_bounds(counts, cfg, sec, Mode.FINITE)
        rep.finite = fb
        rep.skr_fk = skr_finite(skr_asymptotic(fb, counts, sec), counts.t, sec)
    return rep


def sift(records: np.ndarray, bob_basis, bob_bit, t: float) -> CountsTable:
    """Count table from matched single-click detections.

    Args:
        records: Alice's slot records (``RECORD_DTYPE``) aligned with Bob's events.
        bob_basis: measurement basis of each event.
        bob_bit: outcome of each event.
        t: acquisition time in seconds.
    """
    bob_basis = np.asarray(bob_basis)
    bob_bit = np.asarray(bob_bit)
    key = records["role"] == KEY
    agree = key & (records["basis"] == bob_basis)
    err = agree & (records["bit"] != bob_bit)
    out = {}
    for name, basis in (("z", Z), ("x", X)):
        for k_name, k in (("mu1", MU1), ("mu2", MU2)):
            sel = agree & (records["basis"] == basis) & (records["intensity"] == k)
            out[f"n_{name}_{k_name}"] = int(sel.sum())
            out[f"m_{name}_{k_name}"] = int((sel & err).sum())
    return CountsTable(t=t, **out)


def cross_basis_qber(records: np.ndarray, bob_basis, bob_bit) -> float:
    """Disagreement rate on key slots where Alice and Bob used different bases."""
    bob_basis = np.asarray(bob_basis)
    sel = (records["role"] == KEY) & (records["basis"] != bob_basis)
    if not sel.any():
        return math.nan
    return float(np.mean(records["bit"][sel] != np.asarray(bob_bit)[sel]))


def counts_to_dict(counts: CountsTable) -> dict:
    return asdict(counts)
