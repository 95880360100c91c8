"""Clock recovery from detection time tags alone.

Two steps, both in post-processing:

* the slot period in Bob's clock, found by maximizing the phase coherence
  of the tags folded modulo a trial period (coarse-to-fine over growing
  time spans);
* the absolute slot index, found by cross-correlating the decoded Z bits
  with the public string sent in the first ``sync_len`` slots.

After lock, :func:`assign_slots` maps every tag to a slot and keeps
re-fitting the period and offset on a sliding window of gated tags.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np
from scipy import fft as sfft
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator, TransformerMixin

from .receiver import DETECTOR_BASIS, DETECTOR_OUTCOME, TimeTags

log = logging.getLogger(__name__)

ERASURE = -1


class SyncError(RuntimeError):
    """Raised when no clock solution can be established."""


@dataclass(frozen=True)
class SyncConfig:
    nominal_period_ps: float = 20000.0
    sync_len: int = 1_000_000
    corr_threshold: float = 6.0
    freq_search_ppm: float = 5.0
    gate_window_ps: float = 600.0
    max_lag_slots: int = 100_000
    min_tags: int = 1000
    min_span_ps: float = 1e9
    fold_significance: float = 12.0
    max_fold_tags: int = 50_000
    track_interval_s: float = 1.0
    track_window_s: float = 10.0

    def __post_init__(self):
        if self.sync_len < 1:
            raise ValueError("sync_len must be at least 1")
        if not self.corr_threshold > 0:
            raise ValueError("corr_threshold must be positive")
        if not self.nominal_period_ps > 0 or not self.gate_window_ps > 0:
            raise ValueError("period and gate window must be positive")


@dataclass(frozen=True)
class ClockSolution:
    period_ps: float
    offset_ps: float
    peak_significance: float
    lag: int = 0

    def __post_init__(self):
        object.__setattr__(self, "period_ps", float(self.period_ps))
        object.__setattr__(self, "offset_ps", float(self.offset_ps))
        object.__setattr__(self, "peak_significance", float(self.peak_significance))
        object.__setattr__(self, "lag", int(self.lag))

    def as_dict(self) -> dict:
        return asdict(self)


def _times(tags) -> np.ndarray:
    if isinstance(tags, TimeTags):
        return tags.timetag_ps
    return np.asarray(tags)


def _coherence(t: np.ndarray, freqs: np.ndarray, chunk: int = 1 << 22) -> np.ndarray:
    """|mean(exp(2 pi i f t))| for each trial frequency (t relative to the first tag)."""
    out = np.empty(freqs.size)
    step = max(1, chunk // max(t.size, 1))
    for lo in range(0, freqs.size, step):
        f = freqs[lo : lo + step]
        ph = np.outer(f, t)
        ph -= np.floor(ph)
        out[lo : lo + step] = np.abs(np.exp(2j * np.pi * ph).mean(axis=1))
    return out


def _subsample(t: np.ndarray, n: int) -> np.ndarray:
    if t.size <= n:
        return t
    return t[np.linspace(0, t.size - 1, n).astype(np.int64)]


def estimate_period(tags, cfg: SyncConfig) -> float:
    """Slot period in Bob's clock (ps) from the folding coherence of the tags."""
    t_abs = np.sort(_times(tags).astype(np.int64))
    if t_abs.size < cfg.min_tags:
        raise SyncError(f"insufficient tags for frequency recovery ({t_abs.size} < {cfg.min_tags})")
    t = (t_abs - t_abs[0]).astype(np.float64)
    total = t[-1]
    if total < cfg.min_span_ps:
        raise SyncError(f"tags span {total:.3g} ps, below the required {cfg.min_span_ps:.3g} ps")

    f0 = 1.0 / cfg.nominal_period_ps
    f_lo = f0 / (1 + cfg.freq_search_ppm * 1e-6)
    f_hi = f0 / (1 - cfg.freq_search_ppm * 1e-6)

    # initial span: enough tags for the fold to be significant over the full search range
    n_first = min(t.size, 512)
    best = None
    while True:
        span = max(t[n_first - 1], min(total, cfg.min_span_ps))
        sub = _subsample(t[t <= span], cfg.max_fold_tags)
        f_best, z, cells = _fold_search(sub, span, f_lo, f_hi)
        if z >= math.log(max(cells, 1.0)) + cfg.fold_significance:
            best = f_best
            break
        if n_first >= t.size:
            raise SyncError(f"no significant folding peak (Rayleigh statistic {z:.1f} over {cells:.0f} cells)")
        n_first = min(t.size, n_first * 4)

    while span < total:
        width = 2.0 / span
        span = min(total, span * 8)
        sub = _subsample(t[t <= span], cfg.max_fold_tags)
        best, _, _ = _fold_search(sub, span, best - width, best + width)

    sub = _subsample(t, max(cfg.max_fold_tags, 200_000))
    best, _ = _refine(sub, best, 1.0 / (8 * total))
    return 1.0 / best


def _refine(t: np.ndarray, f_center: float, half_width: float):
    """Bounded 1-D maximization of the coherence, in units of ``half_width``."""
    res = minimize_scalar(
        lambda u: -_coherence(t, np.array([f_center + u * half_width]))[0],
        bounds=(-1.0, 1.0),
        method="bounded",
        options={"xatol": 1e-4},
    )
    c0 = _coherence(t, np.array([f_center]))[0]
    if -res.fun > c0:
        return f_center + res.x * half_width, -res.fun
    return f_center, c0


def _fold_search(t: np.ndarray, span: float, f_lo: float, f_hi: float):
    step = 1.0 / (6.0 * span)
    n = max(3, int(math.ceil((f_hi - f_lo) / step)) + 1)
    grid = np.linspace(f_lo, f_hi, n)
    coh = _coherence(t, grid)
    k = int(np.argmax(coh))
    f_best, c_best = _refine(t, grid[k], step)
    if c_best < coh[k]:
        f_best, c_best = grid[k], coh[k]
    cells = (f_hi - f_lo) * span
    return f_best, t.size * c_best**2, cells


def fold_phase(tags, period_ps: float) -> tuple[float, float]:
    """Mean arrival phase (ps after the first tag, modulo the period) and coherence."""
    t_abs = np.sort(_times(tags).astype(np.int64))
    t = (t_abs - t_abs[0]).astype(np.float64)
    ph = t / period_ps
    ph -= np.floor(ph)
    m = np.exp(2j * np.pi * ph).mean()
    return (np.angle(m) / (2 * np.pi)) % 1.0 * period_ps, float(abs(m))


def grid_reference(tags, period_ps: float) -> float:
    """Bob-clock time of the slot centre nearest the first tag."""
    t_abs = np.sort(_times(tags).astype(np.int64))
    phase, _ = fold_phase(t_abs, period_ps)
    if phase > period_ps / 2:
        phase -= period_ps
    return float(t_abs[0]) + phase


def decode_slot_bits(tags: TimeTags, period_ps: float, cfg: SyncConfig, reference_ps: float | None = None):
    """Relative slot index and Z bit (or ``ERASURE``) of every tag.

    Slot 0 is the slot nearest ``reference_ps`` (default: the grid point
    nearest Bob's first detection). Tags outside the gate window and X-basis
    tags are erasures.
    """
    if reference_ps is None:
        reference_ps = grid_reference(tags, period_ps) if len(tags) else 0.0
    x = (tags.timetag_ps.astype(np.float64) - reference_ps) / period_ps
    rel = np.rint(x).astype(np.int64)
    resid = (x - rel) * period_ps
    in_gate = np.abs(resid) <= cfg.gate_window_ps / 2
    det = tags.detector.astype(np.intp)
    values = np.where(in_gate & (DETECTOR_BASIS[det] == 0), DETECTOR_OUTCOME[det], ERASURE).astype(np.int8)
    return rel, values


def _sequence(rel, values, length: int) -> np.ndarray:
    b = np.zeros(length)
    ok = (values != ERASURE) & (rel >= 0) & (rel < length)
    # +1 for bit 0, -1 for bit 1; colliding entries in one slot are summed
    np.add.at(b, rel[ok], 1.0 - 2.0 * values[ok])
    return b


def _lag_range(rel, values, public_string, cfg: SyncConfig):
    L = len(public_string)
    length = int(min(max(int(rel.max()) + 1 if rel.size else 1, 1), L + cfg.max_lag_slots))
    lags = np.arange(-(L - 1), min(cfg.max_lag_slots, length - 1) + 1)
    return length, lags


def _significance(c: np.ndarray) -> tuple[int, float]:
    k = int(np.argmax(c))
    rest = np.delete(c, k)
    sd = rest.std()
    if rest.size == 0 or sd == 0:
        return k, 0.0
    return k, float((c[k] - rest.mean()) / sd)


def correlate_fft(rel, values, public_string, cfg: SyncConfig):
    """Cross-correlation for every candidate lag, via FFT."""
    s = 1.0 - 2.0 * np.asarray(public_string, dtype=np.float64)
    length, lags = _lag_range(rel, values, public_string, cfg)
    b = _sequence(rel, values, length)
    n = sfft.next_fast_len(length + len(s) - 1, real=True)
    c = sfft.irfft(sfft.rfft(b, n) * np.conj(sfft.rfft(s, n)), n)
    return lags, np.rint(c[lags % n])


def find_offset(rel, values, public_string, cfg: SyncConfig, period_ps: float = math.nan, reference_ps: float = 0.0) -> ClockSolution:
    """Locate slot 0 among Bob's decoded bits.

    The returned ``lag`` is the relative index of Alice's slot 0, so
    ``offset_ps = reference_ps + lag * period_ps``.
    """
    rel = np.asarray(rel, dtype=np.int64)
    values = np.asarray(values, dtype=np.int8)
    lags, c = correlate_fft(rel, values, public_string, cfg)
    k, sig = _significance(c)
    if not sig >= cfg.corr_threshold:
        raise SyncError(f"correlation peak significance {sig:.2f} below threshold {cfg.corr_threshold}")
    lag = int(lags[k])
    return ClockSolution(period_ps, reference_ps + lag * period_ps, sig, lag)


def brute_force_offset(rel, values, public_string, cfg: SyncConfig) -> int:
    """Direct O(L*M) correlation scan; test oracle for :func:`find_offset`."""
    rel = np.asarray(rel, dtype=np.int64)
    values = np.asarray(values, dtype=np.int8)
    s = 1.0 - 2.0 * np.asarray(public_string, dtype=np.float64)
    L = s.size
    length, lags = _lag_range(rel, values, public_string, cfg)
    b = _sequence(rel, values, length)
    c = np.empty(lags.size)
    for i, lag in enumerate(lags):
        lo = max(0, -lag)
        hi = min(L, length - lag)
        c[i] = np.dot(s[lo:hi], b[lo + lag : hi + lag]) if hi > lo else 0.0
    k, sig = _significance(c)
    if not sig >= cfg.corr_threshold:
        raise SyncError(f"correlation peak significance {sig:.2f} below threshold {cfg.corr_threshold}")
    return int(lags[k])


def synchronize(tags: TimeTags, public_string, cfg: SyncConfig) -> ClockSolution:
    """Period, then absolute offset, from raw tags."""
    tags = tags.sorted()
    period = estimate_period(tags, cfg)
    ref = grid_reference(tags, period)
    # only tags that can overlap the prefix take part in the correlation
    horizon = ref + (len(public_string) + cfg.max_lag_slots) * period
    early = tags[tags.timetag_ps <= horizon]
    rel, values = decode_slot_bits(early, period, cfg, reference_ps=ref)
    sol = find_offset(rel, values, public_string, cfg, period_ps=period, reference_ps=ref)
    log.debug("clock lock: period %.6f ps, offset %.1f ps, significance %.1f", sol.period_ps, sol.offset_ps, sol.peak_significance)
    return sol


class ClockTracker:
    """Streaming slot assignment with periodic re-fitting of period and offset.

    Tags are fed in time order through :meth:`assign`. They are processed in
    ``track_interval_s`` chunks; after each chunk the period and offset are
    re-fitted by least squares on the gated tags of the last
    ``track_window_s``.
    """

    def __init__(self, solution: ClockSolution, cfg: SyncConfig):
        self.cfg = cfg
        self.period_ps = float(solution.period_ps)
        self.offset_ps = float(solution.offset_ps)
        self._window = deque(maxlen=max(1, int(round(cfg.track_window_s / cfg.track_interval_s))))
        self._chunk_ps = cfg.track_interval_s * 1e12
        self._chunk_start = None
        self._pending = []

    def assign(self, tags: TimeTags):
        """Slot index, residual (ps) and in-gate flag for each tag (input order kept)."""
        t = tags.timetag_ps
        n = t.size
        slots = np.zeros(n, dtype=np.int64)
        resid = np.zeros(n)
        if n == 0:
            return slots, resid, np.zeros(0, dtype=bool)
        order = np.argsort(t, kind="stable")
        ts = t[order].astype(np.float64)
        if self._chunk_start is None:
            self._chunk_start = ts[0]
        lo = 0
        while lo < n:
            chunk_end = self._chunk_start + self._chunk_ps
            hi = int(np.searchsorted(ts, chunk_end, side="left"))
            x = (ts[lo:hi] - self.offset_ps) / self.period_ps
            k = np.rint(x).astype(np.int64)
            slots[order[lo:hi]] = k
            r = (x - k) * self.period_ps
            resid[order[lo:hi]] = r
            gated = np.abs(r) <= self.cfg.gate_window_ps / 2
            self._pending.append((k[gated], ts[lo:hi][gated]))
            if hi < n:
                # chunk complete: refit, then move to the chunk holding the next tag
                self._close_chunk()
                skip = math.floor((ts[hi] - self._chunk_start) / self._chunk_ps)
                self._chunk_start += max(skip, 1) * self._chunk_ps
            lo = hi
        return slots, resid, np.abs(resid) <= self.cfg.gate_window_ps / 2

    def _close_chunk(self):
        ks = np.concatenate([p[0] for p in self._pending])
        tw = np.concatenate([p[1] for p in self._pending])
        self._pending = []
        self._window.append((ks, tw))
        ks = np.concatenate([w[0] for w in self._window])
        tw = np.concatenate([w[1] for w in self._window])
        if ks.size < 20 or ks.max() == ks.min():
            return
        k0 = ks.mean()
        xr = ks - k0
        yr = tw - (self.offset_ps + self.period_ps * ks)
        slope = np.dot(xr, yr - yr.mean()) / np.dot(xr, xr)
        self.period_ps += slope
        self.offset_ps += yr.mean() - slope * k0


def assign_slots(tags: TimeTags, solution: ClockSolution, cfg: SyncConfig):
    """Absolute slot index, residual (ps) and in-gate flag for every tag."""
    return ClockTracker(solution, cfg).assign(tags)


class Qubit4Sync(BaseEstimator, TransformerMixin):
    """Estimator wrapper: ``fit(tags, public_string)`` locks, ``transform(tags)`` maps tags to slots."""

    def __init__(
        self,
        nominal_period_ps=20000.0,
        sync_len=1_000_000,
        corr_threshold=6.0,
        freq_search_ppm=5.0,
        gate_window_ps=600.0,
        max_lag_slots=100_000,
        min_tags=1000,
        min_span_ps=1e9,
        track_interval_s=1.0,
        track_window_s=10.0,
    ):
        self.nominal_period_ps = nominal_period_ps
        self.sync_len = sync_len
        self.corr_threshold = corr_threshold
        self.freq_search_ppm = freq_search_ppm
        self.gate_window_ps = gate_window_ps
        self.max_lag_slots = max_lag_slots
        self.min_tags = min_tags
        self.min_span_ps = min_span_ps
        self.track_interval_s = track_interval_s
        self.track_window_s = track_window_s

    def config(self) -> SyncConfig:
        return SyncConfig(**self.get_params())

    def fit(self, tags, public_string):
        public_string = np.asarray(public_string)
        if public_string.size != self.sync_len:
            raise ValueError(f"public string has {public_string.size} bits, expected sync_len={self.sync_len}")
        self.solution_ = synchronize(tags, public_string, self.config())
        return self

    def transform(self, tags):
        """Return an (n, 3) array: slot index, residual in ps, in-gate flag."""
        if not hasattr(self, "solution_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("Qubit4Sync is not fitted")
        slots, resid, gate = assign_slots(tags, self.solution_, self.config())
        return np.column_stack([slots, resid, gate])


def sync_config_from_estimator(est: Qubit4Sync) -> SyncConfig:
    return est.config()
