"""End-to-end runs and loss sweeps.

Two fidelities share one driver loop over feedback intervals:

* ``events``: every click is simulated with the event engine, Bob locks
  his clock from the tags, and matching, compensation and sifting run on
  the synchronized stream;
* ``counts``: each interval's comparison and key counts are sampled from
  the closed-form rates in :mod:`qkdlink.model` (no clock recovery). This
  is what makes multi-hour compensation runs affordable.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model
from .channel import advance_drift, initial_state, with_channel_loss
from .config import ScenarioConfig, to_ini
from .engine import Clicks, finalize, simulate_darks, simulate_signal
from .keyrate import CountsTable, KeyRateReport, analyze, cross_basis_qber, write_report_csv
from .pipeline import AUDIT_KEYS, Audit, match
from .polcomp import CompensatorState, PolarizationController, QberSample, estimate_qber, sample_from_counts
from .rng import derive_seed, substream
from .sync import ClockSolution, ClockTracker, SyncError, synchronize
from .transmitter import KEY, Schedule, sync_string

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    clock: ClockSolution | None
    samples: list = field(default_factory=list)
    counts: CountsTable | None = None
    keyrate: KeyRateReport | None = None
    audit: Audit | None = None
    truth: dict | None = None
    q_cross: float = math.nan
    time_scale: float = 1.0
    wall_clock_s: float = 0.0
    n_slots: int = 0
    max_reversals_per_round: int = 0
    controller: PolarizationController | None = None

    def mean_qber(self) -> tuple[float, float]:
        """Mean per-interval (Q_Z, Q_X) over intervals with fresh comparisons."""
        fresh = [s for s in self.samples if not s.stale]
        if not fresh:
            return math.nan, math.nan
        return float(np.mean([s.q_z for s in fresh])), float(np.mean([s.q_x for s in fresh]))


def seeded_components(cfg: ScenarioConfig):
    """Transmitter, channel and receiver configs with seeds derived from the master seed."""
    m = cfg.master_seed
    tx = replace(cfg.transmitter, seed=derive_seed(m, "transmitter"))
    ch = replace(cfg.channel, seed=derive_seed(m, "channel"))
    rx = replace(cfg.receiver, seed=derive_seed(m, "receiver"))
    return tx, ch, rx


def scaled_channel(ch, time_scale: float):
    """Drift sped up by ``time_scale`` (compressed-time runs)."""
    return replace(
        ch,
        drift_rate_rad_per_s=ch.drift_rate_rad_per_s * time_scale,
        drift_axis_correlation_time_s=ch.drift_axis_correlation_time_s / time_scale,
    )


def interval_edges(tx, n_slots: int) -> list[int]:
    """Slot boundaries of the feedback intervals: the prefix, then one per compensation period."""
    edges = [0, min(tx.sync_len, n_slots)]
    while edges[-1] < n_slots:
        edges.append(min(edges[-1] + tx.comp_period_slots, n_slots))
    return edges


def _key_fraction(tx, lo: int, hi: int) -> float:
    n_key = Schedule(tx, hi).role_counts()[KEY] - Schedule(tx, lo).role_counts()[KEY]
    return n_key / (hi - lo)


def simulate_interval(tx, ch, rx, lo, hi, n_slots, compensator, state, drift_ch, rng_sig, rng_dark, rng_chan):
    """Clicks for slots ``[lo, hi)``; the channel drifts in ``drift_step_s`` sub-blocks."""
    sub = max(1, int(round(ch.drift_step_s * tx.rate_hz)))
    parts = []
    m = compensator @ state.unitary
    for a in range(lo, hi, sub):
        b = min(a + sub, hi)
        m = compensator @ state.unitary
        parts.append(simulate_signal(tx, ch, rx, a, b, m, rng_sig))
        state = advance_drift(state, (b - a) / tx.rate_hz, drift_ch, rng_chan)
    p = tx.period_ps
    parts.append(simulate_darks(tx, ch, rx, rx.to_bob_time((lo - 0.5) * p), rx.to_bob_time((hi - 0.5) * p), n_slots, m, rng_dark))
    return finalize(Clicks.concat(parts), rx.holdoff_ps), state


class _Accumulator:
    def __init__(self, tx, rx, n_slots, duration_s, master):
        self.tx, self.rx, self.n_slots, self.master = tx, rx, n_slots, master
        self.duration_s = duration_s
        self.counts = None
        self.audit = Audit()
        self.truth = {"vacuum": 0, "single": 0, "n_z": 0}
        self.cross = [0, 0]

    def process(self, k, clicks, tracker, previous, dt):
        m = match(clicks, tracker, self.tx, self.rx, self.n_slots, substream(self.master, "bob", k))
        table = m.key_counts(dt)
        self.counts = table if self.counts is None else self.counts + table
        self.audit.add(m.audit)
        for key, v in m.truth_z().items():
            self.truth[key] += v
        q = cross_basis_qber(m.records, m.bob_basis, m.bob_bit)
        if not math.isnan(q):
            n = int(np.sum((m.records["role"] == KEY) & (m.records["basis"] != m.bob_basis)))
            self.cross[0] += q * n
            self.cross[1] += n
        sent, meas = m.comp_comparisons()
        return estimate_qber(sent, meas, m.x_comparisons(), k, previous)


def _ready_for_sync(clicks: Clicks, hi_slot: int, sync_cfg, tx) -> bool:
    if len(clicks) < sync_cfg.min_tags:
        return False
    span = clicks.timetag_ps.max() - clicks.timetag_ps.min()
    return span >= sync_cfg.min_span_ps and hi_slot >= tx.sync_len + sync_cfg.max_lag_slots


def run_scenario(cfg: ScenarioConfig, write: bool = True) -> RunReport:
    """Run one scenario end to end; outputs go to ``cfg.run.output_dir`` when ``write``.

    Raises:
        SyncError: if the clock cannot be recovered (events fidelity).
    """
    t_start = time.perf_counter()
    tx, ch, rx = seeded_components(cfg)
    master = cfg.master_seed
    n_slots = tx.slots_for(cfg.duration_s)
    if n_slots < tx.sync_len:
        raise ValueError(f"duration holds {n_slots} slots, fewer than the {tx.sync_len}-slot sync prefix")
    duration = n_slots / tx.rate_hz
    drift_ch = scaled_channel(ch, cfg.run.time_scale)
    rng_chan = substream(master, "channel")
    state = initial_state(rng_chan, random_unitary=cfg.polcomp.random_initial_unitary)
    pc = cfg.polcomp
    ctl = PolarizationController(CompensatorState(gain=pc.gain, max_step=pc.max_step), pc.min_comparisons, pc.enabled)
    edges = interval_edges(tx, n_slots)
    report = RunReport(clock=None, time_scale=cfg.run.time_scale, n_slots=n_slots, controller=ctl)

    if cfg.run.fidelity == "counts":
        _run_counts(cfg, tx, ch, rx, edges, duration, state, drift_ch, rng_chan, ctl, report)
    else:
        _run_events(cfg, tx, ch, rx, edges, n_slots, duration, state, drift_ch, rng_chan, ctl, report)

    report.keyrate = analyze(report.counts, tx, cfg.security)
    report.max_reversals_per_round = ctl.max_reversals_per_round()
    report.wall_clock_s = time.perf_counter() - t_start
    if write:
        write_outputs(cfg, report)
    return report


def _run_events(cfg, tx, ch, rx, edges, n_slots, duration, state, drift_ch, rng_chan, ctl, report):
    master = cfg.master_seed
    sync_cfg = cfg.sync_config()
    acc = _Accumulator(tx, rx, n_slots, duration, master)
    tracker = None
    buffered = []
    previous: QberSample | None = None
    n_int = len(edges) - 1
    for k in range(n_int):
        lo, hi = edges[k], edges[k + 1]
        clicks, state = simulate_interval(
            tx, ch, rx, lo, hi, n_slots, ctl.unitary, state, drift_ch,
            substream(master, "signal", k), substream(master, "dark", k), rng_chan,
        )
        if tracker is None:
            buffered.append((k, clicks, (hi - lo) / tx.rate_hz))
            pending = Clicks.concat([c for _, c, _ in buffered])
            last = k == n_int - 1
            if not (_ready_for_sync(pending, hi, sync_cfg, tx) or last):
                continue
            try:
                report.clock = synchronize(pending.tags, sync_string(tx.sync_len), sync_cfg)
            except SyncError:
                if last:
                    raise
                continue
            tracker = ClockTracker(report.clock, sync_cfg)
            todo, buffered = buffered, []
        else:
            todo = [(k, clicks, (hi - lo) / tx.rate_hz)]
        for kk, cc, dt in todo:
            previous = acc.process(kk, cc, tracker, previous, dt)
            report.samples.append(previous)
            ctl.update(previous)
    report.counts = acc.counts
    report.audit = acc.audit
    report.truth = acc.truth
    report.q_cross = acc.cross[0] / acc.cross[1] if acc.cross[1] else math.nan


def _run_counts(cfg, tx, ch, rx, edges, duration, state, drift_ch, rng_chan, ctl, report):
    rng = substream(cfg.master_seed, "counts")
    counts = None
    previous = None
    cross_num = cross_den = 0.0
    for k in range(len(edges) - 1):
        lo, hi = edges[k], edges[k + 1]
        dt = (hi - lo) / tx.rate_hz
        # drift in sub-steps; the interval is evaluated at its midpoint
        n_sub = max(1, int(round(dt / ch.drift_step_s)))
        mid = state
        for j in range(n_sub):
            state = advance_drift(state, dt / n_sub, drift_ch, rng_chan)
            if j == (n_sub - 1) // 2:
                mid = state
        m = ctl.unitary @ mid.unitary
        exp = model.expected_counts(tx, ch, rx, dt, m, key_fraction=_key_fraction(tx, lo, hi))
        table = exp.table(rng)
        counts = table if counts is None else counts + table
        if not math.isnan(exp.q_cross):
            cross_num += exp.q_cross
            cross_den += 1
        if k == 0:
            continue  # the prefix carries no compensation string
        rates = model.interval_rates(tx, ch, rx, m, dt)
        previous = sample_from_counts(*model.sample_interval(rates, rng), k, previous)
        report.samples.append(previous)
        ctl.update(previous)
    report.counts = counts
    report.q_cross = cross_num / cross_den if cross_den else math.nan


def summary_text(cfg: ScenarioConfig, report: RunReport) -> str:
    kr = report.keyrate
    q_z, q_x = report.mean_qber()
    lines = [
        f"fidelity: {cfg.run.fidelity}",
        f"duration_s: {report.n_slots / cfg.transmitter.rate_hz!r}",
        f"slots: {report.n_slots}",
        f"time_scale: {report.time_scale!r}",
        f"channel_loss_db: {cfg.channel.loss_db!r}",
    ]
    if report.clock is not None:
        lines += [
            f"clock_period_ps: {report.clock.period_ps!r}",
            f"clock_offset_ps: {report.clock.offset_ps!r}",
            f"clock_significance: {report.clock.peak_significance!r}",
        ]
    lines += [
        f"intervals: {len(report.samples)}",
        f"mean_interval_q_z: {q_z!r}",
        f"mean_interval_q_x: {q_x!r}",
        f"cross_basis_qber: {report.q_cross!r}",
        f"max_reversals_per_round: {report.max_reversals_per_round}",
    ]
    for k, v in asdict(report.counts).items():
        lines.append(f"{k}: {v!r}")
    lines += [
        f"q_z: {kr.q_z!r}",
        f"q_x: {kr.q_x!r}",
        f"s_z0_lower: {kr.s_z0_lower!r}",
        f"s_z1_lower: {kr.s_z1_lower!r}",
        f"phi_z_upper: {kr.phi_z_upper!r}",
        f"skr_inf: {kr.skr_inf!r}",
        f"skr_fk: {kr.skr_fk!r}",
    ]
    if report.audit is not None:
        lines.append(f"audit_total: {report.audit.total}")
        lines += [f"audit_{k}: {report.audit.counts[k]}" for k in AUDIT_KEYS]
    if report.truth is not None:
        lines += [f"truth_{k}: {v}" for k, v in report.truth.items()]
    return "\n".join(lines) + "\n"


def write_outputs(cfg: ScenarioConfig, report: RunReport) -> None:
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    report.controller.write_csv(os.path.join(out, "polcomp.csv"))
    write_report_csv([report.keyrate.as_row(cfg.channel.loss_db)], os.path.join(out, "keyrate.csv"))
    clock = report.clock.as_dict() if report.clock else {"locked": False, "reason": f"{cfg.run.fidelity} fidelity"}
    clock = {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in clock.items()}
    with open(os.path.join(out, "clock.json"), "w") as fh:
        json.dump(clock, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary_text(cfg, report))
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(to_ini(cfg))


def _sweep_point(args):
    cfg, loss, seed = args
    point = replace(cfg, channel=with_channel_loss(cfg.channel, loss), run=replace(cfg.run, master_seed=seed))
    try:
        rep = run_scenario(point, write=False)
    except (SyncError, ValueError) as exc:
        log.warning("sweep point %.2f dB failed: %s", loss, exc)
        return {"loss_db": loss, "status": f"failed: {exc}", "seed": seed}
    row = rep.keyrate.as_row(loss)
    row.update(status="ok", seed=seed)
    return row


def sweep_loss(cfg: ScenarioConfig, losses_db, repetitions: int = 1, processes: int = 1, write: bool = True):
    """One run per loss value and repetition, plus analytic curves.

    Returns ``(rows, curve)``: Monte Carlo rows (dicts, with a ``status``
    column; failed points are kept and marked) and :class:`model.CurvePoint`
    values at the same losses.
    """
    losses = [float(x) for x in losses_db]
    if not losses:
        raise ValueError("empty loss list")
    jobs = [
        (cfg, loss, derive_seed(cfg.master_seed, "sweep", i, r))
        for i, loss in enumerate(losses)
        for r in range(repetitions)
    ]
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    tx, ch, rx = seeded_components(cfg)
    curve = [model.curve_point(tx, ch, rx, loss, cfg.duration_s, cfg.security) for loss in losses]
    if write:
        os.makedirs(cfg.output_dir, exist_ok=True)
        full = [{k: r.get(k, "") for k in ("loss_db", "t_s", "n_z", "q_z", "q_x", "s_z0", "s_z1", "phi_z", "skr_inf", "skr_fk", "status", "seed")} for r in rows]
        write_report_csv(full, os.path.join(cfg.output_dir, "keyrate_sweep.csv"))
        write_curve_csv(curve, os.path.join(cfg.output_dir, "model_curve.csv"))
    return rows, curve


def write_curve_csv(curve, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["loss_db", "sifted_rate", "q_z", "q_x", "skr_inf", "skr_fk"])
        for p in curve:
            w.writerow([repr(float(v)) for v in (p.loss_db, p.sifted_rate, p.q_z, p.q_x, p.skr_inf, p.skr_fk)])


def simulate_tags(cfg: ScenarioConfig, n_slots: int, unitary=None):
    """Clicks of a static-channel run of ``n_slots`` slots (no compensation)."""
    tx, ch, rx = seeded_components(cfg)
    u = np.eye(2, dtype=complex) if unitary is None else unitary
    m = cfg.master_seed
    sig = simulate_signal(tx, ch, rx, 0, n_slots, u, substream(m, "signal", 0))
    p = tx.period_ps
    dark = simulate_darks(tx, ch, rx, rx.to_bob_time(-0.5 * p), rx.to_bob_time((n_slots - 0.5) * p), n_slots, u, substream(m, "dark", 0))
    return finalize(Clicks.concat([sig, dark]), rx.holdoff_ps)


def sync_trial(cfg: ScenarioConfig, n_slots: int) -> bool:
    """Whether clock recovery locks onto the true slot grid for one static run."""
    tx, _, rx = seeded_components(cfg)
    clicks = simulate_tags(cfg, n_slots)
    try:
        sol = synchronize(clicks.tags, sync_string(tx.sync_len), cfg.sync_config())
    except SyncError:
        return False
    return abs(sol.offset_ps - rx.clock_offset_ps) < tx.period_ps / 2
