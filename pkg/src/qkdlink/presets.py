"""Named scenarios for the experiments the simulator reproduces."""
from __future__ import annotations

from dataclasses import replace

from .channel import ChannelConfig, with_channel_loss
from .config import ConfigError, PolcompConfig, RunParams, ScenarioConfig
from .receiver import DETECTOR_NAMES, ReceiverConfig

# drift rate and controller gain calibrated together so the loop visibly matters
LONGRUN_DRIFT_RAD_PER_S = 1e-3
SPAD_JITTER_PS = 100.0


def intrinsic_qber() -> ScenarioConfig:
    """Source floor: fiber bypassed, 11 dB attenuation, balanced receiver basis split.

    45 minutes of acquisition are compressed into 2 s (1e8 slots); the
    compression factor is recorded in ``run.time_scale``.
    """
    return ScenarioConfig(
        channel=ChannelConfig(fiber_km=0.0, voa_db=11.0),
        receiver=ReceiverConfig(p_z_bob=0.5),
        polcomp=PolcompConfig(enabled=False),
        run=RunParams(duration_s=2.0, time_scale=45 * 60 / 2.0, output_dir="out/intrinsic_qber"),
    )


def longrun_polcomp() -> ScenarioConfig:
    """Six hours at 19 dB with drifting fiber birefringence and the controller on."""
    ch = with_channel_loss(ChannelConfig(drift_rate_rad_per_s=LONGRUN_DRIFT_RAD_PER_S), 19.0)
    return ScenarioConfig(
        channel=ch,
        run=RunParams(duration_s=6 * 3600.0, fidelity="counts", output_dir="out/longrun_polcomp"),
    )


def skr_vs_loss() -> ScenarioConfig:
    """Key-rate point at paper parameters; sweep the channel loss from the CLI."""
    return ScenarioConfig(
        channel=with_channel_loss(ChannelConfig(), 40.0),
        run=RunParams(duration_s=10.0, output_dir="out/skr_vs_loss"),
    )


def spad_projection(gate_ns: float = 0.3) -> ScenarioConfig:
    """Same link with InGaAs-class detectors: more darks, low efficiency, long hold-off."""
    rx = ReceiverConfig(
        eta={d: 0.15 for d in DETECTOR_NAMES},
        dark_hz=500.0,
        holdoff_ps=20e6,
        gate_window_ps=gate_ns * 1000.0,
        jitter_ps=SPAD_JITTER_PS,
    )
    return ScenarioConfig(
        channel=with_channel_loss(ChannelConfig(), 30.0),
        receiver=rx,
        run=RunParams(duration_s=10.0, output_dir="out/spad_projection"),
    )


PRESETS = {
    "intrinsic_qber": intrinsic_qber,
    "longrun_polcomp": longrun_polcomp,
    "skr_vs_loss": skr_vs_loss,
    "spad_projection": spad_projection,
}
ALIASES = {"fig2": "intrinsic_qber", "fig3": "longrun_polcomp", "fig4": "skr_vs_loss", "spad": "spad_projection"}


def preset(name: str, loss_db=None, sync_len=None, duration_s=None, rate_hz=None, seed=None, output_dir=None, gate_ns=None) -> ScenarioConfig:
    """Named scenario with optional common overrides."""
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS) + sorted(ALIASES)}")
    cfg = PRESETS[key](gate_ns) if key == "spad_projection" and gate_ns is not None else PRESETS[key]()
    return apply_overrides(cfg, loss_db, sync_len, duration_s, rate_hz, seed, output_dir)


def apply_overrides(cfg, loss_db=None, sync_len=None, duration_s=None, rate_hz=None, seed=None, output_dir=None) -> ScenarioConfig:
    tx, ch, run = cfg.transmitter, cfg.channel, cfg.run
    if loss_db is not None:
        ch = with_channel_loss(ch, float(loss_db))
    if sync_len is not None:
        tx = replace(tx, sync_len=int(sync_len))
    if rate_hz is not None:
        tx = replace(tx, rate_hz=float(rate_hz))
    if duration_s is not None:
        run = replace(run, duration_s=float(duration_s))
    if seed is not None:
        run = replace(run, master_seed=int(seed))
    if output_dir is not None:
        run = replace(run, output_dir=str(output_dir))
    try:
        return replace(cfg, transmitter=tx, channel=ch, run=run)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
