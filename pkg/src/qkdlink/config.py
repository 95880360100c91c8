"""Scenario configuration and its INI text format.

One section per component. Unknown sections or keys are rejected with the
offending line number, so a config file always describes exactly what ran.
Per-component seeds are not configurable: they are derived from
``[run] master_seed``.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import re
from dataclasses import dataclass, field, replace

from .channel import ChannelConfig
from .keyrate import SecurityParams
from .receiver import DETECTOR_NAMES, ReceiverConfig
from .sync import SyncConfig
from .transmitter import TransmitterConfig


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based source line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class PolcompConfig:
    enabled: bool = True
    gain: float = 5.0
    max_step: float = 0.3
    min_comparisons: int = 100
    random_initial_unitary: bool = False


@dataclass(frozen=True)
class SyncParams:
    """Clock-recovery knobs; period, prefix length and gate come from the other sections."""

    corr_threshold: float = 6.0
    freq_search_ppm: float = 5.0
    max_lag_slots: int = 100_000
    min_tags: int = 1000
    min_span_ps: float = 1e9
    fold_significance: float = 12.0
    max_fold_tags: int = 50_000
    track_interval_s: float = 1.0
    track_window_s: float = 10.0


@dataclass(frozen=True)
class RunParams:
    duration_s: float = 1.0
    master_seed: int = 0
    output_dir: str = "out"
    fidelity: str = "events"
    time_scale: float = 1.0

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if self.fidelity not in ("events", "counts"):
            raise ValueError("fidelity must be 'events' or 'counts'")
        if not self.time_scale > 0:
            raise ValueError("time_scale must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    transmitter: TransmitterConfig = field(default_factory=TransmitterConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    sync: SyncParams = field(default_factory=SyncParams)
    polcomp: PolcompConfig = field(default_factory=PolcompConfig)
    security: SecurityParams = field(default_factory=SecurityParams)
    run: RunParams = field(default_factory=RunParams)

    def sync_config(self) -> SyncConfig:
        tx, rx = self.transmitter, self.receiver
        return SyncConfig(
            nominal_period_ps=tx.period_ps,
            sync_len=tx.sync_len,
            gate_window_ps=rx.gate_window_ps,
            **dataclasses.asdict(self.sync),
        )

    @property
    def output_dir(self) -> str:
        return self.run.output_dir

    @property
    def master_seed(self) -> int:
        return self.run.master_seed

    @property
    def duration_s(self) -> float:
        return self.run.duration_s


SECTIONS = ("transmitter", "channel", "receiver", "sync", "polcomp", "security", "run")
_SKIP = {"seed", "eta"}


def _section_fields(name: str, obj) -> list[tuple[str, object]]:
    out = [(f.name, getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name not in _SKIP]
    if name == "receiver":
        out += [(f"eta_{d}", obj.eta[d]) for d in DETECTOR_NAMES]
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_ini(cfg: ScenarioConfig) -> str:
    """Canonical text form; ``parse_ini(to_ini(c)) == c``."""
    buf = io.StringIO()
    for i, name in enumerate(SECTIONS):
        if i:
            buf.write("\n")
        buf.write(f"[{name}]\n")
        for key, value in _section_fields(name, getattr(cfg, name)):
            buf.write(f"{key} = {_format(value)}\n")
    return buf.getvalue()


def _line_index(text: str) -> dict:
    """(section, key) -> line number, plus (section, None) for headers."""
    index = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), n)
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        index.setdefault((section, key), n)
    return index


def _convert(text: str, like, where: str, line):
    try:
        if isinstance(like, bool):
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            try:
                return int(text)
            except ValueError:
                f = float(text)
                if not f.is_integer():
                    raise
                return int(f)
        if isinstance(like, float):
            return float(text)
        return text.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {type(like).__name__}", line) from None


def parse_ini(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse INI text on top of ``base`` (defaults when omitted)."""
    base = base or ScenarioConfig()
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from None

    updates = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        current = getattr(base, section)
        known = dict(_section_fields(section, current))
        values = {}
        eta = dict(current.eta) if section == "receiver" else None
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in {k.lower(): k for k in known}:
                raise ConfigError(f"unknown key '{key}' in [{section}]", line)
            real = {k.lower(): k for k in known}[key]
            value = _convert(raw, known[real], f"[{section}] {real}", line)
            if real.startswith("eta_"):
                eta[real[4:]] = value
            else:
                values[real] = value
        if eta is not None:
            values["eta"] = eta
        try:
            updates[section] = replace(current, **values)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {exc}", lines.get((section, None))) from None
    return replace(base, **updates)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_ini(fh.read())


def save_config(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_ini(cfg))


def override(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Apply ``section__field=value`` overrides, e.g. ``transmitter__sync_len=10**7``."""
    updates = {}
    for key, value in changes.items():
        section, _, name = key.partition("__")
        if section not in SECTIONS or not name:
            raise ConfigError(f"bad override {key!r}")
        sub = updates.get(section, getattr(cfg, section))
        if name not in {f.name for f in dataclasses.fields(sub)}:
            raise ConfigError(f"unknown field {name!r} in [{section}]")
        updates[section] = replace(sub, **{name: value})
    return replace(cfg, **updates)
