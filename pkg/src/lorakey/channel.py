"""Seeded bidirectional LoRa probing simulator.

Each probe round ``i`` consists of a confirmed uplink from the end device
(Alice) at ``t_i`` measured by the gateway (Bob), followed by the ACK at
``t_i + lag`` measured by Alice. The received power is

    L_f(t) = tx_power - pathloss(d(t)) + S(t) + F_f(t)

with ``S`` an Ornstein-Uhlenbeck (continuous-time AR(1)) shadowing process,
optionally driven by sparse jumps (building edges, LoS/NLoS changes), and ``F_f`` a weaker per-channel frequency-selective term. Each device adds
white noise, a slow non-reciprocal drift (receiver calibration wander) and
occasional impulsive spikes, and reports integer dBm.

Every random component draws from its own child stream of the run seed, so
switching hopping on or off leaves the shadowing realisation untouched.
"""

from __future__ import annotations

import ast
import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import RSSI_MAX_DBM, RSSI_MIN_DBM, AlignedProbes, ProbeRecord, RssiTrace

DEFAULT_CHANNEL_PLAN = (
    868_100_000, 868_300_000, 868_500_000, 867_100_000,
    867_300_000, 867_500_000, 867_700_000, 867_900_000,
)
PRESET_NAMES = ("outdoor_urban", "indoor", "static_chamber")
# Eve's independent component decorrelates quickly so that spurious
# correlation with the slow legitimate process stays small.
EVE_REPLICA_AR = 0.5

# path_profile -> geometry of the mobile party's trajectory
PATH_PROFILES = {
    "outdoor_urban": dict(pathloss_1m_db=38.0, exponent=2.9, waypoints_m=(70.0, 140.0, 100.0, 260.0, 180.0)),
    "indoor": dict(pathloss_1m_db=38.0, exponent=4.0, waypoints_m=(6.0, 35.0, 12.0, 45.0, 8.0)),
    "static_chamber": dict(pathloss_1m_db=31.0, exponent=2.0, waypoints_m=(2.0, 2.0)),
}

# stream ids for SeedSequence children
_STREAMS = ("shadow", "freq", "noise", "drift", "spike", "eve", "loss", "hop", "ack")


class SimConfigError(ValueError):
    pass


class ProtocolViolation(ValueError):
    def __init__(self, seq_indices):
        self.seq_indices = tuple(seq_indices)
        super().__init__(
            f"ACK frequency differs from its uplink at seq {list(self.seq_indices)}"
        )


class CausalityError(ValueError):
    """A Class A downlink appeared without a delivered uplink."""


class PerDevice(NamedTuple):
    alice: float
    bob: float
    eve: float


def _per_device(value) -> PerDevice:
    if isinstance(value, PerDevice):
        return value
    if isinstance(value, (int, float)):
        return PerDevice(float(value), float(value), float(value))
    return PerDevice(*(float(v) for v in value))


@dataclass(frozen=True)
class SimConfig:
    n_probes: int = 4000
    probe_interval_ms: int = 315
    tx_power_dbm: int = 13
    path_profile: str = "outdoor_urban"
    shadow_sigma_db: float = 6.0
    shadow_ar_coeff: float = 0.97
    shadow_jump_prob: float = 1.0
    device_noise_sigma_db: PerDevice = PerDevice(0.5, 0.5, 0.5)
    halfduplex_lag_ms: int = 50
    eve_correlation: float = 0.2
    channel_plan: tuple[int, ...] = DEFAULT_CHANNEL_PLAN
    hopping: bool = False
    packet_loss_prob: float = 0.0
    seed: int = 0
    device_drift_sigma_db: PerDevice = PerDevice(0.0, 0.0, 0.0)
    drift_ar_coeff: float = 0.999
    spike_prob: PerDevice = PerDevice(0.0, 0.0, 0.0)
    spike_db: float = 8.0
    freq_selective_sigma_db: float = 0.0
    ack_same_frequency: bool = True

    def __post_init__(self):
        for name in ("device_noise_sigma_db", "device_drift_sigma_db", "spike_prob"):
            object.__setattr__(self, name, _per_device(getattr(self, name)))
        object.__setattr__(self, "channel_plan", tuple(int(f) for f in self.channel_plan))
        self.validate()

    def validate(self):
        if self.n_probes < 2:
            raise SimConfigError("n_probes must be at least 2")
        if self.probe_interval_ms <= 0:
            raise SimConfigError("probe_interval_ms must be positive")
        if not 0 <= self.halfduplex_lag_ms < self.probe_interval_ms:
            raise SimConfigError("halfduplex_lag_ms must lie in [0, probe_interval_ms)")
        if self.path_profile not in PATH_PROFILES:
            raise SimConfigError(f"unknown path_profile {self.path_profile!r}")
        if not 0 <= self.shadow_ar_coeff < 1 or not 0 <= self.drift_ar_coeff < 1:
            raise SimConfigError("AR coefficients must lie in [0, 1)")
        if not 0 <= self.eve_correlation <= 1:
            raise SimConfigError("eve_correlation must lie in [0, 1]")
        if not 0 < self.shadow_jump_prob <= 1:
            raise SimConfigError("shadow_jump_prob must lie in (0, 1]")
        if not 0 <= self.packet_loss_prob < 1:
            raise SimConfigError("packet_loss_prob must lie in [0, 1)")
        if any(not 0 <= p <= 1 for p in self.spike_prob):
            raise SimConfigError("spike probabilities must lie in [0, 1]")
        sigmas = (
            self.shadow_sigma_db, self.spike_db, self.freq_selective_sigma_db,
            *self.device_noise_sigma_db, *self.device_drift_sigma_db,
        )
        if any(s < 0 for s in sigmas):
            raise SimConfigError("standard deviations must be non-negative")
        if not self.channel_plan or any(f <= 0 for f in self.channel_plan):
            raise SimConfigError("channel_plan must be a non-empty list of positive frequencies")
        if not self.ack_same_frequency and len(self.channel_plan) < 2:
            raise SimConfigError("a mismatched ACK frequency needs at least two channels")
        if not 0 <= self.seed < 2**64:
            raise SimConfigError("seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


@dataclass(frozen=True)
class LinkEvent:
    seq_index: int
    direction: str
    freq_hz: int
    rssi_dbm: int | None
    delivered: bool
    timestamp_ms: int = 0


@dataclass(frozen=True)
class SimulationResult:
    trace_a: RssiTrace
    trace_b: RssiTrace
    trace_e: RssiTrace
    events: tuple[LinkEvent, ...] = field(default_factory=tuple)

    def __iter__(self):
        return iter((self.trace_a, self.trace_b, self.trace_e, self.events))


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; values are Python literals, ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SimConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        lowered = value.lower()
        if lowered in ("true", "false"):
            out[key] = lowered == "true"
            continue
        try:
            parsed = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            parsed = value.strip("\"'")
        out[key] = tuple(parsed) if isinstance(parsed, list) else parsed
    return out


def config_from_mapping(values: dict, **overrides) -> SimConfig:
    known = {f.name for f in dataclasses.fields(SimConfig)}
    merged = {**values, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = set(merged) - known
    if unknown:
        raise SimConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return SimConfig(**merged)
    except TypeError as exc:
        raise SimConfigError(str(exc)) from exc


def load_preset(name: str, **overrides) -> SimConfig:
    if name not in PRESET_NAMES:
        raise SimConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    text = resources.files("lorakey.presets").joinpath(f"{name}.conf").read_text()
    return config_from_mapping(parse_config_text(text), **overrides)


def load_config(path_or_preset: str | Path, **overrides) -> SimConfig:
    """Load a preset by name or a key=value config file by path."""
    if str(path_or_preset) in PRESET_NAMES:
        return load_preset(str(path_or_preset), **overrides)
    path = Path(path_or_preset)
    if not path.is_file():
        raise SimConfigError(f"config file {path} not found")
    return config_from_mapping(parse_config_text(path.read_text()), **overrides)


def _streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(_STREAMS, children)}


def _ou_path(times_ms: np.ndarray, sigma: float, ar_per_interval: float, interval_ms: float,
             rng: np.random.Generator, width: int = 1, jump_prob: float = 1.0) -> np.ndarray:
    """Stationary AR(1)/OU samples at increasing times, ``width`` independent copies.

    With ``jump_prob < 1`` the innovations arrive as sparse jumps: over one
    ``interval_ms`` a jump happens with probability ``jump_prob`` and its size
    is scaled so the stationary standard deviation stays ``sigma``.
    """
    z = rng.standard_normal((len(times_ms), width))
    out = np.empty((len(times_ms), width))
    if sigma == 0:
        out[:] = 0.0
        return out
    out[0] = sigma * z[0]
    dt = np.diff(times_ms) / interval_ms
    rho = ar_per_interval ** dt
    innov = sigma * np.sqrt(1.0 - rho**2)
    if jump_prob < 1.0:
        p_jump = 1.0 - (1.0 - jump_prob) ** dt
        hit = rng.random((len(dt), width)) < p_jump[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(p_jump > 0, innov / np.sqrt(p_jump), 0.0)
        steps = hit * scale[:, None] * z[1:]
    else:
        steps = innov[:, None] * z[1:]
    for j in range(1, len(times_ms)):
        out[j] = rho[j - 1] * out[j - 1] + steps[j - 1]
    return out


def _ar1(n: int, sigma: float, coeff: float, rng: np.random.Generator) -> np.ndarray:
    times = np.arange(n, dtype=np.float64)
    return _ou_path(times, sigma, coeff, 1.0, rng)[:, 0]


def mean_rssi(cfg: SimConfig, times_ms: np.ndarray) -> np.ndarray:
    """Large-scale mean power along the mobile party's trajectory."""
    prof = PATH_PROFILES[cfg.path_profile]
    waypoints = np.asarray(prof["waypoints_m"], dtype=np.float64)
    duration = cfg.n_probes * cfg.probe_interval_ms
    anchors = np.linspace(0.0, duration, len(waypoints))
    dist = np.interp(times_ms, anchors, waypoints)
    pathloss = prof["pathloss_1m_db"] + 10.0 * prof["exponent"] * np.log10(dist)
    return cfg.tx_power_dbm - pathloss


def hop_sequence(cfg: SimConfig, n_uplinks: int | None = None) -> list[int]:
    """Channel of every uplink: uniform pseudo-random hops over the plan."""
    if not cfg.channel_plan:
        raise SimConfigError("empty channel plan")
    n = cfg.n_probes if n_uplinks is None else n_uplinks
    if not cfg.hopping:
        return [cfg.channel_plan[0]] * n
    rng = _streams(cfg.seed)["hop"]
    picks = rng.integers(0, len(cfg.channel_plan), n)
    return [cfg.channel_plan[i] for i in picks]


def _report(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), RSSI_MIN_DBM, RSSI_MAX_DBM).astype(np.int64)


def simulate_probing(cfg: SimConfig) -> SimulationResult:
    """Run one probing session; identical configs give identical traces."""
    cfg.validate()
    rng = _streams(cfg.seed)
    n, T, lag = cfg.n_probes, cfg.probe_interval_ms, cfg.halfduplex_lag_ms
    t_up = np.arange(n, dtype=np.int64) * T
    t_down = t_up + lag
    grid = np.empty(2 * n)
    grid[0::2], grid[1::2] = t_up, t_down

    shadow = _ou_path(grid, cfg.shadow_sigma_db, cfg.shadow_ar_coeff, T, rng["shadow"],
                      jump_prob=cfg.shadow_jump_prob)[:, 0]
    n_ch = len(cfg.channel_plan)
    freq_sel = _ou_path(grid, cfg.freq_selective_sigma_db, cfg.shadow_ar_coeff, T, rng["freq"], n_ch)
    large = mean_rssi(cfg, grid) + shadow

    ch_up = np.array(
        [cfg.channel_plan.index(f) for f in hop_sequence(cfg)], dtype=np.int64
    )
    if cfg.ack_same_frequency:
        ch_down = ch_up
    else:
        shift = rng["ack"].integers(1, n_ch, n)
        ch_down = (ch_up + shift) % n_ch

    l_up = large[0::2] + freq_sel[0::2][np.arange(n), ch_up]
    l_down = large[1::2] + freq_sel[1::2][np.arange(n), ch_down]

    noise = rng["noise"].standard_normal((3, n)) * np.array(cfg.device_noise_sigma_db)[:, None]
    drift = np.stack([
        _ar1(n, s, cfg.drift_ar_coeff, g)
        for s, g in zip(cfg.device_drift_sigma_db, rng["drift"].spawn(3))
    ])
    spike_hit = rng["spike"].random((3, n)) < np.array(cfg.spike_prob)[:, None]
    spikes = spike_hit * rng["spike"].standard_normal((3, n)) * cfg.spike_db
    impairment = noise + drift + spikes

    x_b = _report(l_up + impairment[1])
    x_a = _report(l_down + impairment[0])

    # Eve: convex mixture of the legitimate process with an independent replica
    mu, sd = l_up.mean(), l_up.std()
    replica = _ar1(n, sd, EVE_REPLICA_AR, rng["eve"])
    c = cfg.eve_correlation
    x_e = _report(mu + c * (l_up - mu) + math.sqrt(1 - c * c) * replica + impairment[2])

    up_ok = rng["loss"].random(n) >= cfg.packet_loss_prob
    down_ok = up_ok & (rng["loss"].random(n) >= cfg.packet_loss_prob)

    events, rec_a, rec_b, rec_e = [], [], [], []
    plan = cfg.channel_plan
    for i in range(n):
        f_up, f_down = plan[ch_up[i]], plan[ch_down[i]]
        events.append(LinkEvent(i, "uplink", f_up, int(x_b[i]) if up_ok[i] else None,
                                bool(up_ok[i]), int(t_up[i])))
        rec_e.append(ProbeRecord(i, int(t_up[i]), int(x_e[i]), f_up))
        if up_ok[i]:
            rec_b.append(ProbeRecord(i, int(t_up[i]), int(x_b[i]), f_up))
            events.append(LinkEvent(i, "downlink", f_down, int(x_a[i]) if down_ok[i] else None,
                                    bool(down_ok[i]), int(t_down[i])))
            if down_ok[i]:
                rec_a.append(ProbeRecord(i, int(t_down[i]), int(x_a[i]), f_down))

    return SimulationResult(
        RssiTrace("alice", rec_a), RssiTrace("bob", rec_b), RssiTrace("eve", rec_e), tuple(events)
    )


def pair_uplink_ack(events) -> AlignedProbes:
    """Pair each delivered uplink with its delivered ACK.

    Bob's sample is the uplink RSSI, Alice's the ACK RSSI. A pair whose ACK
    is on a different carrier than its uplink raises :class:`ProtocolViolation`.
    """
    uplinks, acks = {}, {}
    for ev in events:
        if not ev.delivered:
            continue
        if ev.direction == "uplink":
            uplinks[ev.seq_index] = ev
        elif ev.direction == "downlink":
            if ev.seq_index not in uplinks:
                raise CausalityError(
                    f"downlink at seq {ev.seq_index} without a delivered uplink"
                )
            acks[ev.seq_index] = ev
        else:
            raise ValueError(f"unknown direction {ev.direction!r}")
    seqs = sorted(set(uplinks) & set(acks))
    bad = [s for s in seqs if uplinks[s].freq_hz != acks[s].freq_hz]
    if bad:
        raise ProtocolViolation(bad)
    return AlignedProbes(
        np.array(seqs, dtype=np.int64),
        np.array([acks[s].rssi_dbm for s in seqs], dtype=np.int64),
        np.array([uplinks[s].rssi_dbm for s in seqs], dtype=np.int64),
    )


def apply_packet_loss(trace: RssiTrace, p: float, seed: int) -> RssiTrace:
    """Drop each record independently with probability ``p``."""
    if not 0 <= p < 1:
        raise SimConfigError("loss probability must lie in [0, 1)")
    keep = np.random.default_rng(seed).random(len(trace)) >= p
    return RssiTrace(trace.device_id, [r for r, k in zip(trace.records, keep) if k])
