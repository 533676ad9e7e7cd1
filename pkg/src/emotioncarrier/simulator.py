"""Seeded synthetic sessions and multi-session cohorts.

Each channel follows ``baseline + drift_amplitude * exp(-t / drift_tau_s)`` plus
Gaussian noise whose standard deviation decays from ``noise_sigma0`` toward
``noise_sigma0 * noise_floor_fraction`` with time constant ``noise_tau_s``.

Normal variates come from numpy's ``Generator.standard_normal`` (the Ziggurat
method) driven by a PCG64 bit generator seeded with ``SeedSequence([seed,
channel_index])``. Both are fixed by numpy's stream-compatibility policy, so a
given profile always yields the same bytes.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from .telemetry import CHANNEL_RANGES, Channel, SensorFrame

DEFAULT_START_TS_MS = 1_700_000_000_000
SESSION_SPACING_MS = 86_400_000


@dataclass(frozen=True)
class ChannelProfile:
    baseline: float
    drift_amplitude: float = 0.0
    drift_tau_s: float = 300.0
    noise_sigma0: float = 0.0
    noise_floor_fraction: float = 1.0
    noise_tau_s: float = 300.0
    sample_period_ms: int = 1000

    def __post_init__(self) -> None:
        if not self.drift_tau_s > 0:
            raise ValueError("drift_tau_s must be > 0")
        if not self.noise_tau_s > 0:
            raise ValueError("noise_tau_s must be > 0")
        if not self.noise_sigma0 >= 0:
            raise ValueError("noise_sigma0 must be >= 0")
        if not 0.0 <= self.noise_floor_fraction <= 1.0:
            raise ValueError("noise_floor_fraction must lie in [0, 1]")
        if not (isinstance(self.sample_period_ms, int) and self.sample_period_ms > 0):
            raise ValueError("sample_period_ms must be a positive integer")

    def drift(self, t_s):
        return self.baseline + self.drift_amplitude * np.exp(-np.asarray(t_s, dtype=float) / self.drift_tau_s)

    def noise_sigma(self, t_s):
        f = self.noise_floor_fraction
        return self.noise_sigma0 * (f + (1.0 - f) * np.exp(-np.asarray(t_s, dtype=float) / self.noise_tau_s))


@dataclass(frozen=True)
class SimProfile:
    channels: dict[Channel, ChannelProfile]
    session_duration_s: float = 600.0
    seed: int = 0
    device_id: str = "carrier-01"
    participant_id: str = "p-01"
    start_ts_ms: int = DEFAULT_START_TS_MS

    def __post_init__(self) -> None:
        if not self.session_duration_s > 0:
            raise ValueError("session_duration_s must be > 0")
        missing = [ch.value for ch in Channel if ch not in self.channels]
        if missing:
            raise ValueError(f"profile lacks channels: {missing}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def with_baselines(self, baselines: dict[Channel, float]) -> SimProfile:
        chans = dict(self.channels)
        for ch, b in baselines.items():
            chans[ch] = replace(chans[ch], baseline=float(b))
        return replace(self, channels=chans)

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_duration_s": self.session_duration_s,
            "seed": self.seed,
            "device_id": self.device_id,
            "participant_id": self.participant_id,
            "start_ts_ms": self.start_ts_ms,
            "channels": {ch.value: asdict(self.channels[ch]) for ch in Channel},
        }


@dataclass(frozen=True)
class CohortSpec:
    base_profile: SimProfile
    n_sessions: int = 30
    baseline_slope: dict[Channel, float] = field(default_factory=dict)
    jitter_sigma: dict[Channel, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be >= 1")
        if any(s < 0 for s in self.jitter_sigma.values()):
            raise ValueError("jitter sigma must be >= 0")


def _clamp_to_range(channel: Channel, values: np.ndarray) -> np.ndarray:
    lo, hi, lo_inc, hi_inc = CHANNEL_RANGES[channel]
    if not lo_inc:
        lo = math.nextafter(lo, math.inf)
    if not hi_inc:
        hi = math.nextafter(hi, -math.inf)
    return np.clip(values, lo, hi)


def channel_samples(profile: SimProfile, channel: Channel) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (ms from session start) and values for one channel."""
    cp = profile.channels[channel]
    duration_ms = profile.session_duration_s * 1000.0
    n = int(math.floor(duration_ms / cp.sample_period_ms)) + 1
    offsets = np.arange(n, dtype=np.int64) * cp.sample_period_ms
    t_s = offsets / 1000.0
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([profile.seed, channel.order])))
    xi = rng.standard_normal(n)
    values = cp.drift(t_s) + cp.noise_sigma(t_s) * xi
    return offsets, _clamp_to_range(channel, values)


def generate_session(profile: SimProfile) -> list[SensorFrame]:
    """All frames of one simulated sitting, in global timestamp order."""
    rows: list[tuple[int, int, int, float]] = []
    for ch in Channel:
        offsets, values = channel_samples(profile, ch)
        ts = (profile.start_ts_ms + offsets).tolist()
        rows.extend(zip(ts, [ch.order] * len(ts), range(len(ts)), values.tolist()))
    rows.sort(key=lambda r: (r[0], r[1]))
    channels = list(Channel)
    return [
        SensorFrame(device_id=profile.device_id, channel=channels[c], timestamp_ms=ts, value=v, seq=seq)
        for ts, c, seq, v in rows
    ]


@dataclass
class Cohort:
    profiles: list[SimProfile]
    manifest: dict[str, Any]

    def sessions(self):
        """Yield the frame list of each session in index order."""
        for p in self.profiles:
            yield generate_session(p)


def cohort_profiles(spec: CohortSpec) -> list[SimProfile]:
    """Effective per-session profiles; session k shifts every baseline by slope*k plus jitter."""
    out = []
    base = spec.base_profile
    for k in range(spec.n_sessions):
        ss = np.random.SeedSequence([spec.seed, k])
        session_seed, jitter_seed = (int(x) for x in ss.generate_state(2, dtype=np.uint64))
        rng = np.random.Generator(np.random.PCG64(jitter_seed))
        jitter = rng.standard_normal(len(Channel))
        baselines = {}
        for ch in Channel:
            b = base.channels[ch].baseline + spec.baseline_slope.get(ch, 0.0) * k
            sigma = spec.jitter_sigma.get(ch, 0.0)
            if sigma:
                b += sigma * float(jitter[ch.order])
            baselines[ch] = b
        p = base.with_baselines(baselines)
        out.append(replace(p, seed=session_seed, start_ts_ms=base.start_ts_ms + k * SESSION_SPACING_MS))
    return out


def generate_cohort(spec: CohortSpec) -> Cohort:
    """Profiles plus a manifest recording every effective parameter."""
    profiles = cohort_profiles(spec)
    manifest = {
        "n_sessions": spec.n_sessions,
        "seed": spec.seed,
        "baseline_slope": {ch.value: spec.baseline_slope.get(ch, 0.0) for ch in Channel},
        "jitter_sigma": {ch.value: spec.jitter_sigma.get(ch, 0.0) for ch in Channel},
        "noise_generator": "numpy PCG64 + Generator.standard_normal (ziggurat), SeedSequence([seed, channel_index])",
        "sessions": [dict(index=k, **p.to_dict()) for k, p in enumerate(profiles)],
    }
    return Cohort(profiles=profiles, manifest=manifest)


# Preset magnitudes are chosen defaults; only the directions of the trends matter.
CALMING_CHANNELS = {
    Channel.PRESSURE_RAW: ChannelProfile(
        baseline=12600.0, drift_amplitude=-3000.0, drift_tau_s=200.0,
        noise_sigma0=800.0, noise_floor_fraction=0.25, noise_tau_s=200.0, sample_period_ms=100,
    ),
    Channel.AUDIO_RMS: ChannelProfile(
        baseline=0.08, drift_amplitude=0.25, drift_tau_s=240.0,
        noise_sigma0=0.05, noise_floor_fraction=0.3, noise_tau_s=240.0, sample_period_ms=100,
    ),
    Channel.HEART_RATE: ChannelProfile(
        baseline=68.0, drift_amplitude=18.0, drift_tau_s=300.0,
        noise_sigma0=3.0, noise_floor_fraction=0.3, noise_tau_s=300.0, sample_period_ms=5000,
    ),
    Channel.RESPIRATORY_RATE: ChannelProfile(
        baseline=14.0, drift_amplitude=6.0, drift_tau_s=300.0,
        noise_sigma0=1.5, noise_floor_fraction=0.3, noise_tau_s=300.0, sample_period_ms=15000,
    ),
}

CALMING_SLOPES = {Channel.AUDIO_RMS: -0.004, Channel.PRESSURE_RAW: 60.0}
CALMING_JITTER = {
    Channel.PRESSURE_RAW: 150.0,
    Channel.AUDIO_RMS: 0.005,
    Channel.HEART_RATE: 2.0,
    Channel.RESPIRATORY_RATE: 0.8,
}


def calming_profile(seed: int = 0, **overrides: Any) -> SimProfile:
    return SimProfile(channels=dict(CALMING_CHANNELS), seed=seed, **overrides)


def agitated_profile(seed: int = 0, **overrides: Any) -> SimProfile:
    """Calming preset with every drift amplitude negated."""
    chans = {ch: replace(cp, drift_amplitude=-cp.drift_amplitude) for ch, cp in CALMING_CHANNELS.items()}
    return SimProfile(channels=chans, seed=seed, **overrides)


PRESETS = {"calming": calming_profile, "agitated": agitated_profile}


def preset_cohort(preset: str = "calming", n_sessions: int = 30, seed: int = 7, **overrides: Any) -> CohortSpec:
    base = PRESETS[preset](seed=seed, **overrides)
    return CohortSpec(
        base_profile=base,
        n_sessions=n_sessions,
        baseline_slope=copy.copy(CALMING_SLOPES),
        jitter_sigma=copy.copy(CALMING_JITTER),
        seed=seed,
    )
