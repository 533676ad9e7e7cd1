import json
from dataclasses import replace
from pathlib import Path

import pytest

from emotioncarrier import simulator
from emotioncarrier.simulator import ChannelProfile, SimProfile
from emotioncarrier.store import SessionStore
from emotioncarrier.telemetry import Channel

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def malformed_corpus():
    return json.loads((FIXTURES / "malformed_corpus.json").read_text())


@pytest.fixture
def store(tmp_path):
    s = SessionStore(tmp_path / "store", writer=True)
    yield s
    s.close()


def noiseless(profile: SimProfile, flat_pressure: bool = True) -> SimProfile:
    """Copy of ``profile`` with all noise removed (and pressure held at baseline)."""
    chans = {ch: replace(cp, noise_sigma0=0.0) for ch, cp in profile.channels.items()}
    if flat_pressure:
        chans[Channel.PRESSURE_RAW] = replace(chans[Channel.PRESSURE_RAW], drift_amplitude=0.0)
    return replace(profile, channels=chans)


def flat_profile(duration_s: float = 120.0, **kw) -> SimProfile:
    chans = {
        Channel.PRESSURE_RAW: ChannelProfile(12600.0, sample_period_ms=100),
        Channel.AUDIO_RMS: ChannelProfile(0.1, sample_period_ms=100),
        Channel.HEART_RATE: ChannelProfile(70.0, sample_period_ms=5000),
        Channel.RESPIRATORY_RATE: ChannelProfile(14.0, sample_period_ms=15000),
    }
    return SimProfile(channels=chans, session_duration_s=duration_s, **kw)


@pytest.fixture(scope="session")
def calming_cohort():
    return simulator.generate_cohort(simulator.preset_cohort("calming", 30, 7))
