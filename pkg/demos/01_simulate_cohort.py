"""
Simulating a writing cohort
===========================

Generate the seeded calming cohort and look at how each channel drifts
inside one session and across the thirty sessions.
"""

import numpy as np

from emotioncarrier import simulator
from emotioncarrier.telemetry import DEFAULT_CALIBRATION, Channel, calibrate_pressure, encode_frame

spec = simulator.preset_cohort("calming", n_sessions=30, seed=7)
cohort = simulator.generate_cohort(spec)
print(f"{len(cohort.profiles)} sessions, seed {spec.seed}")

# Every session is a list of wire frames. The first few lines look like this:
first = next(iter(cohort.sessions()))
for frame in first[:4]:
    print(encode_frame(frame).decode(), end="")

# Within a session the heart rate drifts down from an elevated start.
hr = np.array([f.value for f in first if f.channel is Channel.HEART_RATE])
print(f"heart rate: first minute {hr[:12].mean():.1f} bpm, last minute {hr[-12:].mean():.1f} bpm")

# Across sessions the baseline pressure creeps up and the room noise falls.
for k in (0, 10, 20, 29):
    prof = cohort.profiles[k]
    p = prof.channels[Channel.PRESSURE_RAW].baseline
    a = prof.channels[Channel.AUDIO_RMS].baseline
    print(f"session {k:2d}: pressure baseline {calibrate_pressure(p, DEFAULT_CALIBRATION):5.2f} gf, audio baseline {a:.3f}")
