"""
Session metrics and cohort trends
=================================

Compute per-session metrics for the calming cohort, the cross-session trend
of each channel mean, and the calming verdict for every session.
"""

from collections import Counter

import numpy as np

from emotioncarrier import simulator
from emotioncarrier.analytics import classify, cohort_trend, trend_rows, session_metrics
from emotioncarrier.pipeline import ingest_cohort
from emotioncarrier.timeline import align

cohort = simulator.generate_cohort(simulator.preset_cohort("calming", n_sessions=30, seed=7))
metrics = [session_metrics(align(s)) for s in ingest_cohort(cohort)]

for sel in ("pressure_gf.mean", "audio_rms.mean", "heart_rate.mean", "respiratory_rate.mean"):
    t = cohort_trend(metrics, sel)
    print(f"{sel:22s} r = {t.cross_session_r:+.3f}  slope/session = {t.cross_session_slope:+.4g}")

hr = np.median([m.scalar("heart_rate.slope_per_min") for m in metrics])
rr = np.median([m.scalar("respiratory_rate.slope_per_min") for m in metrics])
print(f"median within-session slopes: heart {hr:+.2f} bpm/min, breathing {rr:+.2f} /min per min")
print(Counter(classify(m).verdict for m in metrics))

# The per-session summary table behind the four trend panels.
rows = trend_rows(metrics)
print(rows[0])
