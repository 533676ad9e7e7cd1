"""
Aligning channels on a common grid
==================================

Segment one session in-process and resample its four channels onto a 1 s
grid. Pressure and noise are interpolated; heart and breathing rate are held.
"""

import numpy as np

from emotioncarrier import simulator
from emotioncarrier.ingest import segment_frames
from emotioncarrier.timeline import align

frames = simulator.generate_session(simulator.calming_profile(seed=4))
(session,) = segment_frames(frames)
print(f"session {session.session_id}: {session.duration_ms / 1000:.0f} s, {session.frame_count} frames")

tl = align(session, grid_step_ms=1000)
print(f"{len(tl)} grid points")
for name, column in tl.channels.items():
    print(f"{name:17s} present {column.count():4d}  mean {np.ma.mean(column):8.3f}")

# Cells with no nearby sample stay masked and come out empty in the CSV.
print(tl.to_csv().splitlines()[0])
print("\n".join(tl.to_csv().splitlines()[1:4]))
