"""
Streaming frames into the ingest server
=======================================

Start a loopback collector backed by a temporary session store, stream two
simulated sessions at full speed and list what was persisted.
"""

import tempfile
from pathlib import Path

from emotioncarrier import simulator
from emotioncarrier.ingest import IngestServer, send_frames
from emotioncarrier.store import SessionStore

root = Path(tempfile.mkdtemp()) / "store"
store = SessionStore(root, writer=True)
server = IngestServer(("127.0.0.1", 0), store).start()
print("listening on %s:%d" % server.address)

cohort = simulator.generate_cohort(simulator.preset_cohort("calming", n_sessions=2, seed=3))
for profile, frames in zip(cohort.profiles, cohort.sessions()):
    sent = send_frames(frames, server.address, "max", participant=profile.participant_id)
    print(f"sent {sent} frames for {profile.participant_id}")

# Closing the connection flushes the segmenter, so the sessions are already stored.
server.stop()
print(server.stats)

for entry in store.entries():
    print(entry.session_id, entry.start_ts_ms, entry.end_ts_ms, entry.frames)
store.close()
