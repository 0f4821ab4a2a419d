"""Replay a simulated capture over loopback TCP and track it live.

A serve session paces the frames at 500 Hz; the client side parses the
stream and feeds the tracker as frames arrive.

    python demos/live_stream.py
"""
from markertrack.simulator import generate, perturb, three_user_noise, three_user_scenario
from markertrack.stream import StreamConfig, client_frames, serve
from markertrack.tracker import Tracker

sc = three_user_scenario(12_000)
frames, _ = perturb(*generate(sc), three_user_noise(seed=1))

cfg = StreamConfig(endpoint="127.0.0.1:0", rate_hz=500.0)
with serve(frames, cfg, min_clients=1) as session:
    print(f"serving {len(frames)} frames on {session.endpoint}")
    tracker = Tracker()
    tracker.register_user(1)
    tracker.register_user(2)
    for frame in client_frames(cfg.model_copy(update={"endpoint": session.endpoint}), max_reconnects=0):
        out = tracker.step(frame)
        if frame.seq % 1000 == 0:
            ids = sorted(tr.user_id for tr in out.identified())
            print(f"t={out.t:>6} ms  tracks={len(out.tracks)}  identified={ids}")
print(f"frames sent: {session.frames_sent}")
