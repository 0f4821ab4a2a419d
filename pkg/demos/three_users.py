"""Three users walk into the room one after another and each ducks five
times.  Registered ids are handed out in the order the users calibrate;
after that every output frame carries the right identity.

    python demos/three_users.py
"""
from markertrack.metrics import evaluate
from markertrack.simulator import generate, perturb, three_user_noise, three_user_scenario
from markertrack.tracker import Tracker

sc = three_user_scenario(30_000)
frames, truth = perturb(*generate(sc), three_user_noise(seed=7))

tracker = Tracker()
for uid in (1, 2, 3):
    tracker.register_user(uid)
outputs = [tracker.step(f) for f in frames]

report = evaluate(outputs, truth)
for u in sc.users:
    done = u.calib_time_ms + sc.duck_count * sc.duck_cycle_ms
    print(f"user {u.user_id}: ducks end at {done} ms, identified at {report.first_identified_ms[u.user_id]} ms")
print()
print(report.table())

# the last two seconds of user 2's trajectory
for t, p in tracker.get_history(2, 28_000, 30_000)[::50]:
    print(f"t={t:>6} x={p.x:+.2f} y={p.y:+.2f} z={p.z:.2f}")
