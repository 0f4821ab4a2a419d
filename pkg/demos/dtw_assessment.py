"""Score a tracked trajectory against ground truth with DTW.

Cutting a second out of the estimate breaks a frame-by-frame comparison;
DTW still aligns the rest and only charges for the skipped stretch.

    python demos/dtw_assessment.py
"""
from markertrack.alignment import dtw
from markertrack.simulator import generate, perturb, three_user_noise, three_user_scenario
from markertrack.tracker import Tracker

sc = three_user_scenario(20_000)
frames, truth = perturb(*generate(sc), three_user_noise(seed=3))
tracker = Tracker()
tracker.register_user(1)
for f in frames:
    tracker.step(f)

est = [p for _, p in tracker.get_history(1)]
ref = [rec.users[1] for rec in truth if 1 in rec.users][-len(est):]
gappy = est[:500] + est[600:]

# every 5th sample keeps the quadratic DP quick
for name, seq in (("full", est), ("100 frames missing", gappy)):
    res = dtw(seq[::5], ref[::5], band=40)
    print(f"{name:>20}: {len(seq)} samples, cost {res.cost:.2f}, per step {res.normalized_cost:.4f} m")
