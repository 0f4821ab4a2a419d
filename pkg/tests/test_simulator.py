import numpy as np
import pytest

from markertrack.simulator import (
    CLUTTER,
    Motion,
    NoiseConfig,
    ScenarioConfig,
    UserSpec,
    crowd_scenario,
    generate,
    motion_at,
    perturb,
    position_at,
    three_user_noise,
    three_user_scenario,
    time_since_turn,
)


def one_user(**kw):
    spec = dict(user_id=1, height=5.0, waypoints=[(0.0, 0.0), (2.0, 0.0), (2.0, 2.0)], walk_speed=1.0)
    spec.update(kw)
    return ScenarioConfig(users=[UserSpec(**spec)], duration_ms=10_000)


def test_generate_is_deterministic_and_clean():
    sc = three_user_scenario(5_000)
    f1, t1 = generate(sc)
    f2, t2 = generate(sc)
    assert f1 == f2 and t1 == t2
    assert len(f1) == 500
    for f, tr in zip(f1, t1):
        assert len(f.points) == len(tr.labels) == len(tr.users)
        for p, uid in zip(f.points, tr.labels):
            assert tuple(p) == tr.users[uid]


def test_kinematics():
    sc = one_user(calib_time_ms=1000)
    u = sc.users[0]
    assert motion_at(u, sc, 500) is Motion.STANDING
    assert motion_at(u, sc, 1200) is Motion.DUCKING
    walk = 1000 + 5 * 800
    assert motion_at(u, sc, walk + 1000) is Motion.WALKING
    assert position_at(u, sc, walk + 1000) == pytest.approx((1.0, 0.0, 5.0))
    assert position_at(u, sc, walk + 3000) == pytest.approx((2.0, 1.0, 5.0))
    assert time_since_turn(u, sc, walk + 3000) == pytest.approx(1000.0)
    assert motion_at(u, sc, walk + 4000) is Motion.ARRIVED
    assert position_at(u, sc, walk + 9000) == pytest.approx((2.0, 2.0, 5.0))


def test_duck_depth_and_period():
    sc = one_user(calib_time_ms=0)
    u = sc.users[0]
    assert position_at(u, sc, 400).z == pytest.approx(5.0 * 0.75)
    assert position_at(u, sc, 800).z == pytest.approx(5.0)


def test_absent_before_spawn():
    sc = one_user(spawn_time_ms=2000)
    assert position_at(sc.users[0], sc, 1000) is None
    f, t = generate(sc)
    assert f[0].points.shape == (0, 3) and t[0].users == {}


def test_scenario_validation():
    with pytest.raises(ValueError):
        one_user(waypoints=[(50.0, 0.0)])
    with pytest.raises(ValueError):
        one_user(height=20.0)
    with pytest.raises(ValueError):
        one_user(spawn_time_ms=100, calib_time_ms=50)
    with pytest.raises(ValueError):
        ScenarioConfig(users=[UserSpec(user_id=1, height=5, waypoints=[(0, 0)])] * 2)


def test_noise_statistics():
    sc = crowd_scenario(5, 20_000)
    clean, truth = generate(sc)
    nc = NoiseConfig(sigma_m=0.05, dropout_p=0.1, clutter_rate=0.5, seed=3)
    noisy, nt = perturb(clean, truth, nc, sc.room)
    err, kept, total, clutter = [], 0, 0, 0
    for f, tr, c in zip(noisy, nt, clean):
        labels = np.array(tr.labels)
        clutter += int((labels == CLUTTER).sum())
        total += len(c.points)
        kept += int((labels != CLUTTER).sum())
        for p, uid in zip(f.points, labels):
            if uid != CLUTTER:
                err.append(np.subtract(p, tr.users[uid]))
            else:
                assert sc.room.contains(p)[0]
    assert np.std(err) == pytest.approx(0.05, rel=0.05)
    assert 1 - kept / total == pytest.approx(0.1, abs=0.01)
    # Poisson count: allow four standard errors
    assert clutter / len(noisy) == pytest.approx(0.5, abs=4 * (0.5 / len(noisy)) ** 0.5)


def test_shuffle_changes_only_order():
    sc = three_user_scenario(3_000)
    clean = generate(sc)
    a, ta = perturb(*clean, three_user_noise(seed=4, shuffle=False))
    b, tb = perturb(*clean, three_user_noise(seed=4, shuffle=True))
    for fa, fb, la, lb in zip(a, b, ta, tb):
        ka = sorted(zip(map(tuple, fa.points.tolist()), la.labels))
        kb = sorted(zip(map(tuple, fb.points.tolist()), lb.labels))
        assert ka == kb


def test_seed_reproducible():
    sc = three_user_scenario(2_000)
    clean = generate(sc)
    assert perturb(*clean, three_user_noise(seed=9)) == perturb(*clean, three_user_noise(seed=9))
    assert perturb(*clean, three_user_noise(seed=9)) != perturb(*clean, three_user_noise(seed=10))
