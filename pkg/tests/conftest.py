import os

import pytest
from hypothesis import HealthCheck, settings

from markertrack.simulator import generate, perturb, three_user_noise, three_user_scenario
from markertrack.tracker import Tracker

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture(scope="session")
def three_user_run():
    """Default three-user scenario, tracked once for the whole session."""
    sc = three_user_scenario(100_000)
    frames, truth = perturb(*generate(sc), three_user_noise(seed=7))
    tr = Tracker()
    for uid in (1, 2, 3):
        tr.register_user(uid)
    outputs = [tr.step(f) for f in frames]
    return sc, frames, truth, outputs, tr
