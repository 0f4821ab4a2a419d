import pytest
from hypothesis import given
from hypothesis import strategies as st

from markertrack.association import AssociationConfig
from markertrack.calibration import DuckParams
from markertrack.config import (
    CONFIG_ENV,
    ConfigError,
    EngineConfig,
    load_config,
    parse_config,
    resolve_config,
    resolve_config_path,
    serialize,
)
from markertrack.frames import RoomBounds
from markertrack.kalman import KalmanConfig
from markertrack.stream import StreamConfig
from markertrack.tracker import TrackerParams

pos = st.floats(1e-6, 1e6, allow_nan=False, allow_infinity=False)
nonneg = st.floats(0.0, 1e6, allow_nan=False, allow_infinity=False)

engine_configs = st.builds(
    EngineConfig,
    room=st.builds(RoomBounds, half_x=pos, half_y=pos, height=pos),
    kalman=st.builds(KalmanConfig, sigma_a=pos, sigma_m=pos, p0_pos=pos, p0_vel=pos),
    association=st.builds(AssociationConfig, gate=pos, strategy=st.sampled_from(["greedy", "optimal"])),
    calibration=st.builds(
        DuckParams,
        dip_fraction=st.floats(1e-6, 0.999),
        min_cycles=st.integers(1, 20),
        max_window_ms=st.integers(1, 10**7),
        baseline_frames=st.integers(1, 1000),
    ),
    tracker=st.builds(
        TrackerParams,
        confirm_hits=st.integers(1, 10),
        max_coast=st.integers(0, 1000),
        tentative_max_coast=st.none() | st.integers(0, 100),
        spawn_exclusion=nonneg,
        merge_distance=nonneg,
        history_len=st.integers(1, 10**6),
        max_users=st.integers(1, 100),
    ),
    stream=st.builds(
        StreamConfig,
        endpoint=st.builds(lambda h, p: f"{h}:{p}", st.sampled_from(["127.0.0.1", "localhost", "::1", ""]),
                           st.integers(0, 65535)),
        rate_hz=st.none() | pos,
        reconnect_backoff_ms=st.integers(0, 10**5),
        send_buffer_lines=st.integers(1, 10**5),
        connect_timeout_s=pos,
    ),
    frame_interval_ms=st.integers(1, 1000),
    users=st.lists(st.integers(0, 10**6), unique=True, max_size=10).map(tuple),
)


@given(engine_configs)
def test_round_trip_property(cfg):
    assert parse_config(serialize(cfg)) == cfg


def test_empty_file_is_default(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    assert load_config(p) == EngineConfig()
    assert parse_config("# nothing\n") == EngineConfig()


def test_partial_override():
    cfg = parse_config("kalman:\n  sigma_m: 0.01\nusers: [3, 1]\n")
    assert cfg.kalman.sigma_m == 0.01
    assert cfg.kalman.sigma_a == KalmanConfig().sigma_a
    assert cfg.users == (3, 1)


def test_error_names_the_field():
    with pytest.raises(ConfigError, match=r"association\.gate"):
        parse_config("association:\n  gate: -1\n")


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="kalmann"):
        parse_config("kalmann:\n  sigma_a: 1\n")


@pytest.mark.parametrize("text", ["[1, 2]", "a: [", "users: [1, 1]", "stream:\n  endpoint: nope\n"])
def test_invalid_documents(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")


def test_env_var_and_precedence(tmp_path, monkeypatch):
    a, b = tmp_path / "a.yaml", tmp_path / "b.yaml"
    a.write_text("frame_interval_ms: 20\n")
    b.write_text("frame_interval_ms: 5\n")
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    assert resolve_config_path() is None
    assert resolve_config() == EngineConfig()
    monkeypatch.setenv(CONFIG_ENV, str(a))
    assert resolve_config().frame_interval_ms == 20
    assert resolve_config(str(b)).frame_interval_ms == 5


def test_replay_rate():
    assert EngineConfig().replay_rate_hz() == 100.0
    assert EngineConfig(frame_interval_ms=20).replay_rate_hz() == 50.0
    assert EngineConfig(stream=StreamConfig(rate_hz=250.0)).replay_rate_hz() == 250.0


def test_config_is_immutable():
    cfg = EngineConfig()
    with pytest.raises(ValueError):
        cfg.frame_interval_ms = 5
