"""Command-line entry point.

Exit status is 0 on success, 1 for usage errors and 2 for bad input data
(unreadable files, malformed logs or configs, mismatched logs).
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import signal
import sys
import threading
import time
from typing import Iterator, Optional

import yaml

from . import config as cfgmod
from .alignment import EmptyInputError, dtw
from .config import ConfigError, EngineConfig
from .frames import FrameParseError, FrameValidationError, read_frames, read_truth, write_frames, write_truth
from .metrics import RuntimeStats, SeqMismatchError, evaluate
from .simulator import NoiseConfig, ScenarioConfig, crowd_scenario, generate, perturb, three_user_noise, three_user_scenario
from .stream import EndpointError, StreamConfig, client_frames, serve
from .tracker import Lifecycle, OrderingError, Tracker, read_outputs, serialize_output

log = logging.getLogger("markertrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

DATA_ERRORS = (
    ConfigError,
    FrameParseError,
    FrameValidationError,
    SeqMismatchError,
    OrderingError,
    EmptyInputError,
    EndpointError,
    OSError,
)

PRESETS = {
    "three-user": lambda ms: three_user_scenario(ms or 100_000),
    "crowd": lambda ms: crowd_scenario(10, ms or 20_000),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _open_out(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _open_in(path: str):
    return sys.stdin if path == "-" else open(path, encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args, cfg: EngineConfig) -> int:
    if args.scenario:
        sc = cfgmod.load_model(args.scenario, ScenarioConfig)
    elif args.preset:
        sc = PRESETS[args.preset](args.duration_ms)
    else:
        raise UsageError("simulate needs --scenario or --preset")
    if args.noise:
        nc = cfgmod.load_model(args.noise, NoiseConfig)
    else:
        nc = three_user_noise() if args.preset else NoiseConfig()
    if args.seed is not None:
        nc = nc.model_copy(update={"seed": args.seed})
    frames, truth = perturb(*generate(sc), nc, sc.room)
    with _open_out(args.out) as fh:
        write_frames(frames, fh)
    if args.truth:
        with _open_out(args.truth) as fh:
            write_truth(truth, fh)
    log.info("wrote %d frames", len(frames))
    return EXIT_OK


def cmd_serve(args, cfg: EngineConfig) -> int:
    rate = args.rate or cfg.replay_rate_hz()
    scfg = _stream_config(cfg, endpoint=args.listen or cfg.stream.endpoint, rate_hz=rate)
    with _open_in(args.input) as fh:
        frames = list(read_frames(fh))
    session = serve(frames, scfg, min_clients=args.wait_clients)
    print(f"serving {len(frames)} frames on {session.endpoint} at {rate:g} Hz", file=sys.stderr, flush=True)
    try:
        session.join()
    except KeyboardInterrupt:
        pass
    sent = session.close()
    print(f"frames sent: {sent}", file=sys.stderr)
    return EXIT_OK


def _stream_config(cfg: EngineConfig, **update) -> StreamConfig:
    try:
        return StreamConfig.model_validate({**cfg.stream.model_dump(), **update})
    except ValueError as e:
        raise UsageError(str(e).replace("\n", " ")) from None


def _frame_source(args, cfg: EngineConfig, stop: threading.Event) -> Iterator:
    if args.connect:
        retries = None if args.max_reconnects < 0 else args.max_reconnects
        yield from client_frames(_stream_config(cfg, endpoint=args.connect), stop, retries)
        return
    with _open_in(args.input) as fh:
        yield from read_frames(fh)


def cmd_track(args, cfg: EngineConfig) -> int:
    if bool(args.input) == bool(args.connect):
        raise UsageError("track needs exactly one of --in or --connect")
    tracker = Tracker.from_config(cfg)
    for uid in args.register_user or []:
        try:
            tracker.register_user(uid)
        except ValueError as e:
            raise UsageError(str(e)) from None

    stop = threading.Event()
    if args.connect:
        signal.signal(signal.SIGINT, lambda *_: stop.set())

    busy = 0.0
    n = 0
    start = time.perf_counter()
    clock = time.perf_counter
    step = tracker.step
    with _open_out(args.out) as out:
        for frame in _frame_source(args, cfg, stop):
            t0 = clock()
            result = step(frame)
            busy += clock() - t0
            n += 1
            out.write(serialize_output(result))
            out.write("\n")
    wall = time.perf_counter() - start
    stats = RuntimeStats(n, busy, n / busy if busy > 0 else 0.0)
    print(
        f"frames={n} tracker_time={busy:.3f}s fps={stats.frames_per_second:.0f} "
        f"wall={wall:.3f}s identified={tracker.n_identified()}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_evaluate(args, cfg: EngineConfig) -> int:
    with _open_in(args.outputs) as fo, _open_in(args.truth) as ft:
        report = evaluate(read_outputs(fo), read_truth(ft), args.tolerance)
    if args.report:
        with _open_out(args.report) as fh:
            fh.write(yaml.safe_dump(report.to_dict(), sort_keys=False))
    print(report.table())
    return EXIT_OK


def _user_track(path: str, user: int) -> list[tuple[float, float, float]]:
    """Positions of ``user`` from either an output log or a truth log."""
    with _open_in(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        return []
    if '"tracks"' in lines[0]:
        seq = []
        for out in read_outputs(lines):
            for tr in out.tracks:
                if tr.user_id == user and tr.lifecycle is not Lifecycle.DEAD:
                    seq.append(tr.position)
        return seq
    return [rec.users[user] for rec in read_truth(lines) if user in rec.users]


def cmd_assess(args, cfg: EngineConfig) -> int:
    est = _user_track(args.estimated, args.user)
    ref = _user_track(args.reference, args.user)
    stride = args.stride
    if stride < 1:
        raise UsageError("--stride must be at least 1")
    if args.band is not None and args.band < abs(len(est[::stride]) - len(ref[::stride])):
        raise UsageError(f"--band {args.band} is narrower than the length difference of the sequences")
    res = dtw(est[::stride], ref[::stride], band=args.band)
    print(f"user={args.user} estimated={len(est)} reference={len(ref)} stride={stride}")
    print(f"cost={res.cost:.6f} path_length={len(res.path)} normalized_cost={res.normalized_cost:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    config_help = f"engine config YAML (default: ${cfgmod.CONFIG_ENV} if set)"
    p = _Parser(prog="markertrack", description="Multi-user marker tracking engine")
    p.add_argument("--config", help=config_help)
    p.add_argument("-v", "--verbose", action="store_true")
    # accepted after the subcommand as well
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=config_help)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="generate a frame log and its ground truth")
    s.add_argument("--scenario", help="scenario YAML")
    s.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario instead of --scenario")
    s.add_argument("--duration-ms", type=int, help="preset duration")
    s.add_argument("--noise", help="noise YAML (preset default: sigma 0.05, dropout 0.01, clutter 0.2)")
    s.add_argument("--seed", type=int, help="override the noise seed")
    s.add_argument("--out", required=True, help="frame log to write")
    s.add_argument("--truth", help="ground-truth sidecar to write")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("serve", parents=[common], help="replay a frame log over TCP")
    s.add_argument("--in", dest="input", required=True, help="frame log")
    s.add_argument("--listen", help="host:port (default from config)")
    s.add_argument("--rate", type=float, help="frames per second")
    s.add_argument("--wait-clients", type=int, default=0, help="start replay once this many clients connect")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("track", parents=[common], help="run the tracker on a frame log or a live stream")
    s.add_argument("--in", dest="input", help="frame log ('-' for stdin)")
    s.add_argument("--connect", help="host:port of a serve session")
    s.add_argument("--max-reconnects", type=int, default=0, help="with --connect; negative retries forever")
    s.add_argument("--register-user", type=int, action="append", metavar="ID", help="queue a user (repeatable)")
    s.add_argument("--out", help="output log (default stdout)")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("evaluate", parents=[common], help="score an output log against ground truth")
    s.add_argument("--outputs", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--tolerance", type=float, default=0.5, help="purity assignment tolerance")
    s.add_argument("--report", help="also write the report as YAML")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("assess", parents=[common], help="DTW alignment of one user's estimated and reference trajectories")
    s.add_argument("--estimated", required=True, help="output log or truth log")
    s.add_argument("--reference", required=True, help="output log or truth log")
    s.add_argument("--user", type=int, required=True)
    s.add_argument("--band", type=int, help="Sakoe-Chiba band width")
    s.add_argument("--stride", type=int, default=1, help="use every n-th sample")
    s.set_defaults(func=cmd_assess)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.resolve_config(args.config)
        return args.func(args, cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"markertrack: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"markertrack: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
