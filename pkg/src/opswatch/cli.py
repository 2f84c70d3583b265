"""Command-line entry points for running and exercising the detector."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from pathlib import Path

from .config import EngineConfig
from .evalbench import (
    Injection,
    LabeledRange,
    StreamSpec,
    evaluate_run,
    generate_stream,
)
from .features import window_of
from .ingest import ReplayStats, replay_file
from .orchestrator import Engine, NoModel
from .storage import FsBlobStore, FsDocumentStore

logger = logging.getLogger(__name__)


def _load_config(path: str | None) -> EngineConfig:
    return EngineConfig.from_file(path) if path else EngineConfig()


def _open_engine(config: EngineConfig) -> Engine:
    root = Path(config.storage.root)
    docs = FsDocumentStore(root / "docs")
    blobs = FsBlobStore(root / "blobs")
    return Engine.restore(config, docs, blobs)


def _feed_and_tick(engine: Engine, records, source: str, train_windows: int) -> dict:
    """Replay records through the engine, training once enough accumulate."""
    window_ms = engine.window_ms
    first_start: int | None = None
    last_boundary: int | None = None
    fed = 0
    for record in records:
        now = record.timestamp
        engine.now_ms = lambda t=now: t
        start = window_of(now, window_ms)
        if first_start is None:
            first_start = start
        engine.submit(source, record)
        fed += 1
        complete = (start - first_start) // window_ms
        if engine.published is None:
            if complete >= train_windows:
                engine.bootstrap(now=now)
        elif last_boundary is None or start > last_boundary:
            engine.tick(now=now)
            engine.schedule_retrain(now=now)
            last_boundary = start
    if engine.published is None and first_start is not None:
        engine.bootstrap()
    if engine.published is not None:
        final_now = engine.now_ms() + window_ms
        engine.now_ms = lambda t=final_now: t
        engine.tick(now=final_now)
    return {"fed": fed}


def _parse_injection(kind: str, text: str) -> Injection:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(
            f"expected start:duration[:magnitude], got {text!r}"
        )
    start, duration = int(parts[0]), int(parts[1])
    magnitude = float(parts[2]) if len(parts) == 3 else 10.0
    return Injection(kind=kind, start=start, duration=duration, magnitude=magnitude)


def cmd_run(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app

    config = _load_config(args.config)
    engine = _open_engine(config)
    if args.bootstrap_file:
        stats = ReplayStats()
        _feed_and_tick(
            engine,
            replay_file(args.bootstrap_file, speed=None, stats=stats),
            source="bootstrap",
            train_windows=args.train_windows,
        )
        print(f"bootstrap: {stats.emitted} records, {stats.skipped} skipped")
    stop = threading.Event()
    loop = threading.Thread(target=engine.run_forever, args=(stop,), daemon=True)
    loop.start()
    try:
        uvicorn.run(create_app(engine), host=args.host, port=args.port, log_level="info")
    finally:
        stop.set()
    return 0


def cmd_tick(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    engine = _open_engine(config)
    now = args.now if args.now is not None else None
    try:
        produced = engine.tick(now=now)
    except NoModel as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for assessment in produced:
        print(json.dumps(assessment.to_doc(), sort_keys=True))
    return 0


def cmd_retrain(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    engine = _open_engine(config)
    try:
        done = engine.retrain_now()
    except NoModel as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    published = engine.published
    print(
        json.dumps(
            {
                "retrained": done,
                "modelVersion": published.model.model_version if published else None,
                "registryVersion": published.registry.version if published else None,
            }
        )
    )
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    engine = _open_engine(config)
    stats = ReplayStats()
    speed = None if args.speed in (None, 0) else args.speed
    outcome = _feed_and_tick(
        engine,
        replay_file(args.file, speed=speed, stats=stats),
        source=args.source,
        train_windows=args.train_windows,
    )
    flagged = [a.to_doc() for a in engine.assessments.values() if a.flagged]
    flagged.sort(key=lambda d: d["windowStart"])
    print(
        json.dumps(
            {
                "fed": outcome["fed"],
                "skipped": stats.skipped,
                "assessed": len(engine.assessments),
                "flagged": flagged,
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    stats = ReplayStats()
    records = list(replay_file(args.stream, speed=None, stats=stats))
    truth = [
        LabeledRange(int(r["start"]), int(r["end"]))
        for r in json.loads(Path(args.truth).read_text())
    ]
    result = evaluate_run(records, truth, config)
    print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("index,windowStart,mse,likelihood,flagged\n")
            for row in result.window_scores:
                fh.write(
                    f"{row['index']},{row['windowStart']},{row['mse']},"
                    f"{row['likelihood']},{int(row['flagged'])}\n"
                )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = StreamSpec(windows=args.windows, seed=args.seed)
    injections = (
        [_parse_injection("spike", t) for t in args.spike]
        + [_parse_injection("dropout", t) for t in args.dropout]
        + [_parse_injection("level-shift", t) for t in args.level_shift]
        + [_parse_injection("burst-count", t) for t in args.burst]
    )
    records, truth = generate_stream(spec, injections)
    with open(args.out, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.serialize() + "\n")
    Path(args.truth_out).write_text(
        json.dumps([{"start": r.start, "end": r.end} for r in truth], indent=2)
    )
    print(f"wrote {len(records)} records to {args.out}, {len(truth)} truth ranges")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opswatch",
        description="Streaming anomaly detection over HTTP request telemetry.",
    )
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="resident service: API plus scheduled ticks")
    p.add_argument("--config")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--bootstrap-file", help="NDJSON backlog to train on at startup")
    p.add_argument("--train-windows", type=int, default=64)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("tick", help="score complete windows once and exit")
    p.add_argument("--once", action="store_true", required=True)
    p.add_argument("--config")
    p.add_argument("--now", type=int, help="override the clock (ms epoch)")
    p.set_defaults(fn=cmd_tick)

    p = sub.add_parser("retrain", help="retrain on recent windows and swap")
    p.add_argument("--now", action="store_true", required=True)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_retrain)

    p = sub.add_parser("replay", help="feed an NDJSON file through the engine")
    p.add_argument("--file", required=True)
    p.add_argument("--speed", type=float, default=None, help="wall-clock multiplier")
    p.add_argument("--config")
    p.add_argument("--source", default="replay")
    p.add_argument("--train-windows", type=int, default=64)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("eval", help="grade a labeled stream end to end")
    p.add_argument("--stream", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--config")
    p.add_argument("--csv", help="write per-window scores here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("synth", help="generate a labeled synthetic stream")
    p.add_argument("--windows", type=int, required=True)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", required=True)
    p.add_argument("--spike", action="append", default=[], metavar="START:DUR[:MAG]")
    p.add_argument("--dropout", action="append", default=[], metavar="START:DUR")
    p.add_argument(
        "--level-shift", action="append", default=[], metavar="START:DUR:MAG"
    )
    p.add_argument("--burst", action="append", default=[], metavar="START:DUR[:MAG]")
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
