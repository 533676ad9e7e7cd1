"""Command-line entry point: simulate, serve, replay, analyze, aggregate, report, selftest.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
Option values come from flags first, then ``--config FILE`` (a JSON object
keyed by option name), then built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import signal
import sys
import tempfile
import threading
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import simulator
from .analytics import TREND_COLUMNS, StatsError, classify, cohort_trend, trend_rows
from .gateway import GatewayConfig, template_feedback
from .ingest import (
    DEFAULT_PORT,
    IngestServer,
    MalformedFile,
    SegmenterConfig,
    parse_address,
    replay,
    send_frames,
)
from .pipeline import analyze_session, build_report, ingest_cohort, metrics_json, store_metrics, write_cohort
from .store import SessionStore, StoreError
from .telemetry import DEFAULT_CALIBRATION, CalibrationProfile

log = logging.getLogger("emotioncarrier")

DEFAULTS: dict[str, Any] = {
    "preset": "calming",
    "sessions": 30,
    "seed": 7,
    "duration_s": 600.0,
    "listen": f"127.0.0.1:{DEFAULT_PORT}",
    "target": f"127.0.0.1:{DEFAULT_PORT}",
    "threshold_gf": 5.0,
    "idle_timeout_s": 30.0,
    "speed": "max",
    "grid_step_ms": 1000,
    "window": 30,
    "k": 10,
}


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--store", metavar="DIR", help="session store directory")
    p.add_argument("--config", metavar="FILE", help="JSON file of option defaults")
    p.add_argument("--json", action="store_true", default=None, help="machine-readable output")
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="emotioncarrier", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="generate a seeded session cohort")
    p.add_argument("--preset", choices=sorted(simulator.PRESETS))
    p.add_argument("--sessions", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration-s", type=float)
    p.add_argument("--out", metavar="DIR", help="write session_NNN.jsonl files and manifest.json")
    p.add_argument("--stream", metavar="HOST:PORT", help="send frames to a running ingest server")

    p = sub.add_parser("serve", parents=[common], help="run the TCP ingest service")
    p.add_argument("--listen", metavar="HOST:PORT")
    p.add_argument("--threshold-gf", type=float)
    p.add_argument("--idle-timeout-s", type=float)
    p.add_argument("--calibration", metavar="FILE")

    p = sub.add_parser("replay", parents=[common], help="stream a frame file to an ingest server")
    p.add_argument("file", nargs="?", help="frame-per-line file (or use --store with --session)")
    p.add_argument("--session", metavar="ID")
    p.add_argument("--target", metavar="HOST:PORT")
    p.add_argument("--speed", help='time multiplier, or "max" for no pacing')
    p.add_argument("--participant")

    p = sub.add_parser("analyze", parents=[common], help="metrics for one stored session")
    p.add_argument("--session", metavar="ID", required=True)
    p.add_argument("--grid-step-ms", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--calibration", metavar="FILE")
    p.add_argument("--dump-timeline", metavar="CSV", help='write the aligned grid ("-" for stdout)')

    p = sub.add_parser("aggregate", parents=[common], help="cross-session series as CSV")
    p.add_argument("--out", metavar="CSV")

    p = sub.add_parser("report", parents=[common], help="feedback report for one session")
    p.add_argument("--session", metavar="ID", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--gateway-config", metavar="FILE")
    g.add_argument("--offline", action="store_true")
    p.add_argument("--k", type=int, help="recent sessions included as context")

    p = sub.add_parser("selftest", parents=[common], help="seeded end-to-end pipeline check")
    p.add_argument("--seed", type=int)
    p.add_argument("--sessions", type=int)
    p.add_argument("--duration-s", type=float)
    return parser


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    cfg: dict[str, Any] = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
    for key, value in vars(args).items():
        if value is None:
            norm = key.replace("_", "-")
            if key in cfg:
                setattr(args, key, cfg[key])
            elif norm in cfg:
                setattr(args, key, cfg[norm])
            elif key in DEFAULTS:
                setattr(args, key, DEFAULTS[key])
    args.json = bool(args.json)
    return args


def _load_calibration(path: str | None) -> CalibrationProfile:
    if not path:
        return DEFAULT_CALIBRATION
    try:
        return CalibrationProfile.from_dict(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise RuntimeFailure(f"bad calibration file {path}: {exc}") from None


def _need_store(args: argparse.Namespace, writer: bool = False) -> SessionStore:
    if not args.store:
        raise UsageError(f"{args.command} requires --store DIR")
    root = Path(args.store)
    if not writer and not (root / "index.jsonl").exists() and not (root / "sessions").is_dir():
        raise RuntimeFailure(f"no sessions: {root} is not a session store")
    return SessionStore(root, writer=writer)


def _emit(args: argparse.Namespace, obj: Any, text: str) -> None:
    if args.json:
        print(json.dumps(obj, indent=2, allow_nan=False))
    else:
        print(text)


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = simulator.preset_cohort(args.preset, args.sessions, args.seed, session_duration_s=args.duration_s)
    cohort = simulator.generate_cohort(spec)
    if not (args.out or args.stream or args.store):
        raise UsageError("simulate needs --out, --stream or --store")
    summary: dict[str, Any] = {"sessions": spec.n_sessions, "seed": spec.seed, "preset": args.preset}
    if args.out:
        paths = write_cohort(cohort, args.out)
        summary["files"] = [str(p) for p in paths]
        summary["manifest"] = str(Path(args.out) / "manifest.json")
    if args.stream:
        target = parse_address(args.stream)
        sent = 0
        for profile, frames in zip(cohort.profiles, cohort.sessions()):
            sent += send_frames(frames, target, "max", participant=profile.participant_id)
        summary["frames_sent"] = sent
    if args.store:
        with _need_store(args, writer=True) as store:
            sessions = ingest_cohort(cohort, store)
        summary["stored"] = [s.session_id for s in sessions]
    _emit(args, summary, f"simulated {spec.n_sessions} {args.preset} sessions (seed {spec.seed})")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    config = SegmenterConfig(
        pressure_threshold_gf=float(args.threshold_gf),
        idle_timeout_ms=int(round(float(args.idle_timeout_s) * 1000)),
        calibration=_load_calibration(args.calibration),
    )
    store = _need_store(args, writer=True)
    server = IngestServer(parse_address(args.listen), store, config)
    host, port = server.address
    log.warning("listening on %s:%d, store %s", host, port, args.store)
    done = threading.Event()

    def _stop(*_):
        done.set()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    server.start()
    try:
        done.wait()
    finally:
        server.stop()
        store.close()
    _emit(args, server.stats.__dict__, f"stopped: {server.stats.sessions} sessions stored")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    target = parse_address(args.target)
    speed = args.speed if args.speed == "max" else float(args.speed)
    try:
        if args.session:
            store = _need_store(args)
            n = replay(store.session_path(args.session), target, speed, args.participant)
        elif args.file:
            n = replay(args.file, target, speed, args.participant)
        else:
            raise UsageError("replay needs FILE or --store with --session")
    except MalformedFile as exc:
        raise RuntimeFailure(str(exc)) from None
    except OSError as exc:
        raise RuntimeFailure(f"cannot reach {target[0]}:{target[1]}: {exc}") from None
    _emit(args, {"frames_sent": n}, f"sent {n} frames")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    store = _need_store(args)
    cal = _load_calibration(args.calibration) if args.calibration else None
    session = store.load_session(args.session)
    tl, metrics = analyze_session(session, int(args.grid_step_ms), cal, int(args.window))
    if args.dump_timeline:
        text = tl.to_csv()
        if args.dump_timeline == "-":
            sys.stdout.write(text)
        else:
            Path(args.dump_timeline).write_text(text)
    if args.json:
        print(metrics_json(metrics))
    elif args.dump_timeline != "-":
        verdict = classify(metrics)
        print(f"session {metrics.session_id}: {metrics.duration_s:.1f} s, {verdict.verdict}")
        for name, cm in metrics.channels.items():
            if cm.present:
                print(f"  {name:17s} mean {cm.mean:10.4g}  slope/min {cm.slope_per_min:+.4g}  "
                      f"stability {cm.stabilization_index if cm.stabilization_index is None else round(cm.stabilization_index, 3)}")
            else:
                print(f"  {name:17s} missing")
    return 0


def _trend_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(TREND_COLUMNS), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row[k] is None else row[k]) for k in TREND_COLUMNS})
    return buf.getvalue()


def _trend_summary(metrics) -> dict[str, Any]:
    out = {}
    for sel in ("pressure_gf.mean", "audio_rms.mean", "heart_rate.mean", "respiratory_rate.mean"):
        try:
            t = cohort_trend(metrics, sel)
            out[sel] = {"r": t.cross_session_r, "slope_per_session": t.cross_session_slope}
        except StatsError as exc:
            out[sel] = {"error": type(exc).__name__}
    return out


def cmd_aggregate(args: argparse.Namespace) -> int:
    store = _need_store(args)
    metrics = store_metrics(store)
    if not metrics:
        raise RuntimeFailure("no sessions")
    text = _trend_csv(trend_rows(metrics))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    trends = _trend_summary(metrics)
    if args.json:
        print(json.dumps({"sessions": len(metrics), "trends": trends}, indent=2))
    elif args.out:
        print(f"wrote {len(metrics)} sessions to {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    gateway = None
    if args.gateway_config:
        try:
            gateway = GatewayConfig.from_dict(json.loads(Path(args.gateway_config).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise RuntimeFailure(f"bad gateway config: {exc}") from None
    store = _need_store(args, writer=True)
    try:
        _, _, report = build_report(store, args.session, gateway, k=int(args.k))
        store.save_report(args.session, report.to_dict())
    finally:
        store.close()
    _emit(args, report.to_dict(),
          f"[{report.source}] {', '.join(report.prompt_words)}\n{report.narrative}")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    """Simulate a calming cohort, ingest it over loopback TCP, analyze, aggregate and report offline."""
    n = int(args.sessions)
    spec = simulator.preset_cohort("calming", n, int(args.seed), session_duration_s=float(args.duration_s))
    cohort = simulator.generate_cohort(spec)
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(args.store) if args.store else Path(tmp) / "store"
        store = SessionStore(root, writer=True)
        server = IngestServer(("127.0.0.1", 0), store, SegmenterConfig()).start()
        try:
            for profile, frames in zip(cohort.profiles, cohort.sessions()):
                send_frames(frames, server.address, "max", participant=profile.participant_id)
        finally:
            server.stop()
        metrics = store_metrics(store)
        rows = trend_rows(metrics)
        (root / "fig6.csv").write_text(_trend_csv(rows))
        verdicts = [classify(m).verdict for m in metrics]
        report = template_feedback(metrics[-1], classify(metrics[-1]))
        store.save_report(metrics[-1].session_id, report.to_dict())
        store.close()

    trends = _trend_summary(metrics)
    p_stab = [m.scalar("pressure_gf.stabilization_index") for m in metrics]
    a_stab = [m.scalar("audio_rms.stabilization_index") for m in metrics]
    hr = [m.scalar("heart_rate.slope_per_min") for m in metrics]
    rr = [m.scalar("respiratory_rate.slope_per_min") for m in metrics]
    checks = {
        "pressure": trends["pressure_gf.mean"].get("r", 0) > 0.5
        and np.mean([s is not None and s < 1 for s in p_stab]) >= 0.8,
        "noise": trends["audio_rms.mean"].get("r", 0) < -0.5
        and np.mean([s is not None and s < 1 for s in a_stab]) >= 0.8,
        "respiratory_rate": float(np.median(rr)) < 0,
        "heart_rate": float(np.median(hr)) < 0 and verdicts.count("calming") >= 0.9 * len(verdicts),
    }
    checks = {k: bool(v) for k, v in checks.items()}
    ok = len(metrics) == n and all(checks.values()) and report.source == "template"
    signs = {
        "pressure_vs_session": "+" if trends["pressure_gf.mean"].get("r", 0) > 0 else "-",
        "noise_vs_session": "+" if trends["audio_rms.mean"].get("r", 0) > 0 else "-",
        "respiratory_rate_within_session": "-" if float(np.median(rr)) < 0 else "+",
        "heart_rate_within_session": "-" if float(np.median(hr)) < 0 else "+",
    }
    summary = {"ok": ok, "sessions": len(metrics), "signs": signs, "checks": checks,
               "trends": trends, "calming": verdicts.count("calming")}
    text = "\n".join(
        [f"{name:32s} {sign}  {'PASS' if checks[key] else 'FAIL'}"
         for (name, sign), key in zip(signs.items(), ("pressure", "noise", "respiratory_rate", "heart_rate"))]
        + [f"sessions {len(metrics)}/{n}, calming {verdicts.count('calming')}, report '{report.prompt_words[0]}'",
           "selftest " + ("PASS" if ok else "FAIL")]
    )
    _emit(args, summary, text)
    return 0 if ok else 2


COMMANDS = {
    "simulate": cmd_simulate,
    "serve": cmd_serve,
    "replay": cmd_replay,
    "analyze": cmd_analyze,
    "aggregate": cmd_aggregate,
    "report": cmd_report,
    "selftest": cmd_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _resolve(parser.parse_args(argv))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"emotioncarrier {args.command}: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, StoreError, StatsError, OSError, ValueError) as exc:
        print(f"emotioncarrier {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("unexpected failure", exc_info=True)
        print(f"emotioncarrier {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
