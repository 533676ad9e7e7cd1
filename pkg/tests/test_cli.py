import json
import os
import signal
import subprocess
import sys
import time

import pytest

from emotioncarrier import cli
from emotioncarrier.store import SessionStore


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def small_store(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "store"
    assert cli.main(["simulate", "--sessions", "3", "--seed", "3", "--duration-s", "180", "--store", str(root)]) == 0
    return root


def test_simulate_to_directory(tmp_path, capsys):
    out = tmp_path / "d"
    code, stdout, _ = run(capsys, "simulate", "--preset", "calming", "--sessions", 30, "--seed", 7,
                          "--duration-s", 60, "--out", out)
    assert code == 0
    files = sorted(p.name for p in out.glob("session_*.jsonl"))
    assert files == [f"session_{k:03d}.jsonl" for k in range(30)]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and len(manifest["sessions"]) == 30
    first = (out / "session_000.jsonl").read_text().splitlines()[0]
    assert first.startswith('{"v":1,"device":"carrier-01","ch":')
    assert "simulated 30 calming sessions" in stdout


def test_simulate_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "simulate", "--sessions", 2, "--seed", 11, "--duration-s", 30, "--out", tmp_path / name)[0] == 0
    for f in ("session_000.jsonl", "session_001.jsonl", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_analyze_json_and_timeline(small_store, tmp_path, capsys):
    sid = SessionStore(small_store).list_sessions()[0]
    code, out, _ = run(capsys, "analyze", "--store", small_store, "--session", sid, "--json",
                       "--dump-timeline", tmp_path / "t.csv")
    assert code == 0
    doc = json.loads(out)
    assert doc["session_id"] == sid and doc["duration_s"] > 100
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t_ms,pressure_gf,audio_rms,heart_rate,respiratory_rate"
    assert len(lines) == int(doc["duration_s"]) + 2


def test_aggregate_writes_csv(small_store, tmp_path, capsys):
    code, out, _ = run(capsys, "aggregate", "--store", small_store, "--out", tmp_path / "f.csv", "--json")
    assert code == 0
    assert json.loads(out)["sessions"] == 3
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0].startswith("session_index,mean_pressure_gf")
    assert len(rows) == 4


def test_aggregate_empty_store(tmp_path, capsys):
    code, _, err = run(capsys, "aggregate", "--store", tmp_path / "nothing")
    assert code == 2 and "no sessions" in err
    SessionStore(tmp_path / "empty", writer=True).close()
    code, _, err = run(capsys, "aggregate", "--store", tmp_path / "empty")
    assert code == 2 and "no sessions" in err


def test_report_offline(small_store, capsys):
    sid = SessionStore(small_store).list_sessions()[-1]
    code, out, _ = run(capsys, "report", "--store", small_store, "--session", sid, "--offline", "--json")
    assert code == 0
    rep = json.loads(out)
    assert rep["source"] == "template" and 1 <= len(rep["prompt_words"]) <= 5
    assert SessionStore(small_store).load_report(sid) == rep


def test_unknown_session_is_runtime_error(small_store, capsys):
    code, _, err = run(capsys, "analyze", "--store", small_store, "--session", "01NOSUCHSESSION")
    assert code == 2 and err


@pytest.mark.parametrize("argv", [[], ["bogus"], ["simulate", "--sessions", "many"], ["analyze"],
                                  ["simulate", "--preset", "sleepy", "--out", "x"], ["simulate"]])
def test_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"window": 12, "grid-step-ms": 500, "seed": 99}))
    parser = cli.build_parser()
    args = cli._resolve(parser.parse_args(["analyze", "--session", "x", "--config", str(cfg), "--window", "20"]))
    assert args.window == 20  # flag beats config
    assert args.grid_step_ms == 500  # config beats default
    args = cli._resolve(parser.parse_args(["simulate", "--out", "o"]))
    assert args.seed == 7 and args.sessions == 30 and args.preset == "calming"


def test_selftest(capsys):
    code, out, _ = run(capsys, "selftest", "--sessions", 12, "--duration-s", 300)
    assert code == 0
    assert out.strip().endswith("selftest PASS")


def test_serve_subprocess_round_trip(tmp_path):
    """``serve`` in a child process receives a simulated stream and persists it on SIGTERM."""
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    store = tmp_path / "store"
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    proc = subprocess.Popen([sys.executable, "-m", "emotioncarrier", "serve", "--store", str(store),
                             "--listen", f"127.0.0.1:{port}", "--json"],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env)
    try:
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            try:
                socket.create_connection(("127.0.0.1", port), timeout=0.2).close()
                break
            except OSError:
                time.sleep(0.05)
        assert cli.main(["simulate", "--sessions", "2", "--duration-s", "60", "--stream", f"127.0.0.1:{port}"]) == 0
    finally:
        proc.send_signal(signal.SIGTERM)
        out, err = proc.communicate(timeout=20)
    assert proc.returncode == 0, err
    assert json.loads(out)["sessions"] == 2
    assert len(SessionStore(store).list_sessions()) == 2
