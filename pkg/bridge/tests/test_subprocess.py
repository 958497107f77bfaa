"""Process-boundary tests: real child process, real pipes, fuzzing."""

import json
import subprocess
import sys

import numpy as np
import pytest

SERVE = [sys.executable, "-m", "tabpfn_bridge", "serve", "--model", "stub"]


def spawn():
    return subprocess.Popen(SERVE, stdin=subprocess.PIPE,
                            stdout=subprocess.PIPE, text=True, bufsize=1)


def ask(proc, msg):
    proc.stdin.write(json.dumps(msg) + "\n")
    proc.stdin.flush()
    line = proc.stdout.readline()
    assert line, "bridge closed its output stream"
    return json.loads(line)


def shutdown(proc):
    try:
        proc.stdin.write(json.dumps({"op": "shutdown"}) + "\n")
        proc.stdin.flush()
        proc.wait(timeout=10)
    except Exception:
        proc.kill()


def test_handshake_and_predict_roundtrip():
    proc = spawn()
    try:
        hello = ask(proc, {"op": "hello"})
        assert (hello["max_context"], hello["max_features"],
                hello["max_classes"]) == (3000, 100, 10)
        rng = np.random.default_rng(0)
        reply = ask(proc, {
            "op": "predict",
            "ctx_x": rng.normal(size=(30, 4)).tolist(),
            "ctx_y": rng.integers(0, 3, size=30).tolist(),
            "qry_x": rng.normal(size=(11, 4)).tolist(),
            "n_classes": 3, "n_ensemble": 2, "seed": 1,
        })
        assert reply["op"] == "probs"
        rows = np.asarray(reply["rows"])
        assert rows.shape == (11, 3)
        assert np.abs(rows.sum(axis=1) - 1.0).max() <= 1e-6
    finally:
        shutdown(proc)
    assert proc.returncode == 0


def test_fuzz_1000_malformed_lines_never_kills_the_process():
    rng = np.random.default_rng(99)
    proc = spawn()
    try:
        sent = 0
        for _ in range(1000):
            kind = rng.integers(0, 5)
            if kind == 0:
                payload = "".join(chr(rng.integers(33, 127))
                                  for _ in range(rng.integers(1, 60)))
            elif kind == 1:
                payload = "{" * int(rng.integers(1, 20))
            elif kind == 2:
                payload = json.dumps(
                    {"op": "predict", "ctx_x": "nope"})
            elif kind == 3:
                payload = json.dumps(rng.integers(0, 10).item())
            else:
                payload = json.dumps({"op": f"op{rng.integers(0, 5)}"})
            proc.stdin.write(payload + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
            assert line, f"no reply after {sent} fuzz lines"
            reply = json.loads(line)  # every reply is one valid object
            assert reply["op"] == "error"
            sent += 1
        assert proc.poll() is None
        hello = ask(proc, {"op": "hello"})
        assert hello["op"] == "hello"
    finally:
        shutdown(proc)


def test_eof_terminates_cleanly():
    proc = spawn()
    proc.stdin.close()
    proc.wait(timeout=10)
    assert proc.returncode == 0
