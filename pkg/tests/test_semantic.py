import http.server
import json
import threading

import numpy as np

from socnav import semantic
from socnav.perception import Track


def make_track(positions, label="sorting clothes", dt=0.25):
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    return Track(track_id=0, positions=positions,
                 keypoints=np.zeros((n, 17, 3)), steps=list(range(n)),
                 dt=dt, truth_label=label, ped_id="p0")


def still_track(label="sorting clothes"):
    return make_track(np.tile([2.0, 1.0], (6, 1)), label)


def moving_track(step, label="carrying boxes"):
    pos = np.zeros((6, 2))
    pos[:, 0] = np.arange(6) * step
    return make_track(pos, label)


# ---------------------------------------------------------------------------
# text features


def test_encode_text_unit_norm():
    v = semantic.encode_text("a person walking quickly")
    assert v.shape == (128,)
    assert abs(float(np.linalg.norm(v)) - 1.0) < 1e-12


def test_encode_text_order_invariant():
    a = semantic.encode_text("red chair near table")
    b = semantic.encode_text("table near red chair")
    assert np.array_equal(a, b)


def test_encode_text_distinguishes_texts():
    a = semantic.encode_text("a person sweeping the floor")
    b = semantic.encode_text("a person carrying boxes")
    assert not np.array_equal(a, b)


def test_encode_text_empty_is_zero():
    assert not semantic.encode_text("").any()
    assert not semantic.encode_text("!!!").any()


def test_encode_text_case_insensitive():
    assert np.array_equal(semantic.encode_text("Sofa TABLE"),
                          semantic.encode_text("sofa table"))


# ---------------------------------------------------------------------------
# rule-based interpretation


def test_motion_clause_thresholds():
    assert semantic.motion_clause(0.0) == "standing still"
    assert semantic.motion_clause(0.09) == "standing still"
    assert semantic.motion_clause(0.5) == "walking slowly"
    assert semantic.motion_clause(1.2) == "walking quickly"


def test_mean_speed():
    t = moving_track(0.25)   # 0.25 m per 0.25 s frame -> 1 m/s
    assert semantic.mean_speed(t.positions, t.dt) == 1.0
    assert semantic.mean_speed(np.zeros((1, 2)), 0.25) == 0.0


def test_rule_description_stationary():
    desc = semantic.interpret(still_track())
    assert desc.text == "A person is sorting clothes, standing still."
    assert desc.source == "rule"


def test_rule_description_fast_walker():
    desc = semantic.interpret(moving_track(0.3))   # 1.2 m/s
    assert desc.text == "A person is carrying boxes, walking quickly."


def test_rule_description_slow_walker():
    desc = semantic.interpret(moving_track(0.1, label="strolling"))
    assert desc.text == "A person is strolling, walking slowly."


# ---------------------------------------------------------------------------
# remote interpretation


class _Handler(http.server.BaseHTTPRequestHandler):
    last_payload = None

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        type(self).last_payload = json.loads(body)
        out = json.dumps({"description": "A person is folding towels."})
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(out.encode())

    def log_message(self, *args):
        pass


def test_remote_interpreter_round_trip():
    server = http.server.HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/describe"
        cfg = semantic.InterpreterConfig(kind="remote", endpoint=url)
        desc = semantic.interpret(still_track(), cfg)
        assert desc.text == "A person is folding towels."
        assert desc.source == "remote"
        payload = _Handler.last_payload
        assert len(payload["track"]) == 6
        assert "prompt" in payload
        # the ground-truth activity label must never be sent out
        assert "sorting clothes" not in json.dumps(payload)
    finally:
        server.shutdown()
        server.server_close()


def test_remote_failure_falls_back_to_rule():
    cfg = semantic.InterpreterConfig(
        kind="remote", endpoint="http://127.0.0.1:1/unreachable", timeout=0.2)
    desc = semantic.interpret(still_track(), cfg)
    assert desc.text == "A person is sorting clothes, standing still."
    assert desc.source == "fallback"


def test_interpreter_from_env(monkeypatch):
    monkeypatch.delenv(semantic.ENDPOINT_ENV_VAR, raising=False)
    assert semantic.interpreter_from_env().kind == "rule"
    monkeypatch.setenv(semantic.ENDPOINT_ENV_VAR, "http://example.test/v1")
    cfg = semantic.interpreter_from_env()
    assert cfg.kind == "remote"
    assert cfg.endpoint == "http://example.test/v1"
