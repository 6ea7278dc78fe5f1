"""Protocol conformance: every op and every error path, first against the
in-process server, then over real stdio against a served subprocess."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from lm_channel_adapter import AdapterConfig, AdapterServer, TransformersBackend


@pytest.fixture(scope="module")
def server(tiny_model_dir):
    backend = TransformersBackend(str(tiny_model_dir))
    return AdapterServer(backend, AdapterConfig(model=str(tiny_model_dir),
                                                top_k=40))


def ask(server, **request) -> dict:
    return json.loads(server.handle_line(json.dumps(request)))


class TestOps:
    def test_reset_acknowledged(self, server):
        assert ask(server, id=1, op="reset", context_text="Once upon") == \
            {"id": 1, "ok": True}

    def test_next_dist_top40(self, server):
        ask(server, id=2, op="reset", context_text="hello world")
        reply = ask(server, id=3, op="next_dist")
        assert reply["id"] == 3
        assert len(reply["ids"]) == 40
        assert len(reply["probs"]) == 40
        assert abs(sum(reply["probs"]) - 1.0) <= 1e-9
        assert reply["ids"] == sorted(reply["ids"])

    def test_repeated_queries_identical(self, server):
        ask(server, id=4, op="reset", context_text="abc")
        a = server.handle_line(json.dumps({"id": 5, "op": "next_dist"}))
        b = server.handle_line(json.dumps({"id": 5, "op": "next_dist"}))
        assert a == b

    def test_append_outside_truncated_support_accepted(self, server):
        ask(server, id=6, op="reset", context_text="abc")
        reply = ask(server, id=7, op="next_dist")
        outside = next(t for t in range(66) if t not in set(reply["ids"]))
        assert ask(server, id=8, op="append", token=outside) == \
            {"id": 8, "ok": True}
        # the conditional now reflects the extended context
        after = ask(server, id=9, op="next_dist")
        assert after["probs"] != reply["probs"]

    def test_append_outside_vocab_rejected(self, server):
        reply = ask(server, id=10, op="append", token=66)
        assert "unknown-token" in reply["error"]

    def test_render(self, server, tiny_model_dir):
        backend = TransformersBackend(str(tiny_model_dir))
        tokens = backend.encode_text("so it goes")
        reply = ask(server, id=11, op="render", tokens=tokens)
        assert reply == {"id": 11, "text": "so it goes"}

    def test_probability_decimal_roundtrip(self, server):
        ask(server, id=12, op="reset", context_text="xyz")
        reply = server.handle_line(json.dumps({"id": 13, "op": "next_dist"}))
        parsed = json.loads(reply)
        again = json.loads(json.dumps(parsed))
        assert again["probs"] == parsed["probs"]


class TestErrorPaths:
    def test_unknown_op(self, server):
        reply = ask(server, id=20, op="transmogrify")
        assert reply["id"] == 20
        assert "unknown-op" in reply["error"]

    def test_malformed_json(self, server):
        reply = json.loads(server.handle_line("}{ nope"))
        assert reply["id"] == 0
        assert "malformed-request" in reply["error"]

    def test_missing_id(self, server):
        reply = json.loads(server.handle_line(json.dumps({"op": "next_dist"})))
        assert reply["id"] == 0
        assert "malformed-request" in reply["error"]

    def test_bad_field_types(self, server):
        assert "malformed-request" in ask(server, id=21, op="append",
                                          token="seven")["error"]
        assert "malformed-request" in ask(server, id=22, op="render",
                                          tokens="abc")["error"]
        assert "malformed-request" in ask(server, id=23, op="reset",
                                          context_text=7)["error"]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdapterConfig(model="x", top_k=40, top_p=0.9)
        with pytest.raises(ValueError):
            AdapterConfig(model="x", top_k=0)
        with pytest.raises(ValueError):
            AdapterConfig(model="x", top_p=1.5)


class TestStdioTransport:
    def test_serve_over_real_pipes(self, tiny_model_dir):
        proc = subprocess.Popen(
            [sys.executable, "-m", "lm_channel_adapter.cli",
             "--model", str(tiny_model_dir), "--top-k", "40",
             "--transport", "stdio"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )

        def ask_raw(request: dict) -> bytes:
            proc.stdin.write(json.dumps(request).encode() + b"\n")
            proc.stdin.flush()
            return proc.stdout.readline()

        try:
            assert json.loads(ask_raw({"id": 1, "op": "reset",
                                       "context_text": "Weather on the ridge"}
                                      )) == {"id": 1, "ok": True}
            first = ask_raw({"id": 2, "op": "next_dist"})
            second = ask_raw({"id": 2, "op": "next_dist"})
            assert first == second  # byte-identical repeated query
            payload = json.loads(first)
            assert len(payload["ids"]) == 40
            assert abs(sum(payload["probs"]) - 1.0) <= 1e-9
            assert json.loads(ask_raw({"id": 3, "op": "append", "token":
                                       payload["ids"][0]}))["ok"] is True
            assert "error" in json.loads(ask_raw({"id": 4, "op": "nope"}))
            proc.stdin.close()  # transport drop: clean shutdown
            assert proc.wait(timeout=30) == 0
        finally:
            proc.kill()
