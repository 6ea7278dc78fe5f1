from __future__ import annotations

import json
import os

import pytest

from stegocoupler.cli import cli_main


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    code = cli_main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestKeygen:
    def test_deterministic_with_seed(self, tmp_path, capsys):
        a, b = tmp_path / "a.hex", tmp_path / "b.hex"
        assert run_cli(capsys, "keygen", "--bits", "80", "--seed", "7",
                       "--out", str(a))[0] == 0
        assert run_cli(capsys, "keygen", "--bits", "80", "--seed", "7",
                       "--out", str(b))[0] == 0
        assert a.read_text() == b.read_text()
        assert len(a.read_text().strip()) == 20

    def test_env_seed_fallback(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("STEGO_SEED", "99")
        a, b = tmp_path / "a.hex", tmp_path / "b.hex"
        run_cli(capsys, "keygen", "--bits", "40", "--out", str(a))
        run_cli(capsys, "keygen", "--bits", "40", "--out", str(b))
        assert a.read_text() == b.read_text()

    def test_rejects_nonpositive_bits(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "keygen", "--bits", "0",
                               "--out", str(tmp_path / "k.hex"))
        assert code == 1
        assert "usage error" in err


class TestEncodeDecode:
    @pytest.fixture
    def message(self, tmp_path):
        path = tmp_path / "msg.bin"
        path.write_bytes(b"meet at the old mill")
        return path

    @pytest.fixture
    def key(self, tmp_path, message, capsys):
        path = tmp_path / "key.hex"
        bits = len(message.read_bytes()) * 8
        run_cli(capsys, "keygen", "--bits", str(bits), "--seed", "5",
                "--out", str(path))
        return path

    def test_roundtrip_uniform(self, tmp_path, capsys, message, key):
        stego = tmp_path / "stego.json"
        out = tmp_path / "out.bin"
        code, _, _ = run_cli(capsys, "encode", "--channel", "uniform:40",
                             "--key", str(key), "--in", str(message),
                             "--out", str(stego), "--seed", "21")
        assert code == 0
        code, _, _ = run_cli(capsys, "decode", "--key", str(key),
                             "--in", str(stego), "--out", str(out))
        assert code == 0
        assert out.read_bytes() == message.read_bytes()

    def test_roundtrip_markov_with_render(self, tmp_path, capsys, message,
                                          key, corpus_path):
        stego = tmp_path / "stego.json"
        out = tmp_path / "out.bin"
        render = tmp_path / "cover.txt"
        spec = f"markov:2:{corpus_path}"
        code, _, _ = run_cli(capsys, "encode", "--channel", spec,
                             "--key", str(key), "--in", str(message),
                             "--out", str(stego), "--seed", "8",
                             "--min-tokens", "64",
                             "--render-out", str(render))
        assert code == 0
        rendered = render.read_text()
        assert len(rendered) >= 64
        assert set(rendered) <= set(corpus_path.read_text())
        code, _, _ = run_cli(capsys, "decode", "--key", str(key),
                             "--in", str(stego), "--out", str(out))
        assert code == 0
        assert out.read_bytes() == message.read_bytes()

    def test_encode_idempotent(self, tmp_path, capsys, message, key):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for path in (a, b):
            run_cli(capsys, "encode", "--channel", "uniform:40",
                    "--key", str(key), "--in", str(message),
                    "--out", str(path), "--seed", "33")
        assert a.read_text() == b.read_text()

    def test_wrong_key_length_fails(self, tmp_path, capsys, message):
        short = tmp_path / "short.hex"
        run_cli(capsys, "keygen", "--bits", "8", "--seed", "1",
                "--out", str(short))
        stego = tmp_path / "stego.json"
        code, _, err = run_cli(capsys, "encode", "--channel", "uniform:40",
                               "--key", str(short), "--in", str(message),
                               "--out", str(stego), "--seed", "1")
        assert code == 2
        assert "length-mismatch" in err

    def test_decode_insufficient_tokens_exit_2(self, tmp_path, capsys,
                                               message, key):
        stego = tmp_path / "stego.json"
        run_cli(capsys, "encode", "--channel", "uniform:40", "--key", str(key),
                "--in", str(message), "--out", str(stego), "--seed", "2")
        obj = json.loads(stego.read_text())
        obj["tokens"] = obj["tokens"][:2]
        stego.write_text(json.dumps(obj))
        code, _, err = run_cli(capsys, "decode", "--key", str(key),
                               "--in", str(stego), "--out",
                               str(tmp_path / "out.bin"))
        assert code == 2
        assert "insufficient-tokens" in err

    def test_token_bounds_validated(self, tmp_path, capsys, message, key):
        code, _, err = run_cli(capsys, "encode", "--channel", "uniform:40",
                               "--key", str(key), "--in", str(message),
                               "--out", str(tmp_path / "s.json"),
                               "--min-tokens", "50", "--max-tokens", "10",
                               "--seed", "1")
        assert code == 1
        assert "min-tokens" in err

    def test_block_bits_validated(self, tmp_path, capsys, message, key):
        code, _, err = run_cli(capsys, "encode", "--channel", "uniform:40",
                               "--key", str(key), "--in", str(message),
                               "--out", str(tmp_path / "s.json"),
                               "--block-bits", "21", "--seed", "1")
        assert code == 1
        assert "block-bits" in err

    def test_no_secrets_in_output(self, tmp_path, capsys, message, key):
        stego = tmp_path / "stego.json"
        code, out, err = run_cli(capsys, "encode", "--channel", "uniform:40",
                                 "--key", str(key), "--in", str(message),
                                 "--out", str(stego), "--seed", "4")
        key_hex = key.read_text().strip()
        message_text = message.read_bytes().decode()
        for surface in (out, err, stego.read_text()):
            assert key_hex not in surface
            assert message_text not in surface


class TestUsage:
    def test_no_command_is_usage_error(self, capsys):
        assert run_cli(capsys)[0] == 1

    def test_unknown_command(self, capsys):
        assert run_cli(capsys, "transmogrify")[0] == 1

    def test_help_exits_zero(self, capsys):
        assert run_cli(capsys, "--help")[0] == 0

    def test_bad_channel_spec_exit_2(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "audit", "--channel", "mystery:1",
                               "--trials", "1", "--seed", "0")
        assert code == 2

    def test_missing_message_file(self, tmp_path, capsys):
        key = tmp_path / "key.hex"
        run_cli(capsys, "keygen", "--bits", "8", "--seed", "0",
                "--out", str(key))
        code, _, _ = run_cli(capsys, "encode", "--channel", "uniform:40",
                             "--key", str(key), "--in",
                             str(tmp_path / "nope.bin"),
                             "--out", str(tmp_path / "s.json"), "--seed", "0")
        assert code == 1


class TestAuditAndBench:
    def test_audit_reports_tiny_kl(self, capsys):
        code, out, _ = run_cli(capsys, "audit", "--channel", "uniform:40",
                               "--trials", "5", "--seed", "3")
        assert code == 0
        report = json.loads(out)
        assert report["max_kl_bits"] <= 1e-9
        assert report["within_1e-9"] is True

    def test_bench_writes_reports(self, tmp_path, capsys):
        out_dir = tmp_path / "bench"
        code, out, _ = run_cli(
            capsys, "bench", "--channel", "uniform:40", "--trials", "6",
            "--seed", "13", "--out-dir", str(out_dir),
            "--sweep-thresholds", "1.0,0.1",
        )
        assert code == 0
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["trials"] == 6
        assert summary["failures"] == 0
        assert summary["global_max_kl"] <= 1e-9
        lines = (out_dir / "trials.jsonl").read_text().strip().splitlines()
        assert len(lines) == 6
        sweep = (out_dir / "sweep.csv").read_text().splitlines()
        assert sweep[0] == "threshold,error_rate,ci95"
        assert len(sweep) == 3
        assert json.loads(out) == summary

    def test_bench_no_secret_material(self, tmp_path, capsys):
        # benchmark artifacts carry metrics only: no bit arrays, no keys
        out_dir = tmp_path / "bench"
        run_cli(capsys, "bench", "--channel", "uniform:40", "--trials", "2",
                "--seed", "1", "--out-dir", str(out_dir))
        for line in (out_dir / "trials.jsonl").read_text().splitlines():
            record = json.loads(line)
            assert "bits" not in record
            assert "key" not in record
            assert set(record) >= {"seed", "tokens_coupling", "bit_errors"}
