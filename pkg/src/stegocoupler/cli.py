"""Command-line surface: key generation, encode, decode, security audit,
and benchmark sweeps.

Exit codes: 0 success, 1 usage or I/O error, 2 codec/channel/protocol
error. All subcommands are deterministic for a fixed --seed (STEGO_SEED is
the environment fallback). No key or message material is ever printed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .channels import ChannelSpec, parse_channel_spec
from .cipher import MAX_BLOCK_BITS, Key, bits_from_bytes, bytes_from_bits, decrypt, encrypt, gen_key
from .codec import DEFAULT_MAX_TOKENS, DEFAULT_THRESHOLD, StegotextFile, decode, encode
from .errors import StegoError
from .harness import (
    TrialConfig,
    export_sweep_csv,
    kl_report,
    run_trials,
    summarize,
    threshold_sweep,
    write_trial_reports,
)
from .probability import Rng


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Validated common knobs shared by the coding subcommands."""

    channel: ChannelSpec | None
    block_bits: int = 10
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0

    def validate(self) -> None:
        if not 1 <= self.block_bits <= MAX_BLOCK_BITS:
            raise UsageError(f"--block-bits must be in [1, {MAX_BLOCK_BITS}]")
        if self.threshold <= 0:
            raise UsageError("--threshold must be positive")


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("STEGO_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"STEGO_SEED must be an integer, got {env!r}") from exc
    return int.from_bytes(os.urandom(8), "big")


def _read_message(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    return Path(path).read_bytes()


def _write_message(path: str, data: bytes) -> None:
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        Path(path).write_bytes(data)


def _cmd_keygen(args) -> int:
    if args.bits <= 0:
        raise UsageError("--bits must be positive")
    rng = Rng(_resolve_seed(args.seed))
    gen_key(args.bits, rng).save(args.out)
    print(f"wrote {args.bits}-bit key to {args.out}")
    return 0


def _cmd_encode(args) -> int:
    cfg = RunConfig(parse_channel_spec(args.channel), args.block_bits,
                    args.threshold, _resolve_seed(args.seed))
    cfg.validate()
    message = _read_message(getattr(args, "in"))
    if not message:
        raise UsageError("empty message")
    if args.min_tokens > args.max_tokens:
        raise UsageError("--min-tokens cannot exceed --max-tokens")
    bits = bits_from_bytes(message)
    key = Key.load(args.key, bits.size)
    ciphertext = encrypt(bits, key, block_bits=cfg.block_bits)
    channel = cfg.channel.build()
    coupling_steps = []
    tokens = encode(
        ciphertext, channel, Rng(cfg.seed), threshold=cfg.threshold,
        min_tokens=args.min_tokens, max_tokens=args.max_tokens,
        observer=coupling_steps.append,
    )
    StegotextFile(cfg.channel, cfg.block_bits, cfg.threshold,
                  ciphertext.n_blocks, tokens).save(args.out)
    if args.render_out:
        Path(args.render_out).write_text(channel.render(tokens))
    print(f"encoded {bits.size} bits into {len(tokens)} tokens "
          f"({len(coupling_steps)} coupling) -> {args.out}")
    return 0


def _cmd_decode(args) -> int:
    stego = StegotextFile.load(getattr(args, "in"))
    key = Key.load(args.key, args.bits)
    if len(key) % 8 != 0:
        raise UsageError("key bit length must be a multiple of 8 for byte output")
    channel = stego.channel.build()
    result = decode(
        stego.tokens, channel, block_bits=stego.block_bits,
        n_blocks=stego.n_blocks, threshold=stego.threshold,
        bit_length=len(key),
    )
    _write_message(args.out, bytes_from_bits(decrypt(result.bits, key)))
    if args.out != "-":
        print(f"decoded {len(key)} bits from {result.tokens_used} coupling "
              f"tokens -> {args.out}")
    return 0


def _trial_config(args) -> TrialConfig:
    cfg = RunConfig(parse_channel_spec(args.channel), args.block_bits,
                    args.threshold)
    cfg.validate()
    if args.bits <= 0:
        raise UsageError("--bits must be positive")
    return TrialConfig(
        channel=cfg.channel, block_bits=cfg.block_bits,
        threshold=cfg.threshold, bit_length=args.bits,
        max_tokens=args.max_tokens,
    )


def _cmd_audit(args) -> int:
    report = kl_report(_trial_config(args), args.trials,
                       _resolve_seed(args.seed), args.jobs)
    report["within_1e-9"] = report["max_kl_bits"] <= 1e-9
    print(json.dumps(report, indent=2))
    return 0


def _cmd_bench(args) -> int:
    config = _trial_config(args)
    seed = _resolve_seed(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = run_trials(config, args.trials, seed, args.jobs)
    write_trial_reports(out_dir / "trials.jsonl", reports)
    summary = summarize(reports).to_json()
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if args.sweep_thresholds:
        thresholds = [float(v) for v in args.sweep_thresholds.split(",")]
        rows = threshold_sweep(config, thresholds, args.trials, seed, args.jobs)
        export_sweep_csv(rows, out_dir / "sweep.csv")
    print(json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stegocoupler",
        description="Perfectly secure steganography over autoregressive "
                    "channels via iterative entropy coupling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_channel=True):
        if with_channel:
            p.add_argument("--channel", required=True,
                           help="uniform:K | markov:ORDER:PATH | scripted:PATH"
                                " | remote:HOST:PORT, optional +topk=K/+topp=P")
        p.add_argument("--block-bits", type=int, default=10)
        p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
        p.add_argument("--seed", type=int, default=None,
                       help="defaults to STEGO_SEED or fresh entropy")
        p.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)

    p = sub.add_parser("keygen", help="generate a one-time-pad key file")
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_keygen)

    p = sub.add_parser("encode", help="encrypt and encode a message")
    common(p)
    p.add_argument("--key", required=True)
    p.add_argument("--in", required=True, help="message file, or - for stdin")
    p.add_argument("--out", required=True, help="stegotext JSON path")
    p.add_argument("--min-tokens", type=int, default=0)
    p.add_argument("--render-out", default=None,
                   help="optionally render the stegotext for human viewing")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode and decrypt a stegotext file")
    p.add_argument("--key", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True, help="message file, or - for stdout")
    p.add_argument("--bits", type=int, default=None,
                   help="ciphertext bit length if not a multiple of 4")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("audit", help="per-step KL security audit")
    common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--bits", type=int, default=80)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("bench", help="trial sweep with JSONL/summary output")
    common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--bits", type=int, default=80)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sweep-thresholds", default=None,
                   help="comma-separated descending list for an error-rate sweep")
    p.set_defaults(func=_cmd_bench)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StegoError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
