"""Serve a causal LM as a covertext channel over stdio or TCP.

Stdio mode keeps stdout exclusively for protocol replies; all logging goes
to stderr. TCP mode serves one connection at a time.
"""

from __future__ import annotations

import argparse
import socket
import sys

from .backend import TransformersBackend
from .server import AdapterConfig, AdapterServer


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lm-channel-adapter")
    parser.add_argument("--model", required=True,
                        help="model hub id or local checkpoint directory")
    parser.add_argument("--device", default="cpu",
                        help="cpu is the supported deterministic mode")
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--top-k", type=int, default=None)
    group.add_argument("--top-p", type=float, default=None)
    parser.add_argument("--transport", choices=("stdio", "tcp"),
                        default="stdio")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=9000)
    return parser


def serve_stdio(server: AdapterServer) -> None:
    server.serve(sys.stdin.buffer, sys.stdout.buffer)


def serve_tcp(server: AdapterServer, host: str, port: int) -> None:
    with socket.create_server((host, port)) as listener:
        print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
        while True:
            conn, peer = listener.accept()
            print(f"connection from {peer}", file=sys.stderr, flush=True)
            with conn, conn.makefile("rwb") as stream:
                server.serve(stream, stream)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = AdapterConfig(model=args.model, device=args.device,
                               top_k=args.top_k, top_p=args.top_p)
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    print(f"loading {args.model} on {args.device}", file=sys.stderr, flush=True)
    server = AdapterServer(TransformersBackend(args.model, args.device), config)
    print("ready", file=sys.stderr, flush=True)
    try:
        if args.transport == "stdio":
            serve_stdio(server)
        else:
            serve_tcp(server, args.host, args.port)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
