"""Reference servers for the external denoiser protocol.

    python -m simdps.denoise_server --kind echo
    python -m simdps.denoise_server --kind gaussian --mean 0 --var 1 --tcp 127.0.0.1:0

Without ``--tcp`` the server talks over stdin/stdout. With ``--tcp`` it
prints ``LISTENING <port>`` once bound and serves connections one at a time.
``--kind stall`` reads requests and never answers (for timeout tests);
``--die-after K`` exits abruptly on the K-th non-handshake request.
"""

import argparse
import socketserver
import sys
import time

import numpy as np

from .external import (
    HEADER,
    MAGIC,
    STATUS_DIMENSION,
    STATUS_FAILURE,
    STATUS_OK,
    STATUS_PROTOCOL,
    VERSION,
    encode_response,
)
from .priors import GaussianPrior


def make_handler(kind, mean=0.0, var=1.0):
    if kind == "echo":
        return lambda x, sigma: x
    if kind == "gaussian":
        prior = GaussianPrior(np.array([mean]), np.array([var]))
        return lambda x, sigma: prior.denoise(x, sigma)
    if kind == "stall":
        return None
    raise ValueError(f"unknown server kind {kind!r}")


def _read_exact(read, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def serve_stream(read, write, handler, dim=None, die_after=None):
    """Answer requests until EOF or a protocol error."""
    served = 0
    while True:
        head = _read_exact(read, HEADER.size)
        if head is None:
            return
        magic, version, n, sigma = HEADER.unpack(head)
        if magic != MAGIC or version != VERSION:
            write(encode_response(STATUS_PROTOCOL))
            return
        payload = _read_exact(read, 4 * n)
        if payload is None:
            return
        if n == 0:
            write(encode_response(STATUS_OK))
            continue
        served += 1
        if die_after is not None and served >= die_after:
            sys.exit(17)
        if handler is None:
            time.sleep(3600)
            return
        if dim is not None and n != dim:
            write(encode_response(STATUS_DIMENSION))
            continue
        x = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        try:
            out = handler(x, sigma)
        except Exception as exc:  # report, keep serving
            print(f"handler failed: {exc}", file=sys.stderr)
            write(encode_response(STATUS_FAILURE))
            continue
        write(encode_response(STATUS_OK, out))


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m simdps.denoise_server")
    ap.add_argument("--kind", choices=("echo", "gaussian", "stall"), default="echo")
    ap.add_argument("--mean", type=float, default=0.0)
    ap.add_argument("--var", type=float, default=1.0)
    ap.add_argument("--dim", type=int, default=None, help="reject other lengths")
    ap.add_argument("--die-after", type=int, default=None)
    ap.add_argument("--tcp", default=None, metavar="HOST:PORT")
    args = ap.parse_args(argv)
    handler = make_handler(args.kind, args.mean, args.var)

    if args.tcp is None:
        out = sys.stdout.buffer

        def write(data):
            out.write(data)
            out.flush()

        serve_stream(sys.stdin.buffer.read, write, handler, args.dim, args.die_after)
        return 0

    host, _, port = args.tcp.rpartition(":")

    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            sock = self.request
            serve_stream(sock.recv, sock.sendall, handler, args.dim, args.die_after)

    with socketserver.TCPServer((host, int(port)), Handler) as server:
        print(f"LISTENING {server.server_address[1]}", flush=True)
        server.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
