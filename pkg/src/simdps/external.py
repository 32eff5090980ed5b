"""Out-of-process denoiser over a tiny binary request/response protocol.

Request (little endian)::

    b"SDPS" | version u16 | n u32 | sigma f64 | n x f32 samples

Response::

    status u8 | n x f32 samples        (samples only when status == 0)

A request with ``n = 0`` is the handshake/ping and is answered with a bare
status byte. Transports are a child process's stdin/stdout
(``stdio:<command line>``) or a TCP socket (``tcp:host:port``). Status
codes: 0 ok, 1 protocol error (the server then closes the session),
2 dimension mismatch, 3 server-side failure.
"""

from __future__ import annotations

import os
import select
import shlex
import socket
import struct
import subprocess
import tempfile
import time

import numpy as np

from .diffusion import Denoiser
from .errors import (
    CapabilityError,
    DenoiserConnectionError,
    DenoiserDimensionError,
    DenoiserProtocolError,
    DenoiserTimeout,
    ExternalDenoiserError,
)

__all__ = [
    "MAGIC",
    "VERSION",
    "STATUS_OK",
    "STATUS_PROTOCOL",
    "STATUS_DIMENSION",
    "STATUS_FAILURE",
    "encode_request",
    "decode_request_header",
    "encode_response",
    "ExternalDenoiser",
    "external_denoise",
]

MAGIC = b"SDPS"
VERSION = 1
HEADER = struct.Struct("<4sHId")
STATUS_OK = 0
STATUS_PROTOCOL = 1
STATUS_DIMENSION = 2
STATUS_FAILURE = 3


def encode_request(x, sigma, version=VERSION):
    x = np.asarray(x, dtype="<f4").reshape(-1)
    return HEADER.pack(MAGIC, version, x.size, float(sigma)) + x.tobytes()


def decode_request_header(buf):
    """``(magic, version, n, sigma)`` from the first 18 bytes of a request."""
    return HEADER.unpack(buf)


def encode_response(status, samples=None):
    out = struct.pack("<B", status)
    if status == STATUS_OK and samples is not None:
        out += np.asarray(samples, dtype="<f4").reshape(-1).tobytes()
    return out


class _PipeChannel:
    def __init__(self, command):
        self._stderr = tempfile.TemporaryFile()
        try:
            self.proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=self._stderr,
                bufsize=0,
            )
        except OSError as exc:
            raise DenoiserConnectionError(f"cannot start {command!r}: {exc}") from exc
        self.describe = f"stdio:{command}"

    def send(self, data):
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise DenoiserConnectionError(f"{self.describe}: write failed ({exc}){self.diagnostics()}") from exc

    def recv(self, n, timeout):
        fd = self.proc.stdout.fileno()
        buf = bytearray()
        deadline = time.monotonic() + timeout
        while len(buf) < n:
            left = deadline - time.monotonic()
            if left <= 0:
                raise DenoiserTimeout(f"{self.describe}: no reply within {timeout:g} s")
            ready, _, _ = select.select([fd], [], [], left)
            if not ready:
                continue
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                raise DenoiserConnectionError(
                    f"{self.describe}: server closed the stream{self.diagnostics()}"
                )
            buf += chunk
        return bytes(buf)

    def diagnostics(self):
        try:
            code = self.proc.wait(timeout=1.0)
        except subprocess.TimeoutExpired:
            code = None
        self._stderr.seek(0)
        tail = self._stderr.read()[-400:].decode("utf-8", "replace").strip()
        parts = []
        if code is not None:
            parts.append(f"exit code {code}")
        if tail:
            parts.append(f"stderr: {tail}")
        return f" ({'; '.join(parts)})" if parts else ""

    def close(self, graceful=True):
        try:
            if not graceful:
                raise subprocess.TimeoutExpired(self.proc.args, 0)
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=2)
        except (subprocess.TimeoutExpired, OSError):
            self.proc.kill()
            self.proc.wait()
        finally:
            if self.proc.stdout:
                self.proc.stdout.close()
            self._stderr.close()


class _SocketChannel:
    def __init__(self, host, port, timeout):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise DenoiserConnectionError(f"tcp:{host}:{port}: {exc}") from exc
        self.describe = f"tcp:{host}:{port}"

    def send(self, data):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise DenoiserConnectionError(f"{self.describe}: send failed ({exc})") from exc

    def recv(self, n, timeout):
        buf = bytearray()
        deadline = time.monotonic() + timeout
        while len(buf) < n:
            left = deadline - time.monotonic()
            if left <= 0:
                raise DenoiserTimeout(f"{self.describe}: no reply within {timeout:g} s")
            self.sock.settimeout(left)
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout:
                raise DenoiserTimeout(f"{self.describe}: no reply within {timeout:g} s") from None
            except OSError as exc:
                raise DenoiserConnectionError(f"{self.describe}: {exc}") from exc
            if not chunk:
                raise DenoiserConnectionError(f"{self.describe}: server closed the connection")
            buf += chunk
        return bytes(buf)

    def diagnostics(self):
        return ""

    def close(self, graceful=True):
        self.sock.close()


def _open(uri, timeout):
    scheme, _, rest = uri.partition(":")
    if scheme == "stdio" and rest:
        return _PipeChannel(rest)
    if scheme == "tcp":
        host, _, port = rest.rpartition(":")
        if host and port.isdigit():
            return _SocketChannel(host, int(port), timeout)
    raise ExternalDenoiserError(f"bad denoiser URI {uri!r}; use stdio:<cmd> or tcp:host:port")


class ExternalDenoiser(Denoiser):
    """Client session to an external denoiser.

    The session is serial: one request in flight at a time. ``timeout``
    bounds each request; connecting and the handshake may take up to
    ``startup_timeout`` since servers often need a while to load. It exposes
    no Jacobian, so guidance must run with ``grad_mode='identity_jacobian'``.
    """

    has_vjp = False

    def __init__(self, uri, timeout=30.0, handshake=True, startup_timeout=30.0):
        self.uri = uri
        self.timeout = float(timeout)
        self._chan = _open(uri, max(self.timeout, startup_timeout))
        self.requests = 0
        self._broken = False
        if handshake:
            try:
                self.ping(max(self.timeout, startup_timeout))
            except BaseException:
                self.close()
                raise

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._chan is not None:
            # after a failed request the server state is unknown: do not wait on it
            self._chan.close(graceful=not self._broken)
            self._chan = None

    def _roundtrip(self, x, sigma, timeout=None):
        if self._chan is None:
            raise DenoiserConnectionError("session is closed")
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        try:
            return self._exchange(x, sigma, timeout)
        except DenoiserDimensionError:
            raise
        except ExternalDenoiserError:
            self._broken = True
            raise

    def _exchange(self, x, sigma, timeout):
        self._chan.send(encode_request(x, sigma))
        timeout = self.timeout if timeout is None else timeout
        status = self._chan.recv(1, timeout)[0]
        if status == STATUS_DIMENSION:
            raise DenoiserDimensionError(f"{self.uri}: server rejected dimension {x.size}")
        if status == STATUS_PROTOCOL:
            raise DenoiserProtocolError(f"{self.uri}: server reported a protocol error")
        if status != STATUS_OK:
            raise DenoiserProtocolError(f"{self.uri}: server returned status {status}")
        payload = self._chan.recv(4 * x.size, timeout)
        if x.size:
            self.requests += 1
        return np.frombuffer(payload, dtype="<f4").astype(np.float64)

    def ping(self, timeout=None):
        """Empty request; the first one also waits out the server's start-up."""
        self._roundtrip(np.zeros(0), 0.0, timeout)

    def denoise(self, x, sigma):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self._roundtrip(x, sigma)
        flat = x.reshape(-1, x.shape[-1])
        out = np.stack([self._roundtrip(row, sigma) for row in flat])
        return out.reshape(x.shape)

    def vjp(self, x, sigma, v):
        raise CapabilityError("external denoisers expose no VJP; use identity_jacobian guidance")


def external_denoise(endpoint, x, sigma):
    return endpoint.denoise(x, sigma)
