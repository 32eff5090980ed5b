import struct
import subprocess
import sys
import time

import numpy as np
import pytest

from simdps.diffusion import SamplerConfig, heun_stochastic_sample, log_schedule
from simdps.errors import (
    CapabilityError,
    DenoiserConnectionError,
    DenoiserDimensionError,
    DenoiserTimeout,
    ExternalDenoiserError,
)
from simdps.external import (
    HEADER,
    STATUS_OK,
    ExternalDenoiser,
    decode_request_header,
    encode_request,
    encode_response,
    external_denoise,
)
from simdps.guidance import GuidanceConfig, GuidanceState, PosteriorScore
from simdps.priors import GaussianPrior
from simdps.signal import AudioSignal, GapMask, apply_mask

SERVER = f"{sys.executable} -m simdps.denoise_server"


def stdio(args=""):
    return f"stdio:{SERVER} {args}".strip()


@pytest.fixture
def tcp_server():
    procs = []

    def start(args=""):
        p = subprocess.Popen([sys.executable, "-m", "simdps.denoise_server", "--tcp", "127.0.0.1:0", *args.split()],
                             stdout=subprocess.PIPE, text=True)
        procs.append(p)
        line = p.stdout.readline().split()
        assert line[0] == "LISTENING"
        return f"tcp:127.0.0.1:{line[1]}"

    yield start
    for p in procs:
        p.kill()
        p.wait()


class TestWireFormat:
    def test_request_layout(self):
        blob = encode_request(np.array([1.0, -2.0]), 0.5)
        assert blob[:4] == b"SDPS"
        assert struct.unpack_from("<H", blob, 4)[0] == 1
        assert struct.unpack_from("<I", blob, 6)[0] == 2
        assert struct.unpack_from("<d", blob, 10)[0] == 0.5
        assert HEADER.size == 18 and len(blob) == 18 + 8
        np.testing.assert_array_equal(np.frombuffer(blob[18:], "<f4"), [1.0, -2.0])
        assert decode_request_header(blob[:18]) == (b"SDPS", 1, 2, 0.5)

    def test_response_layout(self):
        blob = encode_response(STATUS_OK, [0.25])
        assert blob == b"\x00" + struct.pack("<f", 0.25)
        assert encode_response(2) == b"\x02"


@pytest.mark.parametrize("transport", ["stdio", "tcp"])
class TestServers:
    def uri(self, transport, tcp_server, args=""):
        return stdio(args) if transport == "stdio" else tcp_server(args)

    def test_echo(self, transport, tcp_server, rng):
        x = rng.normal(size=257).astype(np.float32).astype(np.float64)
        with ExternalDenoiser(self.uri(transport, tcp_server, "--kind echo")) as d:
            np.testing.assert_array_equal(external_denoise(d, x, 1.0), x)
            d.ping()

    def test_gaussian_matches_local(self, transport, tcp_server, rng):
        local = GaussianPrior(0.3, 2.0)
        with ExternalDenoiser(self.uri(transport, tcp_server, "--kind gaussian --mean 0.3 --var 2.0")) as d:
            for sigma in (8.0, 1.0, 0.05):
                x = rng.normal(size=100) * np.sqrt(2 + sigma ** 2)
                ref = local.denoise(x, sigma)
                got = d.denoise(x, sigma)
                assert np.max(np.abs(got - ref) / np.maximum(1, np.abs(ref))) < 1e-6

    def test_dimension_rejected(self, transport, tcp_server):
        with ExternalDenoiser(self.uri(transport, tcp_server, "--kind echo --dim 16")) as d:
            assert d.denoise(np.zeros(16), 1.0).shape == (16,)
            with pytest.raises(DenoiserDimensionError):
                d.denoise(np.zeros(15), 1.0)

    def test_timeout(self, transport, tcp_server):
        with ExternalDenoiser(self.uri(transport, tcp_server, "--kind stall"), timeout=0.5) as d:
            t = time.monotonic()
            with pytest.raises(DenoiserTimeout):
                d.denoise(np.zeros(8), 1.0)
            assert time.monotonic() - t < 3


def test_server_dying_mid_run_aborts_sampler(rng):
    n = 16
    mask = GapMask(n, 4, 9)
    obs = apply_mask(AudioSignal(rng.normal(size=n), 1.0), mask)
    with ExternalDenoiser(stdio("--kind gaussian --die-after 5"), timeout=5) as d:
        score = PosteriorScore(GuidanceState(obs, d), GuidanceConfig(grad_mode="identity_jacobian"))
        with pytest.raises(ExternalDenoiserError) as info:
            heun_stochastic_sample(score, log_schedule(10), SamplerConfig(0.0), n=n)
        assert "exit code 17" in str(info.value)
        assert d.requests == 4


def test_bad_uri():
    with pytest.raises(ExternalDenoiserError):
        ExternalDenoiser("http://example")


def test_unreachable_tcp():
    with pytest.raises(DenoiserConnectionError):
        ExternalDenoiser("tcp:127.0.0.1:1", timeout=1)


def test_missing_command():
    with pytest.raises(DenoiserConnectionError):
        ExternalDenoiser("stdio:/nonexistent/denoiser")


def test_no_vjp():
    with ExternalDenoiser(stdio("--kind echo")) as d:
        assert d.has_vjp is False
        with pytest.raises(CapabilityError):
            d.vjp(np.zeros(2), 1.0, np.zeros(2))


def test_batched_rows(rng):
    x = rng.normal(size=(3, 10)).astype(np.float32).astype(np.float64)
    with ExternalDenoiser(stdio("--kind echo")) as d:
        np.testing.assert_array_equal(d.denoise(x, 1.0), x)
        assert d.requests == 3
