import struct

import numpy as np
import pytest

from simdps.errors import DataError, WavFormatError
from simdps.signal import AudioSignal
from simdps.wavio import load_wav, read_wav_bytes, save_wav, wav_bytes


def riff(fmt_chunk, data, extra=b""):
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk + extra
    body += b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def pcm_fmt(channels, rate, bits, code=1):
    block = channels * bits // 8
    return struct.pack("<HHIIHH", code, channels, rate, rate * block, block, bits)


def test_int16_full_scale():
    data = np.array([-32768, 0, 16384, 32767], dtype="<i2").tobytes()
    s = read_wav_bytes(riff(pcm_fmt(1, 8000, 16), data))
    np.testing.assert_array_equal(s.samples, [-1.0, 0.0, 0.5, 32767 / 32768])
    assert s.sample_rate == 8000


def test_stereo_float_is_averaged():
    data = np.array([0.2, 0.4, -1.0, 1.0], dtype="<f4").tobytes()
    s = read_wav_bytes(riff(pcm_fmt(2, 8000, 32, code=3), data))
    np.testing.assert_allclose(s.samples, [0.3, 0.0], atol=1e-7)


def test_int24():
    vals = [-(1 << 23), (1 << 22), -1]
    data = b"".join(int(v).to_bytes(3, "little", signed=True) for v in vals)
    s = read_wav_bytes(riff(pcm_fmt(1, 48000, 24), data))
    np.testing.assert_array_equal(s.samples, [-1.0, 0.5, -1 / (1 << 23)])


def test_extensible_wrapper():
    base = pcm_fmt(1, 16000, 16, code=0xFFFE)
    ext = struct.pack("<HHI", 22, 16, 4) + struct.pack("<H", 1) + b"\x00" * 14
    data = np.array([16384], dtype="<i2").tobytes()
    assert read_wav_bytes(riff(base + ext, data)).samples[0] == 0.5


def test_float32_round_trip_is_bit_exact(tmp_path, rng):
    x = rng.normal(size=1001).astype(np.float32).astype(np.float64)
    p = tmp_path / "a.wav"
    save_wav(AudioSignal(x, 44100), p, "float32")
    back = load_wav(p)
    assert back.samples.tobytes() == x.tobytes() and back.sample_rate == 44100


def test_pcm16_clamp_and_rounding(tmp_path):
    x = np.array([1.5, -2.0, 0.5 / 32768, -0.5 / 32768, 1.5 / 32768])
    p = tmp_path / "b.wav"
    save_wav(AudioSignal(x, 8000), p, "pcm16")
    raw = np.frombuffer(p.read_bytes()[44:], dtype="<i2")
    np.testing.assert_array_equal(raw, [32767, -32768, 1, -1, 2])


def test_empty_signal_writes_nothing(tmp_path):
    class Empty:
        samples = np.zeros(0)
        sample_rate = 8000

    p = tmp_path / "c.wav"
    with pytest.raises(DataError):
        save_wav(Empty(), p)
    assert not p.exists()


def test_unknown_output_format():
    with pytest.raises(DataError):
        wav_bytes(AudioSignal(np.zeros(3), 8000), "mp3")


@pytest.mark.parametrize(
    "blob, chunk",
    [
        (b"RIFX" + b"\x00" * 40, "RIFF"),
        (riff(pcm_fmt(1, 8000, 12), b"\x00\x00"), "fmt "),
        (riff(pcm_fmt(1, 8000, 8, code=2), b"\x00"), "fmt "),
        (riff(pcm_fmt(1, 8000, 16), b"\x00\x00")[:-1] + b"", "data"),
        (b"RIFF\x04\x00\x00\x00WAVE", "fmt "),
    ],
)
def test_errors_name_the_chunk(blob, chunk):
    with pytest.raises(WavFormatError) as info:
        read_wav_bytes(blob)
    assert info.value.chunk == chunk
    assert f"[{chunk}]" in str(info.value)


def test_truncated_data_chunk():
    blob = riff(pcm_fmt(1, 8000, 16), b"\x00" * 8)
    blob = blob[:-4]
    with pytest.raises(WavFormatError) as info:
        read_wav_bytes(blob)
    assert info.value.chunk == "data"


def test_skips_unknown_chunks():
    data = np.array([100], dtype="<i2").tobytes()
    odd = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    s = read_wav_bytes(riff(pcm_fmt(1, 8000, 16), data, extra=odd))
    assert s.samples[0] == 100 / 32768
