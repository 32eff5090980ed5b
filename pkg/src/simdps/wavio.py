"""RIFF/WAV reading and writing.

Reads 8/16/24/32-bit integer PCM and 32/64-bit IEEE float, including the
WAVE_FORMAT_EXTENSIBLE wrapper; channels are averaged to mono and integer
samples are scaled by ``1 / 2**(bits - 1)``. Writes 16-bit PCM or 32-bit
float, mono.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DataError, WavFormatError
from .signal import AudioSignal

__all__ = ["load_wav", "save_wav", "read_wav_bytes", "wav_bytes"]

PCM = 0x0001
IEEE_FLOAT = 0x0003
EXTENSIBLE = 0xFFFE


def _chunks(buf):
    pos = 12
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        start = pos + 8
        yield cid, start, size
        pos = start + size + (size & 1)


def read_wav_bytes(buf):
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file", chunk="RIFF")
    fmt = None
    data = None
    for cid, start, size in _chunks(buf):
        if cid == b"fmt ":
            if size < 16 or start + size > len(buf):
                raise WavFormatError(f"chunk too short ({size} bytes)", chunk="fmt ")
            fmt = _parse_fmt(buf[start:start + size])
        elif cid == b"data":
            if fmt is None:
                raise WavFormatError("data chunk before fmt chunk", chunk="fmt ")
            if start + size > len(buf):
                raise WavFormatError(
                    f"declares {size} bytes but only {len(buf) - start} remain", chunk="data"
                )
            data = buf[start:start + size]
            break
    if fmt is None:
        raise WavFormatError("missing fmt chunk", chunk="fmt ")
    if data is None:
        raise WavFormatError("missing data chunk", chunk="data")
    code, channels, rate, bits = fmt
    samples = _decode(data, code, bits)
    frames = samples.size // channels
    if frames < 1:
        raise WavFormatError("no complete sample frames", chunk="data")
    samples = samples[: frames * channels].reshape(frames, channels)
    mono = samples[:, 0] if channels == 1 else samples.mean(axis=1)
    return AudioSignal(mono, float(rate))


def _parse_fmt(chunk):
    code, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", chunk, 0)
    if code == EXTENSIBLE:
        if len(chunk) < 40:
            raise WavFormatError("extensible header too short", chunk="fmt ")
        code = struct.unpack_from("<H", chunk, 24)[0]
    if channels < 1:
        raise WavFormatError("zero channels", chunk="fmt ")
    if rate < 1:
        raise WavFormatError("zero sample rate", chunk="fmt ")
    if code == PCM and bits not in (8, 16, 24, 32):
        raise WavFormatError(f"unsupported PCM bit depth {bits}", chunk="fmt ")
    if code == IEEE_FLOAT and bits not in (32, 64):
        raise WavFormatError(f"unsupported float bit depth {bits}", chunk="fmt ")
    if code not in (PCM, IEEE_FLOAT):
        raise WavFormatError(f"unsupported codec 0x{code:04x}", chunk="fmt ")
    return code, channels, rate, bits


def _decode(data, code, bits):
    if code == IEEE_FLOAT:
        dt = "<f4" if bits == 32 else "<f8"
        n = len(data) // (bits // 8)
        out = np.frombuffer(data, dtype=dt, count=n).astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise WavFormatError("non-finite float samples", chunk="data")
        return out
    if bits == 8:
        return (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        raw = np.frombuffer(data, dtype="<i2", count=len(data) // 2)
    elif bits == 24:
        b = np.frombuffer(data, dtype=np.uint8, count=(len(data) // 3) * 3).reshape(-1, 3)
        raw = b[:, 0].astype(np.int32) | (b[:, 1].astype(np.int32) << 8) | (b[:, 2].astype(np.int32) << 16)
        raw = np.where(raw >= 1 << 23, raw - (1 << 24), raw)
    else:
        raw = np.frombuffer(data, dtype="<i4", count=len(data) // 4)
    return raw.astype(np.float64) / float(1 << (bits - 1))


def load_wav(path):
    with open(path, "rb") as fh:
        return read_wav_bytes(fh.read())


def _pcm16(x):
    x = np.clip(x, -1.0, 32767.0 / 32768.0) * 32768.0
    # round half away from zero
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype("<i2")


def wav_bytes(signal, fmt="pcm16"):
    x = np.asarray(signal.samples, dtype=np.float64)
    if x.size == 0:
        raise DataError("refusing to write an empty signal")
    if not np.all(np.isfinite(x)):
        raise DataError("refusing to write non-finite samples")
    rate = int(round(signal.sample_rate))
    if fmt == "pcm16":
        payload = _pcm16(x).tobytes()
        fmt_chunk = struct.pack("<HHIIHH", PCM, 1, rate, rate * 2, 2, 16)
        extra = b""
    elif fmt == "float32":
        payload = x.astype("<f4").tobytes()
        fmt_chunk = struct.pack("<HHIIHHH", IEEE_FLOAT, 1, rate, rate * 4, 4, 32, 0)
        extra = b"fact" + struct.pack("<II", 4, x.size)
    else:
        raise DataError(f"unknown WAV output format {fmt!r}")
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk + extra
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def save_wav(signal, path, fmt="pcm16"):
    blob = wav_bytes(signal, fmt)
    tmp = f"{path}.part"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
