"""Binary and text file formats.

MRIF  frame stacks: ``b"MRIF"``, u16 version=1, u32 frames, u16 height,
      u16 width, then frames*height*width unsigned bytes (row-major).
MGCF  feature tracks: ``b"MGCF"``, u16 version=1, u32 frames, u16 order,
      then frames*(order+1) float32 spectra followed by frames float32 F0.
WAV   RIFF PCM 16-bit mono at 20 kHz.
Key-value reports: one ``key=value`` per line.

All integers and floats are little-endian. Writers go through a temporary
file and an atomic rename.
"""

import os
import struct
import tempfile
import wave
from contextlib import contextmanager

import numpy as np

SAMPLE_RATE = 20000
FRAME_SIZE = 68


class FormatError(ValueError):
    """Base class for unreadable input files."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class SampleRateError(FormatError):
    pass


@contextmanager
def atomic_write(path, mode="wb"):
    """Write to a sibling temporary file and rename it over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_header(path, blob, magic, fmt):
    if blob[:4] != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {blob[:4]!r}")
    size = struct.calcsize(fmt)
    if len(blob) < 4 + size:
        raise TruncatedError(f"{path}: header truncated ({len(blob)} bytes)")
    fields = struct.unpack(fmt, blob[4:4 + size])
    if fields[0] != 1:
        raise FormatError(f"{path}: unsupported version {fields[0]}")
    return fields, 4 + size


def _check_payload(path, blob, offset, expected, what):
    got = len(blob) - offset
    if got < expected:
        raise TruncatedError(f"{path}: header declares {what} needing {expected} bytes,"
                             f" payload holds {got}")
    if got > expected:
        raise CountMismatchError(f"{path}: header declares {what} ({expected} bytes)"
                                 f" but payload holds {got}")


# --------------------------------------------------------------------- MRIF


def write_mrif(path, frames):
    """Write ``[T, 68, 68]`` frames; floats in [0, 1] are scaled to bytes."""
    frames = np.asarray(frames)
    if frames.dtype != np.uint8:
        frames = np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)
    t, h, w = frames.shape
    with atomic_write(path) as fh:
        fh.write(b"MRIF" + struct.pack("<HIHH", 1, t, h, w))
        fh.write(np.ascontiguousarray(frames).tobytes())


def read_mrif(path, scale=True):
    """Read an MRIF file; returns float pixels in [0, 1] (or raw bytes)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    (_, t, h, w), off = _read_header(path, blob, b"MRIF", "<HIHH")
    if (h, w) != (FRAME_SIZE, FRAME_SIZE):
        raise FormatError(f"{path}: frame size {h}x{w}, expected {FRAME_SIZE}x{FRAME_SIZE}")
    _check_payload(path, blob, off, t * h * w, f"{t} frames")
    raw = np.frombuffer(blob, dtype=np.uint8, offset=off).reshape(t, h, w)
    return raw.astype(np.float32) / 255.0 if scale else raw.copy()


# --------------------------------------------------------------------- MGCF


def write_mgcf(path, features, f0=None):
    features = np.asarray(features, dtype="<f4")
    t, dim = features.shape
    f0 = np.zeros(t, dtype="<f4") if f0 is None else np.asarray(f0, dtype="<f4")
    if f0.shape != (t,):
        raise ValueError(f"F0 track has shape {f0.shape}, expected ({t},)")
    with atomic_write(path) as fh:
        fh.write(b"MGCF" + struct.pack("<HIH", 1, t, dim - 1))
        fh.write(features.tobytes())
        fh.write(f0.tobytes())


def read_mgcf(path):
    """Return ``(features [T, order+1], f0 [T])`` as float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    (_, t, order), off = _read_header(path, blob, b"MGCF", "<HIH")
    dim = order + 1
    _check_payload(path, blob, off, 4 * t * (dim + 1), f"{t} frames of order {order}")
    data = np.frombuffer(blob, dtype="<f4", offset=off).astype(np.float64)
    return data[:t * dim].reshape(t, dim), data[t * dim:]


# ---------------------------------------------------------------------- WAV


def write_wav(path, audio, sample_rate=SAMPLE_RATE):
    """Write float audio in [-1, 1] as 16-bit PCM mono (clipped)."""
    pcm = np.round(np.clip(np.asarray(audio, dtype=np.float64), -1.0, 1.0) * 32767.0)
    with atomic_write(path) as fh:
        with wave.open(fh, "wb") as wv:
            wv.setnchannels(1)
            wv.setsampwidth(2)
            wv.setframerate(sample_rate)
            wv.writeframes(pcm.astype("<i2").tobytes())


def read_wav(path, sample_rate=SAMPLE_RATE):
    """Read 16-bit PCM mono audio as float64 in [-1, 1]."""
    try:
        with wave.open(os.fspath(path), "rb") as wv:
            rate, channels, width = wv.getframerate(), wv.getnchannels(), wv.getsampwidth()
            n = wv.getnframes()
            raw = wv.readframes(n)
    except (wave.Error, EOFError) as err:
        raise FormatError(f"{path}: not a readable RIFF WAVE file ({err})") from None
    if rate != sample_rate:
        raise SampleRateError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if channels != 1 or width != 2:
        raise FormatError(f"{path}: need 16-bit mono PCM, got {channels} channel(s)"
                          f" of {8 * width} bits")
    if len(raw) != 2 * n:
        raise TruncatedError(f"{path}: header declares {n} samples, payload holds {len(raw) // 2}")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0


# --------------------------------------------------------------- key=value


def write_kv(path, items):
    """Write ``items`` (mapping or pairs) as ``key=value`` lines."""
    pairs = items.items() if hasattr(items, "items") else items
    lines = []
    for key, value in pairs:
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}\n")
    with atomic_write(path, "w") as fh:
        fh.writelines(lines)


def read_kv(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{path}: malformed line {line!r}")
            out[key.strip()] = value.strip()
    return out
