"""Sparse video fingerprints from frame edge energy.

A video is reduced to one number per frame (mean gradient magnitude, the
"edge energy"), extrema of that time series are located, and a short
spectrum descriptor is computed around each extremum. Only those few
descriptors represent the video downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .binio import Reader, Writer, append_checksum, atomic_write_bytes, strip_checksum
from .errors import (
    FileFormatError,
    InvalidInputError,
    TruncatedFileError,
    VersionMismatchError,
)

FRAMES_MAGIC = b"VEEF"
FRAMES_VERSION = 1
_FRAMES_HEADER = struct.Struct("<4sHIIIIQ")

FINGERPRINT_MAGIC = b"VEED"
FINGERPRINT_VERSION = 1

MAX_KIND = "max"
MIN_KIND = "min"


@dataclass(frozen=True)
class ExtremumPoint:
    """A strict local extremum of an edge-energy series."""

    t: int
    kind: str


def _as_frame(frame: np.ndarray) -> np.ndarray:
    arr = np.asarray(frame)
    if arr.ndim != 2:
        raise InvalidInputError(f"frame must be 2-D (height, width); got shape {arr.shape}")
    if arr.shape[0] < 3 or arr.shape[1] < 3:
        raise InvalidInputError(f"frame must be at least 3x3; got {arr.shape[0]}x{arr.shape[1]}")
    return arr


def gradient_magnitude(frame: np.ndarray) -> np.ndarray:
    """Per-pixel Sobel gradient magnitude with replicate-edge padding."""
    frame = _as_frame(frame)
    return _batch_gradient_magnitude(frame[None].astype(np.float64))[0]


def _batch_gradient_magnitude(frames: np.ndarray) -> np.ndarray:
    """Sobel magnitude for a float64 stack of shape (n, h, w)."""
    p = np.pad(frames, ((0, 0), (1, 1), (1, 1)), mode="edge")
    right = p[:, :-2, 2:] + 2.0 * p[:, 1:-1, 2:] + p[:, 2:, 2:]
    left = p[:, :-2, :-2] + 2.0 * p[:, 1:-1, :-2] + p[:, 2:, :-2]
    gx = right - left
    bottom = p[:, 2:, :-2] + 2.0 * p[:, 2:, 1:-1] + p[:, 2:, 2:]
    top = p[:, :-2, :-2] + 2.0 * p[:, :-2, 1:-1] + p[:, :-2, 2:]
    gy = bottom - top
    return np.sqrt(gx * gx + gy * gy)


def edge_energy(frame: np.ndarray) -> float:
    """Mean per-pixel gradient magnitude of a single frame."""
    return float(gradient_magnitude(frame).mean())


_EE_CHUNK = 256


def ee_series(frames: np.ndarray | Iterable[np.ndarray]) -> np.ndarray:
    """Edge energy of every frame, as a float64 time series.

    Accepts a (n, h, w) array or any iterable of equally sized 2-D frames.
    """
    if isinstance(frames, np.ndarray):
        if frames.ndim != 3:
            raise InvalidInputError(f"frame stack must be 3-D; got shape {frames.shape}")
        stack = frames
    else:
        frame_list = [np.asarray(f) for f in frames]
        if not frame_list:
            return np.zeros(0, dtype=np.float64)
        shape = frame_list[0].shape
        for i, f in enumerate(frame_list):
            if f.shape != shape:
                raise InvalidInputError(
                    f"frame {i} has shape {f.shape}, expected {shape} like frame 0"
                )
        stack = np.stack(frame_list)

    if stack.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    _as_frame(stack[0])

    out = np.empty(stack.shape[0], dtype=np.float64)
    for start in range(0, stack.shape[0], _EE_CHUNK):
        chunk = stack[start:start + _EE_CHUNK].astype(np.float64)
        out[start:start + _EE_CHUNK] = _batch_gradient_magnitude(chunk).mean(axis=(1, 2))
    return out


def find_extrema(
    series: np.ndarray, half_window: int, min_separation: int = 3
) -> list[ExtremumPoint]:
    """Strict local extrema of a series, filtered to usable window positions.

    A point is an extremum when it is strictly above (maximum) or strictly
    below (minimum) every existing neighbor within +-min_separation, so
    plateaus never qualify. Points whose [t - half_window, t + half_window]
    window does not fit inside the series are dropped.
    """
    if min_separation < 1:
        raise InvalidInputError("min_separation must be >= 1")
    v = np.asarray(series, dtype=np.float64)
    n = v.shape[0]
    if n < 2 * half_window + 1:
        return []

    m = min_separation
    lo = np.full(n + 2 * m, -np.inf)
    hi = np.full(n + 2 * m, np.inf)
    lo[m:m + n] = v
    hi[m:m + n] = v

    is_max = np.ones(n, dtype=bool)
    is_min = np.ones(n, dtype=bool)
    for d in range(1, m + 1):
        is_max &= (v > lo[m - d:m - d + n]) & (v > lo[m + d:m + d + n])
        is_min &= (v < hi[m - d:m - d + n]) & (v < hi[m + d:m + d + n])

    fits = np.zeros(n, dtype=bool)
    fits[half_window:n - half_window] = True

    points = [(int(t), MAX_KIND) for t in np.nonzero(is_max & fits)[0]]
    points += [(int(t), MIN_KIND) for t in np.nonzero(is_min & fits)[0]]
    points.sort()
    return [ExtremumPoint(t, kind) for t, kind in points]


def descriptor(
    series: np.ndarray, point: ExtremumPoint, half_window: int, n_coeffs: int
) -> np.ndarray:
    """Spectrum magnitudes of the windowed series around one extremum.

    Takes the 2*half_window + 1 samples centered at the extremum, applies a
    symmetric raised-cosine (Hann) taper, and returns the magnitudes of
    frequency bins 1..n_coeffs of its discrete Fourier transform. Bin 0 is
    dropped so a constant background contributes nothing.
    """
    if not 1 <= n_coeffs <= half_window:
        raise InvalidInputError(
            f"n_coeffs must be in [1, half_window]; got {n_coeffs} with half_window {half_window}"
        )
    v = np.asarray(series, dtype=np.float64)
    t = point.t
    if t - half_window < 0 or t + half_window >= v.shape[0]:
        raise InvalidInputError(
            f"window [{t - half_window}, {t + half_window}] falls outside series of length {v.shape[0]}"
        )
    samples = v[t - half_window:t + half_window + 1]
    window = np.hanning(2 * half_window + 1)
    spectrum = np.fft.rfft(samples * window)
    return np.abs(spectrum[1:n_coeffs + 1])


def fingerprint_series(
    series: np.ndarray, half_window: int, n_coeffs: int, min_separation: int = 3
) -> list[tuple[int, np.ndarray]]:
    """Descriptors at every usable extremum of an edge-energy series."""
    points = find_extrema(series, half_window, min_separation)
    return [(p.t, descriptor(series, p, half_window, n_coeffs)) for p in points]


def fingerprint_video(
    frames: np.ndarray | Iterable[np.ndarray],
    half_window: int,
    n_coeffs: int,
    min_separation: int = 3,
) -> list[tuple[int, np.ndarray]]:
    """Full pipeline: frames -> edge energy -> extrema -> descriptors.

    Returns (frame index, descriptor) pairs sorted by frame index.
    """
    return fingerprint_series(ee_series(frames), half_window, n_coeffs, min_separation)


def write_frames(
    path, frames: np.ndarray, frame_rate: tuple[int, int] = (25, 1)
) -> None:
    """Write a raw grayscale frame stream file.

    Layout: magic "VEEF", version u16, width u32, height u32, frame rate
    numerator and denominator u32 each, frame count u64 (all little-endian),
    then frame_count planar frames of width*height bytes, row-major.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise InvalidInputError(f"expected a (n, h, w) frame stack; got shape {frames.shape}")
    if frames.dtype != np.uint8:
        raise InvalidInputError(f"frames must be uint8; got {frames.dtype}")
    n, h, w = frames.shape
    header = _FRAMES_HEADER.pack(
        FRAMES_MAGIC, FRAMES_VERSION, w, h, frame_rate[0], frame_rate[1], n
    )
    atomic_write_bytes(path, header + np.ascontiguousarray(frames).tobytes())


def read_frames(path) -> tuple[np.ndarray, tuple[int, int]]:
    """Read a raw frame stream file; returns (frames, (rate_num, rate_den))."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _FRAMES_HEADER.size:
        raise TruncatedFileError(f"{path}: too short for a frame stream header")
    magic, version, w, h, rate_num, rate_den, count = _FRAMES_HEADER.unpack_from(data)
    if magic != FRAMES_MAGIC:
        raise FileFormatError(f"{path}: not a frame stream file (bad magic)")
    if version != FRAMES_VERSION:
        raise VersionMismatchError(f"{path}: unsupported frame stream version {version}")
    expected = _FRAMES_HEADER.size + count * h * w
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise FileFormatError(f"{path}: trailing bytes after frame data")
    frames = np.frombuffer(data, dtype=np.uint8, offset=_FRAMES_HEADER.size)
    return frames.reshape(count, h, w).copy(), (rate_num, rate_den)


def frame_sequences_equal(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def write_fingerprints(path, fingerprints: Sequence[tuple[int, np.ndarray]]) -> None:
    """Write (frame index, descriptor) records.

    Layout: magic "VEED", version u16, descriptor length u32, record count
    u64, then per record a u32 frame index and the descriptor as
    little-endian float64; trailing 64-bit checksum.
    """
    if fingerprints:
        n_coeffs = int(np.asarray(fingerprints[0][1]).shape[0])
    else:
        n_coeffs = 0
    out = Writer()
    out.raw(FINGERPRINT_MAGIC)
    out.u16(FINGERPRINT_VERSION)
    out.u32(n_coeffs)
    out.u64(len(fingerprints))
    for t, values in fingerprints:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (n_coeffs,):
            raise InvalidInputError(
                f"descriptor at t={t} has shape {values.shape}, expected ({n_coeffs},)"
            )
        out.u32(t)
        out.raw(values.astype("<f8").tobytes())
    atomic_write_bytes(path, append_checksum(out.getvalue()))


def read_fingerprints(path) -> list[tuple[int, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 6:
        raise TruncatedFileError(f"{path}: too short for a fingerprint file")
    if data[:4] != FINGERPRINT_MAGIC:
        raise FileFormatError(f"{path}: not a fingerprint file (bad magic)")
    version = int.from_bytes(data[4:6], "little")
    if version != FINGERPRINT_VERSION:
        raise VersionMismatchError(f"{path}: unsupported fingerprint version {version}")
    payload = strip_checksum(data, str(path))
    reader = Reader(payload[6:], what=str(path))
    n_coeffs = reader.u32()
    count = reader.u64()
    records = []
    for _ in range(count):
        t = reader.u32()
        records.append((t, reader.f64_array(n_coeffs, (n_coeffs,))))
    reader.expect_end()
    return records
