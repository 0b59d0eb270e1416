"""Synthetic corpora, distortions, and retrieval quality measurement."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .binio import atomic_write_bytes
from .config import SearchConfig
from .errors import InvalidInputError
from .fingerprint import fingerprint_video
from .index import InvertedIndex
from .voting import ResultSegment, search


@dataclass(frozen=True)
class GroundTruthEntry:
    """True (query span, reference span) correspondence for one query."""

    query_id: str
    video_id: int
    r_start: int
    r_end: int
    q_start: int
    q_end: int


@dataclass
class EvalReport:
    map_score: float
    per_query_ap: dict[str, float] = field(default_factory=dict)
    mean_search_seconds: float = 0.0
    mean_extract_seconds: float = 0.0
    peak_queue_len: int = 0
    peak_memory_bytes: int = 0


def is_correct(
    result: ResultSegment, gt: GroundTruthEntry, min_overlap: float = 0.6
) -> bool:
    """A result counts when it names the right video and its reference span
    covers at least min_overlap of the true span."""
    if result.video_id != gt.video_id:
        return False
    inter = min(result.r_end, gt.r_end) - max(result.r_start, gt.r_start) + 1
    if inter <= 0:
        return False
    true_len = gt.r_end - gt.r_start + 1
    return inter / true_len >= min_overlap


def average_precision(
    results: Sequence[ResultSegment],
    gt_entries: Sequence[GroundTruthEntry],
    min_overlap: float = 0.6,
) -> float:
    """Precision-at-each-hit averaged over the relevant count.

    Each ground-truth entry can be claimed by at most one result.
    """
    if not gt_entries:
        raise InvalidInputError("average_precision needs at least one ground-truth entry")
    consumed = [False] * len(gt_entries)
    hits = 0
    total = 0.0
    for rank, result in enumerate(results, start=1):
        for k, gt in enumerate(gt_entries):
            if not consumed[k] and is_correct(result, gt, min_overlap):
                consumed[k] = True
                hits += 1
                total += hits / rank
                break
    return total / len(gt_entries)


def per_query_average_precision(
    results_by_query: Mapping[str, Sequence[ResultSegment]],
    ground_truth: Iterable[GroundTruthEntry],
    min_overlap: float = 0.6,
) -> dict[str, float]:
    """AP per query id; queries without ground truth are excluded with a warning."""
    gt_by_query: dict[str, list[GroundTruthEntry]] = {}
    for gt in ground_truth:
        gt_by_query.setdefault(gt.query_id, []).append(gt)
    aps: dict[str, float] = {}
    for query_id in results_by_query:
        entries = gt_by_query.get(query_id)
        if not entries:
            warnings.warn(f"query {query_id!r} has no ground truth; excluded from mAP")
            continue
        aps[query_id] = average_precision(results_by_query[query_id], entries, min_overlap)
    return aps


def mean_average_precision(
    results_by_query: Mapping[str, Sequence[ResultSegment]],
    ground_truth: Iterable[GroundTruthEntry],
    min_overlap: float = 0.6,
) -> float:
    aps = per_query_average_precision(results_by_query, ground_truth, min_overlap)
    if not aps:
        raise InvalidInputError("no queries with ground truth to evaluate")
    return sum(aps.values()) / len(aps)


@dataclass
class Corpus:
    references: list[np.ndarray]
    queries: dict[str, np.ndarray]
    ground_truth: list[GroundTruthEntry]
    frame_rate: tuple[int, int] = (25, 1)


def _smooth_pattern(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Mid-frequency random texture in [-1, 1] (noise plus light box blur)."""
    noise = rng.standard_normal((height, width))
    for axis in (0, 1):
        noise = (noise + np.roll(noise, 1, axis) + np.roll(noise, -1, axis)) / 3.0
    peak = np.abs(noise).max()
    return noise / peak if peak > 0 else noise


def _amplitude_track(rng: np.random.Generator, duration: int) -> np.ndarray:
    """Slowly oscillating contrast in [0.15, 1.0] with many local extrema."""
    t = np.arange(duration, dtype=np.float64)
    track = np.zeros(duration)
    for _ in range(3):
        period = rng.uniform(24.0, 80.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        track += rng.uniform(0.5, 1.0) * np.sin(2.0 * np.pi * t / period + phase)
    low, high = track.min(), track.max()
    if high > low:
        track = (track - low) / (high - low)
    return 0.15 + 0.85 * track


def _render_video(
    rng: np.random.Generator, duration: int, height: int, width: int
) -> np.ndarray:
    pattern = _smooth_pattern(rng, height, width)
    amplitude = _amplitude_track(rng, duration)
    speed = int(rng.integers(1, 4))
    frames = np.empty((duration, height, width), dtype=np.uint8)
    for t in range(duration):
        moved = np.roll(pattern, (speed * t) % width, axis=1)
        frames[t] = np.clip(np.rint(128.0 + amplitude[t] * moved * 120.0), 0, 255)
    return frames


def make_corpus(
    seed: int,
    n_videos: int,
    durations: int | Sequence[int],
    *,
    half_window: int = 16,
    width: int = 64,
    height: int = 64,
    queries_per_video: int = 1,
    query_len: int | None = None,
    frame_rate: tuple[int, int] = (25, 1),
) -> Corpus:
    """Deterministic synthetic reference videos plus subclip queries.

    Each video is a drifting textured pattern whose contrast oscillates, so
    the edge-energy series has plenty of usable extrema. Queries are exact
    temporal subclips with exact ground truth. Identical seeds produce
    identical corpora.
    """
    if isinstance(durations, int):
        durations = [durations] * n_videos
    durations = list(durations)
    if len(durations) != n_videos:
        raise InvalidInputError(
            f"got {len(durations)} durations for {n_videos} videos"
        )
    min_duration = 2 * half_window + 1
    for duration in durations:
        if duration < min_duration:
            raise InvalidInputError(
                f"duration {duration} too short; need at least {min_duration} frames "
                f"to host one analysis window"
            )

    rng = np.random.default_rng(seed)
    references: list[np.ndarray] = []
    queries: dict[str, np.ndarray] = {}
    ground_truth: list[GroundTruthEntry] = []
    query_index = 0
    for video_id, duration in enumerate(durations):
        frames = _render_video(rng, duration, height, width)
        references.append(frames)
        clip_len = query_len if query_len is not None else min(
            duration, max(6 * half_window + 3, duration // 3)
        )
        if clip_len > duration:
            raise InvalidInputError(
                f"query_len {clip_len} exceeds video duration {duration}"
            )
        for _ in range(queries_per_video):
            r_start = int(rng.integers(0, duration - clip_len + 1))
            query_id = f"q{query_index:03d}"
            query_index += 1
            queries[query_id] = frames[r_start:r_start + clip_len].copy()
            ground_truth.append(
                GroundTruthEntry(
                    query_id=query_id,
                    video_id=video_id,
                    r_start=r_start,
                    r_end=r_start + clip_len - 1,
                    q_start=0,
                    q_end=clip_len - 1,
                )
            )
    return Corpus(references, queries, ground_truth, frame_rate)


def add_noise(frames: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Per-pixel zero-mean Gaussian noise, rounded and clamped to [0, 255]."""
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    frames = np.asarray(frames)
    rng = np.random.default_rng(seed)
    noisy = frames.astype(np.float64) + rng.normal(0.0, sigma, size=frames.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def insert_logo(frames: np.ndarray, patch: np.ndarray, x: int, y: int) -> np.ndarray:
    """Overwrite a fixed rectangle with the patch on every frame."""
    frames = np.asarray(frames)
    patch = np.asarray(patch, dtype=np.uint8)
    if patch.ndim != 2:
        raise InvalidInputError(f"logo patch must be 2-D; got shape {patch.shape}")
    ph, pw = patch.shape
    _, h, w = frames.shape
    if x < 0 or y < 0 or x + pw > w or y + ph > h:
        raise InvalidInputError(
            f"logo patch {pw}x{ph} at ({x}, {y}) does not fit in {w}x{h} frames"
        )
    out = frames.copy()
    if ph and pw:
        out[:, y:y + ph, x:x + pw] = patch
    return out


def crop_time(frames: np.ndarray, start: int, end: int) -> np.ndarray:
    """Extract the inclusive temporal span [start, end]."""
    frames = np.asarray(frames)
    if not 0 <= start <= end < frames.shape[0]:
        raise InvalidInputError(
            f"crop span [{start}, {end}] invalid for {frames.shape[0]} frames"
        )
    return frames[start:end + 1].copy()


def distort(frames: np.ndarray, kind: str, seed: int = 0, **params) -> np.ndarray:
    """Apply one named distortion: 'noise' (sigma), 'logo' (patch, x, y),
    or 'crop' (start, end)."""
    if kind == "noise":
        return add_noise(frames, params["sigma"], seed=seed)
    if kind == "logo":
        return insert_logo(frames, params["patch"], params["x"], params["y"])
    if kind == "crop":
        return crop_time(frames, params["start"], params["end"])
    raise InvalidInputError(f"unknown distortion kind {kind!r}")


def evaluate(
    index: InvertedIndex,
    queries: Mapping[str, np.ndarray],
    ground_truth: Sequence[GroundTruthEntry],
    config: SearchConfig,
    min_overlap: float = 0.6,
) -> EvalReport:
    """Run every query through the full pipeline and score the rankings.

    Fingerprint extraction and index search are timed separately.
    """
    if not queries:
        raise InvalidInputError("no queries to evaluate")
    results_by_query: dict[str, list[ResultSegment]] = {}
    extract_times: list[float] = []
    search_times: list[float] = []
    peak_len = 0
    peak_bytes = 0
    for query_id in sorted(queries):
        start = time.perf_counter()
        fingerprints = fingerprint_video(
            queries[query_id], config.half_window, config.n_coeffs, config.min_separation
        )
        extract_times.append(time.perf_counter() - start)
        results, stats = search(index, fingerprints, config)
        search_times.append(stats.wall_seconds)
        peak_len = max(peak_len, stats.peak_queue_len)
        peak_bytes = max(peak_bytes, stats.peak_memory_bytes)
        results_by_query[query_id] = results

    aps = per_query_average_precision(results_by_query, ground_truth, min_overlap)
    if not aps:
        raise InvalidInputError("no queries with ground truth to evaluate")
    return EvalReport(
        map_score=sum(aps.values()) / len(aps),
        per_query_ap=aps,
        mean_search_seconds=sum(search_times) / len(search_times),
        mean_extract_seconds=sum(extract_times) / len(extract_times),
        peak_queue_len=peak_len,
        peak_memory_bytes=peak_bytes,
    )


def format_report(report: EvalReport) -> str:
    lines = [f"mAP: {report.map_score:.4f}"]
    for query_id in sorted(report.per_query_ap):
        lines.append(f"ap {query_id}: {report.per_query_ap[query_id]:.4f}")
    lines.append(f"mean_search_seconds: {report.mean_search_seconds:.4f}")
    lines.append(f"mean_extract_seconds: {report.mean_extract_seconds:.4f}")
    lines.append(f"peak_queue_len: {report.peak_queue_len}")
    lines.append(f"peak_memory_bytes: {report.peak_memory_bytes}")
    return "\n".join(lines) + "\n"


def write_ground_truth(path, entries: Sequence[GroundTruthEntry]) -> None:
    lines = [
        f"{e.query_id}\t{e.video_id}\t{e.r_start}\t{e.r_end}\t{e.q_start}\t{e.q_end}"
        for e in entries
    ]
    text = "\n".join(lines) + ("\n" if lines else "")
    atomic_write_bytes(path, text.encode("utf-8"))


def read_ground_truth(path) -> list[GroundTruthEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise InvalidInputError(
                    f"{path}:{line_no}: expected 6 tab-separated fields, got {len(parts)}"
                )
            try:
                entries.append(
                    GroundTruthEntry(
                        query_id=parts[0],
                        video_id=int(parts[1]),
                        r_start=int(parts[2]),
                        r_end=int(parts[3]),
                        q_start=int(parts[4]),
                        q_end=int(parts[5]),
                    )
                )
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{line_no}: {exc}") from exc
    return entries
