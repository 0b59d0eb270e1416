"""Queue-based temporal voting over signature matches.

True subclip matches share a nearly constant time offset between query
and reference. The voting queue keeps one candidate segment per active
(video, offset) alignment, votes it as consistent matches stream in, and
purges segments that stop receiving votes, so memory stays proportional
to the recent match rate instead of the database size. A classic full
voting table over all (video, offset) buckets is provided as the exact
reference baseline.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .config import SearchConfig
from .errors import ContractViolationError, InvalidInputError
from .hashing import encode_batch
from .index import InvertedIndex, Match

# Nominal bytes per live segment (8 integer fields), used for memory estimates.
SEGMENT_BYTES = 64


def same(offset_a: int, offset_b: int, tol_err: int) -> bool:
    """Whether two query-minus-reference offsets belong to the same alignment."""
    return abs(offset_a - offset_b) < tol_err


@dataclass
class Segment:
    """A candidate alignment accumulating votes in the queue.

    offset is the offset of the most recently accepted pair, so a slowly
    drifting alignment keeps voting the same segment.
    """

    video_id: int
    q_start: int
    q_end: int
    r_start: int
    r_end: int
    offset: int
    votes: int
    last_vote_t_q: int
    seq: int = 0  # creation order, used only for deterministic tie breaks


@dataclass(frozen=True)
class ResultSegment:
    """A finalized, vote-thresholded alignment."""

    video_id: int
    q_start: int
    q_end: int
    r_start: int
    r_end: int
    votes: int


@dataclass
class SearchStats:
    n_signatures: int = 0
    n_matches: int = 0
    peak_queue_len: int = 0
    peak_memory_bytes: int = 0
    wall_seconds: float = 0.0
    # Optional per-step (t_q, queue length after purge) samples.
    trace: list[tuple[int, int]] | None = None


class VotingQueue:
    """Ordered collection of active segments for a single query."""

    def __init__(self, tol_err: int, tol_delete: float, n_conf: int) -> None:
        if tol_err < 0:
            raise InvalidInputError("tol_err must be >= 0")
        if n_conf < 1:
            raise InvalidInputError("n_conf must be >= 1")
        if tol_delete < 0:
            raise InvalidInputError("tol_delete must be >= 0")
        self.tol_err = tol_err
        self.tol_delete = tol_delete
        self.n_conf = n_conf
        self.segments: list[Segment] = []
        self._by_video: dict[int, list[Segment]] = {}
        self._next_seq = 0
        self._last_t_q: int | None = None

    def process_match(self, m: Match) -> None:
        """Vote the best same-alignment segment, or open a new one.

        Matches must arrive in nondecreasing t_q order. Among this video's
        segments whose offset is within tol_err of the match offset, the
        one with the most votes (oldest on a tie) absorbs the match: vote
        +1, spans widened to cover the pair, offset moved to the pair's.
        With no qualifying segment the match becomes a fresh one-vote
        segment.
        """
        if self._last_t_q is not None and m.t_q < self._last_t_q:
            raise ContractViolationError(
                f"matches must arrive in nondecreasing t_q order; got {m.t_q} after {self._last_t_q}"
            )
        self._last_t_q = m.t_q

        offset = m.t_q - m.t_r
        best: Segment | None = None
        for seg in self._by_video.get(m.video_id, ()):
            if same(offset, seg.offset, self.tol_err):
                if best is None or seg.votes > best.votes or (
                    seg.votes == best.votes and seg.seq < best.seq
                ):
                    best = seg
        if best is not None:
            best.votes += 1
            best.q_start = min(best.q_start, m.t_q)
            best.q_end = max(best.q_end, m.t_q)
            best.r_start = min(best.r_start, m.t_r)
            best.r_end = max(best.r_end, m.t_r)
            best.offset = offset
            best.last_vote_t_q = m.t_q
            return

        seg = Segment(
            video_id=m.video_id,
            q_start=m.t_q,
            q_end=m.t_q,
            r_start=m.t_r,
            r_end=m.t_r,
            offset=offset,
            votes=1,
            last_vote_t_q=m.t_q,
            seq=self._next_seq,
        )
        self._next_seq += 1
        self.segments.append(seg)
        self._by_video.setdefault(m.video_id, []).append(seg)

    def purge(self, current_t_q: int) -> None:
        """Drop segments idle for more than tol_delete query frames.

        A segment whose age is exactly tol_delete is retained; queue order
        is preserved.
        """
        if self.tol_delete == float("inf"):
            return
        survivors = [
            seg for seg in self.segments if current_t_q - seg.last_vote_t_q <= self.tol_delete
        ]
        if len(survivors) == len(self.segments):
            return
        self.segments = survivors
        self._by_video = {}
        for seg in survivors:
            self._by_video.setdefault(seg.video_id, []).append(seg)

    def finalize(self, n_conf: int | None = None) -> list[ResultSegment]:
        """Merge, threshold and rank the queue into result segments.

        The queue itself is left untouched.
        """
        if n_conf is None:
            n_conf = self.n_conf
        merged = _finalize_segments(self.segments, self.tol_err, n_conf)
        return [_to_result(seg) for seg in merged]


def _to_result(seg: Segment) -> ResultSegment:
    return ResultSegment(
        video_id=seg.video_id,
        q_start=seg.q_start,
        q_end=seg.q_end,
        r_start=seg.r_start,
        r_end=seg.r_end,
        votes=seg.votes,
    )


def _spans_touch(a: Segment, b: Segment) -> bool:
    """Reference spans overlap or are adjacent (no gap between them)."""
    return max(a.r_start, b.r_start) <= min(a.r_end, b.r_end) + 1


def _mergeable(a: Segment, b: Segment, tol_err: int) -> bool:
    return a.video_id == b.video_id and same(a.offset, b.offset, tol_err) and _spans_touch(a, b)


def _merge_pair(a: Segment, b: Segment) -> None:
    """Fold b into a: union both spans, sum votes, keep the stronger offset."""
    if b.votes > a.votes:
        a.offset = b.offset
    a.q_start = min(a.q_start, b.q_start)
    a.q_end = max(a.q_end, b.q_end)
    a.r_start = min(a.r_start, b.r_start)
    a.r_end = max(a.r_end, b.r_end)
    a.votes += b.votes
    a.last_vote_t_q = max(a.last_vote_t_q, b.last_vote_t_q)
    a.seq = min(a.seq, b.seq)


def merge_segments(segments: Sequence[Segment], tol_err: int) -> list[Segment]:
    """Repeatedly combine same-video segments with close offsets and
    overlapping-or-touching reference spans, until no pair qualifies.

    Operates on copies; the inputs are never mutated.
    """
    clusters = [dataclasses.replace(seg) for seg in segments]
    changed = True
    while changed:
        changed = False
        clusters.sort(key=lambda s: (s.video_id, s.r_start, s.r_end, -s.votes, s.offset, s.seq))
        for i in range(len(clusters)):
            a = clusters[i]
            for j in range(i + 1, len(clusters)):
                b = clusters[j]
                if b.video_id != a.video_id or b.r_start > a.r_end + 1:
                    break  # sorted by (video, r_start): nothing later can touch a
                if _mergeable(a, b, tol_err):
                    _merge_pair(a, b)
                    del clusters[j]
                    changed = True
                    break
            if changed:
                break
    return clusters


def _finalize_segments(
    segments: Sequence[Segment], tol_err: int, n_conf: int, merge: bool = True
) -> list[Segment]:
    merged = merge_segments(segments, tol_err) if merge else [
        dataclasses.replace(seg) for seg in segments
    ]
    kept = [seg for seg in merged if seg.votes >= n_conf]
    kept.sort(key=lambda s: (-s.votes, s.video_id, s.r_start))
    return kept


def table_segments(matches: Iterable[Match], tol_err: int) -> list[Segment]:
    """Raw segments of the full voting table, one per (video, offset bucket).

    Every match votes its bucket and extends the bucket's spans; the
    bucket's representative offset is the most recent match's, mirroring
    the queue's drift rule.
    """
    width = max(1, tol_err)
    table: dict[tuple[int, int], Segment] = {}
    seq = 0
    for m in matches:
        offset = m.t_q - m.t_r
        key = (m.video_id, offset // width)
        seg = table.get(key)
        if seg is None:
            table[key] = Segment(
                video_id=m.video_id,
                q_start=m.t_q,
                q_end=m.t_q,
                r_start=m.t_r,
                r_end=m.t_r,
                offset=offset,
                votes=1,
                last_vote_t_q=m.t_q,
                seq=seq,
            )
            seq += 1
        else:
            seg.votes += 1
            seg.q_start = min(seg.q_start, m.t_q)
            seg.q_end = max(seg.q_end, m.t_q)
            seg.r_start = min(seg.r_start, m.t_r)
            seg.r_end = max(seg.r_end, m.t_r)
            seg.offset = offset
            seg.last_vote_t_q = max(seg.last_vote_t_q, m.t_q)
    return list(table.values())


def brute_force_vote(
    matches: Iterable[Match], tol_err: int, n_conf: int
) -> list[ResultSegment]:
    """Reference voting baseline: full table instead of a bounded queue.

    Needs the complete match list in memory, then merges, thresholds and
    ranks exactly like the queue's finalize step.
    """
    segments = table_segments(matches, tol_err)
    return [_to_result(seg) for seg in _finalize_segments(segments, tol_err, n_conf)]


def _drive_queue(
    queue: VotingQueue,
    grouped: Iterator[tuple[int, list[Match]]],
    stats: SearchStats,
    track_trace: bool,
) -> None:
    if track_trace:
        stats.trace = []
    for t_q, group in grouped:
        for m in group:
            queue.process_match(m)
        queue.purge(t_q)
        stats.n_signatures += 1
        stats.n_matches += len(group)
        stats.peak_queue_len = max(stats.peak_queue_len, len(queue.segments))
        if track_trace:
            stats.trace.append((t_q, len(queue.segments)))
    stats.peak_memory_bytes = stats.peak_queue_len * SEGMENT_BYTES


def vote_stream(
    matches: Sequence[Match],
    tol_err: int,
    tol_delete: float,
    n_conf: int,
    track_trace: bool = False,
) -> tuple[list[ResultSegment], SearchStats]:
    """Run the queue pipeline over a prebuilt match stream.

    Matches must be ordered by nondecreasing t_q; the purge pass runs after
    each distinct t_q, matching the per-signature cadence of search().
    """
    queue = VotingQueue(tol_err, tol_delete, n_conf)
    stats = SearchStats()

    def grouped() -> Iterator[tuple[int, list[Match]]]:
        group: list[Match] = []
        for m in matches:
            if group and m.t_q != group[0].t_q:
                yield group[0].t_q, group
                group = []
            group.append(m)
        if group:
            yield group[0].t_q, group

    start = time.perf_counter()
    _drive_queue(queue, grouped(), stats, track_trace)
    results = queue.finalize()
    stats.wall_seconds = time.perf_counter() - start
    return results, stats


def search(
    index: InvertedIndex,
    query_fingerprints: Sequence[tuple[int, np.ndarray]],
    config: SearchConfig,
    track_trace: bool = False,
) -> tuple[list[ResultSegment], SearchStats]:
    """End-to-end query: hash each fingerprint, retrieve capped matches,
    vote them through the queue, and finalize.

    query_fingerprints are (frame index, descriptor) pairs sorted by frame
    index against a frozen index.
    """
    config.validate()
    if not index.frozen:
        raise ContractViolationError("search requires a frozen index")

    queue = VotingQueue(config.tol_err, config.tol_delete, config.n_conf)
    stats = SearchStats()
    start = time.perf_counter()

    if query_fingerprints:
        ts = [t for t, _ in query_fingerprints]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError("query fingerprints must be sorted by frame index")
        descriptors = np.asarray([d for _, d in query_fingerprints], dtype=np.float64)
        if descriptors.ndim != 2 or descriptors.shape[1] != index.codebook.n_coeffs:
            raise InvalidInputError(
                f"query descriptors have dimension "
                f"{descriptors.shape[1] if descriptors.ndim == 2 else 'mixed'}, "
                f"index codebook expects {index.codebook.n_coeffs}"
            )
        hashes = encode_batch(descriptors, index.codebook)

        def grouped() -> Iterator[tuple[int, list[Match]]]:
            for t_q, h in zip(ts, hashes):
                yield t_q, index.knn(h, t_q, config.n_neighbors, config.min_code_score)

        _drive_queue(queue, grouped(), stats, track_trace)

    results = queue.finalize()
    stats.wall_seconds = time.perf_counter() - start
    return results, stats


def render_results(query_id: str, results: Sequence[ResultSegment]) -> str:
    """Tab-separated result records; a lone '#no-match' record when empty."""
    if not results:
        return "#no-match\n"
    lines = [
        f"{query_id}\t{r.video_id}\t{r.q_start}\t{r.q_end}\t{r.r_start}\t{r.r_end}\t{r.votes}"
        for r in results
    ]
    return "\n".join(lines) + "\n"


def render_stats(stats: SearchStats) -> str:
    """Single machine-readable stats record."""
    record = {
        "peak_queue_len": stats.peak_queue_len,
        "peak_memory_bytes": stats.peak_memory_bytes,
        "match_count": stats.n_matches,
        "signature_count": stats.n_signatures,
        "wall_seconds": round(stats.wall_seconds, 6),
    }
    return "#stats\t" + json.dumps(record, sort_keys=True) + "\n"
