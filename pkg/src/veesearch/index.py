"""Inverted index of reference signatures, keyed by codebook centroid.

Construction is single-writer: add videos, then freeze. A frozen (or
loaded) index is immutable and safe for concurrent queries. Queries scan
only the posting list of the query signature's own centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binio import Reader, Writer, append_checksum, atomic_write_bytes, strip_checksum
from .errors import (
    DuplicateVideoError,
    FileFormatError,
    IndexStateError,
    InvalidInputError,
    TruncatedFileError,
    VersionMismatchError,
)
from .hashing import Codebook, HashCode, read_codebook_section, write_codebook_section

INDEX_MAGIC = b"VEEI"
INDEX_VERSION = 1

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclass(frozen=True)
class Match:
    """One scored (query signature, reference signature) pair."""

    video_id: int
    t_r: int
    t_q: int
    score: int


@dataclass(frozen=True)
class VideoInfo:
    name: str
    frame_count: int
    frame_rate: tuple[int, int] = (25, 1)


@dataclass
class _Cell:
    """Posting list of one centroid: parallel arrays sorted by (video_id, t)."""

    video_ids: np.ndarray
    ts: np.ndarray
    codes: np.ndarray  # (n, code_bytes) uint8


@dataclass
class _PendingCell:
    video_ids: list = field(default_factory=list)
    ts: list = field(default_factory=list)
    codes: list = field(default_factory=list)


class InvertedIndex:
    def __init__(self, codebook: Codebook) -> None:
        self.codebook = codebook
        self.videos: dict[int, VideoInfo] = {}
        self._code_bytes = (codebook.n_coeffs + 7) // 8
        self._pending: list[_PendingCell] | None = [
            _PendingCell() for _ in range(codebook.n_centroids)
        ]
        self._cells: list[_Cell] | None = None

    @property
    def frozen(self) -> bool:
        return self._cells is not None

    @property
    def posting_count(self) -> int:
        if self.frozen:
            return sum(cell.video_ids.shape[0] for cell in self._cells)
        return sum(len(cell.ts) for cell in self._pending)

    def add_video(
        self,
        video_id: int,
        signatures: list[tuple[int, HashCode]],
        *,
        name: str | None = None,
        frame_count: int = 0,
        frame_rate: tuple[int, int] = (25, 1),
    ) -> None:
        """Register a video and append its signatures to the posting lists."""
        if self.frozen:
            raise IndexStateError("cannot add videos to a frozen index")
        if video_id in self.videos:
            raise DuplicateVideoError(f"video id {video_id} already indexed")
        if video_id < 0 or video_id > 0xFFFFFFFF:
            raise InvalidInputError(f"video id {video_id} does not fit in 32 bits")
        seen_ts = set()
        for t, hash_code in signatures:
            if hash_code.n_bits != self.codebook.n_coeffs:
                raise InvalidInputError(
                    f"signature has {hash_code.n_bits} bits, index expects {self.codebook.n_coeffs}"
                )
            if not 0 <= hash_code.q < self.codebook.n_centroids:
                raise InvalidInputError(f"centroid index {hash_code.q} out of range")
            if t in seen_ts:
                raise InvalidInputError(f"duplicate signature time {t} for video {video_id}")
            seen_ts.add(t)
            cell = self._pending[hash_code.q]
            cell.video_ids.append(video_id)
            cell.ts.append(t)
            cell.codes.append(hash_code.code)
        self.videos[video_id] = VideoInfo(
            name=name if name is not None else f"video{video_id}",
            frame_count=frame_count,
            frame_rate=frame_rate,
        )

    def freeze(self) -> "InvertedIndex":
        """Consolidate posting lists; the index becomes immutable and queryable."""
        if self.frozen:
            return self
        cells = []
        for pending in self._pending:
            n = len(pending.ts)
            vids = np.asarray(pending.video_ids, dtype=np.uint32).reshape(n)
            ts = np.asarray(pending.ts, dtype=np.uint32).reshape(n)
            codes = (
                np.frombuffer(b"".join(pending.codes), dtype=np.uint8).reshape(n, self._code_bytes)
                if n
                else np.zeros((0, self._code_bytes), dtype=np.uint8)
            )
            order = np.lexsort((ts, vids))
            cells.append(_Cell(vids[order], ts[order], codes[order]))
        self._cells = cells
        self._pending = None
        return self

    def knn(
        self, query_hash: HashCode, t_q: int, n_neighbors: int, min_code_score: int = 0
    ) -> list[Match]:
        """Top matches for one query signature from its centroid's posting list.

        Scores below max(1, min_code_score) are dropped; the survivors are
        ordered by score descending with (video_id, t) ascending as the tie
        break, and at most n_neighbors are returned.
        """
        if not self.frozen:
            raise IndexStateError("freeze() the index before querying")
        if n_neighbors < 1:
            raise InvalidInputError("n_neighbors must be >= 1")
        if query_hash.n_bits != self.codebook.n_coeffs:
            raise InvalidInputError(
                f"query signature has {query_hash.n_bits} bits, index expects {self.codebook.n_coeffs}"
            )
        cell = self._cells[query_hash.q]
        n = cell.video_ids.shape[0]
        if n == 0:
            return []

        query_code = np.frombuffer(query_hash.code, dtype=np.uint8)
        differing = _POPCOUNT[np.bitwise_xor(cell.codes, query_code[None, :])].sum(axis=1)
        scores = self.codebook.n_coeffs - differing.astype(np.int64)

        keep = scores >= max(1, min_code_score)
        if not np.any(keep):
            return []
        scores = scores[keep]
        vids = cell.video_ids[keep]
        ts = cell.ts[keep]

        order = np.lexsort((ts, vids, -scores))[:n_neighbors]
        return [
            Match(video_id=int(vids[i]), t_r=int(ts[i]), t_q=t_q, score=int(scores[i]))
            for i in order
        ]

    def save(self, path) -> None:
        """Write the index file; freezes the index first if needed.

        Layout (all little-endian): magic "VEEI", version u16; video table
        (count u32, then per video: id u32, frame count u32, rate numerator
        u32, rate denominator u32, name length u16, name bytes); codebook
        section; one posting list per centroid (count u32, then packed
        postings: video id u32, t u32, code bytes); trailing 64-bit
        checksum over everything before it.
        """
        self.freeze()
        out = Writer()
        out.raw(INDEX_MAGIC)
        out.u16(INDEX_VERSION)

        out.u32(len(self.videos))
        for video_id in sorted(self.videos):
            info = self.videos[video_id]
            name_bytes = info.name.encode("utf-8")
            out.u32(video_id)
            out.u32(info.frame_count)
            out.u32(info.frame_rate[0])
            out.u32(info.frame_rate[1])
            out.u16(len(name_bytes))
            out.raw(name_bytes)

        write_codebook_section(out, self.codebook)

        for cell in self._cells:
            n = cell.video_ids.shape[0]
            out.u32(n)
            if n:
                record = np.zeros(
                    n,
                    dtype=np.dtype(
                        [("vid", "<u4"), ("t", "<u4"), ("code", np.uint8, (self._code_bytes,))]
                    ),
                )
                record["vid"] = cell.video_ids
                record["t"] = cell.ts
                record["code"] = cell.codes
                out.raw(record.tobytes())

        atomic_write_bytes(path, append_checksum(out.getvalue()))


def load_index(path) -> InvertedIndex:
    """Read an index file back; the result is frozen and ready to query."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 6:
        raise TruncatedFileError(f"{path}: too short for an index file")
    if data[:4] != INDEX_MAGIC:
        raise FileFormatError(f"{path}: not an index file (bad magic)")
    version = int.from_bytes(data[4:6], "little")
    if version != INDEX_VERSION:
        raise VersionMismatchError(f"{path}: unsupported index version {version}")
    payload = strip_checksum(data, str(path))
    reader = Reader(payload[6:], what=str(path))

    video_count = reader.u32()
    videos: dict[int, VideoInfo] = {}
    for _ in range(video_count):
        video_id = reader.u32()
        frame_count = reader.u32()
        rate_num = reader.u32()
        rate_den = reader.u32()
        name = reader.raw(reader.u16()).decode("utf-8")
        if video_id in videos:
            raise FileFormatError(f"{path}: duplicate video id {video_id} in video table")
        videos[video_id] = VideoInfo(name, frame_count, (rate_num, rate_den))

    codebook = read_codebook_section(reader)

    index = InvertedIndex(codebook)
    index.videos = videos
    code_bytes = index._code_bytes
    record_dtype = np.dtype(
        [("vid", "<u4"), ("t", "<u4"), ("code", np.uint8, (code_bytes,))]
    )
    cells = []
    for _ in range(codebook.n_centroids):
        n = reader.u32()
        raw = reader.raw(n * record_dtype.itemsize)
        record = np.frombuffer(raw, dtype=record_dtype, count=n)
        cells.append(
            _Cell(
                record["vid"].astype(np.uint32),
                record["t"].astype(np.uint32),
                record["code"].reshape(n, code_bytes).copy(),
            )
        )
    reader.expect_end()
    index._cells = cells
    index._pending = None
    return index
