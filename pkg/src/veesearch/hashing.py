"""Descriptor quantization and binary signature codes.

A trained codebook maps each descriptor to its nearest centroid plus a
short binary refinement code: bit k is set when the descriptor's component
k reaches that centroid's per-dimension threshold (the median of its
training members). Two signatures score by the number of agreeing bits,
but only when they share a centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binio import Reader, Writer, append_checksum, atomic_write_bytes, strip_checksum
from .errors import (
    FileFormatError,
    InvalidInputError,
    TruncatedFileError,
    VersionMismatchError,
)

CODEBOOK_MAGIC = b"VEEC"
CODEBOOK_VERSION = 1

_ASSIGN_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class Codebook:
    """K-means centroids plus per-centroid binarization thresholds.

    centroids and thresholds are float32 arrays of shape (n_centroids,
    n_coeffs); float32 is the storage precision, so in-memory and reloaded
    codebooks behave identically.
    """

    centroids: np.ndarray
    thresholds: np.ndarray
    training_seed: int

    @property
    def n_centroids(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class HashCode:
    """Compact signature: centroid index plus a packed binary code."""

    q: int
    code: bytes
    n_bits: int


def pack_code(bits: np.ndarray) -> bytes:
    """Pack a 0/1 vector into bytes, first bit in the MSB of byte 0."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_code(code: bytes, n_bits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(code, dtype=np.uint8), count=n_bits)


def _as_matrix(descriptors: np.ndarray) -> np.ndarray:
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"descriptors must be a 2-D array; got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("descriptors contain non-finite values")
    return X


def _assign_dense(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid index per row; ties go to the lowest index."""
    C = np.asarray(centroids, dtype=np.float64)
    c2 = (C * C).sum(axis=1)
    out = np.empty(X.shape[0], dtype=np.int64)
    for start in range(0, X.shape[0], _ASSIGN_CHUNK):
        block = X[start:start + _ASSIGN_CHUNK]
        d2 = (block * block).sum(axis=1)[:, None] - 2.0 * (block @ C.T) + c2[None, :]
        out[start:start + _ASSIGN_CHUNK] = np.argmin(d2, axis=1)
    return out


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seed centroids with squared-distance weighted sampling."""
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = X[first]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _repair_empty_clusters(
    X: np.ndarray, centroids: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Move each empty centroid onto the farthest member of the largest cluster."""
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    for empty in np.nonzero(counts == 0)[0]:
        donor = int(np.argmax(counts))
        members = np.nonzero(labels == donor)[0]
        d2 = ((X[members] - centroids[donor]) ** 2).sum(axis=1)
        steal = members[int(np.argmax(d2))]
        centroids[empty] = X[steal]
        labels[steal] = empty
        counts[donor] -= 1
        counts[empty] += 1
    return labels


def train_codebook(
    descriptors: np.ndarray, n_centroids: int, max_iters: int = 100, seed: int = 0
) -> Codebook:
    """Cluster training descriptors and derive binarization thresholds.

    Lloyd iterations run from a k-means++ seeding until the assignment
    stops changing or max_iters is reached; empty clusters are repaired by
    splitting off the farthest member of the largest cluster. Thresholds
    are per-centroid, per-dimension medians of the assigned descriptors,
    falling back to the global per-dimension median for empty cells. The
    whole procedure is reproducible for a fixed seed and input order.
    """
    X = _as_matrix(descriptors)
    n, dim = X.shape
    if n < n_centroids:
        raise InvalidInputError(
            f"need at least {n_centroids} descriptors to train {n_centroids} centroids; got {n}"
        )

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(X, n_centroids, rng)
    labels = _assign_dense(X, centroids)
    labels = _repair_empty_clusters(X, centroids, labels)

    for _ in range(max_iters):
        for i in range(n_centroids):
            members = X[labels == i]
            if members.shape[0]:
                centroids[i] = members.mean(axis=0)
        new_labels = _assign_dense(X, centroids)
        new_labels = _repair_empty_clusters(X, centroids, new_labels)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    global_median = np.median(X, axis=0)
    thresholds = np.empty((n_centroids, dim), dtype=np.float64)
    for i in range(n_centroids):
        members = X[labels == i]
        thresholds[i] = np.median(members, axis=0) if members.shape[0] else global_median

    return Codebook(
        centroids=centroids.astype(np.float32),
        thresholds=thresholds.astype(np.float32),
        training_seed=seed,
    )


def assign(v: np.ndarray, codebook: Codebook) -> int:
    """Index of the centroid nearest to v (squared Euclidean, lowest index wins ties)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (codebook.n_coeffs,):
        raise InvalidInputError(
            f"descriptor has shape {v.shape}, codebook expects ({codebook.n_coeffs},)"
        )
    return int(_assign_dense(v[None, :], codebook.centroids)[0])


def binarize(v: np.ndarray, q: int, codebook: Codebook) -> np.ndarray:
    """0/1 code: bit k set when v[k] >= the centroid's threshold for dimension k."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (codebook.n_coeffs,):
        raise InvalidInputError(
            f"descriptor has shape {v.shape}, codebook expects ({codebook.n_coeffs},)"
        )
    if not 0 <= q < codebook.n_centroids:
        raise InvalidInputError(f"centroid index {q} out of range [0, {codebook.n_centroids})")
    return (v >= codebook.thresholds[q].astype(np.float64)).astype(np.uint8)


def encode(v: np.ndarray, codebook: Codebook) -> HashCode:
    """Quantize one descriptor into its (centroid, binary code) signature."""
    q = assign(v, codebook)
    return HashCode(q=q, code=pack_code(binarize(v, q, codebook)), n_bits=codebook.n_coeffs)


def encode_batch(descriptors: np.ndarray, codebook: Codebook) -> list[HashCode]:
    """Vectorized encode() over the rows of a descriptor matrix."""
    X = _as_matrix(descriptors)
    if X.shape[1] != codebook.n_coeffs:
        raise InvalidInputError(
            f"descriptors have dimension {X.shape[1]}, codebook expects {codebook.n_coeffs}"
        )
    qs = _assign_dense(X, codebook.centroids)
    bits = (X >= codebook.thresholds[qs].astype(np.float64)).astype(np.uint8)
    packed = np.packbits(bits, axis=1)
    return [
        HashCode(q=int(q), code=row.tobytes(), n_bits=codebook.n_coeffs)
        for q, row in zip(qs, packed)
    ]


def similarity(h1: HashCode, h2: HashCode) -> int:
    """Number of agreeing code bits, or 0 when the centroids differ."""
    if h1.n_bits != h2.n_bits:
        raise InvalidInputError(f"code length mismatch: {h1.n_bits} vs {h2.n_bits}")
    if h1.q != h2.q:
        return 0
    differing = (int.from_bytes(h1.code, "big") ^ int.from_bytes(h2.code, "big")).bit_count()
    return h1.n_bits - differing


def write_codebook_section(out: Writer, codebook: Codebook) -> None:
    """Codebook block shared by the standalone file and the index file:
    n_centroids u32, n_coeffs u32, seed u64, centroids then thresholds as
    row-major little-endian float32."""
    out.u32(codebook.n_centroids)
    out.u32(codebook.n_coeffs)
    out.u64(codebook.training_seed)
    out.f32_array(codebook.centroids)
    out.f32_array(codebook.thresholds)


def read_codebook_section(reader: Reader) -> Codebook:
    n_centroids = reader.u32()
    n_coeffs = reader.u32()
    seed = reader.u64()
    if n_centroids < 1 or n_coeffs < 1:
        raise FileFormatError("codebook section has zero centroids or dimensions")
    count = n_centroids * n_coeffs
    centroids = reader.f32_array(count, (n_centroids, n_coeffs))
    thresholds = reader.f32_array(count, (n_centroids, n_coeffs))
    if not (np.all(np.isfinite(centroids)) and np.all(np.isfinite(thresholds))):
        raise FileFormatError("codebook section contains non-finite values")
    return Codebook(centroids=centroids, thresholds=thresholds, training_seed=seed)


def write_codebook(path, codebook: Codebook) -> None:
    out = Writer()
    out.raw(CODEBOOK_MAGIC)
    out.u16(CODEBOOK_VERSION)
    write_codebook_section(out, codebook)
    atomic_write_bytes(path, append_checksum(out.getvalue()))


def read_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 6:
        raise TruncatedFileError(f"{path}: too short for a codebook file")
    if data[:4] != CODEBOOK_MAGIC:
        raise FileFormatError(f"{path}: not a codebook file (bad magic)")
    version = int.from_bytes(data[4:6], "little")
    if version != CODEBOOK_VERSION:
        raise VersionMismatchError(f"{path}: unsupported codebook version {version}")
    payload = strip_checksum(data, str(path))
    reader = Reader(payload[6:], what=str(path))
    codebook = read_codebook_section(reader)
    reader.expect_end()
    return codebook
