"""Pipeline configuration shared by the library and the command line tool."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .errors import InvalidInputError


@dataclass
class SearchConfig:
    """Tunable parameters for fingerprinting, hashing and voting.

    half_window      frames on each side of an extremum used for the
                     windowed spectrum (window length is 2*half_window + 1)
    n_coeffs         spectrum magnitudes kept per descriptor; also the
                     binary code length in bits
    n_centroids      codebook size for descriptor quantization
    n_neighbors      cap on retrieved matches per query signature
    tol_err          max offset drift (strict) for two matches to count
                     toward the same segment
    n_conf           minimum votes for a segment to be reported
    tol_delete       idle query frames before an unvoted segment is purged
                     (math.inf disables purging)
    min_code_score   drop matches scoring below this (0 disables the filter)
    min_separation   neighborhood radius for the strict extremum test
    seed             RNG seed for codebook training and corpus generation
    """

    half_window: int = 100
    n_coeffs: int = 48
    n_centroids: int = 4000
    n_neighbors: int = 200
    tol_err: int = 2
    n_conf: int = 200
    tol_delete: float = 250
    min_code_score: int = 0
    min_separation: int = 3
    seed: int = 0

    def validate(self) -> "SearchConfig":
        if not 1 <= self.n_coeffs <= self.half_window:
            raise InvalidInputError(
                f"n_coeffs must be in [1, half_window]; "
                f"got n_coeffs={self.n_coeffs}, half_window={self.half_window}"
            )
        if self.n_centroids < 1:
            raise InvalidInputError("n_centroids must be >= 1")
        if self.n_neighbors < 1:
            raise InvalidInputError("n_neighbors must be >= 1")
        if self.tol_err < 0:
            raise InvalidInputError("tol_err must be >= 0")
        if self.n_conf < 1:
            raise InvalidInputError("n_conf must be >= 1")
        if self.tol_delete < 0:
            raise InvalidInputError("tol_delete must be >= 0")
        if self.min_code_score < 0:
            raise InvalidInputError("min_code_score must be >= 0")
        if self.min_separation < 1:
            raise InvalidInputError("min_separation must be >= 1")
        if self.seed < 0:
            raise InvalidInputError("seed must be >= 0")
        return self

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def config_field_names() -> list[str]:
    return [f.name for f in fields(SearchConfig)]


def parse_tol_delete(text: str) -> float:
    """Parse a tol_delete value; accepts 'inf' to disable purging."""
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return int(text)
