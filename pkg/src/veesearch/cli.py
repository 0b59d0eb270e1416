"""Command line front end: fingerprint, train, index, query, eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalkit, fingerprint, hashing, voting
from .binio import atomic_write_bytes
from .config import SearchConfig, parse_tol_delete
from .errors import DuplicateVideoError, InvalidInputError, VeesearchError
from .index import InvertedIndex, load_index

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

# flag name (also the config-file key) -> SearchConfig field
FLAG_FIELDS = [
    ("nt", "half_window", int),
    ("nf", "n_coeffs", int),
    ("nc", "n_centroids", int),
    ("nnn", "n_neighbors", int),
    ("tol-err", "tol_err", int),
    ("n-conf", "n_conf", int),
    ("tol-delete", "tol_delete", parse_tol_delete),
    ("tau-sc", "min_code_score", int),
    ("min-separation", "min_separation", int),
    ("seed", "seed", int),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for flag, dest, converter in FLAG_FIELDS:
        parser.add_argument(f"--{flag}", dest=dest, type=converter, default=None)
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument(
        "--print-config", action="store_true",
        help="print the fully resolved configuration and exit",
    )


def _read_config_file(path: str) -> dict:
    by_key = {flag.replace("-", "_"): (dest, converter) for flag, dest, converter in FLAG_FIELDS}
    values: dict = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise InvalidInputError(f"{path}:{line_no}: expected key=value")
                key, _, raw = line.partition("=")
                key = key.strip().replace("-", "_")
                if key not in by_key:
                    raise InvalidInputError(f"{path}:{line_no}: unknown config key {key!r}")
                dest, converter = by_key[key]
                try:
                    values[dest] = converter(raw.strip())
                except ValueError as exc:
                    raise InvalidInputError(f"{path}:{line_no}: {exc}") from exc
    except OSError as exc:
        raise InvalidInputError(f"cannot read config file {path}: {exc}") from exc
    return values


def _resolve_config(args: argparse.Namespace) -> tuple[SearchConfig, set[str]]:
    """Apply flag > config file > default precedence."""
    values: dict = {}
    explicit: set[str] = set()
    if args.config:
        file_values = _read_config_file(args.config)
        values.update(file_values)
        explicit.update(file_values)
    for _, dest, _ in FLAG_FIELDS:
        flag_value = getattr(args, dest)
        if flag_value is not None:
            values[dest] = flag_value
            explicit.add(dest)
    return replace(SearchConfig(), **values).validate(), explicit


def _print_config(config: SearchConfig) -> None:
    for flag, dest, _ in FLAG_FIELDS:
        print(f"{flag.replace('-', '_')}={getattr(config, dest)}")


def _check_n_coeffs(config: SearchConfig, explicit: set[str], codebook_dim: int, source: str):
    """Clamp the pipeline descriptor length to the codebook's dimension."""
    if "n_coeffs" in explicit and config.n_coeffs != codebook_dim:
        raise InvalidInputError(
            f"nf={config.n_coeffs} does not match the {source} dimension {codebook_dim}"
        )
    return replace(config, n_coeffs=codebook_dim).validate()


def cmd_fingerprint(args: argparse.Namespace, config: SearchConfig) -> int:
    frames, _ = fingerprint.read_frames(args.input)
    start = time.perf_counter()
    pairs = fingerprint.fingerprint_video(
        frames, config.half_window, config.n_coeffs, config.min_separation
    )
    elapsed = time.perf_counter() - start
    fingerprint.write_fingerprints(args.output, pairs)
    print(f"descriptors: {len(pairs)}")
    print(f"extract_seconds: {elapsed:.3f}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: SearchConfig, explicit: set[str]) -> int:
    descriptors = []
    for path in args.inputs:
        for _, values in fingerprint.read_fingerprints(path):
            descriptors.append(values)
    if len(descriptors) < config.n_centroids:
        raise InvalidInputError(
            f"training needs at least {config.n_centroids} descriptors "
            f"(one per centroid); got {len(descriptors)}"
        )
    X = np.asarray(descriptors)
    if "n_coeffs" in explicit and X.shape[1] != config.n_coeffs:
        raise InvalidInputError(
            f"nf={config.n_coeffs} does not match fingerprint dimension {X.shape[1]}"
        )
    codebook = hashing.train_codebook(X, config.n_centroids, seed=config.seed)
    hashing.write_codebook(args.output, codebook)
    print(f"descriptors: {len(descriptors)}")
    print(f"centroids: {codebook.n_centroids}")
    return EXIT_OK


def cmd_index(args: argparse.Namespace, config: SearchConfig, explicit: set[str]) -> int:
    codebook = hashing.read_codebook(args.codebook)
    config = _check_n_coeffs(config, explicit, codebook.n_coeffs, "codebook")
    index = InvertedIndex(codebook)
    names_seen = set()
    for video_id, path in enumerate(args.videos):
        name = Path(path).stem
        if name in names_seen:
            raise DuplicateVideoError(f"duplicate video name {name!r}")
        names_seen.add(name)
        frames, frame_rate = fingerprint.read_frames(path)
        pairs = fingerprint.fingerprint_video(
            frames, config.half_window, config.n_coeffs, config.min_separation
        )
        codes = hashing.encode_batch(
            [values for _, values in pairs], codebook
        ) if pairs else []
        index.add_video(
            video_id,
            list(zip((t for t, _ in pairs), codes)),
            name=name,
            frame_count=frames.shape[0],
            frame_rate=frame_rate,
        )
    index.save(args.output)
    size = Path(args.output).stat().st_size
    print(f"videos: {len(args.videos)}")
    print(f"postings: {index.posting_count}")
    print(f"bytes: {size}")
    return EXIT_OK


def cmd_query(args: argparse.Namespace, config: SearchConfig, explicit: set[str]) -> int:
    index = load_index(args.index)
    config = _check_n_coeffs(config, explicit, index.codebook.n_coeffs, "index codebook")
    frames, _ = fingerprint.read_frames(args.query)
    start = time.perf_counter()
    pairs = fingerprint.fingerprint_video(
        frames, config.half_window, config.n_coeffs, config.min_separation
    )
    extract_seconds = time.perf_counter() - start
    results, stats = voting.search(index, pairs, config)
    text = voting.render_results(Path(args.query).stem, results)
    if args.output:
        atomic_write_bytes(args.output, text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    sys.stdout.write(voting.render_stats(stats))
    print(f"extract_seconds: {extract_seconds:.3f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: SearchConfig, explicit: set[str]) -> int:
    index = load_index(args.index)
    config = _check_n_coeffs(config, explicit, index.codebook.n_coeffs, "index codebook")
    ground_truth = evalkit.read_ground_truth(args.ground_truth)
    queries = {}
    for path in args.queries:
        query_id = Path(path).stem
        if query_id in queries:
            raise InvalidInputError(f"duplicate query id {query_id!r}")
        queries[query_id] = fingerprint.read_frames(path)[0]
    report = evalkit.evaluate(index, queries, ground_truth, config)
    sys.stdout.write(evalkit.format_report(report))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="veesearch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fingerprint", help="extract descriptors from a raw frame stream")
    p.add_argument("input", help="frame stream (.veef)")
    p.add_argument("-o", "--output", required=True, help="fingerprint file to write")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train a codebook from fingerprint files")
    p.add_argument("inputs", nargs="+", help="fingerprint files")
    p.add_argument("-o", "--output", required=True, help="codebook file to write")
    _add_config_flags(p)

    p = sub.add_parser("index", help="fingerprint videos and build the search index")
    p.add_argument("videos", nargs="+", help="frame stream files")
    p.add_argument("--codebook", required=True, help="trained codebook file")
    p.add_argument("-o", "--output", required=True, help="index file to write")
    _add_config_flags(p)

    p = sub.add_parser("query", help="search the index for subclips of a query video")
    p.add_argument("index", help="index file")
    p.add_argument("query", help="query frame stream")
    p.add_argument("-o", "--output", default=None, help="write result records here instead of stdout")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score retrieval quality against ground truth")
    p.add_argument("index", help="index file")
    p.add_argument("queries", nargs="+", help="query frame streams")
    p.add_argument("--ground-truth", required=True, help="tab-separated ground truth file")
    _add_config_flags(p)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config, explicit = _resolve_config(args)
        if args.print_config:
            _print_config(config)
            return EXIT_OK
        if args.command == "fingerprint":
            return cmd_fingerprint(args, config)
        if args.command == "train":
            return cmd_train(args, config, explicit)
        if args.command == "index":
            return cmd_index(args, config, explicit)
        if args.command == "query":
            return cmd_query(args, config, explicit)
        if args.command == "eval":
            return cmd_eval(args, config, explicit)
        raise AssertionError(f"unhandled command {args.command!r}")
    except VeesearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - map anything unexpected to exit 3
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
