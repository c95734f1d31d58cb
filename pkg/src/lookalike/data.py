"""User-base ingestion: IDX image/label files, delimited matrices, subsampling.

The IDX format is the classic big-endian binary layout: a 32-bit magic
(0x00000803 for images, 0x00000801 for labels), 32-bit dimension sizes,
then raw unsigned bytes. Gzipped files are accepted transparently.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, TruncationError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# 17 significant digits round-trips any IEEE double exactly.
FLOAT_FORMAT = "%.17g"


@dataclass
class UserBase:
    """An id-indexed feature matrix, optionally carrying ground-truth labels.

    ids: unique non-negative integer user ids, one per feature row.
    features: N x d matrix of finite reals.
    labels: optional per-user small-integer class tags (simulation only).
    """

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise DataError(f"need at least one row and one column, got {n}x{d}")
        if self.ids.shape != (n,):
            raise DataError(f"{len(self.ids)} ids for {n} feature rows")
        if np.any(self.ids < 0):
            raise DataError("user ids must be non-negative")
        if len(np.unique(self.ids)) != n:
            raise DataError("user ids must be unique")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DataError(f"{len(self.labels)} labels for {n} rows")

    @property
    def n_users(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def _read_header(data: bytes, expected_magic: int, n_dims: int, kind: str):
    header_len = 4 * (1 + n_dims)
    if len(data) < header_len:
        raise TruncationError(
            f"{kind} header needs {header_len} bytes, got {len(data)}"
        )
    fields = struct.unpack(f">{1 + n_dims}I", data[:header_len])
    magic, dims = fields[0], fields[1:]
    if magic != expected_magic:
        raise FormatError(
            f"{kind} magic mismatch: expected 0x{expected_magic:08x}, "
            f"got 0x{magic:08x}"
        )
    return dims, data[header_len:]


def parse_idx_images(data: bytes) -> UserBase:
    """Parse an IDX image file into a UserBase with pixels scaled to [0, 1].

    Ids are assigned 0..N-1 in file order. Pixel bytes are divided by 255
    so that downstream distance computations use a fixed scale.
    """
    data = _maybe_gunzip(data)
    (count, rows, cols), payload = _read_header(data, IMAGE_MAGIC, 3, "image")
    expected = count * rows * cols
    if len(payload) < expected:
        raise TruncationError(
            f"image payload needs {expected} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload[:expected], dtype=np.uint8)
    features = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    return UserBase(ids=np.arange(count, dtype=np.int64), features=features)


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX label file into an integer vector."""
    data = _maybe_gunzip(data)
    (count,), payload = _read_header(data, LABEL_MAGIC, 1, "label")
    if len(payload) < count:
        raise TruncationError(f"label payload needs {count} bytes, got {len(payload)}")
    return np.frombuffer(payload[:count], dtype=np.uint8).astype(np.int64)


def merge_train_test(train: UserBase, test: UserBase | None) -> UserBase:
    """Concatenate two user bases, offsetting the second one's ids by train N.

    An absent (None) test set leaves the train base unchanged.
    """
    if test is None:
        return train
    if train.n_features != test.n_features:
        raise DataError(
            f"feature dimension mismatch: {train.n_features} vs {test.n_features}"
        )
    if (train.labels is None) != (test.labels is None):
        raise DataError("cannot merge a labeled base with an unlabeled one")
    ids = np.concatenate([train.ids, test.ids + train.n_users])
    features = np.vstack([train.features, test.features])
    labels = None
    if train.labels is not None:
        labels = np.concatenate([train.labels, test.labels])
    return UserBase(ids=ids, features=features, labels=labels)


def stratified_subsample(base: UserBase, per_class: int, rng_seed: int) -> UserBase:
    """Draw exactly per_class members of every class, without replacement.

    Original ids are preserved; rows are returned in their original order.
    Deterministic for a given rng_seed.
    """
    if base.labels is None:
        raise DataError("stratified subsampling requires labels")
    if per_class < 1:
        raise DataError("per_class must be positive")
    rng = np.random.default_rng(child_seed(rng_seed, "stratified_subsample"))
    keep = []
    for cls in np.unique(base.labels):
        rows = np.flatnonzero(base.labels == cls)
        if len(rows) < per_class:
            raise DataError(
                f"class {cls} has {len(rows)} members, needs {per_class}"
            )
        keep.append(rng.choice(rows, size=per_class, replace=False))
    rows = np.sort(np.concatenate(keep))
    return UserBase(
        ids=base.ids[rows],
        features=base.features[rows],
        labels=base.labels[rows],
    )


def child_seed(rng_seed: int, *keys) -> np.random.SeedSequence:
    """Derive an independent RNG stream from a master seed and hashable keys.

    String keys are folded to integers so that distinct call sites never
    share a stream even when they share the master seed.
    """
    ints = [int(rng_seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            ints.append(int.from_bytes(key.encode(), "big"))
        else:
            ints.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.SeedSequence(ints)


def matrix_to_csv(ids, matrix, labels=None) -> str:
    """Render an id-indexed matrix as CSV text with 17-significant-digit floats."""
    ids = np.asarray(ids, dtype=np.int64)
    matrix = np.asarray(matrix, dtype=np.float64)
    n, d = matrix.shape
    header = "id," + ",".join(f"c{j}" for j in range(d))
    if labels is not None:
        header += ",label"
    lines = [header]
    for i in range(n):
        row = f"{ids[i]}," + ",".join(FLOAT_FORMAT % v for v in matrix[i])
        if labels is not None:
            row += f",{labels[i]}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def matrix_from_csv(text: str):
    """Parse CSV text produced by matrix_to_csv back into (ids, matrix, labels)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty CSV input")
    header = lines[0].split(",")
    if header[0] != "id":
        raise FormatError(f"first column must be 'id', got {header[0]!r}")
    has_labels = header[-1] == "label"
    d = len(header) - 1 - (1 if has_labels else 0)
    if d < 1:
        raise FormatError("CSV has no coordinate columns")
    expected = ["id"] + [f"c{j}" for j in range(d)] + (["label"] if has_labels else [])
    if header != expected:
        raise FormatError(f"unexpected CSV header {header}")
    n = len(lines) - 1
    ids = np.empty(n, dtype=np.int64)
    matrix = np.empty((n, d), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64) if has_labels else None
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != len(header):
            raise FormatError(
                f"row {i} has {len(parts)} fields, header has {len(header)}"
            )
        try:
            ids[i] = int(parts[0])
            for j in range(d):
                matrix[i, j] = float(parts[1 + j])
            if has_labels:
                labels[i] = int(parts[-1])
        except ValueError as exc:
            raise FormatError(f"row {i}: unparsable value ({exc})") from exc
    if not np.all(np.isfinite(matrix)):
        raise FormatError("CSV contains non-finite values")
    if len(np.unique(ids)) != n:
        raise FormatError("CSV contains duplicate ids")
    return ids, matrix, labels


def write_matrix_csv(path, ids, matrix, labels=None) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(matrix_to_csv(ids, matrix, labels))


def read_matrix_csv(path):
    with open(path, "r", encoding="ascii") as fh:
        return matrix_from_csv(fh.read())
