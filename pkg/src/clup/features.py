"""Feature matrices, bit-exact file I/O and the synthetic domain-shift generator."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadFlagsError,
    BadMagicError,
    BadVersionError,
    ChecksumError,
    ConfigError,
    CsvParseError,
    FormatError,
    NonFiniteDataError,
    ShapeError,
    TruncatedFileError,
)

MAGIC = b"CLUP"
VERSION = 1
FLAG_LABELS = 0x0001

_HEADER = struct.Struct("<4sHHQQ")  # magic, version, flags, rows, cols


@dataclass
class FeatureSet:
    """An M x D matrix of sample vectors with optional integer class labels.

    Features are stored as float32 so that binary round-trips are bit-exact.
    """

    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ShapeError(f"feature data must be 2-d, got shape {self.data.shape}")
        if self.rows < 1 or self.cols < 1:
            raise ShapeError(f"feature matrix must be at least 1x1, got {self.rows}x{self.cols}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteDataError("feature matrix contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.rows,):
                raise ShapeError(
                    f"labels have shape {self.labels.shape}, expected ({self.rows},)"
                )
            if np.any(self.labels < 0):
                raise ValueError("labels must be non-negative")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def _xor_bytes(buf) -> int:
    if len(buf) == 0:
        return 0
    return int(np.bitwise_xor.reduce(np.frombuffer(bytes(buf), dtype=np.uint8)))


def save_matrix(fs: FeatureSet, path) -> None:
    """Write a FeatureSet in the CLUP binary format (little-endian, XOR checksum)."""
    flags = FLAG_LABELS if fs.labels is not None else 0
    blob = bytearray(_HEADER.pack(MAGIC, VERSION, flags, fs.rows, fs.cols))
    blob += np.ascontiguousarray(fs.data, dtype="<f4").tobytes()
    if fs.labels is not None:
        blob += fs.labels.astype("<u4").tobytes()
    blob.append(_xor_bytes(blob))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_matrix(path) -> FeatureSet:
    """Read a CLUP binary file, validating magic, version, flags, size and checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + 1:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes is too short for a header")
    magic, version, flags, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if flags & ~FLAG_LABELS:
        raise BadFlagsError(f"{path}: reserved flag bits set (flags=0x{flags:04x})")
    has_labels = bool(flags & FLAG_LABELS)
    expected = _HEADER.size + rows * cols * 4 + (rows * 4 if has_labels else 0) + 1
    if len(blob) < expected:
        raise TruncatedFileError(f"{path}: need {expected} bytes, found {len(blob)}")
    if len(blob) > expected:
        raise FormatError(f"{path}: {len(blob) - expected} unexpected trailing bytes")
    if _xor_bytes(blob[:-1]) != blob[-1]:
        raise ChecksumError(f"{path}: checksum byte does not match contents")
    off = _HEADER.size
    data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off)
    data = data.reshape(rows, cols).copy()
    labels = None
    if has_labels:
        off += rows * cols * 4
        labels = np.frombuffer(blob, dtype="<u4", count=rows, offset=off).astype(np.int64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError(f"{path}: payload contains non-finite values")
    return FeatureSet(data=data, labels=labels)


def load_csv(path, has_labels: bool = False) -> FeatureSet:
    """Parse a headerless numeric CSV, optionally with an integer label column last.

    Accepts LF and CRLF line endings; blank lines are skipped.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if line == "":
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise CsvParseError(
                f"{path}: line {lineno}: expected {width} fields, found {len(fields)}"
            )
        try:
            if has_labels:
                labels.append(int(fields[-1]))
                rows.append([float(v) for v in fields[:-1]])
            else:
                rows.append([float(v) for v in fields])
        except ValueError as exc:
            raise CsvParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64).astype(np.float32)
    return FeatureSet(data=data, labels=np.array(labels, dtype=np.int64) if has_labels else None)


@dataclass
class SynthConfig:
    """Parameters of the synthetic source/target domain pair."""

    num_classes: int
    input_dim: int
    samples_per_class_source: tuple[int, ...]
    samples_per_class_target: tuple[int, ...]
    shift_rotation: float = 0.0
    shift_translation: float = 0.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.samples_per_class_source = tuple(int(c) for c in self.samples_per_class_source)
        self.samples_per_class_target = tuple(int(c) for c in self.samples_per_class_target)
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        for name, counts in (
            ("samples_per_class_source", self.samples_per_class_source),
            ("samples_per_class_target", self.samples_per_class_target),
        ):
            if len(counts) != self.num_classes:
                raise ConfigError(f"{name} must list {self.num_classes} counts")
            if any(c < 1 for c in counts):
                raise ConfigError(f"{name} entries must be >= 1")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be > 0")


def _unit_rows(rng, n, d) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def rotate_pairs(x: np.ndarray, angle: float) -> np.ndarray:
    """Rotate by `angle` in each successive coordinate plane (0,1),(2,3),..."""
    out = np.array(x, dtype=np.float64, copy=True)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, out.shape[1] - 1, 2):
        a = out[:, i].copy()
        b = out[:, i + 1].copy()
        out[:, i] = c * a - s * b
        out[:, i + 1] = s * a + c * b
    return out


def _sample_blobs(centers, counts, sigma, rng):
    chunks = []
    labels = []
    for n, count in enumerate(counts):
        chunks.append(centers[n] + sigma * rng.standard_normal((count, centers.shape[1])))
        labels.append(np.full(count, n, dtype=np.int64))
    data = np.concatenate(chunks, axis=0).astype(np.float32)
    return FeatureSet(data=data, labels=np.concatenate(labels))


def synth_domains(cfg: SynthConfig) -> tuple[FeatureSet, FeatureSet]:
    """Generate a labelled (source, target) pair of Gaussian-blob datasets.

    Class centers sit on a sphere of radius 10 * noise_sigma. The target blobs
    use the same centers rotated plane-wise by shift_rotation and displaced by a
    per-class random offset of magnitude shift_translation. Deterministic in seed;
    target labels are intended for evaluation only.
    """
    n, d = cfg.num_classes, cfg.input_dim
    centers = _unit_rows(np.random.default_rng([cfg.seed, 0]), n, d) * (10.0 * cfg.noise_sigma)
    offsets = _unit_rows(np.random.default_rng([cfg.seed, 1]), n, d) * cfg.shift_translation
    target_centers = rotate_pairs(centers, cfg.shift_rotation) + offsets
    source = _sample_blobs(
        centers, cfg.samples_per_class_source, cfg.noise_sigma, np.random.default_rng([cfg.seed, 2])
    )
    target = _sample_blobs(
        target_centers,
        cfg.samples_per_class_target,
        cfg.noise_sigma,
        np.random.default_rng([cfg.seed, 3]),
    )
    return source, target
