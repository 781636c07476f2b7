"""CLUP-MODEL checkpoint container (magic "CMDL", f32 payload, XOR checksum).

One container serves three kinds of models, distinguished by flag bits:
bit 0 = last layer is a classifier head, bit 1 = single layer of k-means
centroids, bit 2 = last layer is a prototype bank (zero biases).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    BadFlagsError,
    BadMagicError,
    BadVersionError,
    ChecksumError,
    FormatError,
    NonFiniteDataError,
    TruncatedFileError,
)
from .network import Mlp, SoftmaxHead

MAGIC = b"CMDL"
VERSION = 1
FLAG_HEAD = 0x0001
FLAG_CENTROIDS = 0x0002
FLAG_BANK = 0x0004
_KNOWN_FLAGS = FLAG_HEAD | FLAG_CENTROIDS | FLAG_BANK

_HEADER = struct.Struct("<4sHHH")  # magic, version, flags, layer count
_LAYER = struct.Struct("<II")  # rows, cols


def save_layers(path, layers, flags: int = 0) -> None:
    """Write a list of (weight, bias) pairs; weights row-major f32."""
    blob = bytearray(_HEADER.pack(MAGIC, VERSION, flags, len(layers)))
    for w, b in layers:
        w = np.asarray(w)
        b = np.asarray(b)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise FormatError(f"layer must be (rows x cols, rows), got {w.shape} and {b.shape}")
        blob += _LAYER.pack(w.shape[0], w.shape[1])
        blob += np.ascontiguousarray(w, dtype="<f4").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f4").tobytes()
    blob.append(_xor(blob))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_layers(path):
    """Read back (layers, flags); arrays are float64 copies of the f32 payload."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + 1:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes is too short for a header")
    magic, version, flags, n_layers = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if flags & ~_KNOWN_FLAGS:
        raise BadFlagsError(f"{path}: reserved flag bits set (flags=0x{flags:04x})")
    off = _HEADER.size
    layers = []
    for _ in range(n_layers):
        if len(blob) < off + _LAYER.size:
            raise TruncatedFileError(f"{path}: truncated layer header")
        rows, cols = _LAYER.unpack_from(blob, off)
        off += _LAYER.size
        need = (rows * cols + rows) * 4
        if len(blob) < off + need:
            raise TruncatedFileError(f"{path}: truncated layer payload")
        w = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
        off += rows * cols * 4
        b = np.frombuffer(blob, dtype="<f4", count=rows, offset=off)
        off += rows * 4
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    if len(blob) != off + 1:
        raise FormatError(f"{path}: {len(blob) - off - 1} unexpected trailing bytes")
    if _xor(blob[:-1]) != blob[-1]:
        raise ChecksumError(f"{path}: checksum byte does not match contents")
    for w, b in layers:
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NonFiniteDataError(f"{path}: layer payload contains non-finite values")
    return layers, flags


def _xor(buf) -> int:
    return int(np.bitwise_xor.reduce(np.frombuffer(bytes(buf), dtype=np.uint8)))


def _mlp_from_layers(layers) -> Mlp:
    dims = [layers[0][0].shape[1]] + [w.shape[0] for w, _ in layers]
    return Mlp(layer_dims=dims, weights=[w.copy() for w, _ in layers], biases=[b.copy() for _, b in layers])


def save_classifier(path, net: Mlp, head: SoftmaxHead) -> None:
    layers = list(zip(net.weights, net.biases)) + [(head.weight, head.bias)]
    save_layers(path, layers, flags=FLAG_HEAD)


def load_classifier(path) -> tuple[Mlp, SoftmaxHead]:
    layers, flags = load_layers(path)
    if flags != FLAG_HEAD or len(layers) < 2:
        raise FormatError(f"{path}: not a classifier checkpoint (flags=0x{flags:04x})")
    head_w, head_b = layers[-1]
    return _mlp_from_layers(layers[:-1]), SoftmaxHead(weight=head_w.copy(), bias=head_b.copy())


def save_extractor_bank(path, net: Mlp, prototypes: np.ndarray) -> None:
    layers = list(zip(net.weights, net.biases)) + [
        (prototypes, np.zeros(prototypes.shape[0]))
    ]
    save_layers(path, layers, flags=FLAG_BANK)


def load_extractor_bank(path) -> tuple[Mlp, np.ndarray]:
    layers, flags = load_layers(path)
    if flags != FLAG_BANK or len(layers) < 2:
        raise FormatError(f"{path}: not an extractor+bank checkpoint (flags=0x{flags:04x})")
    return _mlp_from_layers(layers[:-1]), layers[-1][0].copy()


def save_centroids(path, centroids: np.ndarray) -> None:
    save_layers(path, [(centroids, np.zeros(centroids.shape[0]))], flags=FLAG_CENTROIDS)


def load_centroids(path) -> np.ndarray:
    layers, flags = load_layers(path)
    if flags != FLAG_CENTROIDS or len(layers) != 1:
        raise FormatError(f"{path}: not a centroid checkpoint (flags=0x{flags:04x})")
    return layers[0][0].copy()


def load_any_extractor(path) -> Mlp:
    """Load the feature-extractor part of a classifier, bank or bare checkpoint."""
    layers, flags = load_layers(path)
    if flags & (FLAG_HEAD | FLAG_BANK):
        layers = layers[:-1]
    if flags & FLAG_CENTROIDS or not layers:
        raise FormatError(f"{path}: checkpoint holds no extractor (flags=0x{flags:04x})")
    return _mlp_from_layers(layers)
