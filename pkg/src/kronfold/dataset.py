"""Labeled matrix datasets: MDS1 and PGM I/O, centering, folds, synthetic data.

MDS1 layout (all integers little-endian)::

    b"MDS1" | u32 N | u32 n1 | u32 n2 | u8 label_flag
    [if label_flag: u32 class_count | N x u32 label]
    N*n1*n2 x f64 sample data, samples consecutive, each row-major
"""

from __future__ import annotations

import hashlib
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kronecker import KronPairList

MAGIC = b"MDS1"
_HEADER = struct.Struct("<4sIIIB")


class DatasetError(ValueError):
    """Base class for malformed or inconsistent dataset input."""


class BadMagicError(DatasetError):
    pass


class TruncatedPayloadError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class PgmFormatError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class MatrixDataset:
    """``N`` real ``n1 x n2`` samples with optional integer labels.

    ``samples`` is stored as a read-only ``(N, n1, n2)`` float64 array.
    """

    samples: np.ndarray
    labels: np.ndarray | None = None
    class_count: int | None = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim == 2:
            samples = samples[None]
        if samples.ndim != 3:
            raise DatasetError(f"samples must be (N, n1, n2), got shape {samples.shape}")
        if min(samples.shape) < 1:
            raise DatasetError(f"empty dimension in sample shape {samples.shape}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

        labels = self.labels
        if labels is not None:
            labels = np.array(labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != samples.shape[0]:
                raise DatasetError(f"{labels.shape[0]} labels for {samples.shape[0]} samples")
            if labels.size and labels.min() < 0:
                raise LabelRangeError("labels must be non-negative")
            class_count = self.class_count
            if class_count is None:
                class_count = int(labels.max()) + 1
            if labels.max() >= class_count:
                raise LabelRangeError(
                    f"label {int(labels.max())} out of range for class_count {class_count}"
                )
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "class_count", int(class_count))
        elif self.class_count is not None:
            object.__setattr__(self, "class_count", int(self.class_count))

    @property
    def N(self):
        return self.samples.shape[0]

    @property
    def n1(self):
        return self.samples.shape[1]

    @property
    def n2(self):
        return self.samples.shape[2]

    @property
    def has_labels(self):
        return self.labels is not None

    def __len__(self):
        return self.N

    def __eq__(self, other):
        if not isinstance(other, MatrixDataset):
            return NotImplemented
        if self.samples.shape != other.samples.shape:
            return False
        if self.samples.tobytes() != other.samples.tobytes():
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None:
            return np.array_equal(self.labels, other.labels) and self.class_count == other.class_count
        return True

    __hash__ = None

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.intp)
        labels = None if self.labels is None else self.labels[indices]
        return MatrixDataset(self.samples[indices], labels, self.class_count)

    def with_samples(self, samples):
        return MatrixDataset(samples, self.labels, self.class_count)

    def vectorized(self):
        """``(n1*n2, N)`` matrix whose columns are ``vec(A_i)`` (column stacking)."""
        N = self.N
        return self.samples.transpose(0, 2, 1).reshape(N, -1).T


def as_samples(data):
    """Return the ``(N, n1, n2)`` sample array of a dataset or array-like."""
    if isinstance(data, MatrixDataset):
        return data.samples
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected a stack of matrices, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# MDS1
# ---------------------------------------------------------------------------

def encode_mds(dataset):
    """Return the MDS1 byte encoding of ``dataset``."""
    parts = [_HEADER.pack(MAGIC, dataset.N, dataset.n1, dataset.n2, int(dataset.has_labels))]
    if dataset.has_labels:
        parts.append(struct.pack("<I", dataset.class_count))
        parts.append(dataset.labels.astype("<u4").tobytes())
    parts.append(dataset.samples.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def decode_mds(buf):
    """Parse MDS1 bytes into a :class:`MatrixDataset`."""
    buf = memoryview(buf)
    if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError("file ends inside the header")
    _, N, n1, n2, flag = _HEADER.unpack_from(buf, 0)
    if flag not in (0, 1):
        raise DatasetError(f"label flag must be 0 or 1, got {flag}")
    offset = _HEADER.size
    labels = class_count = None
    if flag:
        need = offset + 4 + 4 * N
        if len(buf) < need:
            raise TruncatedPayloadError(f"label block needs {need} bytes, file has {len(buf)}")
        (class_count,) = struct.unpack_from("<I", buf, offset)
        labels = np.frombuffer(buf, dtype="<u4", count=N, offset=offset + 4).astype(np.int64)
        offset = need
        if N and labels.max() >= class_count:
            bad = int(np.argmax(labels >= class_count))
            raise LabelRangeError(
                f"label {int(labels[bad])} at index {bad} >= class_count {class_count}"
            )
    count = N * n1 * n2
    need = offset + 8 * count
    if len(buf) < need:
        raise TruncatedPayloadError(f"sample payload needs {need} bytes, file has {len(buf)}")
    if len(buf) > need:
        raise DatasetError(f"{len(buf) - need} trailing bytes after sample payload")
    samples = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(N, n1, n2)
    return MatrixDataset(samples.astype(np.float64), labels, class_count)


def load_mds(path):
    with open(path, "rb") as fh:
        return decode_mds(fh.read())


def save_mds(dataset, path):
    Path(path).write_bytes(encode_mds(dataset))


def fingerprint(dataset):
    """64-bit BLAKE2b hash of the MDS1 encoding, as 16 hex digits."""
    return hashlib.blake2b(encode_mds(dataset), digest_size=8).hexdigest()


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pgm_tokens(buf, count, pos=0):
    out = []
    for _ in range(count):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise PgmFormatError("unexpected end of PGM header")
        out.append(m.group(1))
        pos = m.end()
    return out, pos


def read_pgm(path):
    """Read a P2 or P5 PGM; return ``(pixels as float64 in [0, 1], maxval)``."""
    buf = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), pos = _pgm_tokens(buf, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise PgmFormatError(f"{path}: malformed PGM header") from exc
    if magic not in (b"P2", b"P5"):
        raise PgmFormatError(f"{path}: unsupported magic {magic!r}")
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise PgmFormatError(f"{path}: bad dimensions or maxval")
    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates header and raster
        pos += 1
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        nbytes = count * np.dtype(dtype).itemsize
        if len(buf) < pos + nbytes:
            raise PgmFormatError(f"{path}: truncated raster")
        pixels = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    else:
        values = buf[pos:].split()
        if len(values) < count:
            raise PgmFormatError(f"{path}: truncated raster")
        try:
            pixels = np.array([int(v) for v in values[:count]])
        except ValueError as exc:
            raise PgmFormatError(f"{path}: non-integer pixel value") from exc
    if pixels.max(initial=0) > maxval:
        raise PgmFormatError(f"{path}: pixel exceeds maxval {maxval}")
    return pixels.reshape(height, width).astype(np.float64) / maxval, maxval


def write_pgm(path, image, maxval=255, binary=True):
    """Write ``image`` (values in [0, 1]) as a PGM, rounding to ``maxval`` levels."""
    image = np.asarray(image, dtype=np.float64)
    levels = np.rint(np.clip(image, 0.0, 1.0) * maxval).astype(np.int64)
    height, width = levels.shape
    if binary:
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        header = f"P5\n{width} {height}\n{maxval}\n".encode()
        Path(path).write_bytes(header + levels.astype(dtype).tobytes())
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in levels)
        Path(path).write_text(f"P2\n{width} {height}\n{maxval}\n{rows}\n")


def prefix_label(filename):
    """Default label rule: the integer before the first underscore."""
    stem = Path(filename).name
    prefix = stem.split("_", 1)[0]
    if "_" not in stem or not prefix.isdigit():
        raise DatasetError(f"cannot parse a label prefix from {stem!r}")
    return int(prefix)


def load_pgm_dir(directory, label_rule=prefix_label):
    """Load every PGM in ``directory`` (sorted by filename) into a dataset."""
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".pgm"))
    if not names:
        raise DatasetError(f"no PGM files in {directory}")
    images, labels = [], []
    for name in names:
        image, _ = read_pgm(os.path.join(directory, name))
        if images and image.shape != images[0].shape:
            raise DatasetError(
                f"{name} is {image.shape[0]}x{image.shape[1]}, "
                f"expected {images[0].shape[0]}x{images[0].shape[1]}"
            )
        images.append(image)
        labels.append(label_rule(name) if label_rule is not None else None)
    if label_rule is None:
        return MatrixDataset(np.stack(images))
    return MatrixDataset(np.stack(images), np.array(labels))


# ---------------------------------------------------------------------------
# Transforms and partitions
# ---------------------------------------------------------------------------

def center(dataset):
    """Subtract the elementwise mean sample; return ``(centered, mean)``."""
    mean = dataset.samples.mean(axis=0)
    return dataset.with_samples(dataset.samples - mean), mean


@dataclass(frozen=True, eq=False)
class FoldPlan:
    K: int
    assignment: np.ndarray

    def test_indices(self, fold):
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignment != fold)

    def fold_sizes(self):
        return np.bincount(self.assignment, minlength=self.K)


def kfold_split(dataset, K, seed=0):
    """Stratified K-fold assignment.

    Members of each class are shuffled with a seeded generator and dealt
    round-robin across folds.  The dealing position carries over from one
    class to the next, which keeps overall fold sizes within one of each
    other.  A class with fewer than ``K`` members appears in fewer folds.
    """
    if not dataset.has_labels:
        raise DatasetError("kfold_split needs labels")
    if K < 2:
        raise ValueError(f"fold count must be at least 2, got {K}")
    if K > dataset.N:
        raise ValueError(f"fold count {K} exceeds sample count {dataset.N}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(dataset.N, dtype=np.int64)
    position = 0
    for c in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == c)
        members = members[rng.permutation(members.size)]
        assignment[members] = (position + np.arange(members.size)) % K
        position = (position + members.size) % K
    return FoldPlan(K, assignment)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    n1: int
    n2: int
    N: int
    kron_rank: int = 1
    core_dims: tuple = (2, 2)
    noise_sigma: float = 0.0
    class_count: int = 2
    seed: int = 0
    class_spread: float = 1.0

    def __post_init__(self):
        k1, k2 = self.core_dims
        if self.kron_rank < 1:
            raise ValueError("kron_rank must be >= 1")
        if min(self.n1, self.n2, self.N, k1, k2, self.class_count) < 1:
            raise ValueError("dimensions, N and class_count must be positive")
        if k1 > self.n1 or k2 > self.n2:
            raise ValueError(f"core dims {self.core_dims} exceed ({self.n1}, {self.n2})")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def _orthonormal(rng, n, k):
    Q, R = np.linalg.qr(rng.standard_normal((n, k)))
    return Q * np.sign(np.diag(R))


def synth_kron(spec):
    """Draw ``A_i = sum_j L_j D_i R_j^T + noise`` from a seeded generator.

    Each ``(L_j, R_j)`` has orthonormal columns.  Every class gets a mean
    core drawn once (scaled by ``class_spread``); a sample's core is its
    class mean plus unit Gaussian noise.  Labels are dealt round-robin so
    class sizes differ by at most one.

    Returns ``(dataset, pairs, cores)``.
    """
    rng = np.random.default_rng(spec.seed)
    k1, k2 = spec.core_dims
    Ls = np.stack([_orthonormal(rng, spec.n1, k1) for _ in range(spec.kron_rank)])
    Rs = np.stack([_orthonormal(rng, spec.n2, k2) for _ in range(spec.kron_rank)])
    pairs = KronPairList(Ls, Rs)
    class_means = spec.class_spread * rng.standard_normal((spec.class_count, k1, k2))
    labels = np.arange(spec.N) % spec.class_count
    labels = labels[rng.permutation(spec.N)]
    cores = class_means[labels] + rng.standard_normal((spec.N, k1, k2))
    samples = np.zeros((spec.N, spec.n1, spec.n2))
    for L, R in pairs:
        samples += L @ cores @ R.T
    if spec.noise_sigma > 0:
        samples += spec.noise_sigma * rng.standard_normal(samples.shape)
    dataset = MatrixDataset(samples, labels, spec.class_count)
    return dataset, pairs, cores
