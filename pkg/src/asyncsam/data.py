"""Datasets, IDX file I/O and seeded mini-batch sampling."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("features must be a non-empty (n, d) matrix")
        if y.shape != (X.shape[0],):
            raise ValueError("need exactly one label per sample")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain NaN or Inf")
        if self.k < 1 or y.min() < 0 or y.max() >= self.k:
            raise ValueError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.k)

    def split(self, n_train: int) -> tuple[Dataset, Dataset]:
        """First ``n_train`` rows, remaining rows. Samples are i.i.d., so no shuffle is needed."""
        if not 1 <= n_train < self.n:
            raise ValueError("n_train must leave at least one row on each side")
        return self.subset(np.arange(n_train)), self.subset(np.arange(n_train, self.n))


def generate_gaussian_blobs(seed: int, n: int = 2000, d: int = 20, k: int = 4,
                            spread: float = 0.5, label_noise: float = 0.1) -> Dataset:
    """``k`` isotropic Gaussian clusters whose means sit on the unit sphere.

    Classes are balanced before noise. A fraction ``label_noise`` of the
    labels is then re-drawn uniformly from all ``k`` classes.
    """
    if k < 2 or n < k:
        raise ValueError("need n >= k >= 2")
    if d < 1:
        raise ValueError("d must be positive")
    if not spread > 0:
        raise ValueError("spread must be positive")
    if not 0 <= label_noise < 1:
        raise ValueError("label_noise must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((k, d))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    true = rng.permutation(np.arange(n) % k)
    X = means[true] + spread * rng.standard_normal((n, d))
    labels = true.copy()
    n_noisy = int(round(label_noise * n))
    if n_noisy:
        flip = rng.choice(n, size=n_noisy, replace=False)
        labels[flip] = rng.integers(0, k, size=n_noisy)
    return Dataset(X, labels, k)


# ------------------------------------------------------------------- IDX files

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_CODES = {dt.str.lstrip("<>|="): code for code, dt in IDX_TYPES.items()}


class IDXFormatError(ValueError):
    pass


def read_idx(path: str | os.PathLike) -> np.ndarray:
    """Parse an IDX file (big-endian header ``00 00 <type> <rank>`` then rank uint32 dims)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise IDXFormatError("file too short for an IDX header")
    zero0, zero1, code, rank = raw[0], raw[1], raw[2], raw[3]
    if zero0 != 0 or zero1 != 0:
        raise IDXFormatError(f"bad magic 0x{int.from_bytes(raw[:4], 'big'):08x}")
    if code not in IDX_TYPES:
        raise IDXFormatError(f"unsupported IDX element type 0x{code:02x}")
    if rank == 0:
        raise IDXFormatError("IDX rank must be at least 1")
    header = 4 + 4 * rank
    if len(raw) < header:
        raise IDXFormatError("truncated dimension header")
    dims = struct.unpack(f">{rank}I", raw[4:header])
    dtype = IDX_TYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = len(raw) - header
    if payload != expected:
        raise IDXFormatError(f"payload is {payload} bytes, dims {dims} require {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path: str | os.PathLike, array: np.ndarray) -> None:
    array = np.asarray(array)
    key = array.dtype.newbyteorder(">").str.lstrip("<>|=")
    if key not in _CODES:
        raise IDXFormatError(f"dtype {array.dtype} has no IDX encoding")
    code = _CODES[key]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(array.astype(IDX_TYPES[code]).tobytes())


def load_idx_dataset(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Images flattened and scaled to [0, 1]; labels as integer classes."""
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError("image and label counts differ")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    X = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.uint8:
        X /= 255.0
    return Dataset(X, labels, int(labels.max()) + 1)


# -------------------------------------------------------------------- sampling


@dataclass(frozen=True)
class MiniBatch:
    """Sample indices of one mini-batch."""

    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    def head(self, b: int) -> MiniBatch:
        return MiniBatch(self.indices[:b])


WITH_REPLACEMENT = "with-replacement"
SHUFFLED_EPOCHS = "shuffled-epochs"
POLICIES = (WITH_REPLACEMENT, SHUFFLED_EPOCHS)


class BatchSampler:
    """Seeded index stream over ``range(n)``.

    Under ``shuffled-epochs`` each epoch is a fresh permutation consumed in
    slices of ``b``; a tail shorter than the requested size is dropped.
    """

    def __init__(self, seed, n: int, policy: str = WITH_REPLACEMENT):
        if policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if n < 1:
            raise ValueError("dataset size must be positive")
        self.seed = seed
        self.n = int(n)
        self.policy = policy
        self.position = 0
        self._rng = np.random.default_rng(seed)
        self._perm = np.empty(0, dtype=np.int64)
        self._cursor = 0

    def sample(self, b: int) -> np.ndarray:
        if b < 1:
            raise ValueError("batch size must be at least 1")
        self.position += 1
        if self.policy == WITH_REPLACEMENT:
            return self._rng.integers(0, self.n, size=b)
        if b > self.n:
            raise ValueError(f"batch size {b} exceeds dataset size {self.n} for shuffled epochs")
        if self._cursor + b > self._perm.shape[0]:
            self._perm = self._rng.permutation(self.n)
            self._cursor = 0
        out = self._perm[self._cursor:self._cursor + b]
        self._cursor += b
        return out


def sample_batch(sampler: BatchSampler, b: int) -> MiniBatch:
    return MiniBatch(sampler.sample(b))


def stream_seeds(seed: int) -> dict[str, np.random.SeedSequence]:
    """Independent child seeds for one run: parameter init, descent batches, ascent batches."""
    init, descent, ascent = np.random.SeedSequence(seed).spawn(3)
    return {"init": init, "descent": descent, "ascent": ascent}
