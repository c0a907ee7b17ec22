"""Dataset ingestion and image export.

Two on-disk input formats are supported: the big-endian IDX container used
by MNIST-style corpora, and LMAT, a minimal headered matrix format for
everything else (binary u8 or real f64 payloads, optional integer labels).
Sample grids are exported as binary PGM (P5).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

DATA_KINDS = ("binary", "real")

LMAT_MAGIC = b"LMAT"
LMAT_VERSION = 1


class DataFormatError(ValueError):
    """Raised when an input container is malformed."""


@dataclass(frozen=True)
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray  # population stddev; 0 marks a constant column


@dataclass(frozen=True)
class Dataset:
    """Row-major sample matrix with a kind tag and optional labels.

    Immutable after construction; safe for concurrent reads.
    """

    samples: np.ndarray
    kind: str
    labels: Optional[np.ndarray] = None
    normalization: Optional[ColumnStats] = None

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ValueError(f"kind must be one of {DATA_KINDS}")
        samples = np.ascontiguousarray(self.samples)
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {samples.shape}")
        if self.kind == "binary":
            samples = samples.astype(np.uint8, copy=False)
            if samples.size and samples.max() > 1:
                raise ValueError("binary dataset has entries outside {0,1}")
        else:
            samples = samples.astype(np.float64, copy=False)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.labels is not None:
            labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if labels.shape != (samples.shape[0],):
                raise ValueError("labels length does not match sample count")
            if labels.size and labels.min() < 0:
                raise ValueError("labels must be non-negative")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_dim(self) -> int:
        return self.samples.shape[1]

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64, copy=False)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(
            self.samples[indices],
            self.kind,
            None if self.labels is None else self.labels[indices],
            self.normalization,
        )


# --- IDX -------------------------------------------------------------------

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("="): k for k, v in _IDX_DTYPES.items()}


def load_idx(source) -> np.ndarray:
    """Parse an IDX container (path, file object, or bytes) into a tensor."""
    if isinstance(source, (bytes, bytearray)):
        buf = bytes(source)
    elif hasattr(source, "read"):
        buf = source.read()
    else:
        with open(source, "rb") as fh:
            buf = fh.read()
    if len(buf) < 4:
        raise DataFormatError("truncated IDX header")
    zero0, zero1, dtype_code, ndims = struct.unpack(">BBBB", buf[:4])
    if zero0 != 0 or zero1 != 0 or dtype_code not in _IDX_DTYPES:
        raise DataFormatError(f"bad IDX magic {buf[:4].hex()}")
    header_len = 4 + 4 * ndims
    if len(buf) < header_len:
        raise DataFormatError("truncated IDX dimension list")
    dims = struct.unpack(f">{ndims}I", buf[4:header_len])
    dtype = _IDX_DTYPES[dtype_code]
    count = 1
    for dim in dims:
        count *= dim
        if count > (1 << 40):
            raise DataFormatError("IDX dimensions overflow")
    expected = header_len + count * dtype.itemsize
    if len(buf) < expected:
        raise DataFormatError("truncated IDX payload")
    if len(buf) > expected:
        raise DataFormatError("trailing bytes after IDX payload")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=header_len)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(tensor: np.ndarray, path) -> None:
    tensor = np.ascontiguousarray(tensor)
    code = _IDX_CODES.get(tensor.dtype)
    if code is None:
        raise DataFormatError(f"dtype {tensor.dtype} not representable in IDX")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, code, tensor.ndim))
        fh.write(struct.pack(f">{tensor.ndim}I", *tensor.shape))
        fh.write(tensor.astype(_IDX_DTYPES[code]).tobytes())


def idx_images_to_matrix(tensor: np.ndarray) -> np.ndarray:
    """Flatten a (N, rows, cols) image tensor row-major to (N, rows*cols)."""
    if tensor.ndim < 2:
        raise DataFormatError("image tensor must have rank >= 2")
    return tensor.reshape(tensor.shape[0], -1)


# --- transforms ------------------------------------------------------------


def binarize(data, threshold: float = 0.5) -> np.ndarray:
    """Threshold to {0,1} with a strict > comparison.

    Unsigned-integer input is rescaled by 255 first, so raw MNIST pixels can
    be passed directly.
    """
    data = np.asarray(data)
    if data.dtype.kind == "u":
        data = data.astype(np.float64) / 255.0
    return (data > threshold).astype(np.uint8)


def normalize_columns(data):
    """Center each column and scale to unit population stddev.

    Constant columns are centered only; their recorded stddev is 0 and a
    warning is emitted. Returns (normalized matrix, ColumnStats).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("need a matrix with at least 2 rows")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    constant = std == 0
    if np.any(constant):
        warnings.warn(
            f"{int(constant.sum())} constant column(s) left centered only",
            stacklevel=2,
        )
    scale = np.where(constant, 1.0, std)
    return (data - mean) / scale, ColumnStats(mean=mean, std=std)


def denormalize_columns(data, stats: ColumnStats) -> np.ndarray:
    scale = np.where(stats.std == 0, 1.0, stats.std)
    return np.asarray(data, dtype=np.float64) * scale + stats.mean


def split_validation(dataset: Dataset, k: int, seed: int):
    """Seed-deterministic disjoint (train, validation) split, |val| = k."""
    m = dataset.n_samples
    if k >= m:
        raise ValueError(f"validation size {k} must be < sample count {m}")
    perm = np.random.default_rng(seed).permutation(m)
    val_idx = np.sort(perm[:k])
    train_idx = np.sort(perm[k:])
    return dataset.subset(train_idx), dataset.subset(val_idx)


# --- LMAT ------------------------------------------------------------------
#
# Layout (little-endian): magic "LMAT" | u32 version | u8 kind (0 binary,
# 1 real) | u64 M | u64 n_d | u8 labels flag | payload (u8 or f64,
# row-major) | labels (u32 x M, if flagged).

_LMAT_KIND = {"binary": 0, "real": 1}
_LMAT_KIND_INV = {v: k for k, v in _LMAT_KIND.items()}


def save_lmat(dataset: Dataset, path) -> None:
    has_labels = dataset.labels is not None
    with open(path, "wb") as fh:
        fh.write(LMAT_MAGIC)
        fh.write(struct.pack("<IBQQB", LMAT_VERSION, _LMAT_KIND[dataset.kind],
                             dataset.n_samples, dataset.n_dim, int(has_labels)))
        if dataset.kind == "binary":
            fh.write(dataset.samples.astype(np.uint8).tobytes())
        else:
            fh.write(dataset.samples.astype("<f8").tobytes())
        if has_labels:
            fh.write(dataset.labels.astype("<u4").tobytes())


def load_lmat(path) -> Dataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    header = struct.Struct("<IBQQB")
    if len(buf) < 4 + header.size:
        raise DataFormatError("truncated LMAT header")
    if buf[:4] != LMAT_MAGIC:
        raise DataFormatError("bad magic: not an LMAT container")
    version, kind_code, m, n_d, labels_flag = header.unpack_from(buf, 4)
    if version != LMAT_VERSION:
        raise DataFormatError(f"unsupported LMAT version {version}")
    if kind_code not in _LMAT_KIND_INV:
        raise DataFormatError(f"unknown LMAT kind code {kind_code}")
    kind = _LMAT_KIND_INV[kind_code]
    offset = 4 + header.size
    itemsize = 1 if kind == "binary" else 8
    payload = m * n_d * itemsize
    expected = offset + payload + (4 * m if labels_flag else 0)
    if len(buf) < expected:
        raise DataFormatError("truncated LMAT payload")
    if len(buf) > expected:
        raise DataFormatError("trailing bytes after LMAT payload")
    dtype = np.uint8 if kind == "binary" else np.dtype("<f8")
    samples = np.frombuffer(buf, dtype=dtype, count=m * n_d, offset=offset)
    samples = samples.reshape(m, n_d)
    labels = None
    if labels_flag:
        labels = np.frombuffer(buf, dtype="<u4", count=m, offset=offset + payload)
    return Dataset(samples.copy(), kind, None if labels is None else labels.copy())


# --- PGM export -------------------------------------------------------------


def write_pgm(images, rows: int, cols: int, path, grid_shape=None) -> None:
    """Write images (values in [0,1]) as binary PGM, maxval 255.

    With grid_shape=(gr, gc) all images are tiled into one file; otherwise a
    single image is written (pass a 1-row matrix or a flat vector).
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if images.shape[1] != rows * cols:
        raise ValueError(f"images have {images.shape[1]} pixels, expected {rows * cols}")
    if images.size and (images.min() < 0 or images.max() > 1):
        raise ValueError("pixel values must lie in [0,1]")
    pixels = np.rint(images * 255).astype(np.uint8)
    if grid_shape is not None:
        gr, gc = grid_shape
        if gr * gc < images.shape[0]:
            raise ValueError("grid too small for image count")
        canvas = np.zeros((gr * rows, gc * cols), dtype=np.uint8)
        for k in range(images.shape[0]):
            r, c = divmod(k, gc)
            canvas[r * rows : (r + 1) * rows, c * cols : (c + 1) * cols] = (
                pixels[k].reshape(rows, cols)
            )
        _write_pgm_array(canvas, path)
    else:
        if images.shape[0] != 1:
            raise ValueError("pass grid_shape to write multiple images to one file")
        _write_pgm_array(pixels[0].reshape(rows, cols), path)


def _write_pgm_array(array: np.ndarray, path) -> None:
    h, w = array.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(array.tobytes())
