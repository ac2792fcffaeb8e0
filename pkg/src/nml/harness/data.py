"""Datasets: seeded Gaussian clusters, CSV tables and IDX files."""
from __future__ import annotations

import csv
import gzip
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


def synthetic(clusters: int, dim: int, n: int, seed: int = 0, spread: float = 2.0, noise: float = 1.0):
    """Labelled points scattered around ``clusters`` random centers."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, spread, size=(clusters, dim))
    y = rng.integers(0, clusters, size=n)
    X = centers[y] + noise * rng.normal(size=(n, dim))
    return X, y


def load_csv(path: str | Path, label_column: str = "label"):
    """Numeric feature columns plus one label column (integers or category names)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: no column named {label_column!r}")
        j = header.index(label_column)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                feats.append([float(v) for k, v in enumerate(row) if k != j])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            labels.append(row[j])
    if not feats:
        raise DataError(f"{path}: no data rows")
    try:
        y = np.array([int(v) for v in labels])
    except ValueError:
        names = sorted(set(labels))
        y = np.array([names.index(v) for v in labels])
    return np.array(feats, dtype=np.float64), y


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    raw = gzip.decompress(path.read_bytes()) if path.suffix == ".gz" else path.read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES:
        raise DataError(f"{path}: not an IDX file")
    ndim = raw[3]
    dims = np.frombuffer(raw, dtype=">u4", count=ndim, offset=4).astype(np.int64)
    dtype = np.dtype(_IDX_TYPES[raw[2]])
    offset = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(raw) - offset != count * dtype.itemsize:
        raise DataError(f"{path}: payload size does not match header")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(dims)


def load_idx(images: str | Path, labels: str | Path, limit: int | None = None):
    """IDX image/label pair, flattened; unsigned-byte pixels are scaled to [0, 1]."""
    X = read_idx(images)
    y = read_idx(labels).astype(np.int64).ravel()
    if X.shape[0] != y.shape[0]:
        raise DataError("image and label counts differ")
    scale = 255.0 if X.dtype == np.dtype(">u1") else 1.0
    X = X.reshape(X.shape[0], -1).astype(np.float64) / scale
    if limit is not None:
        X, y = X[:limit], y[:limit]
    return X, y
