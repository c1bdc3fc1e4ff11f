"""Vector storage, squared-L2 distance, fvecs I/O and the brute-force oracle."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from ._kernels import dist_all, dist_rows, sqdist


class FormatError(ValueError):
    """Malformed fvecs content; ``offset`` is the byte position of the bad record."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


class Neighbor(NamedTuple):
    id: int
    dist: float


@dataclass(frozen=True)
class Dataset:
    """Immutable dense float32 matrix; row i is the vector with global id i."""

    vectors: np.ndarray
    metric: str = "l2sq"

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError("vectors must be a 2-d array with d >= 1")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.vectors[i]


def _as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32)


def distance(a, b) -> float:
    a, b = _as_f32(a), _as_f32(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(sqdist(a, b))


def topk_from(ids: np.ndarray, dists: np.ndarray, k: int) -> list[Neighbor]:
    """Top-k by (dist, id) from parallel arrays."""
    if len(ids) == 0:
        return []
    order = np.lexsort((ids, dists))[:k]
    return [Neighbor(int(ids[i]), float(dists[i])) for i in order]


def brute_force_topk(ds: Dataset, q, k: int, allowed: Iterable[int] | np.ndarray | None = None) -> list[Neighbor]:
    """Exact top-k over all ids or over ``allowed`` (id collection or boolean mask)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = _as_f32(q)
    if q.shape != (ds.dim,):
        raise ValueError(f"dimension mismatch: query {q.shape[0]} vs dataset {ds.dim}")
    if allowed is None:
        ids = np.arange(len(ds), dtype=np.int64)
        d = dist_all(ds.vectors, q)
    else:
        ids = allowed_ids(allowed, len(ds))
        d = dist_rows(ds.vectors, ids, q)
    return topk_from(ids, d, k)


def allowed_ids(allowed, n: int) -> np.ndarray:
    """Normalize an id collection or boolean mask to a sorted int64 id array."""
    if isinstance(allowed, np.ndarray) and allowed.dtype == bool:
        return np.flatnonzero(allowed[:n]).astype(np.int64)
    ids = np.unique(np.fromiter(allowed, dtype=np.int64))
    return ids[(ids >= 0) & (ids < n)]


def save_fvecs(ds: Dataset | np.ndarray, path: str | os.PathLike) -> None:
    v = ds.vectors if isinstance(ds, Dataset) else _as_f32(ds)
    n, d = v.shape
    rec = np.empty((n, d + 1), dtype="<f4")
    rec[:, 1:] = v
    rec.view("<i4")[:, 0] = d
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def load_fvecs(path: str | os.PathLike, dim: int | None = None) -> Dataset:
    """Read an fvecs file. ``dim`` is required only for an empty file."""
    buf = np.fromfile(path, dtype=np.uint8)
    if buf.size == 0:
        if dim is None:
            raise FormatError("empty file and no dimension override", 0)
        return _empty(dim)
    if buf.size < 4:
        raise FormatError("truncated header", 0)
    d = int(buf[:4].view("<i4")[0])
    if d <= 0:
        raise FormatError(f"invalid dimension {d}", 0)
    rec = 4 * (d + 1)
    n_full = buf.size // rec
    # validate every header before trusting the reshape
    heads = buf[: n_full * rec].reshape(n_full, rec)[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(heads != d)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"record {i} has dimension {int(heads[i])}, expected {d}", i * rec)
    if buf.size % rec:
        off = n_full * rec
        tail = buf[off:]
        if tail.size >= 4 and int(tail[:4].view("<i4")[0]) != d:
            raise FormatError(f"record {n_full} has inconsistent dimension", off)
        raise FormatError(f"truncated record {n_full}", off)
    mat = buf.reshape(n_full, rec)[:, 4:].copy().view("<f4")
    return Dataset(mat.astype(np.float32, copy=False))


def _empty(dim: int) -> Dataset:
    # Dataset validation requires d >= 1 but allows zero rows
    return Dataset(np.zeros((0, dim), dtype=np.float32))


def gen_gaussian_mixture(n: int, d: int, n_clusters: int = 32, spread: float = 0.35, seed: int = 0) -> Dataset:
    """Clustered synthetic vectors, a stand-in for SIFT-like descriptors."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, d)).astype(np.float32)
    assign = rng.integers(0, n_clusters, size=n)
    x = centers[assign] + spread * rng.standard_normal((n, d)).astype(np.float32)
    return Dataset(x.astype(np.float32))
