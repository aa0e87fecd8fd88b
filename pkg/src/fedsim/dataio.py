"""Datasets, libsvm I/O, synthetic generators and device partitions."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInput, InvalidPartition, ParseError


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples and labels.

    ``features`` is either a dense ``(n, d)`` array or a CSR matrix.
    ``ground_truth``, when present, is a parameter vector in the same feature
    space with ``labels == features @ ground_truth``; for generators that
    append a bias column its last entry is the intercept.
    """

    features: np.ndarray | sp.csr_matrix
    labels: np.ndarray
    ground_truth: np.ndarray | None = None
    name: str = ""

    def __post_init__(self) -> None:
        X = self.features
        if sp.issparse(X):
            X = sp.csr_matrix(X, dtype=np.float64)
            X.sort_indices()
        else:
            X = np.asarray(X, dtype=np.float64)
            if X.ndim != 2:
                raise InvalidInput(f"features must be 2-D, got shape {X.shape}")
            X = _freeze(np.ascontiguousarray(X))
        y = _freeze(np.asarray(self.labels, dtype=np.float64).reshape(-1))
        if y.shape[0] != X.shape[0]:
            raise InvalidInput(f"{y.shape[0]} labels for {X.shape[0]} samples")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if self.ground_truth is not None:
            w = _freeze(np.asarray(self.ground_truth, dtype=np.float64).reshape(-1))
            if w.shape[0] != X.shape[1]:
                raise InvalidInput("ground_truth dimension does not match features")
            object.__setattr__(self, "ground_truth", w)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.features)

    def dense(self) -> np.ndarray:
        X = self.features
        return X.toarray() if sp.issparse(X) else X

    def rows(self, idx) -> np.ndarray:
        """Dense copy of the selected rows."""
        X = self.features[np.asarray(idx)]
        return X.toarray() if sp.issparse(X) else X

    def sample(self, i: int) -> list[tuple[int, float]]:
        """Nonzero ``(index, value)`` pairs of sample ``i`` (0-based indices)."""
        if self.is_sparse:
            row = self.features.getrow(i)
            return [(int(j), float(v)) for j, v in zip(row.indices, row.data)]
        row = self.features[i]
        return [(int(j), float(row[j])) for j in np.flatnonzero(row)]

    def residuals(self) -> np.ndarray:
        """``labels - features @ ground_truth``."""
        if self.ground_truth is None:
            raise InvalidInput("dataset has no ground truth")
        return self.labels - self.features @ self.ground_truth


@dataclass(frozen=True, eq=False)
class DevicePartition:
    shards: tuple[np.ndarray, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        shards = tuple(_freeze(np.asarray(s, dtype=np.int64).reshape(-1)) for s in self.shards)
        p = _freeze(np.asarray(self.weights, dtype=np.float64).reshape(-1))
        if len(shards) != p.size or p.size == 0:
            raise InvalidPartition("need one weight per shard and at least one shard")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise InvalidPartition("weights must be nonnegative and sum to 1")
        allidx = np.concatenate(shards) if shards else np.empty(0, np.int64)
        if np.unique(allidx).size != allidx.size:
            raise InvalidPartition("shards overlap")
        if any(s.size == 0 for s in shards):
            raise InvalidPartition("empty shard")
        object.__setattr__(self, "shards", shards)
        object.__setattr__(self, "weights", p)

    @property
    def N(self) -> int:
        return len(self.shards)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.shards], dtype=np.int64)

    @property
    def nu_max(self) -> float:
        return float(self.N * self.weights.max())

    @property
    def nu_min(self) -> float:
        return float(self.N * self.weights.min())

    def owner(self, n: int) -> np.ndarray:
        """Device index of every sample, ``-1`` for samples held by no device."""
        out = np.full(n, -1, dtype=np.int64)
        for k, s in enumerate(self.shards):
            out[s] = k
        return out


# ---------------------------------------------------------------- libsvm


def parse_libsvm(text: str | TextIO, n_features: int | None = None) -> Dataset:
    """Parse libsvm/svmlight text (``<label> <idx>:<val> ...``, 1-based indices)."""
    stream = io.StringIO(text) if isinstance(text, str) else text
    labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            labels.append(float(parts[0]))
        except ValueError:
            raise ParseError(f"bad label {parts[0]!r}", lineno) from None
        prev = 0
        for tok in parts[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:value, got {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed entry {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"feature index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise ParseError(f"indices not strictly increasing at {idx}", lineno)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        indptr.append(len(indices))
    d = (max(indices) + 1) if indices else 0
    if n_features is not None:
        if n_features < d:
            raise ParseError(f"n_features={n_features} smaller than max index {d}")
        d = n_features
    X = sp.csr_matrix(
        (np.array(values, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), d),
    )
    return Dataset(X, np.array(labels, dtype=np.float64))


def load_libsvm(path: str | os.PathLike, n_features: int | None = None) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        ds = parse_libsvm(fh, n_features=n_features)
    return Dataset(ds.features, ds.labels, name=Path(path).stem)


def format_libsvm(ds: Dataset) -> str:
    out = io.StringIO()
    write_libsvm(ds, out)
    return out.getvalue()


def write_libsvm(ds: Dataset, dest: str | os.PathLike | TextIO) -> None:
    """Write nonzero entries with 1-based indices; reals use ``repr`` so they round-trip."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as fh:
            write_libsvm(ds, fh)
        return
    for i in range(ds.n):
        entries = " ".join(f"{j + 1}:{v!r}" for j, v in ds.sample(i) if v != 0.0)
        label = ds.labels[i]
        label_s = str(int(label)) if label in (-1.0, 1.0) else repr(float(label))
        dest.write(f"{label_s} {entries}".rstrip() + "\n")


def find_dataset(name: str) -> Path | None:
    """Look for ``name`` in ``$FEDSIM_DATA_DIR``, ``./data`` and the working directory."""
    candidates = []
    env = os.environ.get("FEDSIM_DATA_DIR")
    if env:
        candidates.append(Path(env) / name)
    candidates += [Path("data") / name, Path(name)]
    for c in candidates:
        if c.is_file():
            return c
    return None


# ---------------------------------------------------------------- partitions


def partition_even(ds: Dataset | int, N: int) -> DevicePartition:
    """Split samples in index order; the first ``n mod N`` devices get one extra sample."""
    n = ds if isinstance(ds, int) else ds.n
    if N < 1:
        raise InvalidPartition(f"need at least one device, got N={N}")
    if N > n:
        raise InvalidPartition(f"cannot split {n} samples over {N} devices")
    base, extra = divmod(n, N)
    sizes = [base + (1 if k < extra else 0) for k in range(N)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    shards = tuple(np.arange(bounds[k], bounds[k + 1]) for k in range(N))
    return DevicePartition(shards, np.array(sizes, dtype=np.float64) / n)


# ---------------------------------------------------------------- generators


def _append_bias(X):
    if sp.issparse(X):
        return sp.hstack([X, np.ones((X.shape[0], 1))], format="csr")
    return np.hstack([X, np.ones((X.shape[0], 1))])


def gen_overparam_regression(features: Dataset, seed: int) -> Dataset:
    """Noiseless regression labels on the given features.

    A constant-1 column is appended and ``[w*, b*]`` is drawn with one
    independent standard normal per coordinate; labels are ``x @ w* + b*``.
    """
    if features.n < 1:
        raise InvalidInput("need at least one sample")
    X = _append_bias(features.features)
    rng = np.random.default_rng(int(seed))
    w_star = rng.standard_normal(X.shape[1])
    y = np.asarray(X @ w_star).reshape(-1)
    return Dataset(X, y, ground_truth=w_star, name=f"{features.name}-regression")


def gen_gaussian_quadratic(n: int, d: int, spectrum: Iterable[float], seed: int) -> Dataset:
    """Gaussian features with per-coordinate variances ``spectrum`` and interpolating labels."""
    spec = np.asarray(list(spectrum), dtype=np.float64)
    if spec.shape != (d,):
        raise InvalidInput(f"spectrum must have {d} entries, got {spec.size}")
    if np.any(spec <= 0) or not np.all(np.isfinite(spec)):
        raise InvalidInput("spectrum entries must be positive")
    if n < d:
        raise InvalidInput(f"need n >= d, got n={n}, d={d}")
    rng = np.random.default_rng(int(seed))
    X = rng.standard_normal((n, d)) * np.sqrt(spec)
    w_star = rng.standard_normal(d)
    return Dataset(X, X @ w_star, ground_truth=w_star, name="gaussian-quadratic")


def gen_logistic_classification(
    n: int, d: int, seed: int, scale: float = 1.0, flip: float = 0.0
) -> Dataset:
    """±1 labels drawn from a logistic model on unit-variance Gaussian features.

    ``scale`` multiplies the true margin (larger means cleaner labels) and
    ``flip`` is an extra probability of flipping each label.
    """
    if n < 1 or d < 1:
        raise InvalidInput("n and d must be positive")
    rng = np.random.default_rng(int(seed))
    X = rng.standard_normal((n, d)) / np.sqrt(d)
    w_true = rng.standard_normal(d)
    w_true *= scale * np.sqrt(d) / np.linalg.norm(w_true)
    prob = 1.0 / (1.0 + np.exp(-(X @ w_true)))
    y = np.where(rng.random(n) < prob, 1.0, -1.0)
    if flip > 0:
        y = np.where(rng.random(n) < flip, -y, y)
    return Dataset(X, y, name="logistic-synthetic")


def gen_counterexample(
    N_devices: int, n_per_device: int, radius: float, d: int = 1
) -> tuple[Dataset, DevicePartition]:
    """Devices holding copies of centers that cancel in pairs.

    Device ``2j`` holds ``radius * e_{j mod d}``, device ``2j+1`` its negation;
    the matching loss is the squared distance ``||x - w||^2``.
    """
    if N_devices < 2 or N_devices % 2:
        raise InvalidInput(f"N_devices must be a positive even number, got {N_devices}")
    if n_per_device < 1 or radius <= 0 or d < 1:
        raise InvalidInput("n_per_device, radius and d must be positive")
    centers = np.zeros((N_devices, d))
    for j in range(N_devices // 2):
        centers[2 * j, j % d] = radius
        centers[2 * j + 1] = -centers[2 * j]
    X = np.repeat(centers, n_per_device, axis=0)
    ds = Dataset(X, np.zeros(X.shape[0]), name="counterexample")
    part = partition_even(ds, N_devices)
    return ds, part
