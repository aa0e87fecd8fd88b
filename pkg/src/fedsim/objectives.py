"""Federated objectives F = sum_k p_k F_k, their gradients and spectral constants."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .dataio import Dataset, DevicePartition
from .errors import DegenerateSpectrum, InvalidBatch, InvalidInput, ShapeError

log = logging.getLogger(__name__)

REG_LOGISTIC = "reg_logistic"
LOGISTIC = "logistic"
LEAST_SQUARES = "least_squares"
DISTANCE = "distance"
KINDS = (REG_LOGISTIC, LOGISTIC, LEAST_SQUARES, DISTANCE)

# eigenvalues below this fraction of the largest are treated as zero
RANGE_RTOL = 1e-10


class Objective:
    """Weighted sum of per-device empirical risks.

    ``kind`` selects the per-sample loss on the linear prediction ``z = w @ x``:

    * ``reg_logistic`` / ``logistic``: ``log(1 + exp(-y z))`` plus ``lam/2 ||w||^2``
    * ``least_squares``: ``(z - y)^2 / 2``
    * ``distance``: ``||x - w||^2`` (labels ignored)
    """

    def __init__(self, kind: str, dataset: Dataset, partition: DevicePartition, lam: float = 0.0):
        if kind not in KINDS:
            raise InvalidInput(f"unknown objective kind {kind!r}")
        if kind == LOGISTIC:
            lam = 0.0
        if lam < 0:
            raise InvalidInput("regularization must be nonnegative")
        if kind in (LEAST_SQUARES, DISTANCE) and lam != 0:
            raise InvalidInput(f"{kind} takes no regularization")
        self.kind = kind
        self.lam = float(lam)
        self.dataset = dataset
        self.partition = partition
        n = dataset.n
        for s in partition.shards:
            if s.size and (s.min() < 0 or s.max() >= n):
                raise InvalidInput("partition indexes samples outside the dataset")
        if kind in (REG_LOGISTIC, LOGISTIC) and n and not np.all(np.abs(dataset.labels) == 1):
            raise InvalidInput("logistic objectives need ±1 labels")
        self._X = dataset.features
        self._y = dataset.labels
        self.owner = partition.owner(n)
        sizes = partition.sizes.astype(np.float64)
        self.sample_weight = np.zeros(n)
        mask = self.owner >= 0
        self.sample_weight[mask] = partition.weights[self.owner[mask]] / sizes[self.owner[mask]]
        self._sq_norms = (
            np.asarray(self._X.multiply(self._X).sum(axis=1)).reshape(-1)
            if sp.issparse(self._X)
            else np.einsum("ij,ij->i", self._X, self._X)
        )

    @classmethod
    def reg_logistic(cls, ds: Dataset, part: DevicePartition, lam: float | None = None) -> "Objective":
        return cls(REG_LOGISTIC, ds, part, 1.0 / ds.n if lam is None else lam)

    @classmethod
    def logistic(cls, ds: Dataset, part: DevicePartition) -> "Objective":
        return cls(LOGISTIC, ds, part)

    @classmethod
    def least_squares(cls, ds: Dataset, part: DevicePartition) -> "Objective":
        return cls(LEAST_SQUARES, ds, part)

    @classmethod
    def distance(cls, ds: Dataset, part: DevicePartition) -> "Objective":
        return cls(DISTANCE, ds, part)

    # ------------------------------------------------------------ basics

    @property
    def d(self) -> int:
        return self.dataset.d

    @property
    def N(self) -> int:
        return self.partition.N

    def __repr__(self) -> str:
        return f"Objective({self.kind}, n={self.dataset.n}, d={self.d}, N={self.N}, lam={self.lam:g})"

    def _check(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.d,):
            raise ShapeError(f"expected parameter of shape ({self.d},), got {w.shape}")
        return w

    def _sample_losses(self, w: np.ndarray) -> np.ndarray:
        if self.kind == DISTANCE:
            return self._sq_norms - 2.0 * np.asarray(self._X @ w).reshape(-1) + w @ w
        z = np.asarray(self._X @ w).reshape(-1)
        if self.kind == LEAST_SQUARES:
            return 0.5 * (z - self._y) ** 2
        return np.logaddexp(0.0, -self._y * z)

    def _dloss(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Derivative of the per-sample loss with respect to the prediction ``z``."""
        if self.kind == LEAST_SQUARES:
            return z - y
        return -y * expit(-y * z)

    def value(self, w) -> float:
        w = self._check(w)
        out = float(self.sample_weight @ self._sample_losses(w))
        if self.lam:
            out += 0.5 * self.lam * float(w @ w)
        return out

    def device_values(self, w) -> np.ndarray:
        """``F_k(w)`` for every device."""
        w = self._check(w)
        losses = self._sample_losses(w)
        out = np.array([losses[s].mean() for s in self.partition.shards])
        return out + 0.5 * self.lam * float(w @ w)

    def grad(self, w) -> np.ndarray:
        """Exact gradient of the global objective ``F``."""
        w = self._check(w)
        s = self.sample_weight
        if self.kind == DISTANCE:
            return 2.0 * (w * s.sum() - np.asarray(self._X.T @ s).reshape(-1))
        z = np.asarray(self._X @ w).reshape(-1)
        g = np.asarray(self._X.T @ (s * self._dloss(z, self._y))).reshape(-1)
        return g + self.lam * w

    def grad_full(self, k: int, w) -> np.ndarray:
        """Exact local gradient ``grad F_k(w)``."""
        if not 0 <= k < self.N:
            raise InvalidInput(f"device {k} out of range [0, {self.N})")
        w = self._check(w)
        return self.batch_grads(w[None, :], self.partition.shards[k][None, :])[0]

    def grad_stochastic(self, k: int, w, batch: Sequence[int]) -> np.ndarray:
        """Mean gradient over ``batch`` (sample indices that must lie in shard ``k``)."""
        if not 0 <= k < self.N:
            raise InvalidInput(f"device {k} out of range [0, {self.N})")
        w = self._check(w)
        batch = np.asarray(batch, dtype=np.int64).reshape(-1)
        if batch.size == 0:
            raise InvalidBatch("empty batch")
        if batch.min() < 0 or batch.max() >= self.dataset.n or np.any(self.owner[batch] != k):
            raise InvalidBatch(f"batch contains samples outside shard {k}")
        return self.batch_grads(w[None, :], batch[None, :])[0]

    def batch_grads(self, W: np.ndarray, idx) -> np.ndarray:
        """Mean minibatch gradients for several devices at once.

        ``W`` has one parameter row per device and ``idx[k]`` lists the global
        sample indices of row ``k``'s batch.  A rectangular integer array takes
        the vectorized dense path; ragged lists or sparse features go row by row.
        """
        W = np.asarray(W, dtype=np.float64)
        if not sp.issparse(self._X) and not isinstance(idx, list):
            idx = np.asarray(idx, dtype=np.int64)
            Xb = self._X[idx]
            if self.kind == DISTANCE:
                G = 2.0 * (W - Xb.sum(axis=1) / idx.shape[1])
            else:
                z = np.einsum("nbd,nd->nb", Xb, W)
                c = self._dloss(z, self._y[idx])
                G = np.einsum("nb,nbd->nd", c, Xb) / idx.shape[1]
        else:
            G = np.empty_like(W)
            for k, rows in enumerate(idx):
                rows = np.asarray(rows, dtype=np.int64)
                Xk = self._X[rows]
                if self.kind == DISTANCE:
                    G[k] = 2.0 * (W[k] - np.asarray(Xk.sum(axis=0)).reshape(-1) / rows.size)
                    continue
                z = np.asarray(Xk @ W[k]).reshape(-1)
                c = self._dloss(z, self._y[rows])
                G[k] = np.asarray(Xk.T @ c).reshape(-1) / rows.size
        if self.lam:
            G = G + self.lam * W
        return G

    def sample_grads(self, w, rows) -> np.ndarray:
        """Per-sample gradients at one point, one row per entry of ``rows``."""
        w = self._check(w)
        rows = np.asarray(rows, dtype=np.int64)
        Xr = self.dataset.rows(rows)
        if self.kind == DISTANCE:
            return 2.0 * (w[None, :] - Xr)
        c = self._dloss(Xr @ w, self._y[rows])
        return c[:, None] * Xr + self.lam * w[None, :]

    # ------------------------------------------------------------ Hessians

    def local_hessians(self) -> list[np.ndarray]:
        """Second-moment matrices ``H^k = (1/n_k) sum x x^T`` per device."""
        out = []
        for s in self.partition.shards:
            Xk = self._X[s]
            Hk = Xk.T @ Xk
            Hk = Hk.toarray() if sp.issparse(Hk) else np.asarray(Hk)
            out.append(Hk / s.size)
        return out

    def hessian(self, w) -> np.ndarray:
        """Exact Hessian of ``F`` at ``w`` (used by the Newton solver)."""
        w = self._check(w)
        s = self.sample_weight
        if self.kind == DISTANCE:
            return 2.0 * s.sum() * np.eye(self.d)
        if self.kind == LEAST_SQUARES:
            curv = s
        else:
            z = np.asarray(self._X @ w).reshape(-1)
            sig = expit(z * self._y)
            curv = s * sig * (1.0 - sig)
        if sp.issparse(self._X):
            H = (self._X.T @ self._X.multiply(curv[:, None])).toarray()
        else:
            H = self._X.T @ (self._X * curv[:, None])
        return H + self.lam * np.eye(self.d)


# ---------------------------------------------------------------- spectra


@dataclass
class SpectralReport:
    L: float
    mu: float
    l: float
    l_loose: float
    lambda_min_pos: float
    lambda_max: float
    kappa: float
    kappa1: float
    kappa_tilde: float | None
    nu_max: float
    nu_min: float
    G_hat_sq: float
    sigma_hat_sq: float
    l_residual: float | None = None
    kappa_tilde_residual: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def range_basis(H: np.ndarray, rtol: float = RANGE_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of the range of a PSD matrix and its positive eigenvalues."""
    lam, Q = np.linalg.eigh((H + H.T) / 2)
    top = lam[-1] if lam.size else 0.0
    if top <= 0:
        return Q[:, :0], lam[:0]
    keep = lam > rtol * top
    return Q[:, keep], lam[keep]


def generalized_max(A: np.ndarray, H: np.ndarray) -> float:
    """Smallest ``c`` with ``A <= c H`` on the range of ``H``."""
    Q, lam = range_basis(H)
    if lam.size == 0:
        raise DegenerateSpectrum("matrix has an empty range")
    S = Q / np.sqrt(lam)
    M = S.T @ A @ S
    return float(np.linalg.eigvalsh((M + M.T) / 2)[-1])


def ordering_residual(c: float, A: np.ndarray, H: np.ndarray) -> float:
    """``lambda_min(c H - A)`` on ``range(H)``, relative to ``||A||``; nonnegative iff ``A <= c H``."""
    Q, _ = range_basis(H)
    D = Q.T @ (c * H - A) @ Q
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    return float(np.linalg.eigvalsh((D + D.T) / 2)[0] / scale)


def _snap_one(x: float, name: str) -> float:
    if x < 1.0 - 1e-9:
        log.warning("%s = %.6g < 1; clamping to 1", name, x)
        return 1.0
    if abs(x - 1.0) <= 1e-9:
        return 1.0
    return x


def spectral_report(
    obj: Objective,
    probes: Sequence[np.ndarray] | None = None,
    sample_count: int = 1000,
    seed: int = 0,
) -> SpectralReport:
    """Smoothness, curvature and condition numbers of ``obj``.

    Least squares gets the exact quadratic quantities (``l``, ``kappa1`` and
    the statistical condition number).  Logistic objectives get the usual
    curvature bounds ``L = lam + lambda_max(max_k H^k) / 4`` and ``mu = lam``;
    their ``kappa_tilde`` is ``None``.
    """
    ds, part = obj.dataset, obj.partition
    if ds.n == 0 or obj.d == 0:
        raise DegenerateSpectrum("empty dataset")
    p = part.weights
    Hks = obj.local_hessians()
    H = sum(pk * Hk for pk, Hk in zip(p, Hks))
    Q, lam = range_basis(H)
    if lam.size == 0:
        raise DegenerateSpectrum("all features are zero")
    sq = obj._sq_norms
    l_loose = float(max(sq[s].max() for s in part.shards))
    kappa_tilde = l_res = kt_res = None

    if obj.kind == LEAST_SQUARES:
        L = max(float(np.linalg.eigvalsh(Hk)[-1]) for Hk in Hks)
        mu = float(lam[0])
        l = 0.0
        l_res = math.inf
        Hpinv = (Q / lam) @ Q.T
        B = np.zeros_like(H)
        for pk, Hk, s in zip(p, Hks, part.shards):
            Xk = ds.rows(s)
            Ak = (Xk * sq[s][:, None]).T @ Xk / s.size
            lk = generalized_max(Ak, Hk)
            l = max(l, lk)
            lev = np.einsum("ij,jk,ik->i", Xk, Hpinv, Xk)
            B += pk * (Xk * lev[:, None]).T @ Xk / s.size
        if l < L <= l * (1 + 1e-12):
            l = L  # l >= L holds exactly; equal values from two eigensolvers can cross by an ulp
        for Hk, s in zip(Hks, part.shards):
            Xk = ds.rows(s)
            Ak = (Xk * sq[s][:, None]).T @ Xk / s.size
            l_res = min(l_res, ordering_residual(l, Ak, Hk))
        kappa_tilde = _snap_one(generalized_max(B, H), "kappa_tilde")
        kt_res = ordering_residual(kappa_tilde, B, H)
        kappa1 = _snap_one(l / mu, "kappa1")
    elif obj.kind == DISTANCE:
        L = mu = l = 2.0
        kappa1 = 1.0
    else:
        L = obj.lam + 0.25 * max(float(np.linalg.eigvalsh(Hk)[-1]) for Hk in Hks)
        mu = obj.lam
        l = 0.25 * l_loose + obj.lam
        kappa1 = l / mu if mu > 0 else math.inf
    kappa = L / mu if mu > 0 else math.inf

    if probes is None:
        probes = [np.zeros(obj.d)]
    G2, s2 = measure_bounds(obj, sample_count, probes, np.random.default_rng(seed))
    return SpectralReport(
        L=L,
        mu=mu,
        l=l,
        l_loose=l_loose,
        lambda_min_pos=float(lam[0]),
        lambda_max=float(lam[-1]),
        kappa=kappa,
        kappa1=kappa1,
        kappa_tilde=kappa_tilde,
        nu_max=part.nu_max,
        nu_min=part.nu_min,
        G_hat_sq=G2,
        sigma_hat_sq=s2,
        l_residual=l_res,
        kappa_tilde_residual=kt_res,
    )


def measure_bounds(
    obj: Objective,
    sample_count: int,
    w_list: Sequence[np.ndarray],
    rng: np.random.Generator | int,
    batch_size: int | None = 1,
) -> tuple[float, float]:
    """Empirical second moment ``G^2`` and weighted variance ``sigma^2`` of stochastic gradients.

    At every probe and device, ``sample_count`` minibatches of ``batch_size``
    samples (uniform with replacement) are drawn.  ``G^2`` is the largest
    mean squared norm seen; ``sigma^2 = sum_k p_k sigma_k^2`` where
    ``sigma_k^2`` is the largest mean squared deviation from the exact local
    gradient.  ``batch_size=None`` uses the whole shard, which is deterministic.
    """
    if sample_count < 1:
        raise InvalidInput("sample_count must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    part = obj.partition
    G2 = 0.0
    sig_k = np.zeros(part.N)
    for w in w_list:
        w = obj._check(w)
        for k, shard in enumerate(part.shards):
            full = obj.grad_full(k, w)
            if batch_size is None:
                g = full[None, :]
            elif batch_size == 1:
                g = obj.sample_grads(w, shard[rng.integers(0, shard.size, sample_count)])
            else:
                idx = shard[rng.integers(0, shard.size, (sample_count, batch_size))]
                g = obj.batch_grads(np.repeat(w[None, :], sample_count, axis=0), idx)
            G2 = max(G2, float(np.mean(np.einsum("ij,ij->i", g, g))))
            dev = g - full
            sig_k[k] = max(sig_k[k], float(np.mean(np.einsum("ij,ij->i", dev, dev))))
    return G2, float(part.weights @ sig_k)
