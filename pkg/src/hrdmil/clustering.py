"""Seeded K-means (k-means++ init, Lloyd iterations) over one patient's patches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import PatchMatrix
from .errors import DimMismatchError, NonFiniteInputError, TooFewPointsError

DEFAULT_K = 50
DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4

# rows per distance block; bounds memory at n_chunk * k * d doubles
_CHUNK = 2048


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    sizes: np.ndarray

    @property
    def k(self) -> int:
        return len(self.sizes)

    @property
    def nonempty(self) -> int:
        return int(np.count_nonzero(self.sizes))

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)


def _as_points(data) -> np.ndarray:
    x = data.features if isinstance(data, PatchMatrix) else np.asarray(data)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatchError(f"expected a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("clustering input contains non-finite values")
    return x


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # explicit differences rather than the |x|^2 - 2xc + |c|^2 expansion: exact ties stay exact
    out = np.empty((x.shape[0], centroids.shape[0]))
    for start in range(0, x.shape[0], _CHUNK):
        block = x[start:start + _CHUNK]
        diff = block[:, None, :] - centroids[None, :, :]
        out[start:start + _CHUNK] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _nearest(x, centroids):
    d2 = _sq_dists(x, centroids)
    labels = np.argmin(d2, axis=1)  # first minimum -> lowest index wins ties
    return labels, d2[np.arange(len(x)), labels]


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a chosen centre
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining)) if len(remaining) else int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(x, x[idx:idx + 1]).ravel())
    return x[chosen].copy()


def kmeans_fit(matrix, k: int, seed: int = 0, max_iter: int = DEFAULT_MAX_ITER,
               tol: float = DEFAULT_TOL) -> ClusterModel:
    """Fit K-means; stops once the relative inertia improvement drops below ``tol``."""
    x = _as_points(matrix)
    n = x.shape[0]
    if k < 1 or k > n:
        raise TooFewPointsError(f"k={k} needs 1 <= k <= n_patches={n}")
    if max_iter < 1 or tol < 0:
        raise ValueError("max_iter must be >= 1 and tol >= 0")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(x, k, rng)
    labels, d2 = _nearest(x, centroids)
    inertia = float(d2.sum())
    history = [inertia]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        centroids = _update_centroids(x, labels, d2, centroids)
        labels, d2 = _nearest(x, centroids)
        new_inertia = float(d2.sum())
        history.append(new_inertia)
        improvement = inertia - new_inertia
        inertia = new_inertia
        if improvement <= tol * max(history[-2], np.finfo(float).tiny):
            break
    return ClusterModel(k, centroids, inertia, n_iter, history)


def _update_centroids(x, labels, d2, old):
    k, dim = old.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, dim))
    np.add.at(sums, labels, x)
    new = old.copy()
    live = counts > 0
    new[live] = sums[live] / counts[live, None]
    empty = np.flatnonzero(~live)
    if len(empty):
        # reseed each empty centroid at the points farthest from their own centroid
        order = np.argsort(-d2, kind="stable")
        for c, idx in zip(empty, order):
            new[c] = x[idx]
    return new


def assign(model: ClusterModel, matrix) -> ClusterAssignment:
    x = _as_points(matrix)
    if x.shape[1] != model.centroids.shape[1]:
        raise DimMismatchError(f"matrix dim {x.shape[1]} != centroid dim {model.centroids.shape[1]}")
    labels, _ = _nearest(x, model.centroids)
    return ClusterAssignment(labels, cluster_sizes(labels, model.k))


def cluster_sizes(labels, k: int) -> np.ndarray:
    if isinstance(labels, ClusterAssignment):
        labels = labels.labels
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=k)


def fit_patient(matrix, k: int = DEFAULT_K, seed: int = 0, max_iter: int = DEFAULT_MAX_ITER,
                tol: float = DEFAULT_TOL) -> tuple[ClusterModel, ClusterAssignment]:
    """Fit and assign one patient's bag, clamping ``k`` to the number of patches."""
    x = _as_points(matrix)
    model = kmeans_fit(x, min(k, x.shape[0]), seed=seed, max_iter=max_iter, tol=tol)
    return model, assign(model, x)
