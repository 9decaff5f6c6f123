"""Mini-batch k-means over abnormal patterns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pattern import AbnormalPattern

DEFAULT_N_CENTERS = 3
DEFAULT_BATCH_SIZE = 1024
DEFAULT_ITERATIONS = 100


@dataclass
class ClusterCenters:
    centers: np.ndarray  # (k, dim)
    inertia: float
    history: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "inertia": self.inertia}

    @classmethod
    def from_dict(cls, obj) -> "ClusterCenters":
        return cls(np.asarray(obj["centers"], dtype=float), float(obj["inertia"]))


def _as_matrix(patterns) -> np.ndarray:
    if isinstance(patterns, np.ndarray):
        return patterns.astype(float, copy=False)
    rows = [p.as_float() if isinstance(p, AbnormalPattern) else np.asarray(p, dtype=float) for p in patterns]
    if not rows:
        return np.empty((0, 0))
    return np.stack(rows)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    closest = _sq_dists(X, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            break
        idx = rng.choice(n, p=closest / total)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.array(centers, dtype=float)


def _inertia(X: np.ndarray, C: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    d = _sq_dists(X, C)
    nearest = d.argmin(1)
    mins = d[np.arange(len(X)), nearest]
    return float(mins.sum()), nearest, mins


def fit_minibatch_kmeans(
    patterns,
    k: int = DEFAULT_N_CENTERS,
    batch_size: int = DEFAULT_BATCH_SIZE,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
) -> ClusterCenters:
    """Sculley-style mini-batch k-means with k-means++ seeding.

    Each of ``iterations`` epochs walks a fresh permutation of the data in
    batches; every point moves its nearest center by ``1/count`` where
    ``count`` is that center's cumulative assignment count. With
    ``batch_size >= n`` each epoch is one full batch and inertia never
    increases. After every epoch, a center that owns no point is moved onto
    the point farthest from its nearest center.
    """
    X = _as_matrix(patterns)
    n = len(X)
    if n == 0:
        raise ValueError("cannot cluster an empty pattern set")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_distinct = len(np.unique(X, axis=0))
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the number of distinct patterns ({n_distinct})")

    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, k, rng)
    counts = np.zeros(k)
    batch_size = max(1, min(batch_size, n))
    history = []
    for _ in range(iterations):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = X[order[start:start + batch_size]]
            assign = _sq_dists(batch, C).argmin(1)
            for x, j in zip(batch, assign):
                counts[j] += 1
                C[j] += (x - C[j]) / counts[j]
        inertia, nearest, mins = _inertia(X, C)
        owned = np.bincount(nearest, minlength=k)
        for j in np.flatnonzero(owned == 0):
            far = int(mins.argmax())
            if mins[far] <= 0:
                break
            C[j] = X[far]
            counts[j] = 1
            inertia, nearest, mins = _inertia(X, C)
        history.append(inertia)

    inertia, _, _ = _inertia(X, C)
    return ClusterCenters(C, inertia, history)


def min_distance_to_centers(p, c: ClusterCenters) -> float:
    x = p.as_float() if isinstance(p, AbnormalPattern) else np.asarray(p, dtype=float)
    if x.shape[-1] != c.dim:
        raise ValueError(f"dimension mismatch: pattern {x.shape[-1]} vs centers {c.dim}")
    return float(np.sqrt(((c.centers - x) ** 2).sum(1).min()))
