"""Topic-diversity profile of a benchmark's contexts.

All geometry is cosine: inputs are unit-normalized, k-means runs plain Lloyd
iterations on the normalized vectors (squared Euclidean distance between unit
vectors is 2 - 2cos), and the silhouette uses cosine distance ``1 - cos``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .io import read_json, write_json

DEFAULT_K_MAX = 30

METRIC_LABELS = {
    "avg_cosine_distance": "Avg. Cosine Distance",
    "optimal_k": "Optimal # of Clusters",
    "silhouette": "Silhouette Score",
    "topic_entropy": "Topic Entropy",
}


def _as_matrix(vectors) -> np.ndarray:
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D array of vectors")
    return X


def _normalize(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero vector cannot be normalized")
    return X / norms


def _id_matrix(vectors) -> tuple[list[str], np.ndarray]:
    if isinstance(vectors, Mapping):
        ids = list(vectors)
        X = np.stack([np.asarray(vectors[k], dtype=np.float64) for k in ids]) if ids else np.zeros((0, 0))
        return ids, X
    X = _as_matrix(vectors)
    return [str(i) for i in range(len(X))], X


# --------------------------------------------------------------------------- distances


def avg_pairwise_cosine_distance(vectors) -> float:
    """Mean of ``1 - cos`` over all unordered pairs."""
    _, X = _id_matrix(vectors)
    n = len(X)
    if n < 2:
        raise ValueError("need at least 2 vectors")
    U = _normalize(X)
    s = U.sum(axis=0)
    # sum_{i<j} u_i.u_j = (|sum u|^2 - sum |u_i|^2) / 2
    pair_dot = (s @ s - np.einsum("ij,ij->", U, U)) / 2.0
    mean = 1.0 - pair_dot / (n * (n - 1) / 2.0)
    return float(min(2.0, max(0.0, mean)))


def cosine_distance_matrix(vectors) -> np.ndarray:
    U = _normalize(_as_matrix(vectors))
    D = 1.0 - U @ U.T
    np.clip(D, 0.0, 2.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


# --------------------------------------------------------------------------- k-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    history: list[float]  # objective after each Lloyd iteration
    n_iter: int
    converged: bool

    @property
    def objective(self) -> float:
        return self.history[-1]

    def __iter__(self):
        yield self.labels
        yield self.centroids


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen]).ravel()
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every remaining point duplicates a chosen centre
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[[nxt]]).ravel())
    return X[chosen].copy()


def kmeans(vectors, k: int, seed: int = 0, max_iters: int = 300, tol: float = 1e-4) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding on unit-normalized inputs.

    Empty clusters are re-seeded with the point farthest from its centroid,
    which keeps the objective (sum of squared distances) non-increasing.
    Stops when assignments repeat or the total squared centroid shift drops
    below ``tol`` times the mean feature variance.
    """
    X = _normalize(_as_matrix(vectors))
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    threshold = tol * float(np.mean(np.var(X, axis=0)))

    labels = None
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        d = _sq_dists(X, C)
        new_labels = np.argmin(d, axis=1)
        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            own = d[np.arange(n), new_labels]
            own[counts[new_labels] <= 1] = -1.0  # never empty another cluster
            far = int(np.argmax(own))
            counts[new_labels[far]] -= 1
            new_labels[far] = j
            counts[j] = 1
            d[far, :] = 0.0
        C_new = np.zeros_like(C)
        np.add.at(C_new, new_labels, X)
        C_new /= counts[:, None]
        shift = float(np.sum((C_new - C) ** 2))
        C = C_new
        history.append(float(np.sum((X - C[new_labels]) ** 2)))
        stable = labels is not None and np.array_equal(labels, new_labels)
        labels = new_labels
        if stable or shift <= threshold:
            converged = True
            break
    return KMeansResult(labels, C, history, it, converged)


# --------------------------------------------------------------------------- silhouette


def silhouette_samples(vectors, labels) -> np.ndarray:
    labels = np.asarray(labels)
    _, inv = np.unique(labels, return_inverse=True)
    n_clusters = inv.max() + 1 if len(inv) else 0
    if n_clusters < 2:
        raise ValueError("silhouette needs at least 2 non-empty clusters")
    D = cosine_distance_matrix(vectors)
    if len(D) != len(inv):
        raise ValueError("labels and vectors differ in length")
    onehot = np.zeros((len(inv), n_clusters))
    onehot[np.arange(len(inv)), inv] = 1.0
    sums = D @ onehot
    counts = onehot.sum(axis=0)
    own = counts[inv]
    a = np.where(own > 1, sums[np.arange(len(inv)), inv] / np.maximum(own - 1, 1), 0.0)
    means = sums / counts
    means[np.arange(len(inv)), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own == 1] = 0.0
    return s


def silhouette(vectors, labels) -> float:
    """Mean silhouette with cosine distance. Singleton clusters score 0."""
    return float(np.mean(silhouette_samples(vectors, labels)))


@dataclass
class KSelection:
    k: int
    silhouette: float
    scores: dict[int, float]
    labels: np.ndarray

    def __iter__(self):
        yield self.k
        yield self.silhouette


def select_optimal_k(vectors, k_min: int = 2, k_max: int | None = None, seed: int = 0) -> KSelection:
    """Run k-means for every k in ``[k_min, k_max]`` and keep the silhouette
    argmax; ties go to the smaller k."""
    X = _as_matrix(vectors)
    n = len(X)
    if n < 3:
        raise ValueError("need at least 3 vectors to select k")
    if k_max is None:
        k_max = min(DEFAULT_K_MAX, n - 1)
    k_max = min(k_max, n)
    if k_min < 2 or k_max < k_min:
        raise ValueError(f"invalid k range [{k_min}, {k_max}]")
    best: KSelection | None = None
    scores: dict[int, float] = {}
    for k in range(k_min, k_max + 1):
        res = kmeans(X, k, seed)
        if len(np.unique(res.labels)) < 2:
            continue
        s = silhouette(X, res.labels)
        scores[k] = s
        if best is None or s > best.silhouette:
            best = KSelection(k, s, scores, res.labels)
    if best is None:
        raise ValueError("no k in range produced two non-empty clusters")
    return best


# --------------------------------------------------------------------------- entropy


def topic_entropy(assignments, k: int | None = None) -> float:
    """Shannon entropy of cluster shares, divided by ln of the number of
    non-empty clusters; 0 when only one cluster is occupied."""
    labels = list(assignments.values()) if isinstance(assignments, Mapping) else list(assignments)
    if not labels:
        raise ValueError("empty assignments")
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    if k is not None and len(counts) > k:
        raise ValueError(f"{len(counts)} clusters occupied but k={k}")
    if len(counts) == 1:
        return 0.0
    p = counts / counts.sum()
    h = float(-(p * np.log(p)).sum() / math.log(len(counts)))
    return min(1.0, max(0.0, h))


# --------------------------------------------------------------------------- projection


def project_2d(vectors) -> dict[str, tuple[float, float]]:
    """Principal-component projection onto two axes.

    Each axis is oriented so its largest-magnitude loading is positive,
    which makes the output deterministic.
    """
    ids, X = _id_matrix(vectors)
    if len(X) < 2 or X.shape[1] < 2:
        raise ValueError("need at least 2 vectors of dimension >= 2")
    Xc = X - X.mean(axis=0)
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    scale = max(1.0, float(np.abs(X).max()))
    if S.size == 0 or S[0] <= 1e-12 * scale:
        raise ValueError("data has rank 0 after centering")
    comps = Vt[:2].copy()
    if len(comps) < 2:
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    for c in comps:
        j = int(np.argmax(np.abs(c)))
        if c[j] < 0:
            c *= -1
    coords = Xc @ comps.T
    return {k: (float(x), float(y)) for k, (x, y) in zip(ids, coords)}


# --------------------------------------------------------------------------- profiles


@dataclass
class BenchmarkProfile:
    n_contexts: int
    avg_cosine_distance: float
    optimal_k: int
    silhouette: float
    topic_entropy: float
    assignments: dict[str, int] = field(default_factory=dict)
    projection: dict[str, tuple[float, float]] = field(default_factory=dict)
    silhouette_by_k: dict[int, float] = field(default_factory=dict)
    name: str = ""

    def metrics(self) -> dict[str, float]:
        return {key: getattr(self, key) for key in METRIC_LABELS}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "n_contexts": self.n_contexts,
            **self.metrics(),
            "silhouette_by_k": {str(k): v for k, v in self.silhouette_by_k.items()},
            "assignments": self.assignments,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BenchmarkProfile":
        return cls(
            n_contexts=int(obj["n_contexts"]),
            avg_cosine_distance=float(obj["avg_cosine_distance"]),
            optimal_k=int(obj["optimal_k"]),
            silhouette=float(obj["silhouette"]),
            topic_entropy=float(obj["topic_entropy"]),
            assignments={k: int(v) for k, v in obj.get("assignments", {}).items()},
            silhouette_by_k={int(k): float(v) for k, v in obj.get("silhouette_by_k", {}).items()},
            name=obj.get("name", ""),
        )

    def projection_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "x", "y", "cluster"])
        for cid, (x, y) in self.projection.items():
            w.writerow([cid, repr(x), repr(y), self.assignments.get(cid, "")])
        return buf.getvalue()


def profile_benchmark(
    context_vectors, seed: int = 0, k_min: int = 2, k_max: int | None = None, name: str = ""
) -> BenchmarkProfile:
    ids, X = _id_matrix(context_vectors)
    if len(X) < 3:
        raise ValueError("need at least 3 contexts to profile a benchmark")
    sel = select_optimal_k(X, k_min, k_max, seed)
    _, labels = np.unique(sel.labels, return_inverse=True)
    return BenchmarkProfile(
        n_contexts=len(ids),
        avg_cosine_distance=avg_pairwise_cosine_distance(X),
        optimal_k=sel.k,
        silhouette=sel.silhouette,
        topic_entropy=topic_entropy(labels, sel.k),
        assignments={cid: int(c) for cid, c in zip(ids, labels)},
        projection=project_2d(dict(zip(ids, X))),
        silhouette_by_k=dict(sel.scores),
        name=name,
    )


def save_profile(path, profile: BenchmarkProfile) -> None:
    write_json(path, profile.to_json())


def load_profile(path) -> BenchmarkProfile:
    return BenchmarkProfile.from_json(read_json(path))


@dataclass(frozen=True)
class MetricDifference:
    metric: str
    a: float
    b: float
    percent: float | None  # None when the reference value is 0

    @property
    def label(self) -> str:
        return METRIC_LABELS[self.metric]

    def display(self, decimals: int = 1) -> str:
        return format_percent(self.percent, decimals)


def format_percent(value: float | None, decimals: int = 2) -> str:
    if value is None:
        return "undefined"
    return f"{value:+.{decimals}f}%"


def _metric(p, key):
    return p[key] if isinstance(p, Mapping) else getattr(p, key)


def compare_profiles(a, b) -> list[MetricDifference]:
    """Per-metric percent change of ``b`` relative to ``a``, in table order.
    Accepts profiles or plain mappings with the four metric keys."""
    rows = []
    for key in METRIC_LABELS:
        va, vb = float(_metric(a, key)), float(_metric(b, key))
        pct = None if va == 0 else 100.0 * (vb - va) / va
        rows.append(MetricDifference(key, va, vb, pct))
    return rows
