"""Clustering and retrieval scores for embeddings: k-means NMI and Recall@K."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .losses import ConfigurationError
from .numerics import DimensionError, Rng

DEFAULT_KS = (1, 2, 4, 8, 16, 32)


@dataclass
class Partition:
    assignments: np.ndarray
    num_clusters: int
    wcss: float | None = None

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        if self.assignments.size and (self.assignments.min() < 0 or self.assignments.max() >= self.num_clusters):
            raise ValueError("cluster ids must lie in [0, num_clusters)")


def wcss(E: np.ndarray, assignments: np.ndarray, K: int) -> float:
    total = 0.0
    for k in range(K):
        members = E[assignments == k]
        if len(members):
            diff = members - members.mean(axis=0)
            total += float(np.sum(diff * diff))
    return total


def _sq_dists(E: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = np.sum(E * E, axis=1)[:, None] - 2.0 * E @ C.T + np.sum(C * C, axis=1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus_init(E: np.ndarray, K: int, rng: Rng) -> np.ndarray:
    n = E.shape[0]
    idx = [int(rng.integers(n, 1)[0])]
    closest = np.sum((E - E[idx[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a chosen center
            remaining = np.setdiff1d(np.arange(n), idx)
            nxt = int(remaining[0])
        else:
            cdf = np.cumsum(closest) / total
            nxt = int(np.searchsorted(cdf, rng.uniform(1)[0], side="right"))
            nxt = min(nxt, n - 1)
        idx.append(nxt)
        closest = np.minimum(closest, np.sum((E - E[nxt]) ** 2, axis=1))
    return E[idx].copy()


def _lloyd(E: np.ndarray, centers: np.ndarray, max_iter: int, trace: list | None = None):
    K = centers.shape[0]
    assign = np.argmin(_sq_dists(E, centers), axis=1)
    for _ in range(max_iter):
        for k in range(K):
            members = E[assign == k]
            if len(members):
                centers[k] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its center
                d = np.sum((E - centers[assign]) ** 2, axis=1)
                far = int(np.argmax(d))
                centers[k] = E[far]
                assign[far] = k
        if trace is not None:
            trace.append(wcss(E, assign, K))
        new = np.argmin(_sq_dists(E, centers), axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
    return assign


def kmeans(E, K: int, restarts: int = 8, max_iter: int = 100, seed: int = 0,
           trace: list | None = None) -> Partition:
    """Lloyd's algorithm with k-means++ seeding; keeps the restart with the
    lowest within-cluster sum of squares (first one wins ties)."""
    E = np.asarray(E, dtype=np.float64)
    n = E.shape[0]
    if not 1 <= K <= n:
        raise ConfigurationError(f"need 1 <= K <= N, got K={K}, N={n}")
    if K == n:
        return Partition(np.arange(n), K, 0.0)
    rng = Rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        centers = _plusplus_init(E, K, rng)
        run_trace = [] if trace is not None else None
        assign = _lloyd(E, centers, max_iter, run_trace)
        score = wcss(E, assign, K)
        if best is None or score < best[0]:
            best = (score, assign)
        if trace is not None:
            trace.append(run_trace)
    return Partition(best[1], K, best[0])


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    a = np.asarray(pred.assignments if isinstance(pred, Partition) else pred)
    b = np.asarray(truth.assignments if isinstance(truth, Partition) else truth)
    if a.shape != b.shape:
        raise DimensionError("partitions differ in length")
    n = a.size
    if n == 0:
        raise ValueError("empty partitions")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    ra, rb = table.sum(axis=1), table.sum(axis=0)
    ha, hb = _entropy(ra, n), _entropy(rb, n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = table > 0
    pij = table[nz] / n
    outer = (ra[:, None] * rb[None, :])[nz] / (n * n)
    mi = float(np.sum(pij * np.log(pij / outer)))
    return float(min(max(mi / (0.5 * (ha + hb)), 0.0), 1.0))


def neighbor_order(E, normalize: bool = False) -> np.ndarray:
    """Indices of all other points per query, nearest first; equal distances
    resolve to the lower index."""
    E = np.asarray(E, dtype=np.float64)
    if normalize:
        E = E / np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)
    n = E.shape[0]
    order = np.empty((n, n - 1), dtype=np.int64)
    for start in range(0, n, 256):
        block = E[start:start + 256]
        D = np.sum((block[:, None, :] - E[None, :, :]) ** 2, axis=2)
        rows = np.arange(block.shape[0])
        D[rows, start + rows] = np.inf
        order[start:start + 256] = np.argsort(D, axis=1, kind="stable")[:, : n - 1]
    return order


def recall_at_k(E, labels, Ks=DEFAULT_KS, normalize: bool = False) -> dict[int, float]:
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels)
    n = E.shape[0]
    Ks = sorted(set(int(k) for k in Ks))
    if not Ks or Ks[0] < 1 or Ks[-1] >= n:
        raise ConfigurationError(f"every K must satisfy 1 <= K < N={n}")
    order = neighbor_order(E, normalize)
    hit = labels[order] == labels[:, None]
    # first rank at which a same-class neighbor appears (n if none)
    first = np.where(hit.any(axis=1), np.argmax(hit, axis=1), n)
    return {k: float(np.mean(first < k)) for k in Ks}


def recall_average(recalls: dict) -> float:
    if not recalls:
        raise ValueError("no recall values to average")
    return float(np.mean([recalls[k] for k in recalls]))


def default_ks(n: int, Ks=DEFAULT_KS) -> list[int]:
    return [k for k in Ks if k < n]


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class EvalReport:
    nmi: float
    recall_at: dict[int, float]
    recall_average: float
    seed: int = 0
    config_fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        doc = {
            "nmi": self.nmi,
            "recall_at": [{"k": k, "recall": self.recall_at[k]} for k in sorted(self.recall_at)],
            "recall_average": self.recall_average,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
        }
        doc.update(self.extra)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=1) + "\n"

    def table(self) -> str:
        ks = sorted(self.recall_at)
        header = ["NMI"] + [f"R@{k}" for k in ks] + ["R@Average"]
        values = [self.nmi] + [self.recall_at[k] for k in ks] + [self.recall_average]
        cells = [f"{100 * v:.2f}" for v in values]
        widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
        line1 = " | ".join(h.rjust(w) for h, w in zip(header, widths))
        line2 = " | ".join(c.rjust(w) for c, w in zip(cells, widths))
        return line1 + "\n" + line2


def evaluate(E, labels, Ks=DEFAULT_KS, seed: int = 0, restarts: int = 8, max_iter: int = 100,
             normalize: bool = False, fingerprint: str = "") -> EvalReport:
    """k-means with K = number of classes, NMI against labels, Recall@K."""
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels)
    K = len(np.unique(labels))
    part = kmeans(E, K, restarts, max_iter, seed)
    ks = default_ks(E.shape[0], Ks)
    rec = recall_at_k(E, labels, ks, normalize)
    return EvalReport(nmi(part, labels), rec, recall_average(rec), seed, fingerprint)
