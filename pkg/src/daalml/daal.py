"""Density-aware adaptive line (DAAL) loss.

Each class owns a line segment ``A_k -> B_k`` in embedding space.  Segments
are not trained by gradient descent: after every optimizer step they are pulled
toward targets ``c_k -/+ eta * sigma_k * v_k`` built from the batch centroid
``c_k`` and spread ``sigma_k``, using an exponential moving average.  Embeddings
are pulled onto their own segment (intra term) and pushed at least ``delta``
away from every other class's segment (inter term).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .losses import ConfigurationError, LossResult, _check_batch
from .numerics import DimensionError, Rng, normalize

DEGENERATE_LENGTH = 1e-9


class IntraMode(str, Enum):
    NEAREST_VERTEX = "nearest-vertex"
    SEGMENT = "segment"


@dataclass
class DaalConfig:
    delta: float = 1.5
    tau: float = 0.001
    eta: float = 5.0
    lambda_inter: float = 1.0
    init_length: float = 1.0
    intra_mode: IntraMode = IntraMode.SEGMENT

    def __post_init__(self):
        self.intra_mode = IntraMode(self.intra_mode)
        for name in ("delta", "eta", "lambda_inter"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{name} must be finite and non-negative")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError("tau must lie in (0, 1]")
        if not self.init_length > 0:
            raise ConfigurationError("init_length must be positive")

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "tau": self.tau,
            "eta": self.eta,
            "lambda_inter": self.lambda_inter,
            "init_length": self.init_length,
            "intra_mode": self.intra_mode.value,
        }


@dataclass
class TotalLossWeights:
    lambda_s: float = 1.0
    lambda_daal: float = 0.01

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_daal < 0:
            raise ConfigurationError("loss weights must be non-negative")


@dataclass
class LineSegmentSet:
    A: np.ndarray  # (C, d) inner vertices
    B: np.ndarray  # (C, d) outer vertices
    v_hat: np.ndarray  # (C, d) unit directions

    def __post_init__(self):
        self.A = np.array(self.A, dtype=np.float64)
        self.B = np.array(self.B, dtype=np.float64)
        self.v_hat = np.array(self.v_hat, dtype=np.float64)
        if not (self.A.shape == self.B.shape == self.v_hat.shape) or self.A.ndim != 2:
            raise DimensionError("A, B and v_hat must all be (C, d)")

    @property
    def num_classes(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def copy(self) -> "LineSegmentSet":
        return LineSegmentSet(self.A.copy(), self.B.copy(), self.v_hat.copy())

    def to_json_dict(self) -> dict:
        return {
            "format": "daal-segments/1",
            "segments": [
                {
                    "class_id": k,
                    "A": self.A[k].tolist(),
                    "B": self.B[k].tolist(),
                    "v_hat": self.v_hat[k].tolist(),
                }
                for k in range(self.num_classes)
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "LineSegmentSet":
        segs = sorted(doc["segments"], key=lambda s: s["class_id"])
        if [s["class_id"] for s in segs] != list(range(len(segs))):
            raise ValueError("segment class ids must be 0..C-1")
        return cls(
            [s["A"] for s in segs], [s["B"] for s in segs], [s["v_hat"] for s in segs]
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "LineSegmentSet":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass
class BatchClassStats:
    """Per-class centroid, population variance and count.

    Rows of ``centroids`` for classes with ``counts == 0`` are zero and carry
    no meaning; use :attr:`present`.
    """

    centroids: np.ndarray
    sigma_sq: np.ndarray
    counts: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0


@dataclass
class VertexTargets:
    A: np.ndarray
    B: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.ones(self.A.shape[0], dtype=bool)


def init_segments(C: int, d: int, L: float, rng: Rng) -> LineSegmentSet:
    if C < 1 or d < 1 or not L > 0:
        raise ConfigurationError("need C >= 1, d >= 1 and L > 0")
    A = rng.normal((C, d))
    V = np.empty((C, d))
    for k in range(C):
        while True:
            v = rng.standard_normal(d)
            if np.linalg.norm(v) > 1e-12:
                break
        V[k] = normalize(v)
    return LineSegmentSet(A, A + L * V, V)


def batch_class_stats(E, y, num_classes: int) -> BatchClassStats:
    E, y = _check_batch(E, y, num_classes)
    d = E.shape[1]
    centroids = np.zeros((num_classes, d))
    sigma_sq = np.zeros(num_classes)
    counts = np.bincount(y, minlength=num_classes)
    for k in np.flatnonzero(counts):
        members = E[y == k]
        c = members.mean(axis=0)
        centroids[k] = c
        if counts[k] > 1:
            diff = members - c
            sigma_sq[k] = float(np.mean(np.sum(diff * diff, axis=1)))
    return BatchClassStats(centroids, sigma_sq, counts)


def segment_directions(segments: LineSegmentSet) -> np.ndarray:
    """Current unit direction per class, falling back to the stored ``v_hat``
    for degenerate segments."""
    diff = segments.B - segments.A
    length = np.linalg.norm(diff, axis=1)
    ok = length >= DEGENERATE_LENGTH
    V = segments.v_hat.copy()
    V[ok] = diff[ok] / length[ok, None]
    return V


def target_vertices(stats: BatchClassStats, segments: LineSegmentSet, eta: float) -> VertexTargets:
    V = segment_directions(segments)
    half = (eta * np.sqrt(stats.sigma_sq))[:, None] * V
    return VertexTargets(stats.centroids - half, stats.centroids + half, stats.present.copy())


def point_segment_distance(e, A, B) -> tuple[float, float]:
    """Euclidean distance from ``e`` to the closed segment ``AB`` and the
    clamped projection parameter ``t``."""
    e, A, B = (np.asarray(v, dtype=np.float64) for v in (e, A, B))
    if not (e.shape == A.shape == B.shape):
        raise DimensionError("point and vertices must share a dimension")
    ab = B - A
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(e - A)), 0.0
    t = min(max(float(np.dot(e - A, ab)) / denom, 0.0), 1.0)
    return float(np.linalg.norm(e - (A + t * ab))), t


def segment_projection(E: np.ndarray, A: np.ndarray, B: np.ndarray):
    """Vectorized closest points of every row of ``E`` onto every segment.

    Returns ``(dist, t, residual)`` with shapes ``(N, C)``, ``(N, C)`` and
    ``(N, C, d)`` where ``residual = e - closest_point``.
    """
    ab = B - A  # (C, d)
    denom = np.sum(ab * ab, axis=1)  # (C,)
    rel = E[:, None, :] - A[None, :, :]  # (N, C, d)
    safe = np.where(denom > 0, denom, 1.0)
    t = np.einsum("ncd,cd->nc", rel, ab) / safe
    t = np.where(denom > 0, np.clip(t, 0.0, 1.0), 0.0)
    residual = rel - t[:, :, None] * ab[None, :, :]
    dist = np.sqrt(np.sum(residual * residual, axis=2))
    return dist, t, residual


def _rowwise_residual(E: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``e_i - closest point on segment A_i B_i`` for aligned rows."""
    ab = B - A
    denom = np.sum(ab * ab, axis=1)
    safe = np.where(denom > 0, denom, 1.0)
    t = np.where(denom > 0, np.clip(np.sum((E - A) * ab, axis=1) / safe, 0.0, 1.0), 0.0)
    return E - A - t[:, None] * ab


def _check_segments(E, y, segments: LineSegmentSet):
    E, y = _check_batch(E, y, segments.num_classes)
    if E.shape[1] != segments.dim:
        raise DimensionError("embedding dimension does not match segments")
    return E, y


def intra_loss(E, y, segments: LineSegmentSet, mode=IntraMode.SEGMENT) -> LossResult:
    E, y = _check_segments(E, y, segments)
    mode = IntraMode(mode)
    n = E.shape[0]
    if mode is IntraMode.SEGMENT:
        res = _rowwise_residual(E, segments.A[y], segments.B[y])
    else:
        ra = E - segments.A[y]
        rb = E - segments.B[y]
        da = np.sum(ra * ra, axis=1)
        db = np.sum(rb * rb, axis=1)
        res = np.where((da <= db)[:, None], ra, rb)  # ties go to A
    sq = np.sum(res * res, axis=1)
    return LossResult(float(np.mean(sq)), 2.0 * res / n)


def inter_loss(E, y, segments: LineSegmentSet, delta: float) -> LossResult:
    if segments.num_classes < 2:
        raise ConfigurationError("inter-class loss needs at least two classes")
    E, y = _check_segments(E, y, segments)
    n = E.shape[0]
    rows = np.arange(n)
    dist, _, residual = segment_projection(E, segments.A, segments.B)
    masked = dist.copy()
    masked[rows, y] = np.inf
    j = np.argmin(masked, axis=1)  # lowest class index wins ties
    dmin = dist[rows, j]
    active = (delta - dmin) > 0
    value = float(np.mean(np.where(active, delta - dmin, 0.0)))
    res = residual[rows, j]
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where((dmin > 0)[:, None], res / dmin[:, None], 0.0)
    grad = np.where(active[:, None], -unit, 0.0) / n
    return LossResult(value, grad)


def daal_loss(E, y, segments: LineSegmentSet, cfg: DaalConfig) -> LossResult:
    intra = intra_loss(E, y, segments, cfg.intra_mode)
    if cfg.lambda_inter == 0.0:
        return intra
    inter = inter_loss(E, y, segments, cfg.delta)
    return LossResult(
        intra.value + cfg.lambda_inter * inter.value,
        intra.grad_embeddings + cfg.lambda_inter * inter.grad_embeddings,
    )


def ema_update(segments: LineSegmentSet, targets: VertexTargets, tau: float) -> LineSegmentSet:
    """Blend vertices toward their targets: ``new = tau * target + (1 - tau) * old``.

    Classes masked out of ``targets`` keep their vertices.
    """
    if not 0.0 < tau <= 1.0:
        raise ConfigurationError("tau must lie in (0, 1]")
    out = segments.copy()
    k = targets.mask
    out.A[k] = tau * targets.A[k] + (1.0 - tau) * segments.A[k]
    out.B[k] = tau * targets.B[k] + (1.0 - tau) * segments.B[k]
    out.v_hat = segment_directions(out)
    return out


def total_loss(softmax_part: LossResult, daal_part: LossResult, w: TotalLossWeights) -> LossResult:
    if softmax_part.grad_embeddings.shape != daal_part.grad_embeddings.shape:
        raise DimensionError("gradient shapes of the two parts differ")
    if w.lambda_daal == 0.0:
        value = w.lambda_s * softmax_part.value
        grad = w.lambda_s * softmax_part.grad_embeddings
    else:
        value = w.lambda_s * softmax_part.value + w.lambda_daal * daal_part.value
        grad = w.lambda_s * softmax_part.grad_embeddings + w.lambda_daal * daal_part.grad_embeddings
    params = {k: w.lambda_s * g for k, g in softmax_part.grad_params.items()}
    return LossResult(value, grad, params)
