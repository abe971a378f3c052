"""Classification and metric-learning losses with analytic gradients.

All batch functions take an embedding matrix ``X`` of shape ``(N, d)`` and an
integer label vector ``y`` of length ``N``.  Classifier weights ``W`` have
shape ``(d, C)`` with one column per class.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .numerics import DegenerateVectorError, DimensionError, EPS_DEGENERATE

ARCCOS_CLAMP = 1e-7


class EmptyInputError(ValueError):
    pass


class LabelError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass
class LossResult:
    """Loss value plus gradients.

    ``grad_params`` maps parameter names (``"W"``, ``"b"``, ``"centers"``) to
    arrays shaped like the parameter.
    """

    value: float
    grad_embeddings: np.ndarray
    grad_params: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ClassifierParams:
    weights: np.ndarray  # (d, C)
    biases: np.ndarray  # (C,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[1] < 2:
            raise ConfigurationError("weights must be (d, C) with C >= 2")
        if self.biases.shape != (self.weights.shape[1],):
            raise DimensionError("biases must have length C")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


class MarginFamily(str, Enum):
    MULTIPLICATIVE_ANGULAR = "multiplicative-angular"  # SphereFace form
    ADDITIVE_COSINE = "additive-cosine"  # CosFace form
    ADDITIVE_ANGULAR = "additive-angular"  # ArcFace form


@dataclass(frozen=True)
class MarginSpec:
    family: MarginFamily
    m: float
    s: float = 16.0

    def __post_init__(self):
        object.__setattr__(self, "family", MarginFamily(self.family))
        if not self.s > 0:
            raise ConfigurationError("scale s must be positive")
        if self.family is MarginFamily.MULTIPLICATIVE_ANGULAR:
            if self.m < 1 or int(self.m) != self.m:
                raise ConfigurationError("multiplicative margin must be an integer >= 1")
        elif self.m < 0:
            raise ConfigurationError("additive margins must be non-negative")


@dataclass
class CenterSet:
    centers: np.ndarray  # (C, d)
    alpha: float = 0.5

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2:
            raise DimensionError("centers must be (C, d)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")


def _check_batch(X, y, num_classes: int | None = None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise DimensionError(f"embeddings must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise EmptyInputError("empty batch")
    if y.shape != (X.shape[0],):
        raise DimensionError("labels must align with embedding rows")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise LabelError("labels must be integers")
        y = y.astype(np.int64)
    if num_classes is not None and (y.min() < 0 or y.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    return X, y


def _cross_entropy(Z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of logits ``Z`` and its gradient w.r.t. ``Z``."""
    n = Z.shape[0]
    zmax = Z.max(axis=1, keepdims=True)
    shifted = Z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    value = float(np.mean(lse - shifted[rows, y]))
    P = np.exp(shifted - lse[:, None])
    P[rows, y] -= 1.0
    return value, P / n


def softmax_loss(params: ClassifierParams, X, y) -> LossResult:
    X, y = _check_batch(X, y, params.num_classes)
    Z = X @ params.weights + params.biases
    value, dZ = _cross_entropy(Z, y)
    return LossResult(
        value,
        dZ @ params.weights.T,
        {"W": X.T @ dZ, "b": dZ.sum(axis=0)},
    )


def _unit_normalize_backward(unit: np.ndarray, norms: np.ndarray, g_unit: np.ndarray) -> np.ndarray:
    # d(v/|v|) = (g - u (u.g)) / |v|, row-wise
    proj = np.sum(unit * g_unit, axis=1, keepdims=True)
    return (g_unit - unit * proj) / norms[:, None]


def _normalized(X: np.ndarray, W: np.ndarray):
    xn = np.linalg.norm(X, axis=1)
    wn = np.linalg.norm(W, axis=0)
    if np.any(~(xn > EPS_DEGENERATE)):
        raise DegenerateVectorError("zero-norm embedding row")
    if np.any(~(wn > EPS_DEGENERATE)):
        raise DegenerateVectorError("zero-norm weight column")
    Xh = X / xn[:, None]
    Wh = W / wn[None, :]
    return Xh, xn, Wh, wn


def _cosine_loss(params: ClassifierParams, X, y, s: float, target_fn) -> LossResult:
    """Shared path for normalized and margin softmax.

    ``target_fn(u) -> (g, dg_du)`` maps the target-class cosine to the target
    logit (before scaling); ``None`` leaves it unchanged.
    """
    X, y = _check_batch(X, y, params.num_classes)
    W = params.weights
    Xh, xn, Wh, wn = _normalized(X, W)
    U = np.clip(Xh @ Wh, -1.0, 1.0)
    rows = np.arange(X.shape[0])
    Z = s * U
    dtarget = None
    if target_fn is not None:
        g, dtarget = target_fn(U[rows, y])
        Z[rows, y] = s * g
    value, dZ = _cross_entropy(Z, y)
    dU = s * dZ
    if dtarget is not None:
        dU[rows, y] *= dtarget
    dXh = dU @ Wh.T
    dWh = Xh.T @ dU
    dX = _unit_normalize_backward(Xh, xn, dXh)
    dW = _unit_normalize_backward(Wh.T, wn, dWh.T).T
    return LossResult(value, dX, {"W": dW, "b": np.zeros_like(params.biases)})


def normalized_softmax_loss(params: ClassifierParams, X, y, s: float) -> LossResult:
    if not s > 0:
        raise ConfigurationError("scale s must be positive")
    return _cosine_loss(params, X, y, s, None)


def margin_function(spec: MarginSpec, theta: float) -> float:
    """Target-logit margin ``g(m, theta)`` for angle ``theta`` in radians."""
    if not 0.0 <= theta <= np.pi:
        raise ValueError(f"theta={theta} outside [0, pi]")
    if spec.family is MarginFamily.MULTIPLICATIVE_ANGULAR:
        return float(np.cos(spec.m * theta))
    if spec.family is MarginFamily.ADDITIVE_COSINE:
        return float(np.cos(theta) - spec.m)
    return float(np.cos(theta + spec.m))


def _chebyshev(m: int, u: np.ndarray):
    """T_m(u) = cos(m arccos u) and its derivative m U_{m-1}(u)."""
    t_prev, t = np.ones_like(u), u.copy()
    u_prev, u_cur = np.zeros_like(u), np.ones_like(u)  # U_{-1}, U_0
    for _ in range(1, m):
        t_prev, t = t, 2 * u * t - t_prev
        u_prev, u_cur = u_cur, 2 * u * u_cur - u_prev
    return t, m * u_cur


def margin_target(spec: MarginSpec, u: np.ndarray):
    """Margin function on cosines: returns ``(g, dg/du)``.

    Evaluated in closed form on ``u = cos(theta)`` so that identity margins
    reduce exactly; the arccos derivative singularity is avoided by clamping
    ``u`` to ``[-1 + 1e-7, 1 - 1e-7]`` inside the derivative only.
    """
    u = np.asarray(u, dtype=np.float64)
    if spec.family is MarginFamily.MULTIPLICATIVE_ANGULAR:
        return _chebyshev(int(spec.m), u)
    if spec.family is MarginFamily.ADDITIVE_COSINE:
        return u - spec.m, np.ones_like(u)
    # cos(theta + m) = u cos m - sin(theta) sin m
    cm, sm = np.cos(spec.m), np.sin(spec.m)
    sin_theta = np.sqrt(np.maximum(0.0, 1.0 - u * u))
    g = u * cm - sin_theta * sm
    uc = np.clip(u, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)
    dg = cm + uc * sm / np.sqrt(1.0 - uc * uc)
    return g, dg


def margin_softmax_loss(params: ClassifierParams, X, y, spec: MarginSpec) -> LossResult:
    """Cross-entropy with logit ``s*g(m, theta_y)`` for the target class and
    ``s*cos(theta_j)`` otherwise. Biases are ignored."""
    return _cosine_loss(params, X, y, spec.s, lambda u: margin_target(spec, u))


def triplet_loss(anchor, positive, negative, m: float) -> LossResult:
    """Hinge on squared distances, summed over triplets.

    Accepts single vectors or ``(N, d)`` stacks. ``grad_embeddings`` has a
    leading axis of length 3 ordered (anchor, positive, negative).
    """
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    n = np.asarray(negative, dtype=np.float64)
    if not (a.shape == p.shape == n.shape) or a.ndim not in (1, 2):
        raise DimensionError("anchor, positive and negative must share a shape")
    if m < 0:
        raise ConfigurationError("margin must be non-negative")
    a2, p2, n2 = np.atleast_2d(a), np.atleast_2d(p), np.atleast_2d(n)
    dap = p2 - a2
    dan = n2 - a2
    hinge = m + np.sum(dap * dap, axis=1) - np.sum(dan * dan, axis=1)
    active = (hinge > 0).astype(np.float64)[:, None]
    ga = active * (2 * dan - 2 * dap)
    gp = active * 2 * dap
    gn = active * -2 * dan
    grad = np.stack([ga, gp, gn])
    if a.ndim == 1:
        grad = grad[:, 0, :]
    return LossResult(float(np.sum(np.maximum(hinge, 0.0))), grad)


def _check_centers(X, y, centers: CenterSet):
    X, y = _check_batch(X, y, centers.centers.shape[0])
    if centers.centers.shape[1] != X.shape[1]:
        raise DimensionError("center dimension does not match embeddings")
    return X, y


def center_loss(X, y, centers: CenterSet) -> LossResult:
    X, y = _check_centers(X, y, centers)
    diff = X - centers.centers[y]
    value = 0.5 * float(np.sum(diff * diff))
    gc = np.zeros_like(centers.centers)
    np.add.at(gc, y, -diff)
    return LossResult(value, diff, {"centers": gc})


def update_centers(centers: CenterSet, X, y) -> CenterSet:
    """Move each present class center toward its batch mean at rate ``alpha``."""
    X, y = _check_centers(X, y, centers)
    new = centers.centers.copy()
    for k in np.unique(y):
        mean = X[y == k].mean(axis=0)
        new[k] = (1.0 - centers.alpha) * new[k] + centers.alpha * mean
    return CenterSet(new, centers.alpha)


def triplet_center_loss(X, y, centers: CenterSet, m: float) -> LossResult:
    """Sum over samples of ``max(0, D(f, c_y) + m - min_{j != y} D(f, c_j))``
    with ``D = 0.5 * ||f - c||^2``."""
    C = centers.centers.shape[0]
    if C < 2:
        raise ConfigurationError("triplet-center loss needs at least two classes")
    X, y = _check_centers(X, y, centers)
    rows = np.arange(X.shape[0])
    diff = X[:, None, :] - centers.centers[None, :, :]  # (N, C, d)
    D = 0.5 * np.sum(diff * diff, axis=2)
    own = D[rows, y]
    Dm = D.copy()
    Dm[rows, y] = np.inf
    j = np.argmin(Dm, axis=1)  # first minimum: lowest class index wins ties
    hinge = own + m - D[rows, j]
    active = hinge > 0
    value = float(np.sum(np.where(active, hinge, 0.0)))
    a = active.astype(np.float64)[:, None]
    d_own = diff[rows, y]
    d_neg = diff[rows, j]
    gX = a * (d_own - d_neg)
    gc = np.zeros_like(centers.centers)
    np.add.at(gc, y, -a * d_own)
    np.add.at(gc, j, a * d_neg)
    return LossResult(value, gX, {"centers": gc})
