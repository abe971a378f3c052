"""Central finite-difference checks for every analytic gradient in the package.

Each suite draws random non-degenerate points, rejects those within a safety
band of a kink (hinge boundaries, argmin ties, projection clamps), and compares
the analytic gradient against central differences with ``h = 1e-5``.  The error
at one point is ``||g_analytic - g_numeric|| / max(||g_analytic||,
||g_numeric||, 1e-8)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import daal, losses, model
from .daal import DaalConfig, IntraMode, LineSegmentSet, TotalLossWeights
from .losses import CenterSet, ClassifierParams, MarginSpec
from .numerics import Rng

H = 1e-5
TOLERANCE = 1e-4
KINK_BAND = 1e-3


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    points: int

    @property
    def passed(self) -> bool:
        return self.points > 0 and self.max_rel_error < TOLERANCE


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = H) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric) -> float:
    a = np.concatenate([np.ravel(v) for v in analytic])
    n = np.concatenate([np.ravel(v) for v in numeric])
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)


def _check_point(fn, args: dict, grads: dict) -> float:
    """``fn(**args) -> float``; ``grads`` maps a subset of arg names to
    analytic gradients."""
    analytic, numeric = [], []
    for name, g in grads.items():
        def f(v, name=name):
            kw = dict(args)
            kw[name] = v
            return fn(**kw)
        analytic.append(g)
        numeric.append(numeric_gradient(f, args[name]))
    return relative_error(analytic, numeric)


def _run(name: str, rng: Rng, points: int, draw, max_tries: int = 100000) -> SuiteResult:
    errs = []
    tries = 0
    while len(errs) < points and tries < max_tries:
        tries += 1
        err = draw(rng)
        if err is not None:
            errs.append(err)
    return SuiteResult(name, max(errs) if errs else float("inf"), len(errs))


def _labels(rng: Rng, n: int, C: int) -> np.ndarray:
    y = rng.integers(C, n)
    y[:C] = np.arange(C)[: min(C, n)]
    return y


def _classifier_draw(kind: str, spec: MarginSpec | None = None):
    def draw(rng: Rng):
        N, d, C = 5, 4, 3
        X = rng.normal((N, d))
        W = rng.normal((d, C))
        b = rng.normal(C)
        y = _labels(rng, N, C)
        if kind != "softmax":
            Xh = X / np.linalg.norm(X, axis=1, keepdims=True)
            Wh = W / np.linalg.norm(W, axis=0, keepdims=True)
            u = np.abs((Xh @ Wh)[np.arange(N), y])
            if np.any(u > 1 - 1e-3):
                return None

        def value(X, W, b):
            p = ClassifierParams(W, b)
            if kind == "softmax":
                return losses.softmax_loss(p, X, y).value
            if kind == "normsoftmax":
                return losses.normalized_softmax_loss(p, X, y, 4.0).value
            return losses.margin_softmax_loss(p, X, y, spec).value

        p = ClassifierParams(W, b)
        if kind == "softmax":
            r = losses.softmax_loss(p, X, y)
            return _check_point(value, dict(X=X, W=W, b=b), {"X": r.grad_embeddings, "W": r.grad_params["W"], "b": r.grad_params["b"]})
        r = (losses.normalized_softmax_loss(p, X, y, 4.0) if kind == "normsoftmax"
             else losses.margin_softmax_loss(p, X, y, spec))
        return _check_point(value, dict(X=X, W=W, b=b), {"X": r.grad_embeddings, "W": r.grad_params["W"]})
    return draw


def _triplet_draw(rng: Rng):
    d = 4
    a, p, n = rng.normal((3, d))
    m = float(rng.uniform_array(1, 0.0, 3.0)[0])
    hinge = m + np.sum((a - p) ** 2) - np.sum((a - n) ** 2)
    if abs(hinge) < KINK_BAND:
        return None
    r = losses.triplet_loss(a, p, n, m)

    def value(a, p, n):
        return losses.triplet_loss(a, p, n, m).value
    return _check_point(value, dict(a=a, p=p, n=n), {"a": r.grad_embeddings[0], "p": r.grad_embeddings[1], "n": r.grad_embeddings[2]})


def _center_draw(rng: Rng):
    N, d, C = 5, 3, 3
    X = rng.normal((N, d))
    y = _labels(rng, N, C)
    c = rng.normal((C, d))
    r = losses.center_loss(X, y, CenterSet(c))

    def value(X, c):
        return losses.center_loss(X, y, CenterSet(c)).value
    return _check_point(value, dict(X=X, c=c), {"X": r.grad_embeddings, "c": r.grad_params["centers"]})


def _tcl_draw(rng: Rng):
    N, d, C = 4, 3, 3
    X = rng.normal((N, d))
    y = _labels(rng, N, C)
    c = rng.normal((C, d))
    m = float(rng.uniform_array(1, 0.0, 2.0)[0])
    D = 0.5 * np.sum((X[:, None] - c[None]) ** 2, axis=2)
    rows = np.arange(N)
    Dm = D.copy()
    Dm[rows, y] = np.inf
    s = np.sort(Dm, axis=1)
    if np.any(s[:, 1] - s[:, 0] < KINK_BAND):
        return None
    if np.any(np.abs(D[rows, y] + m - s[:, 0]) < KINK_BAND):
        return None
    r = losses.triplet_center_loss(X, y, CenterSet(c), m)

    def value(X, c):
        return losses.triplet_center_loss(X, y, CenterSet(c), m).value
    return _check_point(value, dict(X=X, c=c), {"X": r.grad_embeddings, "c": r.grad_params["centers"]})


def _random_segments(rng: Rng, C: int, d: int) -> LineSegmentSet:
    A = rng.normal((C, d), 1.5)
    V = rng.normal((C, d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    L = rng.uniform_array((C, 1), 0.5, 2.0)
    return LineSegmentSet(A, A + L * V, V)


def _daal_safe(E, y, seg: LineSegmentSet, delta: float, mode: IntraMode, need_inter: bool) -> bool:
    N = E.shape[0]
    rows = np.arange(N)
    dist, t, _ = daal.segment_projection(E, seg.A, seg.B)
    own_t = t[rows, y]
    if mode is IntraMode.SEGMENT and np.any(np.minimum(np.abs(own_t), np.abs(own_t - 1)) < KINK_BAND):
        return False
    if mode is IntraMode.NEAREST_VERTEX:
        da = np.linalg.norm(E - seg.A[y], axis=1)
        db = np.linalg.norm(E - seg.B[y], axis=1)
        if np.any(np.abs(da - db) < KINK_BAND):
            return False
    if need_inter:
        Dm = dist.copy()
        Dm[rows, y] = np.inf
        s = np.sort(Dm, axis=1)
        if np.any(s[:, 1] - s[:, 0] < KINK_BAND) or np.any(s[:, 0] < KINK_BAND):
            return False
        if np.any(np.abs(delta - s[:, 0]) < KINK_BAND):
            return False
        j = np.argmin(Dm, axis=1)
        tj = t[rows, j]
        if np.any((np.abs(tj) < KINK_BAND) & (tj != 0)) or np.any((np.abs(tj - 1) < KINK_BAND) & (tj != 1)):
            return False
    return True


def _daal_draw(part: str, mode: IntraMode = IntraMode.SEGMENT):
    cfg = DaalConfig(delta=1.5, intra_mode=mode)

    def draw(rng: Rng):
        N, d, C = 6, 3, 3
        seg = _random_segments(rng, C, d)
        y = _labels(rng, N, C)
        E = seg.A[y] + rng.normal((N, d), 1.0)
        if not _daal_safe(E, y, seg, cfg.delta, mode, part != "intra"):
            return None
        if part == "intra":
            fn = lambda E: daal.intra_loss(E, y, seg, mode)  # noqa: E731
        elif part == "inter":
            fn = lambda E: daal.inter_loss(E, y, seg, cfg.delta)  # noqa: E731
        else:
            fn = lambda E: daal.daal_loss(E, y, seg, cfg)  # noqa: E731
        r = fn(E)
        return _check_point(lambda E: fn(E).value, dict(E=E), {"E": r.grad_embeddings})
    return draw


def _total_draw(rng: Rng):
    N, d, C = 6, 3, 3
    seg = _random_segments(rng, C, d)
    y = _labels(rng, N, C)
    E = seg.A[y] + rng.normal((N, d), 1.0)
    cfg = DaalConfig()
    if not _daal_safe(E, y, seg, cfg.delta, cfg.intra_mode, True):
        return None
    W = rng.normal((d, C))
    b = rng.normal(C)
    w = TotalLossWeights(1.0, 0.5)

    def result(E, W, b):
        sm = losses.softmax_loss(ClassifierParams(W, b), E, y)
        return daal.total_loss(sm, daal.daal_loss(E, y, seg, cfg), w)

    r = result(E, W, b)
    return _check_point(lambda E, W, b: result(E, W, b).value, dict(E=E, W=W, b=b),
                        {"E": r.grad_embeddings, "W": r.grad_params["W"], "b": r.grad_params["b"]})


def network_check(loss: str, seed: int = 0, n_params: int = 20, activation=model.SWISH) -> float:
    """End-to-end check of the training objective w.r.t. ``n_params`` randomly
    chosen network parameters (dropout mask, segments and triplets fixed)."""
    rng = Rng(seed)
    spec = model.NetworkSpec(input_dim=5, hidden_dims=[6, 4], embedding_dim=3, num_classes=3,
                             dropout_rates=[0.2, 0.0])
    cfg = model.TrainConfig(loss=loss, weights=TotalLossWeights(1.0, 0.5))
    state = model.init_network(spec, rng)
    X = rng.normal((8, 5))
    y = _labels(rng, 8, 3)
    seg = _random_segments(rng, 3, 3) if cfg.uses_segments else None
    centers = CenterSet(rng.normal((3, 3))) if cfg.uses_centers else None
    dseed = int(rng.integers(2**31, 1)[0])

    def run(st):
        _, _, cache = model.forward(st, X, "train", Rng(dseed), activation)
        return model.objective(cfg, st, cache, y, seg, centers, Rng(dseed + 1))

    _, _, _, grads = run(state)
    params = state.parameters()
    analytic_flat = grads.flat()
    sizes = [p.size for p in params]
    picks = rng.permutation(sum(sizes))[:n_params]
    offsets = np.cumsum([0] + sizes)
    analytic, numeric = [], []
    for flat_idx in picks:
        li = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = int(flat_idx - offsets[li])
        p = params[li].reshape(-1)
        orig = p[local]
        vals = []
        for delta in (H, -H):
            p[local] = orig + delta
            vals.append(run(state)[0].value)
        p[local] = orig
        numeric.append((vals[0] - vals[1]) / (2 * H))
        analytic.append(analytic_flat[li].reshape(-1)[local])
    return relative_error([np.array(analytic)], [np.array(numeric)])


def _network_draw(loss: str):
    def draw(rng: Rng):
        return network_check(loss, seed=int(rng.integers(2**31, 1)[0]))
    return draw


SUITES: dict[str, Callable] = {
    "softmax": _classifier_draw("softmax"),
    "normsoftmax": _classifier_draw("normsoftmax"),
    "sphereface": _classifier_draw("margin", MarginSpec("multiplicative-angular", 3, 4.0)),
    "cosface": _classifier_draw("margin", MarginSpec("additive-cosine", 0.35, 4.0)),
    "arcface": _classifier_draw("margin", MarginSpec("additive-angular", 0.5, 4.0)),
    "triplet": _triplet_draw,
    "center": _center_draw,
    "triplet-center": _tcl_draw,
    "daal-intra": _daal_draw("intra"),
    "daal-intra-vertex": _daal_draw("intra", IntraMode.NEAREST_VERTEX),
    "daal-inter": _daal_draw("inter"),
    "daal": _daal_draw("both"),
    "total": _total_draw,
}
NETWORK_SUITES = {f"network:{name}": _network_draw(name) for name in model.LOSS_NAMES}
ALL_SUITES = {**SUITES, **NETWORK_SUITES}


def run_suite(name: str, seed: int = 0, points: int = 50) -> SuiteResult:
    if name not in ALL_SUITES:
        raise KeyError(name)
    # network suites are costlier; each point already checks 20 parameters
    n = min(points, 10) if name.startswith("network:") else points
    return _run(name, Rng(seed), n, ALL_SUITES[name])


def run_all(seed: int = 0, points: int = 50, names=None) -> list[SuiteResult]:
    return [run_suite(n, seed, points) for n in (names or ALL_SUITES)]
