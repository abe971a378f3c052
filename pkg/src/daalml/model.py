"""Dense embedding network with Swish hidden layers, trained by SGD with momentum.

Layout: ``input -> [dense -> swish -> dropout] * H -> dense (embedding)
-> dense (logits)``.  The embedding layer is linear; the classifier head reads
the raw embedding.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import daal as daal_mod
from . import losses
from .daal import DaalConfig, LineSegmentSet, TotalLossWeights
from .losses import ClassifierParams, ConfigurationError, LossResult, MarginSpec
from .numerics import DimensionError, Rng

LOSS_NAMES = (
    "softmax",
    "softmax+daal",
    "normsoftmax",
    "sphereface",
    "cosface",
    "arcface",
    "center",
    "triplet",
    "triplet-center",
)

DEFAULT_MARGINS = {
    "sphereface": MarginSpec("multiplicative-angular", 2, 16.0),
    "cosface": MarginSpec("additive-cosine", 0.35, 16.0),
    "arcface": MarginSpec("additive-angular", 0.5, 16.0),
}


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters it was built from changed."""


class NumericalError(ArithmeticError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def swish(x):
    return np.asarray(x, dtype=np.float64) * sigmoid(x)


def swish_grad(x):
    s = sigmoid(x)
    return s * (1.0 + np.asarray(x) * (1.0 - s))


class Activation(NamedTuple):
    fn: Callable
    grad: Callable


SWISH = Activation(swish, swish_grad)
IDENTITY = Activation(lambda z: np.array(z, dtype=np.float64), lambda z: np.ones_like(z))


@dataclass
class NetworkSpec:
    input_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [64, 32])
    embedding_dim: int = 8
    num_classes: int = 2
    dropout_rates: list[float] | None = None

    def __post_init__(self):
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if self.dropout_rates is None:
            self.dropout_rates = [0.2] * len(self.hidden_dims)
        self.dropout_rates = [float(r) for r in self.dropout_rates]
        if not self.hidden_dims:
            raise ConfigurationError("at least one hidden layer is required")
        dims = [self.input_dim, *self.hidden_dims, self.embedding_dim, self.num_classes]
        if any(int(d) < 1 for d in dims):
            raise ConfigurationError("all layer widths must be >= 1")
        if len(self.dropout_rates) != len(self.hidden_dims):
            raise ConfigurationError("need one dropout rate per hidden layer")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ConfigurationError("dropout rates must lie in [0, 1)")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.embedding_dim, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "embedding_dim": self.embedding_dim,
            "num_classes": self.num_classes,
            "dropout_rates": list(self.dropout_rates),
        }


@dataclass
class NetworkState:
    spec: NetworkSpec
    weights: list[np.ndarray]  # weights[l] has shape (fan_in, fan_out)
    biases: list[np.ndarray]
    momenta_w: list[np.ndarray] = None
    momenta_b: list[np.ndarray] = None
    version: int = 0

    def __post_init__(self):
        if self.momenta_w is None:
            self.momenta_w = [np.zeros_like(w) for w in self.weights]
        if self.momenta_b is None:
            self.momenta_b = [np.zeros_like(b) for b in self.biases]
        expected = self.spec.layer_dims
        if [w.shape for w in self.weights] != expected:
            raise DimensionError("weight shapes do not match the network spec")
        if [b.shape for b in self.biases] != [(o,) for _, o in expected]:
            raise DimensionError("bias shapes do not match the network spec")

    @property
    def classifier(self) -> ClassifierParams:
        return ClassifierParams(self.weights[-1], self.biases[-1])

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def to_json_dict(self) -> dict:
        return {
            "format": "daal-network/1",
            "spec": self.spec.to_dict(),
            "layers": [
                {"weights": w.tolist(), "biases": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "NetworkState":
        spec = NetworkSpec(**doc["spec"])
        ws = [np.array(layer["weights"], dtype=np.float64) for layer in doc["layers"]]
        bs = [np.array(layer["biases"], dtype=np.float64) for layer in doc["layers"]]
        # 1-wide layers decode as (fan_in, 1) fine; guard the (1, n) case from tolist()
        ws = [w.reshape(shape) for w, shape in zip(ws, spec.layer_dims)]
        return cls(spec, ws, bs)


def save_checkpoint(state: NetworkState, path) -> None:
    Path(path).write_text(json.dumps(state.to_json_dict(), indent=1) + "\n")


def load_checkpoint(path) -> NetworkState:
    return NetworkState.from_json_dict(json.loads(Path(path).read_text()))


def init_network(spec: NetworkSpec, rng: Rng) -> NetworkState:
    """He-style uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims:
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform_array((fan_in, fan_out), -bound, bound))
        biases.append(np.zeros(fan_out))
    return NetworkState(spec, weights, biases)


@dataclass
class ForwardCache:
    version: int
    inputs: list[np.ndarray]  # input to each dense layer
    pre: list[np.ndarray]  # pre-activations of hidden layers
    masks: list[np.ndarray | None]  # scaled dropout masks
    embeddings: np.ndarray
    activation: Activation


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def forward(state: NetworkState, X, mode: str = "eval", rng: Rng | None = None,
            activation: Activation = SWISH):
    """Run the network. Returns ``(embeddings, logits, cache)``.

    Dropout is inverted (kept units are scaled by ``1/keep``) and only active
    in ``"train"`` mode, which then requires ``rng``.
    """
    X = np.asarray(X, dtype=np.float64)
    spec = state.spec
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise DimensionError(f"expected input of width {spec.input_dim}, got shape {X.shape}")
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    train = mode == "train"
    inputs, pre, masks = [], [], []
    h = X
    for layer, rate in enumerate(spec.dropout_rates):
        inputs.append(h)
        z = h @ state.weights[layer] + state.biases[layer]
        pre.append(z)
        h = activation.fn(z)
        if train and rate > 0:
            if rng is None:
                raise ValueError("train-mode dropout needs an rng")
            keep = 1.0 - rate
            mask = (rng.uniform(h.size).reshape(h.shape) < keep) / keep
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
    inputs.append(h)
    E = h @ state.weights[-2] + state.biases[-2]
    inputs.append(E)
    logits = E @ state.weights[-1] + state.biases[-1]
    cache = ForwardCache(state.version, inputs, pre, masks, E, activation)
    return E, logits, cache


def backward(state: NetworkState, cache: ForwardCache, grad_embeddings=None,
             grad_logits=None) -> Gradients:
    """Reverse-mode gradients for every layer.

    ``grad_embeddings`` is the loss gradient arriving directly at the embedding
    layer; ``grad_logits`` arrives at the classifier output and is propagated
    through the classifier into the embeddings as well.
    """
    if cache.version != state.version:
        raise StaleCacheError("cache was produced before the last parameter update")
    L = len(state.weights)
    gw = [None] * L
    gb = [None] * L
    E = cache.embeddings
    gE = np.zeros_like(E) if grad_embeddings is None else np.array(grad_embeddings, dtype=np.float64)
    if gE.shape != E.shape:
        raise DimensionError("grad_embeddings shape mismatch")
    if grad_logits is None:
        gw[-1] = np.zeros_like(state.weights[-1])
        gb[-1] = np.zeros_like(state.biases[-1])
    else:
        gL = np.asarray(grad_logits, dtype=np.float64)
        if gL.shape != (E.shape[0], state.spec.num_classes):
            raise DimensionError("grad_logits shape mismatch")
        gw[-1] = E.T @ gL
        gb[-1] = gL.sum(axis=0)
        gE = gE + gL @ state.weights[-1].T
    gw[-2] = cache.inputs[-2].T @ gE
    gb[-2] = gE.sum(axis=0)
    g = gE @ state.weights[-2].T
    for layer in range(L - 3, -1, -1):
        if cache.masks[layer] is not None:
            g = g * cache.masks[layer]
        gz = g * cache.activation.grad(cache.pre[layer])
        gw[layer] = cache.inputs[layer].T @ gz
        gb[layer] = gz.sum(axis=0)
        g = gz @ state.weights[layer].T
    return Gradients(gw, gb)


def sgd_step(state: NetworkState, grads: Gradients, lr: float, momentum: float) -> NetworkState:
    """In-place momentum SGD: ``v = momentum*v + g``; ``p -= lr*v``."""
    if len(grads.weights) != len(state.weights):
        raise DimensionError("gradient/parameter layer count mismatch")
    for i in range(len(state.weights)):
        if grads.weights[i].shape != state.weights[i].shape or grads.biases[i].shape != state.biases[i].shape:
            raise DimensionError(f"gradient shape mismatch in layer {i}")
        state.momenta_w[i] = momentum * state.momenta_w[i] + grads.weights[i]
        state.momenta_b[i] = momentum * state.momenta_b[i] + grads.biases[i]
        state.weights[i] = state.weights[i] - lr * state.momenta_w[i]
        state.biases[i] = state.biases[i] - lr * state.momenta_b[i]
    state.version += 1
    return state


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    loss: str = "softmax+daal"
    weights: TotalLossWeights = field(default_factory=TotalLossWeights)
    daal: DaalConfig = field(default_factory=DaalConfig)
    margin: MarginSpec | None = None
    triplet_margin: float = 1.0
    center_margin: float = 1.0
    center_alpha: float = 0.5

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise ConfigurationError(f"unknown loss {self.loss!r}; choose from {', '.join(LOSS_NAMES)}")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigurationError("learning rate must be positive and finite")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if self.margin is None and self.loss in DEFAULT_MARGINS:
            self.margin = DEFAULT_MARGINS[self.loss]

    @property
    def uses_segments(self) -> bool:
        return self.loss == "softmax+daal"

    @property
    def uses_centers(self) -> bool:
        return self.loss in ("center", "triplet-center")


def _head_loss(cfg: TrainConfig, state: NetworkState, E, y) -> LossResult:
    if cfg.loss == "normsoftmax":
        return losses.normalized_softmax_loss(state.classifier, E, y, cfg.margin.s if cfg.margin else 16.0)
    if cfg.loss in DEFAULT_MARGINS:
        return losses.margin_softmax_loss(state.classifier, E, y, cfg.margin)
    return losses.softmax_loss(state.classifier, E, y)


def _batch_triplets(y: np.ndarray, rng: Rng):
    """One (anchor, positive, negative) index triple per anchor that has a
    same-class partner; partners drawn uniformly."""
    idx = np.arange(len(y))
    anchors, pos, neg = [], [], []
    u = rng.uniform(2 * len(y))
    for i in idx:
        same = idx[(y == y[i]) & (idx != i)]
        other = idx[y != y[i]]
        if len(same) == 0 or len(other) == 0:
            continue
        anchors.append(i)
        pos.append(same[min(int(u[2 * i] * len(same)), len(same) - 1)])
        neg.append(other[min(int(u[2 * i + 1] * len(other)), len(other) - 1)])
    return np.array(anchors, dtype=np.int64), np.array(pos, dtype=np.int64), np.array(neg, dtype=np.int64)


def aux_loss(cfg: TrainConfig, E, y, segments=None, centers=None, rng: Rng | None = None) -> LossResult:
    """Metric-learning term added to the head loss; zero for plain softmax.

    Center and triplet-style terms are averaged over the batch (or triplets)
    so their scale does not depend on batch size.
    """
    n = E.shape[0]
    if cfg.loss == "softmax+daal":
        return daal_mod.daal_loss(E, y, segments, cfg.daal)
    if cfg.loss == "center":
        r = losses.center_loss(E, y, centers)
        return LossResult(r.value / n, r.grad_embeddings / n)
    if cfg.loss == "triplet-center":
        r = losses.triplet_center_loss(E, y, centers, cfg.center_margin)
        return LossResult(r.value / n, r.grad_embeddings / n)
    if cfg.loss == "triplet":
        a, p, q = _batch_triplets(y, rng)
        g = np.zeros_like(E)
        if len(a) == 0:
            return LossResult(0.0, g)
        r = losses.triplet_loss(E[a], E[p], E[q], cfg.triplet_margin)
        k = len(a)
        np.add.at(g, a, r.grad_embeddings[0] / k)
        np.add.at(g, p, r.grad_embeddings[1] / k)
        np.add.at(g, q, r.grad_embeddings[2] / k)
        return LossResult(r.value / k, g)
    return LossResult(0.0, np.zeros_like(E))


def objective(cfg: TrainConfig, state: NetworkState, cache: ForwardCache, y,
              segments=None, centers=None, rng: Rng | None = None):
    """Total loss on a forward pass and the parameter gradients.

    Returns ``(total, head, aux, grads)``.
    """
    E = cache.embeddings
    head = _head_loss(cfg, state, E, y)
    aux = aux_loss(cfg, E, y, segments, centers, rng)
    weights = cfg.weights
    if cfg.loss == "softmax":
        weights = TotalLossWeights(cfg.weights.lambda_s, 0.0)
    total = daal_mod.total_loss(head, aux, weights)
    grads = backward(state, cache, total.grad_embeddings)
    grads.weights[-1] = grads.weights[-1] + total.grad_params["W"]
    grads.biases[-1] = grads.biases[-1] + total.grad_params["b"]
    return total, head, aux, grads


def _check_dataset(X, y, spec: NetworkSpec):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise losses.EmptyInputError("dataset is empty")
    if X.shape[1] != spec.input_dim:
        raise DimensionError("feature width does not match network input_dim")
    if y.shape != (X.shape[0],):
        raise DimensionError("labels must align with rows")
    if y.min() < 0 or y.max() >= spec.num_classes:
        raise losses.LabelError(f"labels must lie in [0, {spec.num_classes})")
    return X, y.astype(np.int64)


def train(spec: NetworkSpec, X, y, cfg: TrainConfig, eval_fn: Callable | None = None):
    """Fit the network; returns ``(state, segments, history)``.

    Per step: losses and gradients against the current segments, optimizer
    step, then segment (or center) statistics from the embeddings already
    computed for that batch.  ``segments`` is ``None`` unless the loss is
    ``softmax+daal``.  ``eval_fn(state, segments) -> dict`` is called after
    every epoch if given and merged into the history row.
    """
    X, y = _check_dataset(X, y, spec)
    root = Rng(cfg.seed)
    init_rng, seg_rng, shuffle_rng, dropout_rng, triplet_rng = root.spawn(5)
    state = init_network(spec, init_rng)
    segments = None
    centers = None
    if cfg.uses_segments:
        segments = daal_mod.init_segments(spec.num_classes, spec.embedding_dim, cfg.daal.init_length, seg_rng)
    if cfg.uses_centers:
        centers = losses.CenterSet(np.zeros((spec.num_classes, spec.embedding_dim)), cfg.center_alpha)
    history = []
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            _, _, cache = forward(state, xb, "train", dropout_rng)
            total, head, aux, grads = objective(cfg, state, cache, yb, segments, centers, triplet_rng)
            if not (math.isfinite(total.value) and all(np.all(np.isfinite(g)) for g in grads.flat())):
                raise NumericalError(epoch)
            sgd_step(state, grads, cfg.lr, cfg.momentum)
            E = cache.embeddings
            if segments is not None:
                stats = daal_mod.batch_class_stats(E, yb, spec.num_classes)
                targets = daal_mod.target_vertices(stats, segments, cfg.daal.eta)
                segments = daal_mod.ema_update(segments, targets, cfg.daal.tau)
            if centers is not None:
                centers = losses.update_centers(centers, E, yb)
            sums += len(idx) * np.array([total.value, head.value, aux.value])
        means = sums / n
        row = {"epoch": epoch, "total": float(means[0]), "softmax": float(means[1])}
        if cfg.uses_segments:
            row["daal"] = float(means[2])
        elif cfg.loss in ("center", "triplet", "triplet-center"):
            row["aux"] = float(means[2])
        if eval_fn is not None:
            row.update(eval_fn(state, segments))
        history.append(row)
    return state, segments, history


def embed(state: NetworkState, X) -> np.ndarray:
    return forward(state, X, "eval")[0]
