"""Synthetic multi-modal datasets, stratified splitting and the feature CSV format.

CSV layout: UTF-8, header ``label,f0,...,f{d-1}``, one sample per row with a
non-negative integer label first and floats in shortest round-trip form.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import ConfigurationError
from .numerics import Rng


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class SplitError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    num_classes: int = 8
    modes_per_class: int = 3
    samples_per_class: int = 250
    input_dim: int = 16
    class_separation: float = 6.0
    mode_spread: float = 3.0
    within_mode_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_classes", "modes_per_class", "samples_per_class", "input_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not self.within_mode_std > 0 or self.mode_spread < 0 or self.class_separation < 0:
            raise ConfigurationError("spreads must be non-negative and within_mode_std > 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (N, d) with N labels")

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.features.shape == other.features.shape
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0


def _class_centers(C: int, dim: int, separation: float, rng: Rng) -> np.ndarray:
    """Regular simplex vertices with pairwise distance ``separation``, randomly
    rotated into ``dim`` dimensions (falls back to Gaussian centers when
    ``dim < C``)."""
    if C == 1:
        return np.zeros((1, dim))
    if dim < C:
        G = rng.normal((C, dim))
        G -= G.mean(axis=0)
        pd = np.linalg.norm(G[:, None] - G[None], axis=2)
        return G * separation / np.mean(pd[np.triu_indices(C, 1)])
    simplex = np.eye(C) - 1.0 / C  # pairwise distance sqrt(2)
    Q, R = np.linalg.qr(rng.normal((dim, C)))
    Q = Q * np.sign(np.diag(R))  # sign-fix makes the rotation unique
    return (simplex @ Q.T) * (separation / math.sqrt(2.0))


def generate_multimodal(spec: SyntheticSpec) -> LabeledDataset:
    """Each class is a mixture of ``modes_per_class`` Gaussian blobs placed at
    distance ``mode_spread`` from the class center in random directions.
    Samples are dealt to modes round-robin."""
    rng = Rng(spec.seed)
    C, M, n, dim = spec.num_classes, spec.modes_per_class, spec.samples_per_class, spec.input_dim
    centers = _class_centers(C, dim, spec.class_separation, rng)
    feats = np.empty((C * n, dim))
    labels = np.repeat(np.arange(C), n)
    for k in range(C):
        dirs = rng.normal((M, dim))
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
        modes = centers[k] + (spec.mode_spread if M > 1 else 0.0) * dirs
        which = np.arange(n) % M
        feats[k * n:(k + 1) * n] = modes[which] + spec.within_mode_std * rng.normal((n, dim))
    return LabeledDataset(feats, labels, f"synthetic seed={spec.seed}")


def stratified_split(ds: LabeledDataset, test_fraction: float, seed: int = 0):
    """Per-class proportional split; each class keeps at least one sample on
    both sides. Row order within each half follows the original order."""
    if not 0.0 < test_fraction < 1.0:
        raise SplitError("test_fraction must lie in (0, 1)")
    rng = Rng(seed)
    test_mask = np.zeros(len(ds), dtype=bool)
    for k in np.unique(ds.labels):
        members = np.flatnonzero(ds.labels == k)
        if len(members) < 2:
            raise SplitError(f"class {k} has fewer than 2 samples")
        n_test = int(round(test_fraction * len(members)))
        n_test = min(max(n_test, 1), len(members) - 1)
        chosen = members[rng.permutation(len(members))[:n_test]]
        test_mask[chosen] = True
    train = LabeledDataset(ds.features[~test_mask], ds.labels[~test_mask], ds.provenance + " [train]")
    test = LabeledDataset(ds.features[test_mask], ds.labels[test_mask], ds.provenance + " [test]")
    return train, test


def format_csv(ds: LabeledDataset) -> str:
    d = ds.features.shape[1]
    buf = io.StringIO()
    buf.write(",".join(["label"] + [f"f{j}" for j in range(d)]) + "\n")
    for label, row in zip(ds.labels.tolist(), ds.features.tolist()):
        buf.write(",".join([str(label)] + [repr(v) for v in row]) + "\n")
    return buf.getvalue()


def save_features_csv(ds: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(ds))


def parse_csv(text: str, num_classes: int | None = None, provenance: str = "") -> LabeledDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError("empty file", 1)
    header = rows[0]
    d = len(header) - 1
    if header[0] != "label" or d < 1 or header[1:] != [f"f{j}" for j in range(d)]:
        raise ParseError("header must be 'label,f0,...,f{d-1}'", 1)
    labels, feats = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 1:
            raise ParseError(f"expected {d + 1} fields, found {len(row)}", lineno)
        try:
            label = int(row[0])
        except ValueError:
            raise ParseError(f"label {row[0]!r} is not an integer", lineno) from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise ParseError(f"label {label} out of range", lineno)
        try:
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric value ({exc})", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", lineno)
        labels.append(label)
        feats.append(values)
    if not labels:
        raise ParseError("no data rows", 2)
    return LabeledDataset(np.array(feats), np.array(labels), provenance)


def load_features_csv(path, num_classes: int | None = None) -> LabeledDataset:
    text = Path(path).read_text(encoding="utf-8")
    return parse_csv(text, num_classes, provenance=str(path))
