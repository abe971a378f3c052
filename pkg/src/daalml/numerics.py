"""Dense float64 helpers and the seeded random stream used everywhere else.

Randomness comes from :class:`Rng`, a thin wrapper around numpy's Philox4x64
counter-based bit generator.  Only the raw 64-bit output of Philox is trusted;
uniforms and normals are derived from it by fixed transforms defined here, so
a given seed yields the same stream on every platform.
"""
from __future__ import annotations

import math

import numpy as np

EPS_DEGENERATE = 1e-12


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class DegenerateVectorError(ValueError):
    """A vector is too close to zero to be normalized."""


def as_vector(a) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def dot(a, b) -> float:
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a, b))


def l2_norm(a) -> float:
    return float(np.linalg.norm(as_vector(a)))


def normalize(a, tol: float = EPS_DEGENERATE) -> np.ndarray:
    """Return ``a / ||a||``; raises :class:`DegenerateVectorError` when ``||a|| <= tol``."""
    a = as_vector(a)
    n = np.linalg.norm(a)
    if not n > tol:
        raise DegenerateVectorError(f"cannot normalize vector with norm {n:.3g}")
    return a / n


def normalize_rows(M: np.ndarray, tol: float = EPS_DEGENERATE) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise L2 normalization. Returns ``(unit_rows, norms)``."""
    norms = np.linalg.norm(M, axis=1)
    if np.any(~(norms > tol)):
        bad = int(np.argmin(norms))
        raise DegenerateVectorError(f"row {bad} has norm {norms[bad]:.3g}")
    return M / norms[:, None], norms


class Rng:
    """Deterministic random stream keyed by a 64-bit seed.

    Uniforms are ``(raw >> 11) * 2**-53`` on the Philox output; normals use the
    Box-Muller transform on pairs of uniforms (cosine branch first, then sine).
    """

    def __init__(self, seed: int = 0, *, _bitgen: np.random.Philox | None = None):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._bitgen = _bitgen if _bitgen is not None else np.random.Philox(key=seed)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(int(n)).astype(np.uint64)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` draws from [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def standard_normal(self, n: int) -> np.ndarray:
        n = int(n)
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1], keeps log finite
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * math.pi * u2)
        z[1::2] = r * np.sin(2.0 * math.pi * u2)
        return z[:n]

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape))
        return scale * self.standard_normal(int(np.prod(shape))).reshape(shape)

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape))
        u = self.uniform(int(np.prod(shape))).reshape(shape)
        return low + (high - low) * u

    def permutation(self, n: int) -> np.ndarray:
        # stable argsort of uniforms: ties (probability ~2**-53) resolve by index
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` integers in ``[0, high)``."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def spawn(self, k: int) -> list["Rng"]:
        """Independent child streams, each a Philox jump of the parent."""
        children = []
        bg = self._bitgen
        for _ in range(k):
            bg = bg.jumped()
            children.append(Rng(self.seed, _bitgen=bg))
        return children


def sample_standard_normal(rng: Rng, n: int) -> np.ndarray:
    if n <= 0:
        raise ValueError("n must be positive")
    return rng.standard_normal(n)
