"""Dense float64 primitives: row normalization, cosine similarity,
log-sum-exp and central finite differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimMismatch, EmptyInput, NonFinite, NonFiniteEvaluation, ZeroRow

ZERO_NORM = 1e-12


@dataclass(frozen=True)
class EmbeddingBatch:
    """A |B| x d matrix of embeddings, one sample per row.

    Supports ``np.asarray(batch)`` so loss functions accept either this
    wrapper or a plain array.
    """

    matrix: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise DimMismatch(f"expected a non-empty 2-D matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NonFinite("embedding matrix contains non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.matrix.astype(dtype)
        return self.matrix.copy() if copy else self.matrix

    def __len__(self):
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape


def as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise DimMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def l2_normalize_rows(m) -> EmbeddingBatch:
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms <= ZERO_NORM)
    if bad.size:
        raise ZeroRow(int(bad[0]))
    return EmbeddingBatch(m / norms[:, None], normalized=True)


def cosine_similarity_matrix(a, b) -> np.ndarray:
    """Pairwise dot products of unit rows, clamped to [-1, 1]."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    return np.clip(a @ b.T, -1.0, 1.0)


def logsumexp(v, axis=None):
    """log(sum(exp(v))) via max-shift. Reduces over ``axis`` (all entries
    when None)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("logsumexp of an empty input")
    if not np.all(np.isfinite(v)):
        raise NonFinite("logsumexp input contains non-finite entries")
    shift = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5
) -> np.ndarray:
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64).reshape(-1)
    grad = np.empty_like(x)
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + h
        fp = f(x.copy())
        x[k] = orig - h
        fm = f(x.copy())
        x[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"f is not finite near coordinate {k}")
        grad[k] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, abs_floor: float = 1e-3, abs_tol: float = 1e-7):
    """Worst-case gradient mismatch.

    Entries whose magnitude is below ``abs_floor`` are judged on absolute
    error (scaled so that ``abs_tol`` maps onto a relative error of 1e-4),
    the rest on relative error.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.abs(a), np.abs(n))
    diff = np.abs(a - n)
    small = scale < abs_floor
    rel = np.where(small, diff / abs_tol * 1e-4, diff / np.where(small, 1.0, scale))
    return float(rel.max())
