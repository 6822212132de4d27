"""Attribute-space primitives: binarization, distances, accuracy."""
from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError

#: Threshold sentinel below every finite score; binarizing with it sets all bits.
MIN_REAL = -np.finfo(np.float64).max


def _vec(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a vector, got shape {v.shape}")
    return v


def _pair(a, b):
    a, b = _vec(a, "a"), _vec(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def top_indices(scores, n: int) -> np.ndarray:
    """Indices of the ``n`` largest scores, ties broken by lowest index."""
    s = _vec(scores, "scores")
    # stable sort on -s keeps equal scores in index order
    return np.argsort(-s, kind="stable")[:n]


def binarize_top_p(scores, p: int) -> np.ndarray:
    s = _vec(scores, "scores")
    if not 1 <= p <= s.shape[0]:
        raise ValidationError(f"p={p} outside [1, {s.shape[0]}]")
    bits = np.zeros(s.shape[0], dtype=np.int8)
    bits[top_indices(s, p)] = 1
    return bits


def binarize_top_p_rows(scores, p: int) -> np.ndarray:
    """Row-wise :func:`binarize_top_p` for a ``(batch, K)`` score matrix."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError(f"expected a 2-D score matrix, got shape {s.shape}")
    if not 1 <= p <= s.shape[1]:
        raise ValidationError(f"p={p} outside [1, {s.shape[1]}]")
    order = np.argsort(-s, axis=1, kind="stable")[:, :p]
    bits = np.zeros(s.shape, dtype=np.int8)
    np.put_along_axis(bits, order, 1, axis=1)
    return bits


def binarize_threshold(scores, tau: float = 0.0) -> np.ndarray:
    """Bit i is set iff ``scores[i] > tau``; works on vectors and matrices."""
    return (np.asarray(scores, dtype=np.float64) > tau).astype(np.int8)


def cosine_distance(a, b) -> float:
    a, b = _pair(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0
    # clip rounding excursions outside [0, 2]
    return float(min(max(1.0 - (a @ b) / (na * nb), 0.0), 2.0))


def squared_euclidean(a, b) -> float:
    a, b = _pair(a, b)
    d = a - b
    return float(d @ d)


def hamming(a, b) -> int:
    a, b = _pair(a, b)
    return int(np.count_nonzero(a != b))


def attribute_accuracy(scores, ground_truth) -> float:
    """Fraction of the ``n`` ground-truth positives found among the top-``n`` scores."""
    s, g = _pair(scores, ground_truth)
    if not np.all((g == 0) | (g == 1)):
        raise ValidationError("ground truth must be binary")
    n = int(g.sum())
    if n == 0:
        raise ValidationError("ground truth has no positive attribute")
    hits = g[top_indices(s, n)].sum()
    return float(hits / n)
