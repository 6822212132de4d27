"""Attributes triplet loss, its drift regularizer, and hard triplet mining.

Distances between attribute predictions are squared Euclidean on the
continuous sigmoid scores, so the loss is differentiable end to end. Binary
vectors only enter as frozen drift targets and for mining.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np

from .errors import ConfigError, DataError, ShapeError, ValidationError


@dataclass(frozen=True)
class LossParams:
    theta: float = 1.0  # margin
    gamma: float = 0.01  # drift weight

    def __post_init__(self):
        if not (self.theta >= 0 and self.gamma >= 0):
            raise ConfigError(f"theta and gamma must be non-negative, got {self.theta}, {self.gamma}")


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


@dataclass
class TripletBatch:
    triplets: List[Triplet]

    def __len__(self):
        return len(self.triplets)

    @property
    def anchors(self) -> np.ndarray:
        return np.array([t.anchor for t in self.triplets], dtype=np.int64)

    @property
    def positives(self) -> np.ndarray:
        return np.array([t.positive for t in self.triplets], dtype=np.int64)

    @property
    def negatives(self) -> np.ndarray:
        return np.array([t.negative for t in self.triplets], dtype=np.int64)


@dataclass
class InitialLabels:
    """Frozen top-p labels, row ``m`` belonging to sample ``m`` of the id set."""

    bits: np.ndarray  # (M, K) int8
    p: int

    def __post_init__(self):
        if self.bits.ndim != 2:
            raise ShapeError("initial labels must be a (M, K) matrix")
        if not np.all(self.bits.sum(axis=1) == self.p):
            raise ValidationError(f"every initial label must have exactly {self.p} ones")

    def __getitem__(self, idx):
        return self.bits[idx]

    def __len__(self):
        return self.bits.shape[0]


def _check_same_length(*vecs):
    arrs = [np.asarray(v, dtype=np.float64) for v in vecs]
    k = arrs[0].shape
    if any(a.shape != k for a in arrs) or arrs[0].ndim != 1:
        raise ShapeError("all triplet vectors must be 1-D with equal length")
    return arrs


def hinge_triplet_loss(a, p, n, params: LossParams = LossParams()
                       ) -> Tuple[float, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """``max(0, D(a,p) + theta - D(a,n))`` and its gradients w.r.t. a, p, n.

    At the kink (argument exactly zero) the zero branch is taken.
    """
    a, p, n = _check_same_length(a, p, n)
    d_ap = a - p
    d_an = a - n
    arg = float(d_ap @ d_ap) + params.theta - float(d_an @ d_an)
    if arg <= 0.0:
        z = np.zeros_like(a)
        return 0.0, (z, z.copy(), z.copy())
    return arg, (2.0 * (n - p), -2.0 * d_ap, 2.0 * d_an)


def drift(a, tilde) -> float:
    a, t = _check_same_length(a, tilde)
    d = a - t
    return float(d @ d)


def attributes_triplet_loss(a, p, n, tilde_a, tilde_p, tilde_n, params: LossParams = LossParams()
                            ) -> Tuple[float, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Hinge term plus ``gamma`` times the drift of each prediction from its frozen label."""
    a, p, n, ta, tp, tn = _check_same_length(a, p, n, tilde_a, tilde_p, tilde_n)
    loss, (ga, gp, gn) = hinge_triplet_loss(a, p, n, params)
    if params.gamma:
        g = params.gamma
        loss = loss + g * (drift(a, ta) + drift(p, tp) + drift(n, tn))
        ga = ga + 2.0 * g * (a - ta)
        gp = gp + 2.0 * g * (p - tp)
        gn = gn + 2.0 * g * (n - tn)
    return loss, (ga, gp, gn)


def batch_triplet_loss(A_a, A_p, A_n, T_a=None, T_p=None, T_n=None, params: LossParams = LossParams()):
    """Mean over triplets of the (attributes) triplet loss, vectorised over rows.

    Without drift targets this is the plain hinge loss. Returns the mean loss
    and gradients w.r.t. the three ``(E, K)`` score matrices.
    """
    A_a, A_p, A_n = (np.asarray(x, dtype=np.float64) for x in (A_a, A_p, A_n))
    if not (A_a.shape == A_p.shape == A_n.shape) or A_a.ndim != 2:
        raise ShapeError("anchor/positive/negative matrices must share one (E, K) shape")
    E = A_a.shape[0]
    if E == 0:
        z = np.zeros_like(A_a)
        return 0.0, (z, z.copy(), z.copy())
    d_ap = A_a - A_p
    d_an = A_a - A_n
    arg = (d_ap * d_ap).sum(axis=1) + params.theta - (d_an * d_an).sum(axis=1)
    active = (arg > 0.0)[:, None]
    loss = float(np.where(active[:, 0], arg, 0.0).sum())
    ga = np.where(active, 2.0 * (A_n - A_p), 0.0)
    gp = np.where(active, -2.0 * d_ap, 0.0)
    gn = np.where(active, 2.0 * d_an, 0.0)
    if T_a is not None and params.gamma:
        g = params.gamma
        ra, rp, rn = A_a - T_a, A_p - T_p, A_n - T_n
        loss += g * float((ra * ra).sum() + (rp * rp).sum() + (rn * rn).sum())
        ga = ga + 2.0 * g * ra
        gp = gp + 2.0 * g * rp
        gn = gn + 2.0 * g * rn
    return loss / E, (ga / E, gp / E, gn / E)


def hamming_matrix(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64)
    return (b[:, None, :] != b[None, :, :]).sum(axis=2)


def mine_triplets(ids, predicted, count: int, seed: int) -> TripletBatch:
    """Draw ``count`` triplets with hard positives and hard negatives.

    The anchor is uniform over samples (redrawn if its identity has no second
    sample). The positive is the same-id sample whose predicted attributes are
    furthest in Hamming distance from the anchor's; the negative is the
    other-id sample closest to it. Ties go to the lowest index.
    """
    bits = np.asarray(predicted)
    if bits.ndim != 2 or bits.shape[0] != np.asarray(ids).shape[0]:
        raise ShapeError("predicted attributes must have one row per id")
    return mine_by_distance(ids, hamming_matrix(bits), count, seed)


def mine_by_distance(ids, dist, count: int, seed: int) -> TripletBatch:
    """Hard triplet mining over an arbitrary ``(M, M)`` distance matrix."""
    ids = np.asarray(ids)
    dist = np.asarray(dist)
    m = ids.shape[0]
    if dist.shape != (m, m):
        raise ShapeError(f"distance matrix shape {dist.shape} does not match {m} samples")
    if count < 0:
        raise ConfigError("triplet count must be non-negative")
    same = ids[:, None] == ids[None, :]
    np.fill_diagonal(same, False)
    has_positive = same.any(axis=1)
    if not has_positive.any():
        raise DataError("no identity has two samples; cannot form a positive pair")
    if np.unique(ids).size < 2:
        raise DataError("need at least two distinct identities to form negatives")

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a = int(rng.integers(m))
        while not has_positive[a]:
            a = int(rng.integers(m))
        pos_d = np.where(same[a], dist[a], -np.inf)
        neg_d = np.where(ids != ids[a], dist[a], np.inf)
        out.append(Triplet(a, int(np.argmax(pos_d)), int(np.argmin(neg_d))))
    return TripletBatch(out)
