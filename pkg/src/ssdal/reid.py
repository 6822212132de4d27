"""Person re-identification evaluation: ranking, CMC, mAP, tracklet pooling."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .attributes import attribute_accuracy
from .errors import ConfigError, DataError, ShapeError, ValidationError
from .net import NetworkParams, forward

DISTANCES = ("cosine", "squared_euclidean")
MAP_MODES = ("single", "multi_avg", "multi_max")


@dataclass
class ProbeGallery:
    probe_features: np.ndarray
    probe_ids: np.ndarray
    gallery_features: np.ndarray
    gallery_ids: np.ndarray
    probe_cameras: Optional[np.ndarray] = None
    gallery_cameras: Optional[np.ndarray] = None
    probe_labels: Optional[np.ndarray] = None  # observed attribute labels, when known
    gallery_labels: Optional[np.ndarray] = None
    distractor_count: int = 0

    def __post_init__(self):
        self.probe_features = np.asarray(self.probe_features, dtype=np.float64)
        self.gallery_features = np.asarray(self.gallery_features, dtype=np.float64)
        self.probe_ids = np.asarray(self.probe_ids, dtype=np.int64)
        self.gallery_ids = np.asarray(self.gallery_ids, dtype=np.int64)
        if self.probe_features.shape[0] != self.probe_ids.shape[0]:
            raise ShapeError("one probe id per probe feature row required")
        if self.gallery_features.shape[0] != self.gallery_ids.shape[0]:
            raise ShapeError("one gallery id per gallery feature row required")
        missing = np.setdiff1d(self.probe_ids, self.gallery_ids)
        if missing.size:
            raise DataError(f"probe ids {missing.tolist()} have no gallery match")
        extra = np.setdiff1d(self.gallery_ids, self.probe_ids)
        if self.distractor_count and extra.size != self.distractor_count:
            raise DataError(f"expected {self.distractor_count} distractor ids, found {extra.size}")

    @property
    def distractor_ids(self) -> np.ndarray:
        return np.setdiff1d(self.gallery_ids, self.probe_ids)


@dataclass
class CmcCurve:
    scores: np.ndarray  # percent, index 0 is rank 1

    def at(self, rank: int) -> float:
        return float(self.scores[rank - 1])

    @property
    def rank1(self) -> float:
        return float(self.scores[0])


@dataclass
class MapResult:
    map_percent: float
    rank1_percent: float
    mode: str = "single"


@dataclass(frozen=True)
class SplitProtocol:
    num_tests: int = 10
    probe_set_size: Optional[int] = None  # None: every probe identity each test
    seed: int = 0
    max_rank: Optional[int] = None

    def __post_init__(self):
        if self.num_tests < 1:
            raise ConfigError("num_tests must be at least 1")
        if self.probe_set_size is not None and self.probe_set_size < 1:
            raise ConfigError("probe_set_size must be at least 1")


def pairwise_distances(queries, gallery, distance: str = "cosine") -> np.ndarray:
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != gallery dim {g.shape[1]}")
    if distance == "squared_euclidean":
        diff = q[:, None, :] - g[None, :, :]
        return (diff * diff).sum(axis=2)
    if distance == "cosine":
        qn = np.linalg.norm(q, axis=1)
        gn = np.linalg.norm(g, axis=1)
        dots = (q[:, None, :] * g[None, :, :]).sum(axis=2)
        denom = qn[:, None] * gn[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            d = 1.0 - dots / denom
        return np.where(denom == 0.0, 1.0, np.clip(d, 0.0, 2.0))
    raise ConfigError(f"unknown distance {distance!r}")


def rank_gallery(probe, gallery, distance: str = "cosine") -> np.ndarray:
    """Gallery indices by ascending distance to ``probe``, ties by lowest index."""
    d = pairwise_distances(np.asarray(probe, dtype=np.float64)[None, :] if np.ndim(probe) == 1 else probe,
                           gallery, distance)
    if d.shape[0] != 1:
        raise ShapeError("rank_gallery takes a single probe vector")
    return np.argsort(d[0], kind="stable")


def rank_all(queries, gallery, distance: str = "cosine") -> np.ndarray:
    """Row ``i`` is the gallery ranking for query ``i``."""
    return np.argsort(pairwise_distances(queries, gallery, distance), axis=1, kind="stable")


def first_hits(rankings, probe_ids, gallery_ids) -> np.ndarray:
    """0-based rank of the first correct match per probe, -1 when absent."""
    gallery_ids = np.asarray(gallery_ids)
    out = []
    for order, pid in zip(rankings, probe_ids):
        hit = np.flatnonzero(gallery_ids[np.asarray(order, dtype=np.int64)] == pid)
        out.append(int(hit[0]) if hit.size else -1)
    return np.array(out, dtype=np.int64)


def cmc(rankings, probe_ids, gallery_ids, max_rank: Optional[int] = None) -> CmcCurve:
    """Closed-set CMC in percent; every probe must have a correct match."""
    probe_ids = np.asarray(probe_ids)
    if len(rankings) != probe_ids.shape[0]:
        raise ShapeError("one ranking per probe required")
    if probe_ids.shape[0] == 0:
        raise DataError("no probes")
    hits = first_hits(rankings, probe_ids, gallery_ids)
    if np.any(hits < 0):
        raise DataError(f"{int((hits < 0).sum())} probe(s) have no correct gallery match")
    length = max(len(r) for r in rankings)
    if max_rank is not None:
        length = min(length, max_rank)
    counts = np.zeros(length)
    for h in hits:
        if h < length:
            counts[h:] += 1
    return CmcCurve(100.0 * counts / probe_ids.shape[0])


def _test_split(pg: ProbeGallery, protocol: SplitProtocol, t: int):
    probe_idents = np.unique(pg.probe_ids)
    size = protocol.probe_set_size or probe_idents.size
    if size > probe_idents.size:
        raise DataError(f"split needs {size} identities, dataset has {probe_idents.size}")
    rng = np.random.default_rng([protocol.seed, t])
    chosen = np.sort(rng.choice(probe_idents, size=size, replace=False))
    probe_rows = np.flatnonzero(np.isin(pg.probe_ids, chosen))
    keep_ids = np.concatenate([chosen, pg.distractor_ids])
    gallery_rows = np.flatnonzero(np.isin(pg.gallery_ids, keep_ids))
    return probe_rows, gallery_rows


def averaged_cmc(pg: ProbeGallery, protocol: SplitProtocol = SplitProtocol(),
                 probe_features=None, gallery_features=None, distance: str = "cosine") -> CmcCurve:
    """Mean CMC over ``protocol.num_tests`` random identity splits.

    Each test keeps a random subset of probe identities, the gallery samples
    of those identities and every distractor. Features default to the raw
    features stored in ``pg``; pass model features (e.g. deep attributes)
    aligned row-for-row to evaluate those instead.
    """
    pf = pg.probe_features if probe_features is None else np.asarray(probe_features, dtype=np.float64)
    gf = pg.gallery_features if gallery_features is None else np.asarray(gallery_features, dtype=np.float64)
    if pf.shape[0] != pg.probe_ids.shape[0] or gf.shape[0] != pg.gallery_ids.shape[0]:
        raise ShapeError("model features must align with the probe/gallery rows")
    curves = []
    for t in range(protocol.num_tests):
        prow, grow = _test_split(pg, protocol, t)
        ranks = rank_all(pf[prow], gf[grow], distance)
        curves.append(cmc(ranks, pg.probe_ids[prow], pg.gallery_ids[grow]).scores)
    length = min(len(c) for c in curves)
    if protocol.max_rank is not None:
        length = min(length, protocol.max_rank)
    stacked = np.stack([c[:length] for c in curves])
    total = np.zeros(length)
    for row in stacked:  # fixed summation order
        total += row
    return CmcCurve(total / protocol.num_tests)


def average_precision(ranking, relevant) -> float:
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise DataError("query has no relevant gallery item")
    hits = 0
    total = 0.0
    for pos, g in enumerate(ranking, start=1):
        if int(g) in relevant:
            hits += 1
            total += hits / pos
    return total / len(relevant)


def mean_average_precision(rankings, relevance: Sequence, mode: str = "single") -> MapResult:
    """Non-interpolated mAP and rank-1 accuracy, both in percent.

    Relevant items missing from a ranking count with precision zero.
    """
    if mode not in MAP_MODES:
        raise ConfigError(f"unknown mAP mode {mode!r}")
    if len(rankings) != len(relevance):
        raise ShapeError("one relevance set per ranking required")
    if len(rankings) == 0:
        raise DataError("no queries")
    aps = [average_precision(r, rel) for r, rel in zip(rankings, relevance)]
    top = [1.0 if len(r) and int(r[0]) in set(int(x) for x in rel) else 0.0 for r, rel in zip(rankings, relevance)]
    # left-to-right sums keep results reproducible across numpy versions
    return MapResult(100.0 * sum(aps) / len(aps), 100.0 * sum(top) / len(top), mode)


def relevance_sets(query_ids, query_cams, gallery_ids, gallery_cams, exclude_same_camera: bool = True):
    """Relevant and junk gallery index sets per query.

    With ``exclude_same_camera`` the same-id gallery items seen by the query's
    own camera are junk: neither relevant nor counted in the ranking.
    """
    gallery_ids = np.asarray(gallery_ids)
    gallery_cams = np.asarray(gallery_cams)
    relevant, junk = [], []
    for qid, qcam in zip(query_ids, query_cams):
        same = gallery_ids == qid
        if exclude_same_camera:
            j = same & (gallery_cams == qcam)
            same = same & ~j
        else:
            j = np.zeros_like(same)
        relevant.append(set(np.flatnonzero(same).tolist()))
        junk.append(set(np.flatnonzero(j).tolist()))
    return relevant, junk


def drop_junk(rankings, junk) -> List[np.ndarray]:
    return [np.array([g for g in r if int(g) not in j], dtype=np.int64) for r, j in zip(rankings, junk)]


def pool_tracklet(features, mode: str = "avg") -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError("tracklet must be a sequence of equal-length vectors")
    if f.shape[0] == 0:
        raise DataError("cannot pool an empty tracklet")
    if mode == "avg":
        return f.mean(axis=0)
    if mode == "max":
        return f.max(axis=0)
    raise ConfigError(f"unknown pooling mode {mode!r}")


def pool_queries(features, ids, cams, mode: str):
    """Pool every (person, camera) tracklet into one query feature."""
    f = np.asarray(features, dtype=np.float64)
    ids = np.asarray(ids)
    cams = np.asarray(cams)
    keys = sorted(set(zip(ids.tolist(), cams.tolist())))
    pooled = np.stack([pool_tracklet(f[(ids == i) & (cams == c)], mode) for i, c in keys])
    return pooled, np.array([k[0] for k in keys]), np.array([k[1] for k in keys])


def evaluate_map(query_features, query_ids, query_cams, gallery_features, gallery_ids, gallery_cams,
                 mode: str = "single", distance: str = "cosine", exclude_same_camera: bool = True) -> MapResult:
    """Single- or multi-query retrieval evaluation; multi modes pool tracklets first."""
    if mode not in MAP_MODES:
        raise ConfigError(f"unknown mAP mode {mode!r}")
    qf, qi, qc = np.asarray(query_features, dtype=np.float64), np.asarray(query_ids), np.asarray(query_cams)
    if mode != "single":
        qf, qi, qc = pool_queries(qf, qi, qc, "avg" if mode == "multi_avg" else "max")
    rankings = rank_all(qf, gallery_features, distance)
    relevant, junk = relevance_sets(qi, qc, gallery_ids, gallery_cams, exclude_same_camera)
    if any(not r for r in relevant):
        raise DataError("a query has no relevant gallery item")
    return mean_average_precision(drop_junk(rankings, junk), relevant, mode)


def aggregate_attribute_accuracy(model: NetworkParams, features, labels) -> float:
    """Mean per-sample top-n attribute accuracy, in percent."""
    labels = np.asarray(labels)
    if np.any(labels.sum(axis=1) == 0):
        raise DataError("every test label needs at least one positive attribute")
    scores = forward(model, features).logits
    return score_accuracy(scores, labels)


def score_accuracy(scores, labels) -> float:
    labels = np.asarray(labels)
    if np.any(labels.sum(axis=1) == 0):
        raise DataError("every test label needs at least one positive attribute")
    total = 0.0
    for s, g in zip(scores, labels):
        total += attribute_accuracy(s, g)
    return 100.0 * total / labels.shape[0]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_cmc_csv(curve: CmcCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "score"])
        for r, s in enumerate(curve.scores, start=1):
            w.writerow([r, _fmt(s)])


def write_map_csv(result: MapResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["map_percent", _fmt(result.map_percent)])
        w.writerow(["rank1_percent", _fmt(result.rank1_percent)])


def write_json(obj: Dict, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
