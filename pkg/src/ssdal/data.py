"""Sample containers: attribute-labeled sets and person-id sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeError, ValidationError


def _ids(x, n, name):
    a = np.asarray(x if x is not None else np.full(n, -1), dtype=np.int64)
    if a.shape != (n,):
        raise ShapeError(f"{name} must have {n} entries, got shape {a.shape}")
    return a


@dataclass
class LabeledSet:
    """Samples with ground-truth binary attribute labels (the training set T)."""

    features: np.ndarray  # (N, d)
    labels: np.ndarray  # (N, K) int8
    person_ids: Optional[np.ndarray] = None
    camera_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ShapeError("features and labels must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} label rows")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValidationError("labels must be binary")
        n = len(self)
        self.person_ids = _ids(self.person_ids, n, "person_ids")
        self.camera_ids = _ids(self.camera_ids, n, "camera_ids")

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_attributes(self) -> int:
        return self.labels.shape[1]


@dataclass
class IdSet:
    """Samples carrying only person and camera ids (the fine-tuning set U)."""

    features: np.ndarray  # (M, d)
    person_ids: np.ndarray
    camera_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError("features must be 2-D")
        n = len(self)
        self.person_ids = _ids(self.person_ids, n, "person_ids")
        self.camera_ids = _ids(self.camera_ids if self.camera_ids is not None else np.zeros(n), n, "camera_ids")
        if np.any(self.person_ids < 0):
            raise ValidationError("person ids must be non-negative")

    def __len__(self):
        return self.features.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "IdSet":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
