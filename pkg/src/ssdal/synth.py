"""Deterministic synthetic identity/camera world.

Every identity owns a binary prototype attribute vector. A sample of
identity ``i`` seen by camera ``c`` has features

    x = G @ (2 * prototype_i - 1) + offset_c + N @ z + sigma * eps

with a fixed random linear map ``G``, a per-camera offset, a low-rank
nuisance term ``N @ z`` (pose, background) and isotropic noise. Its observed
attribute label is the prototype with a per-(identity, camera) flip mask
drawn at the camera's flip rate, so annotations disagree across views.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np

from .data import IdSet, LabeledSet
from .errors import ConfigError, DataError
from .reid import ProbeGallery


@dataclass(frozen=True)
class SynthConfig:
    num_identities: int = 200
    num_attributes: int = 105
    feature_dim: int = 64
    cameras: int = 2
    samples_per_identity_per_camera: int = 2
    mean_positive_attributes: float = 15.0
    attribute_flip_rate: Union[float, Tuple[float, ...]] = 0.15
    feature_noise_sigma: float = 0.3
    nuisance_dim: int = 4
    nuisance_scale: float = 1.0
    camera_offset_scale: float = 1.0
    view_dim: int = 0
    view_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_identities", "num_attributes", "feature_dim", "cameras",
                     "samples_per_identity_per_camera"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        rates = self.attribute_flip_rate
        rates = (float(rates),) * self.cameras if np.isscalar(rates) else tuple(float(r) for r in rates)
        if len(rates) != self.cameras:
            raise ConfigError(f"need {self.cameras} flip rates, got {len(rates)}")
        if any(not 0.0 <= r < 0.5 for r in rates):
            raise ConfigError("flip rates must lie in [0, 0.5)")
        object.__setattr__(self, "attribute_flip_rate", rates)
        if not 1 <= self.mean_positive_attributes <= self.num_attributes:
            raise ConfigError("mean_positive_attributes must lie in [1, K]")
        if self.feature_noise_sigma < 0 or self.nuisance_scale < 0 or self.camera_offset_scale < 0:
            raise ConfigError("noise and offset scales must be non-negative")
        if self.nuisance_dim < 0 or self.view_dim < 0 or self.view_scale < 0:
            raise ConfigError("nuisance_dim, view_dim and view_scale must be non-negative")


@dataclass
class SynthWorld:
    config: SynthConfig
    prototypes: np.ndarray  # (num_identities, K) int8
    flips: np.ndarray  # (num_identities, cameras, K) bool
    generator: np.ndarray  # (d, K)
    camera_offsets: np.ndarray  # (cameras, d)
    nuisance_basis: np.ndarray  # (d, nuisance_dim)
    view_basis: np.ndarray  # (d, view_dim)

    def observed_labels(self, identity: int, camera: int) -> np.ndarray:
        return (self.prototypes[identity] ^ self.flips[identity, camera]).astype(np.int8)

    def sample(self, identity: int, camera: int, index: int) -> np.ndarray:
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, 1, identity, camera, index])
        z = rng.standard_normal(cfg.nuisance_dim)
        eps = rng.standard_normal(cfg.feature_dim)
        signal = self.generator @ (2.0 * self.prototypes[identity] - 1.0)
        view = np.random.default_rng([cfg.seed, 2, identity, camera]).standard_normal(cfg.view_dim)
        return (signal + self.camera_offsets[camera] + cfg.nuisance_scale * (self.nuisance_basis @ z)
                + cfg.view_scale * (self.view_basis @ view) + cfg.feature_noise_sigma * eps)


def generate_world(cfg: SynthConfig) -> SynthWorld:
    K, d = cfg.num_attributes, cfg.feature_dim
    rng = np.random.default_rng([cfg.seed, 0])
    q = cfg.mean_positive_attributes / K
    prototypes = (rng.random((cfg.num_identities, K)) < q).astype(np.int8)
    rates = np.array(cfg.attribute_flip_rate)
    flips = rng.random((cfg.num_identities, cfg.cameras, K)) < rates[None, :, None]
    generator = rng.standard_normal((d, K)) / np.sqrt(K)
    offsets = cfg.camera_offset_scale * rng.standard_normal((cfg.cameras, d)) / np.sqrt(d)
    nuisance = rng.standard_normal((d, cfg.nuisance_dim)) / np.sqrt(max(cfg.nuisance_dim, 1))
    view = rng.standard_normal((d, cfg.view_dim)) / np.sqrt(max(cfg.view_dim, 1))
    return SynthWorld(cfg, prototypes, flips, generator, offsets, nuisance, view)


def _check_subset(world: SynthWorld, identities) -> np.ndarray:
    ids = np.asarray(list(identities), dtype=np.int64)
    if ids.size == 0:
        raise DataError("identity subset is empty")
    if ids.min() < 0 or ids.max() >= world.config.num_identities:
        raise DataError("identity subset outside the world")
    return ids


def _collect(world: SynthWorld, identities, cameras):
    feats, labels, pids, cams = [], [], [], []
    for i in identities:
        for c in cameras:
            for j in range(world.config.samples_per_identity_per_camera):
                feats.append(world.sample(int(i), int(c), j))
                labels.append(world.observed_labels(int(i), int(c)))
                pids.append(int(i))
                cams.append(int(c))
    d, K = world.config.feature_dim, world.config.num_attributes
    return (np.array(feats).reshape(-1, d), np.array(labels, dtype=np.int8).reshape(-1, K),
            np.array(pids, dtype=np.int64), np.array(cams, dtype=np.int64))


def emit_labeled_set(world: SynthWorld, identities: Sequence[int]) -> LabeledSet:
    ids = _check_subset(world, identities)
    f, l, p, c = _collect(world, ids, range(world.config.cameras))
    return LabeledSet(f, l, p, c)


def emit_id_set(world: SynthWorld, identities: Sequence[int]) -> IdSet:
    ids = _check_subset(world, identities)
    f, _, p, c = _collect(world, ids, range(world.config.cameras))
    return IdSet(f, p, c)


def emit_probe_gallery(world: SynthWorld, identities: Sequence[int], probe_camera: int = 0,
                       gallery_cameras: Sequence[int] = (1,), distractor_ids: Sequence[int] = (),
                       allow_same_camera: bool = False) -> ProbeGallery:
    """One probe per identity from ``probe_camera``; gallery from the other cameras plus distractors."""
    ids = _check_subset(world, identities)
    gallery_cameras = list(gallery_cameras)
    if probe_camera in gallery_cameras and not allow_same_camera:
        raise ConfigError("probe camera is also a gallery camera")
    ncam = world.config.cameras
    if not 0 <= probe_camera < ncam or any(not 0 <= c < ncam for c in gallery_cameras):
        raise ConfigError("camera index outside the world")
    distractors = np.asarray(list(distractor_ids), dtype=np.int64)
    if np.intersect1d(ids, distractors).size:
        raise DataError("distractor ids overlap the probe identities")
    pf = np.stack([world.sample(int(i), probe_camera, 0) for i in ids])
    pl = np.stack([world.observed_labels(int(i), probe_camera) for i in ids])
    gallery_idents = np.concatenate([ids, distractors]) if distractors.size else ids
    gf, gl, gp, gc = _collect(world, gallery_idents, gallery_cameras)
    return ProbeGallery(pf, ids.copy(), gf, gp, np.full(ids.size, probe_camera, dtype=np.int64), gc,
                        pl, gl, distractor_count=int(distractors.size))
