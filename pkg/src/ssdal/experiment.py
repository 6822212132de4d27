"""End-to-end synthetic experiment: world, three stages, baseline, ReID scores."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import numpy as np

from .net import NetworkConfig, NetworkParams
from .pipeline import (PipelineResult, StageConfig, StageResult, embedding_features, embedding_triplet_baseline,
                       predict_deep_attributes, run_pipeline)
from .reid import ProbeGallery, SplitProtocol, averaged_cmc, score_accuracy
from .synth import SynthConfig, SynthWorld, emit_id_set, emit_labeled_set, emit_probe_gallery, generate_world
from .data import IdSet, LabeledSet
from .net import forward


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = SynthConfig(num_identities=150, num_attributes=32, feature_dim=48,
                                     attribute_flip_rate=0.15, mean_positive_attributes=15,
                                     nuisance_dim=16, nuisance_scale=3.0, camera_offset_scale=3.0)
    num_train_identities: int = 40
    num_unlabeled_identities: int = 60
    num_test_identities: int = 50
    num_distractors: int = 0
    probe_camera: int = 0
    hidden_sizes: Tuple[int, ...] = (64,)
    hidden_activation: str = "relu"
    stage1: StageConfig = StageConfig(epochs=20, batch_size=16, learning_rate=0.05)
    stage2: StageConfig = StageConfig(epochs=20, batch_size=16, triplets_per_epoch=256, learning_rate=0.1)
    stage3: StageConfig = StageConfig(epochs=20, batch_size=16, learning_rate=0.02)
    baseline: StageConfig = StageConfig(epochs=20, batch_size=16, triplets_per_epoch=256, learning_rate=0.005)
    protocol: SplitProtocol = SplitProtocol(num_tests=10, probe_set_size=25)
    tau: float = 0.0
    distance: str = "cosine"
    seed: int = 0

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Re-seed every random component from one master seed."""
        ss = np.random.SeedSequence(seed).generate_state(7)
        return replace(
            self, seed=seed,
            synth=replace(self.synth, seed=int(ss[0])),
            stage1=replace(self.stage1, seed=int(ss[1])),
            stage2=replace(self.stage2, seed=int(ss[2])),
            stage3=replace(self.stage3, seed=int(ss[3])),
            baseline=replace(self.baseline, seed=int(ss[4])),
            protocol=replace(self.protocol, seed=int(ss[5])),
        )

    @property
    def net_config(self) -> NetworkConfig:
        ss = np.random.SeedSequence([self.seed, 99]).generate_state(1)
        return NetworkConfig((self.synth.feature_dim, *self.hidden_sizes, self.synth.num_attributes),
                             self.hidden_activation, int(ss[0]))

    def identity_split(self):
        n1, n2, n3 = self.num_train_identities, self.num_unlabeled_identities, self.num_test_identities
        train = np.arange(0, n1)
        unlabeled = np.arange(n1, n1 + n2)
        test = np.arange(n1 + n2, n1 + n2 + n3)
        distractors = np.arange(n1 + n2 + n3, n1 + n2 + n3 + self.num_distractors)
        return train, unlabeled, test, distractors


@dataclass
class ExperimentData:
    world: SynthWorld
    t_set: LabeledSet
    u_set: IdSet
    probe_gallery: ProbeGallery


def build_data(cfg: ExperimentConfig) -> ExperimentData:
    needed = cfg.num_train_identities + cfg.num_unlabeled_identities + cfg.num_test_identities + cfg.num_distractors
    synth = cfg.synth if cfg.synth.num_identities >= needed else replace(cfg.synth, num_identities=needed)
    world = generate_world(synth)
    train, unlabeled, test, distractors = cfg.identity_split()
    gallery_cams = [c for c in range(synth.cameras) if c != cfg.probe_camera]
    return ExperimentData(
        world,
        emit_labeled_set(world, train),
        emit_id_set(world, unlabeled),
        emit_probe_gallery(world, test, cfg.probe_camera, gallery_cams, distractors),
    )


def attribute_rank1(model: NetworkParams, pg: ProbeGallery, cfg: ExperimentConfig) -> float:
    pa = predict_deep_attributes(model, pg.probe_features, cfg.tau)
    ga = predict_deep_attributes(model, pg.gallery_features, cfg.tau)
    return averaged_cmc(pg, cfg.protocol, pa, ga, cfg.distance).rank1


def embedding_rank1(model: NetworkParams, pg: ProbeGallery, cfg: ExperimentConfig) -> float:
    pe = embedding_features(model, pg.probe_features)
    ge = embedding_features(model, pg.gallery_features)
    return averaged_cmc(pg, cfg.protocol, pe, ge, cfg.distance).rank1


@dataclass
class ExperimentResult:
    pipeline: PipelineResult
    baseline: StageResult
    metrics: Dict[str, float]


def run_experiment(cfg: ExperimentConfig, data: ExperimentData = None, with_baseline: bool = True) -> ExperimentResult:
    data = data or build_data(cfg)
    stage3 = replace(cfg.stage3, p=cfg.stage2.p)
    result = run_pipeline(data.t_set, data.u_set, cfg.net_config, cfg.stage1, cfg.stage2, stage3)
    pg = data.probe_gallery
    metrics = {
        "stage1_rank1": attribute_rank1(result.stage1.params, pg, cfg),
        "stage2_rank1": attribute_rank1(result.stage2.params, pg, cfg),
        "ssdal_rank1": attribute_rank1(result.final.params, pg, cfg),
    }
    if pg.probe_labels is not None:
        labels = np.concatenate([pg.probe_labels, pg.gallery_labels])
        feats = np.concatenate([pg.probe_features, pg.gallery_features])
        usable = labels.sum(axis=1) > 0
        for name, model in (("stage1", result.stage1.params), ("ssdal", result.final.params)):
            metrics[f"{name}_attr_acc"] = score_accuracy(forward(model, feats[usable]).logits, labels[usable])
        bits = predict_deep_attributes(result.final.params, feats, cfg.tau)
        metrics["ssdal_mean_positives"] = float(bits.sum(axis=1).mean())
    baseline = None
    if with_baseline:
        baseline = embedding_triplet_baseline(result.stage1.params, data.u_set, cfg.baseline)
        metrics["baseline_rank1"] = embedding_rank1(baseline.params, pg, cfg)
    return ExperimentResult(result, baseline, metrics)
