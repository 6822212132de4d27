"""Three-stage semi-supervised attribute training and the embedding baseline.

Stage 1 trains the detector on the attribute-labeled set with sigmoid cross
entropy. Stage 2 labels the id-only set with the stage-1 detector (top-p),
freezes those labels and fine-tunes with the attributes triplet loss. Stage 3
relabels the id-only set with the stage-2 detector and fine-tunes on the union
of both sets with sigmoid cross entropy again.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .attributes import binarize_threshold, binarize_top_p_rows
from .data import IdSet, LabeledSet
from .errors import ConfigError, DataError, ShapeError
from .net import (GradientBundle, NetworkConfig, NetworkParams, backward, backward_from_activation, forward,
                  init_network, sgd_step, sigmoid_cross_entropy)
from .triplet import (InitialLabels, LossParams, TripletBatch, batch_triplet_loss, hamming_matrix,
                      mine_by_distance)

__all__ = [
    "StageConfig", "StageResult", "PipelineReport", "PipelineResult", "stage1_train", "train_cross_entropy",
    "predict_initial_labels", "stage2_finetune", "stage3_combine", "predict_deep_attributes",
    "embedding_triplet_baseline", "embedding_features", "run_pipeline", "LabeledSet", "IdSet",
]


@dataclass(frozen=True)
class StageConfig:
    epochs: int = 10
    batch_size: int = 32
    triplets_per_epoch: int = 256
    learning_rate: float = 0.1
    theta: float = 1.0
    gamma: float = 0.01
    p: int = 10
    tau: float = 0.0
    seed: int = 0
    momentum: float = 0.0
    frozen_layers: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.triplets_per_epoch < 0:
            raise ConfigError("triplets_per_epoch must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.p < 1:
            raise ConfigError("p must be at least 1")
        object.__setattr__(self, "frozen_layers", tuple(int(i) for i in self.frozen_layers))
        LossParams(self.theta, self.gamma)

    @property
    def loss_params(self) -> LossParams:
        return LossParams(self.theta, self.gamma)


@dataclass
class StageResult:
    params: NetworkParams
    losses: List[float]  # losses[0] is measured before the first update


def checkpoint_digest(params: NetworkParams) -> str:
    h = hashlib.sha256()
    for layer in params.layers:
        h.update(layer.activation.encode())
        h.update(np.ascontiguousarray(layer.weight).tobytes())
        h.update(np.ascontiguousarray(layer.bias).tobytes())
    return h.hexdigest()


@dataclass
class PipelineReport:
    losses: Dict[str, List[float]]
    checkpoints: Dict[str, str]
    wall_times: Dict[str, float] = field(default_factory=dict)

    @property
    def final_losses(self) -> Dict[str, float]:
        return {k: v[-1] for k, v in self.losses.items() if v}

    def to_dict(self, include_timings: bool = False) -> Dict:
        out = {"losses": self.losses, "final_losses": self.final_losses, "checkpoints": self.checkpoints}
        if include_timings:
            out["wall_times"] = self.wall_times
        return out

    def to_json(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_dict(include_timings), sort_keys=True, indent=2) + "\n"


class _Momentum:
    def __init__(self, mu: float):
        self.mu = mu
        self.velocity: Optional[GradientBundle] = None

    def __call__(self, grads: GradientBundle) -> GradientBundle:
        if not self.mu:
            return grads
        self.velocity = grads if self.velocity is None else self.velocity.scaled(self.mu).added(grads)
        return self.velocity


def _check_input_dim(params: NetworkParams, features: np.ndarray):
    if features.ndim != 2 or features.shape[1] != params.input_dim:
        raise ShapeError(f"features have {features.shape[-1]} columns, network expects {params.input_dim}")


def train_cross_entropy(params: NetworkParams, features, labels, cfg: StageConfig) -> StageResult:
    """Minibatch SGD on sigmoid cross entropy, continuing from ``params``."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape[0] == 0:
        raise DataError("training set is empty")
    _check_input_dim(params, x)
    if y.shape != (x.shape[0], params.output_dim):
        raise ShapeError(f"labels shape {y.shape} does not match ({x.shape[0]}, {params.output_dim})")
    rng = np.random.default_rng([cfg.seed, 11])
    step = _Momentum(cfg.momentum)
    losses = [sigmoid_cross_entropy(forward(params, x).logits, y)[0]]
    for _ in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            trace = forward(params, x[rows])
            _, dz = sigmoid_cross_entropy(trace.logits, y[rows])
            params = sgd_step(params, step(backward(params, trace, dz)), cfg.learning_rate, cfg.frozen_layers)
        losses.append(sigmoid_cross_entropy(forward(params, x).logits, y)[0])
    return StageResult(params, losses)


def stage1_train(t_set: LabeledSet, cfg: StageConfig, net_cfg: NetworkConfig) -> StageResult:
    if len(t_set) == 0:
        raise DataError("attribute-labeled set is empty")
    if t_set.features.shape[1] != net_cfg.layer_sizes[0]:
        raise ShapeError("feature dimension does not match the network input size")
    if t_set.num_attributes != net_cfg.num_attributes:
        raise ShapeError("label width does not match the network output size")
    return train_cross_entropy(init_network(net_cfg), t_set.features, t_set.labels, cfg)


def predict_initial_labels(model: NetworkParams, u_set: IdSet, p: int) -> InitialLabels:
    _check_input_dim(model, u_set.features)
    scores = forward(model, u_set.features).scores
    return InitialLabels(binarize_top_p_rows(scores, p), p)


def _triplet_epoch_seed(cfg: StageConfig, epoch: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, 23, epoch]).generate_state(1)[0])


def stage2_finetune(model: NetworkParams, u_set: IdSet, tilde: InitialLabels, cfg: StageConfig) -> StageResult:
    """Fine-tune with the attributes triplet loss against frozen initial labels.

    Each epoch mines ``cfg.triplets_per_epoch`` triplets on the current top-p
    predictions, then descends the loss over them in minibatches. Recorded
    losses are the mean loss over each epoch's mined triplets, measured before
    the epoch's updates; the last entry is measured after training.
    """
    _check_input_dim(model, u_set.features)
    if len(tilde) != len(u_set):
        raise DataError("initial labels must cover every id-set sample")
    if tilde.bits.shape[1] != model.output_dim:
        raise ShapeError("initial label width does not match the network output size")
    x = u_set.features
    T = tilde.bits.astype(np.float64)
    lp = cfg.loss_params
    step = _Momentum(cfg.momentum)
    params = model
    losses: List[float] = []
    batch = TripletBatch([])
    for epoch in range(cfg.epochs):
        current = binarize_top_p_rows(forward(params, x).scores, tilde.p)
        batch = mine_by_distance(u_set.person_ids, hamming_matrix(current), cfg.triplets_per_epoch,
                                 _triplet_epoch_seed(cfg, epoch))
        losses.append(_triplet_objective(params, x, T, batch, lp))
        for start in range(0, len(batch), cfg.batch_size):
            part = TripletBatch(batch.triplets[start:start + cfg.batch_size])
            grads = _triplet_grads(params, x, T, part, lp)
            params = sgd_step(params, step(grads), cfg.learning_rate, cfg.frozen_layers)
    losses.append(_triplet_objective(params, x, T, batch, lp))
    return StageResult(params, losses)


def _stacked(x, batch: TripletBatch):
    return np.concatenate([x[batch.anchors], x[batch.positives], x[batch.negatives]])


def _triplet_objective(params, x, T, batch: TripletBatch, lp: LossParams) -> float:
    if len(batch) == 0:
        return 0.0
    E = len(batch)
    s = forward(params, _stacked(x, batch)).scores
    t = _stacked(T, batch)
    return batch_triplet_loss(s[:E], s[E:2 * E], s[2 * E:], t[:E], t[E:2 * E], t[2 * E:], lp)[0]


def _triplet_grads(params, x, T, batch: TripletBatch, lp: LossParams) -> GradientBundle:
    E = len(batch)
    trace = forward(params, _stacked(x, batch))
    s = trace.scores
    t = _stacked(T, batch)
    _, (ga, gp, gn) = batch_triplet_loss(s[:E], s[E:2 * E], s[2 * E:], t[:E], t[E:2 * E], t[2 * E:], lp)
    dscores = np.concatenate([ga, gp, gn])
    return backward(params, trace, dscores * s * (1.0 - s))


def stage3_combine(model: NetworkParams, t_set: LabeledSet, u_set: IdSet, cfg: StageConfig) -> StageResult:
    """Relabel the id set with ``model`` (top-p) and fine-tune on both sets with cross entropy."""
    if t_set.num_attributes != model.output_dim:
        raise ShapeError("T label width does not match the network output size")
    if len(u_set):
        pseudo = predict_initial_labels(model, u_set, cfg.p).bits
        features = np.concatenate([t_set.features, u_set.features])
        labels = np.concatenate([t_set.labels, pseudo])
    else:
        features, labels = t_set.features, t_set.labels
    return train_cross_entropy(model, features, labels, cfg)


def merged_training_set(model: NetworkParams, t_set: LabeledSet, u_set: IdSet, p: int) -> LabeledSet:
    """The T&U set that stage 3 trains on (exposed for inspection)."""
    pseudo = predict_initial_labels(model, u_set, p).bits if len(u_set) else np.zeros((0, t_set.num_attributes))
    return LabeledSet(np.concatenate([t_set.features, u_set.features]), np.concatenate([t_set.labels, pseudo]))


def predict_deep_attributes(model: NetworkParams, features, tau: float = 0.0) -> np.ndarray:
    """Binary deep attributes: bit set where the logit exceeds ``tau``."""
    x = np.asarray(features, dtype=np.float64)
    _check_input_dim(model, x)
    return binarize_threshold(forward(model, x).logits, tau)


def embedding_features(model: NetworkParams, features) -> np.ndarray:
    """Penultimate-layer activations, the embedding used by the baseline."""
    if len(model.layers) < 2:
        raise ConfigError("network has no penultimate layer")
    x = np.asarray(features, dtype=np.float64)
    _check_input_dim(model, x)
    return forward(model, x).activations[-2]


def embedding_triplet_baseline(model: NetworkParams, u_set: IdSet, cfg: StageConfig) -> StageResult:
    """Triplet fine-tuning of the penultimate embedding, output layer frozen.

    Triplets are mined with the same hard policy as stage 2 but on squared
    Euclidean distances between current embeddings; the loss is the plain
    hinge (no drift term).
    """
    if len(model.layers) < 2:
        raise ConfigError("embedding baseline needs at least two layers")
    _check_input_dim(model, u_set.features)
    x = u_set.features
    top = len(model.layers) - 2
    frozen = tuple(sorted(set(cfg.frozen_layers) | {len(model.layers) - 1}))
    lp = LossParams(cfg.theta, 0.0)
    step = _Momentum(cfg.momentum)
    params = model
    losses: List[float] = []
    batch = TripletBatch([])

    def objective(params, batch):
        if len(batch) == 0:
            return 0.0
        E = len(batch)
        h = forward(params, _stacked(x, batch)).activations[-2]
        return batch_triplet_loss(h[:E], h[E:2 * E], h[2 * E:], params=lp)[0]

    for epoch in range(cfg.epochs):
        emb = forward(params, x).activations[-2]
        sq = (emb * emb).sum(axis=1)
        dist = sq[:, None] + sq[None, :] - 2.0 * emb @ emb.T
        batch = mine_by_distance(u_set.person_ids, dist, cfg.triplets_per_epoch, _triplet_epoch_seed(cfg, epoch))
        losses.append(objective(params, batch))
        for start in range(0, len(batch), cfg.batch_size):
            part = TripletBatch(batch.triplets[start:start + cfg.batch_size])
            E = len(part)
            trace = forward(params, _stacked(x, part))
            h = trace.activations[-2]
            _, (ga, gp, gn) = batch_triplet_loss(h[:E], h[E:2 * E], h[2 * E:], params=lp)
            grads = backward_from_activation(params, trace, top, np.concatenate([ga, gp, gn]))
            params = sgd_step(params, step(grads), cfg.learning_rate, frozen)
    losses.append(objective(params, batch))
    return StageResult(params, losses)


@dataclass
class PipelineResult:
    stage1: StageResult
    stage2: StageResult
    final: StageResult
    report: PipelineReport


def run_pipeline(t_set: LabeledSet, u_set: IdSet, net_cfg: NetworkConfig, cfg1: StageConfig,
                 cfg2: StageConfig, cfg3: StageConfig) -> PipelineResult:
    times = {}
    t0 = time.perf_counter()
    r1 = stage1_train(t_set, cfg1, net_cfg)
    times["stage1"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    tilde = predict_initial_labels(r1.params, u_set, cfg2.p)
    r2 = stage2_finetune(r1.params, u_set, tilde, cfg2)
    times["stage2"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    r3 = stage3_combine(r2.params, t_set, u_set, cfg3)
    times["stage3"] = time.perf_counter() - t0
    report = PipelineReport(
        losses={"stage1": r1.losses, "stage2": r2.losses, "stage3": r3.losses},
        checkpoints={"stage1": checkpoint_digest(r1.params), "stage2": checkpoint_digest(r2.params),
                     "final": checkpoint_digest(r3.params)},
        wall_times=times,
    )
    return PipelineResult(r1, r2, r3, report)
