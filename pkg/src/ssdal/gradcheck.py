"""Finite-difference verification of every training loss through a random network."""
from __future__ import annotations

from typing import Callable, Dict, List, Tuple

import numpy as np

from .attributes import binarize_top_p_rows
from .net import (NetworkConfig, NetworkParams, backward, backward_from_activation, forward, gradient_check,
                  init_network, sigmoid_cross_entropy)
from .triplet import LossParams, batch_triplet_loss

# small enough to check every coordinate
LAYER_SIZES = (6, 8, 5)
BATCH = 4
KINK_MARGIN = 1e-3

Evaluator = Callable[[NetworkParams], Tuple[float, object]]
Builder = Callable[[int], Tuple[NetworkParams, Evaluator]]


def _net(seed: int) -> NetworkParams:
    params = init_network(NetworkConfig(LAYER_SIZES, "tanh", seed))
    rng = np.random.default_rng([seed, 5])
    for layer in params.layers:  # non-zero biases exercise the bias path
        layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
    return params


def sigmoid_ce_case(seed: int):
    rng = np.random.default_rng([seed, 1])
    x = rng.normal(size=(BATCH, LAYER_SIZES[0]))
    t = (rng.random((BATCH, LAYER_SIZES[-1])) < 0.4).astype(np.float64)

    def evaluate(params):
        trace = forward(params, x)
        loss, dz = sigmoid_cross_entropy(trace.logits, t)
        return loss, backward(params, trace, dz)

    return _net(seed), evaluate


def _triplet_case(seed: int, gamma: float):
    params = _net(seed)
    lp = LossParams(1.0, gamma)
    rng = np.random.default_rng([seed, 2])
    K = LAYER_SIZES[-1]
    for _ in range(100):  # redraw until no triplet sits on the hinge kink
        x = rng.normal(size=(3 * BATCH, LAYER_SIZES[0]))
        s = forward(params, x).scores
        E = BATCH
        arg = (((s[:E] - s[E:2 * E]) ** 2).sum(1) + lp.theta - ((s[:E] - s[2 * E:]) ** 2).sum(1))
        if np.all(np.abs(arg) > KINK_MARGIN):
            break
    tilde = binarize_top_p_rows(rng.normal(size=(3 * BATCH, K)), 2).astype(np.float64) if gamma else None

    def evaluate(params):
        trace = forward(params, x)
        s = trace.scores
        E = BATCH
        T = (tilde[:E], tilde[E:2 * E], tilde[2 * E:]) if tilde is not None else (None, None, None)
        loss, (ga, gp, gn) = batch_triplet_loss(s[:E], s[E:2 * E], s[2 * E:], *T, params=lp)
        return loss, backward(params, trace, np.concatenate([ga, gp, gn]) * s * (1.0 - s))

    return params, evaluate


def hinge_triplet_case(seed: int):
    return _triplet_case(seed, 0.0)


def attributes_triplet_case(seed: int):
    return _triplet_case(seed, 0.01)


def embedding_hinge_case(seed: int):
    params = _net(seed)
    lp = LossParams(1.0, 0.0)
    rng = np.random.default_rng([seed, 3])
    x = rng.normal(size=(3 * BATCH, LAYER_SIZES[0]))
    top = len(params.layers) - 2

    def evaluate(params):
        trace = forward(params, x)
        h = trace.activations[-2]
        E = BATCH
        loss, (ga, gp, gn) = batch_triplet_loss(h[:E], h[E:2 * E], h[2 * E:], params=lp)
        return loss, backward_from_activation(params, trace, top, np.concatenate([ga, gp, gn]))

    return params, evaluate


LOSSES: Dict[str, Builder] = {
    "sigmoid_cross_entropy": sigmoid_ce_case,
    "hinge_triplet": hinge_triplet_case,
    "attributes_triplet": attributes_triplet_case,
    "embedding_hinge_triplet": embedding_hinge_case,
}


def run_gradcheck(seeds: int = 20, epsilon: float = 1e-5) -> Dict[str, List[float]]:
    """Per registered loss, the max relative error for each seed."""
    out = {}
    for name, build in LOSSES.items():
        errs = []
        for seed in range(seeds):
            params, evaluate = build(seed)
            errs.append(gradient_check(evaluate, params, epsilon))
        out[name] = errs
    return out
