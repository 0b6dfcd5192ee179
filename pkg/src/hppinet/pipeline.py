"""Training schedule for the three modules and whole-system evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .graph import ModelGraph, stack_feeds
from .labels import FINE_LABELS, coarse_of
from .train import TrainConfig, TrainHistory, batched_predict, dataset_for, evaluate, train_model
from .zoo import BACKBONE_LAYERS, PlmnVariant, build_first_layer, build_plmn, build_stationary

log = logging.getLogger(__name__)

# desk-scale defaults: faster than the 1e-4 / patience 5 setting on this data
DEFAULT_CONFIG = TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=100, early_stop_patience=8, seed=0)


def train_first_layer(split, config: TrainConfig = DEFAULT_CONFIG, seed: int = 0):
    fl = build_first_layer(seed=seed)
    fl, hist = train_model(fl, dataset_for(fl, split.train), dataset_for(fl, split.val), config)
    return fl, hist


def train_stationary(split, first_layer: ModelGraph, config: TrainConfig = DEFAULT_CONFIG, seed: int = 1):
    """Fine-tune the shared backbone on B windows, then refit the coarse head.

    The backbone tensors are shared, so the first step also changes
    ``first_layer``; its head is retrained on the frozen backbone afterwards.
    Returns (stationary, stationary history, first-layer head history).
    """
    st = build_stationary(first_layer, seed=seed)
    st, hist = train_model(st, dataset_for(st, split.train), dataset_for(st, split.val), config, frozen=())
    first_layer, head_hist = train_model(
        first_layer,
        dataset_for(first_layer, split.train),
        dataset_for(first_layer, split.val),
        config,
        frozen=BACKBONE_LAYERS,
    )
    return st, hist, head_hist


def train_plmn(split, variant=PlmnVariant.FULL, config: TrainConfig = DEFAULT_CONFIG, seed: int = 0):
    g = build_plmn(variant, seed=seed)
    g, hist = train_model(g, dataset_for(g, split.train), dataset_for(g, split.val), config)
    return g, hist


@dataclass
class Hierarchy:
    first_layer: ModelGraph
    plmn: ModelGraph
    stationary: ModelGraph
    histories: dict[str, TrainHistory]


def fit_hierarchy(split, config: TrainConfig = DEFAULT_CONFIG, seed: int = 0) -> Hierarchy:
    fl, h_fl = train_first_layer(split, config, seed)
    st, h_st, h_head = train_stationary(split, fl, config, seed + 1)
    plmn, h_plmn = train_plmn(split, PlmnVariant.FULL, config, seed)
    return Hierarchy(fl, plmn, st, {"first_layer": h_fl, "stationary": h_st, "first_layer_head": h_head, "plmn": h_plmn})


def module_accuracies(h: Hierarchy, images) -> dict[str, float]:
    return {
        "first_layer": evaluate(h.first_layer, dataset_for(h.first_layer, images))[0],
        "plmn": evaluate(h.plmn, dataset_for(h.plmn, images))[0],
        "stationary": evaluate(h.stationary, dataset_for(h.stationary, images))[0],
    }


def system_predictions(first_layer, plmn, stationary, images) -> list[str]:
    """Fine labels from the two-stage routing, computed in batches.

    Gives the same labels as calling the runtime dispatcher per window.
    """
    if not images:
        return []

    def probs(g):
        return batched_predict(g, stack_feeds(images, g.inputs))

    coarse = [first_layer.class_labels[i] for i in probs(first_layer).argmax(axis=1)]
    fine_a = [plmn.class_labels[i] for i in probs(plmn).argmax(axis=1)]
    fine_b = [stationary.class_labels[i] for i in probs(stationary).argmax(axis=1)]
    return [{"A": a, "B": b, "C": "C1"}[c] for c, a, b in zip(coarse, fine_a, fine_b)]


def system_accuracy(first_layer, plmn, stationary, images):
    """Returns (accuracy, 7x7 confusion matrix over FINE_LABELS)."""
    pred = system_predictions(first_layer, plmn, stationary, images)
    cm = np.zeros((len(FINE_LABELS), len(FINE_LABELS)), dtype=np.int64)
    for im, p in zip(images, pred):
        cm[FINE_LABELS.index(im.source_label), FINE_LABELS.index(p)] += 1
    return float(np.trace(cm) / max(cm.sum(), 1)), cm


def branch_probability(images) -> float:
    """Share of A among the A/B windows of a labelled set."""
    coarse = [coarse_of(im.source_label) for im in images]
    ab = [c for c in coarse if c in ("A", "B")]
    return sum(c == "A" for c in ab) / len(ab) if ab else 0.0
