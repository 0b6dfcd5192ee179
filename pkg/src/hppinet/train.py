"""Loss gradients, gradient checking, Adam and the early-stopping training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as K
from .graph import ModelGraph, backward, forward, stack_feeds
from .labels import COARSE_LABELS, coarse_of

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "early_stop_patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("early_stop_patience cannot exceed max_epochs")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.val_acc), start=1):
                w.writerow([i] + [repr(float(v)) for v in row])


@dataclass
class ArrayDataset:
    """Batched graph inputs with integer class targets (or soft target rows)."""

    feeds: dict[str, np.ndarray]
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "ArrayDataset":
        return ArrayDataset({k: v[idx] for k, v in self.feeds.items()}, self.y[idx])


def dataset_for(graph: ModelGraph, images, labels=None) -> ArrayDataset:
    """Select the samples a graph classifies and encode their targets.

    The coarse classifier sees every sample with its coarse group as the
    target; second-stage models only see samples of their own classes.
    """
    labels = [im.source_label for im in images] if labels is None else list(labels)
    coarse = graph.class_labels == COARSE_LABELS
    keep, y = [], []
    for i, lab in enumerate(labels):
        target = coarse_of(lab) if coarse else lab
        if target in graph.class_labels:
            keep.append(i)
            y.append(graph.class_labels.index(target))
    chosen = [images[i] for i in keep]
    feeds = stack_feeds(chosen, graph.inputs) if chosen else {n: np.zeros((0,) + graph.input_shape) for n in graph.inputs}
    return ArrayDataset(feeds, np.array(y, dtype=np.int64))


def one_hot(y, n):
    y = np.asarray(y)
    if y.ndim == 2:
        return y.astype(np.float64)
    out = np.zeros((len(y), n))
    out[np.arange(len(y)), y] = 1.0
    return out


# ---------------------------------------------------------------------------
# loss and gradients


def _logits_layer(graph: ModelGraph) -> str:
    last = graph.layers[-1]
    if last.kind != "softmax":
        raise ValueError("graph must end in a softmax layer")
    return last.inputs[0]


def loss_and_grads(
    graph: ModelGraph,
    feeds,
    targets,
    loss: str = "ce",
    reduction: str = "mean",
    training: bool = True,
    update_stats: bool = False,
    frozen=None,
):
    """Forward + backward. Returns (loss value, {layer: {param: grad}}, input grads)."""
    acts, caches = forward(graph, feeds, training=training, update_stats=update_stats, frozen=frozen)
    probs = acts[graph.output]
    t = one_hot(targets, graph.num_classes)
    if loss == "ce":
        value = K.cross_entropy(probs, t, reduction)
        dlogits = K.softmax_ce_backward(probs, t, reduction)
    elif loss == "mse":
        value = K.mse(probs, t, reduction)
        dlogits = K.softmax_mse_backward(probs, t, reduction)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    if not np.isfinite(value):
        raise FloatingPointError("non-finite loss")
    pgrads, igrads = backward(graph, acts, caches, {_logits_layer(graph): dlogits})
    return value, pgrads, igrads


def graph_backward(graph: ModelGraph, feeds, targets, loss: str = "ce", reduction: str = "mean"):
    """Analytic gradient of the loss for every trainable tensor (batch statistics in BN)."""
    _, pgrads, _ = loss_and_grads(graph, feeds, targets, loss, reduction)
    return pgrads


def relative_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_diff_check(
    graph: ModelGraph,
    feeds,
    targets,
    h: float = 1e-5,
    loss: str = "ce",
    reduction: str = "mean",
    layers=None,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    analytic = graph_backward(graph, feeds, targets, loss, reduction)
    t = one_hot(targets, graph.num_classes)

    def value():
        acts, _ = forward(graph, feeds, training=True, update_stats=False)
        probs = acts[graph.output]
        return K.cross_entropy(probs, t, reduction) if loss == "ce" else K.mse(probs, t, reduction)

    worst = 0.0
    for layer, pname, arr in graph.trainable_items(include_frozen=True):
        if layers is not None and layer not in layers:
            continue
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = value()
            flat[i] = old - h
            down = value()
            flat[i] = old
            nflat[i] = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic[layer][pname], numeric))
    return worst


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, t: int, config: TrainConfig):
    """In-place Adam update of ``params`` (dict key -> array) with bias correction."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.eps
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key}")
        m = state.m.get(key)
        v = state.v.get(key)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[key], state.v[key] = m, v
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    state.t = t
    return params, state


# ---------------------------------------------------------------------------
# training loop


def _snapshot(graph: ModelGraph, frozen):
    return {(layer, pname): arr.copy() for layer, pname, arr in graph.all_tensors() if layer not in frozen}


def _restore(graph: ModelGraph, snap) -> None:
    for (layer, pname), saved in snap.items():
        graph.params[layer][pname][...] = saved


def batched_predict(graph: ModelGraph, feeds, chunk: int = 256) -> np.ndarray:
    n = len(next(iter(feeds.values())))
    out = [graph.predict_proba({k: v[i : i + chunk] for k, v in feeds.items()}) for i in range(0, n, chunk)]
    return np.concatenate(out) if out else np.zeros((0, graph.num_classes))


def dataset_loss(graph: ModelGraph, data: ArrayDataset, loss: str = "ce") -> float:
    probs = batched_predict(graph, data.feeds)
    t = one_hot(data.y, graph.num_classes)
    return K.cross_entropy(probs, t) if loss == "ce" else K.mse(probs, t)


def train_model(
    graph: ModelGraph,
    train_set: ArrayDataset,
    val_set: ArrayDataset,
    config: TrainConfig | None = None,
    loss: str = "ce",
    frozen=None,
):
    """Mini-batch Adam with early stopping on validation loss.

    Trains ``graph`` in place and leaves the weights of the best validation
    epoch in it. Layers in ``frozen`` (default: the aliased ones) are not
    updated and run batch norm on running statistics. Returns (graph,
    history).
    """
    config = config or TrainConfig()
    frozen = set(graph.alias_of) if frozen is None else set(frozen)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation splits must be non-empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    history = TrainHistory()
    best = (np.inf, _snapshot(graph, frozen))
    since_best = 0
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = train_set.subset(order[start : start + config.batch_size])
            value, pgrads, _ = loss_and_grads(
                graph, batch.feeds, batch.y, loss, training=True, update_stats=True, frozen=frozen
            )
            total += value * len(batch)
            step += 1
            params = {(l, p): a for l, p, a in graph.trainable_items(frozen=frozen)}
            grads = {(l, p): pgrads[l][p] for l, p in params}
            adam_step(params, grads, state, step, config)
        history.train_loss.append(total / len(train_set))
        vloss = dataset_loss(graph, val_set, loss)
        history.val_loss.append(vloss)
        history.val_acc.append(evaluate(graph, val_set)[0] if loss == "ce" else float("nan"))
        history.stopped_epoch = epoch
        log.debug("%s epoch %d train %.4f val %.4f", graph.name, epoch, history.train_loss[-1], vloss)
        if vloss < best[0]:
            best = (vloss, _snapshot(graph, frozen))
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                break
    _restore(graph, best[1])
    return graph, history


# ---------------------------------------------------------------------------
# evaluation


def confusion_matrix(y_true, y_pred, n: int) -> np.ndarray:
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, int), np.asarray(y_pred, int)), 1)
    return cm


def evaluate(model, dataset: ArrayDataset):
    """Returns (accuracy, confusion matrix) with rows = true class, columns = prediction.

    ``model`` is anything with ``predict_proba(feeds)`` and ``num_classes``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if isinstance(model, ModelGraph):
        probs = batched_predict(model, dataset.feeds)
    else:
        probs = model.predict_proba(dataset.feeds)
    cm = confusion_matrix(dataset.y, np.argmax(probs, axis=1), model.num_classes)
    return float(np.trace(cm) / cm.sum()), cm


def write_confusion_csv(cm: np.ndarray, labels, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + list(labels))
        for lab, row in zip(labels, cm):
            w.writerow([lab] + [int(v) for v in row])
