"""Branch and axis attribution for PLMN, and cross-branch correlation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as K
from .graph import LayerSpec, ModelGraph, backward, forward, stack_feeds
from .labels import CHANNELS
from .train import AdamState, TrainConfig, adam_step, loss_and_grads
from .zoo import BRANCHES, fused_layer, init_dense

log = logging.getLogger(__name__)


def _normalize(raw) -> np.ndarray:
    """Clip at zero and scale to sum 1; uniform when nothing is positive."""
    raw = np.maximum(np.asarray(raw, dtype=np.float64), 0.0)
    total = raw.sum()
    if not total > 0 or not np.isfinite(total):
        return np.full(raw.shape, 1.0 / raw.size)
    return raw / total


def _ce(graph: ModelGraph, feeds, y, overrides=None) -> np.ndarray:
    acts, _ = forward(graph, feeds, overrides=overrides)
    probs = acts[graph.output]
    return -np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300))


def occlusion_deltas(plmn: ModelGraph, feeds, y) -> np.ndarray:
    """(n, 3) loss increase when each branch encoder output is zeroed.

    A branch the graph does not have contributes 0.
    """
    y = np.asarray(y, dtype=np.int64)
    base = _ce(plmn, feeds, y)
    out = np.zeros((len(y), len(BRANCHES)))
    for j, b in enumerate(BRANCHES):
        name = f"lstm_{b}"
        if b in plmn.inputs:
            out[:, j] = _ce(plmn, feeds, y, overrides={name: 0.0}) - base
    return out


def occlusion_branch_importance(plmn: ModelGraph, images, true_label) -> np.ndarray:
    """Normalized positive occlusion deltas for one window (FFT, WT, GT)."""
    feeds = stack_feeds([images], plmn.inputs)
    y = plmn.class_labels.index(true_label)
    return _normalize(occlusion_deltas(plmn, feeds, [y])[0])


def occlusion_targets(plmn: ModelGraph, feeds, y) -> np.ndarray:
    return np.apply_along_axis(_normalize, 1, occlusion_deltas(plmn, feeds, y))


def fused_features(plmn: ModelGraph, feeds) -> np.ndarray:
    name = fused_layer(plmn)
    acts, _ = forward(plmn, feeds, upto=name)
    return acts[name]


# ---------------------------------------------------------------------------
# attribution regressor


def build_attribution_mlp(n_features: int = 192, hidden: int = 32, seed: int = 0) -> ModelGraph:
    rng = np.random.default_rng(seed)
    layers = [
        LayerSpec("hidden", "dense", ("fused",), {"n": n_features, "m": hidden}),
        LayerSpec("relu", "relu", ("hidden",)),
        LayerSpec("out", "dense", ("relu",), {"n": hidden, "m": len(BRANCHES)}),
        LayerSpec("probs", "softmax", ("out",)),
    ]
    params = {"hidden": init_dense(rng, n_features, hidden), "out": init_dense(rng, hidden, len(BRANCHES))}
    return ModelGraph("attribution_mlp", layers, params, ("fused",), tuple(b.upper() for b in BRANCHES), (n_features,))


@dataclass
class AttributionMlp:
    graph: ModelGraph
    losses: list = field(default_factory=list)

    def predict(self, features) -> np.ndarray:
        """Importance vectors on the simplex (softmax output)."""
        acts, _ = forward(self.graph, {"fused": np.atleast_2d(features)})
        return acts[self.graph.output]


def fit_attribution_mlp(features, targets, hidden: int = 32, epochs: int = 300, lr: float = 1e-2, batch_size: int = 64, seed: int = 0) -> AttributionMlp:
    """Regress occlusion importances from fused features with MSE and Adam."""
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("cannot fit the attribution regressor on zero samples")
    if t.shape != (len(x), len(BRANCHES)):
        raise ValueError(f"targets must be ({len(x)}, 3), got {t.shape}")
    graph = build_attribution_mlp(x.shape[1], hidden, seed)
    cfg = TrainConfig(learning_rate=lr, batch_size=batch_size, max_epochs=epochs, early_stop_patience=epochs, seed=seed)
    rng = np.random.default_rng(seed)
    state = AdamState()
    model = AttributionMlp(graph)
    model.losses.append(K.mse(model.predict(x), t))
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            _, pgrads, _ = loss_and_grads(graph, {"fused": x[idx]}, t[idx], loss="mse")
            step += 1
            params = {(l, p): a for l, p, a in graph.trainable_items()}
            adam_step(params, {k: pgrads[k[0]][k[1]] for k in params}, state, step, cfg)
        model.losses.append(K.mse(model.predict(x), t))
    return model


def branch_attribution_report(mlp: AttributionMlp, features, labels, class_order=None) -> dict[str, np.ndarray]:
    """Per-class mean regressor output, renormalized. Empty classes are left out."""
    labels = list(labels)
    class_order = class_order or sorted(set(labels))
    preds = mlp.predict(features) if len(labels) else np.zeros((0, len(BRANCHES)))
    out = {}
    for lab in class_order:
        rows = [i for i, l in enumerate(labels) if l == lab]
        if not rows:
            log.warning("class %s has no samples; omitted from the attribution report", lab)
            continue
        out[lab] = _normalize(preds[rows].mean(axis=0))
    return out


# ---------------------------------------------------------------------------
# axis profile and correlation


def axis_attention_profile(plmn: ModelGraph, feeds) -> dict[str, np.ndarray]:
    """Per-branch 6-vectors of |d||v||/dx| * |x| summed per axis column.

    ``v`` is the fused (attention-weighted when present) feature vector.
    Averaged over the samples and normalized per branch; uniform when all
    attributions vanish.
    """
    name = fused_layer(plmn)
    acts, caches = forward(plmn, feeds, upto=name)
    v = acts[name]
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    seed = np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)
    _, igrads = backward(plmn, acts, caches, {name: seed})
    out = {}
    for b in plmn.inputs:
        raw = np.abs(igrads[b]) * np.abs(acts[b])  # (n, 16, 6)
        out[b] = _normalize(raw.sum(axis=1).mean(axis=0))
    return out


def pearson_matrix(images) -> np.ndarray:
    """Correlation of the flattened FFT, WT and GT features over all samples."""
    images = list(images)
    if len(images) < 2:
        raise ValueError("need at least two samples")
    rows = np.stack([np.concatenate([getattr(im, b).ravel() for im in images]) for b in BRANCHES])
    centred = rows - rows.mean(axis=1, keepdims=True)
    sd = np.sqrt(np.sum(centred**2, axis=1))
    m = np.eye(len(BRANCHES))
    for i in range(len(BRANCHES)):
        for j in range(i + 1, len(BRANCHES)):
            if sd[i] == 0 or sd[j] == 0:
                log.warning("branch %s or %s has zero variance; correlation set to 0", BRANCHES[i], BRANCHES[j])
                r = 0.0
            else:
                r = float(np.clip(centred[i] @ centred[j] / (sd[i] * sd[j]), -1.0, 1.0))
            m[i, j] = m[j, i] = r
    return m


# ---------------------------------------------------------------------------
# report


@dataclass
class AttributionReport:
    per_class: dict[str, np.ndarray]
    per_axis: dict[str, np.ndarray]
    correlation: np.ndarray

    def to_text(self) -> str:
        lines = ["branch importance per class"]
        lines.append(f"{'class':<6}" + "".join(f"{b.upper():>8}" for b in BRANCHES))
        for lab, vec in self.per_class.items():
            lines.append(f"{lab:<6}" + "".join(f"{100 * x:7.2f}%" for x in vec))
        if self.per_class:
            avg = np.mean(list(self.per_class.values()), axis=0)
            lines.append(f"{'mean':<6}" + "".join(f"{100 * x:7.2f}%" for x in avg))
        lines += ["", "axis attribution per branch", f"{'branch':<7}" + "".join(f"{c:>8}" for c in CHANNELS)]
        for b, vec in self.per_axis.items():
            lines.append(f"{b.upper():<7}" + "".join(f"{100 * x:7.2f}%" for x in vec))
        lines += ["", "Pearson correlation", " " * 5 + "".join(f"{b.upper():>8}" for b in BRANCHES)]
        for b, row in zip(BRANCHES, self.correlation):
            lines.append(f"{b.upper():<5}" + "".join(f"{x:8.3f}" for x in row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class"] + [b.upper() for b in BRANCHES])
            for lab, vec in self.per_class.items():
                w.writerow([lab] + [f"{x:.6f}" for x in vec])
            w.writerow([])
            w.writerow(["branch"] + list(CHANNELS))
            for b, vec in self.per_axis.items():
                w.writerow([b.upper()] + [f"{x:.6f}" for x in vec])
            w.writerow([])
            w.writerow([""] + [b.upper() for b in BRANCHES])
            for b, row in zip(BRANCHES, self.correlation):
                w.writerow([b.upper()] + [f"{x:.6f}" for x in row])


def explain_plmn(plmn: ModelGraph, train_feeds, train_y, test_feeds, test_y, images, epochs: int = 300, seed: int = 0) -> AttributionReport:
    """Occlusion targets on the training split -> regressor -> per-class report on the test split."""
    mlp = fit_attribution_mlp(
        fused_features(plmn, train_feeds), occlusion_targets(plmn, train_feeds, train_y), epochs=epochs, seed=seed
    )
    labels = [plmn.class_labels[i] for i in test_y]
    per_class = branch_attribution_report(mlp, fused_features(plmn, test_feeds), labels, list(plmn.class_labels))
    return AttributionReport(per_class, axis_attention_profile(plmn, test_feeds), pearson_matrix(images))
