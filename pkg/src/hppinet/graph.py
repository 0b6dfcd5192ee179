"""Model graphs: ordered layer specs, a parameter store, and the executor.

A graph is a list of :class:`LayerSpec` executed in order. Each layer reads
activations produced by earlier layers or by named graph inputs
(``"fft"``, ``"wt"``, ``"gt"``). Parameters live in ``graph.params`` keyed
by layer name; a layer listed in ``graph.alias_of`` holds the *same* dict
(and the same arrays) as a layer of another graph, so in-place updates are
visible through both.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kernels as K

LAYER_KINDS = (
    "conv2d",
    "batchnorm",
    "relu",
    "maxpool",
    "gap",
    "lstm",
    "dense",
    "softmax",
    "eca",
    "reshape",
    "concat",
    "dsc",
)

# parameter names per layer kind; the second tuple lists non-trainable state
PARAM_NAMES = {
    "conv2d": (("w", "b"), ()),
    "batchnorm": (("gamma", "beta"), ("running_mean", "running_var")),
    "lstm": (("wx", "wh", "b"), ()),
    "dense": (("w", "b"), ()),
    "eca": (("kernel",), ()),
    "dsc": (("dw", "db", "pw", "pb"), ()),
}

BN_MOMENTUM = 0.9


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...]
    hyper: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        self.inputs = tuple(self.inputs)


@dataclass
class ModelGraph:
    name: str
    layers: list[LayerSpec]
    params: dict[str, dict[str, np.ndarray]]
    inputs: tuple[str, ...]
    class_labels: tuple[str, ...]
    input_shape: tuple[int, ...] = (16, 6)
    alias_of: dict[str, str] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)
    # int8 records a loaded quantized file was built from, keyed by (layer, param)
    qcache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.inputs = tuple(self.inputs)
        self.class_labels = tuple(self.class_labels)
        self.input_shape = tuple(self.input_shape)
        self.validate()

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)

    @property
    def output(self) -> str:
        return self.layers[-1].name

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def validate(self) -> None:
        seen = set(self.inputs)
        for spec in self.layers:
            if spec.name in seen:
                raise ValueError(f"duplicate layer name {spec.name!r}")
            for src in spec.inputs:
                if src not in seen:
                    raise ValueError(f"layer {spec.name!r} reads {src!r} before it is produced")
            trainable, state = PARAM_NAMES.get(spec.kind, ((), ()))
            have = set(self.params.get(spec.name, {}))
            if have != set(trainable) | set(state):
                raise ValueError(f"layer {spec.name!r} has params {sorted(have)}, expected {sorted(trainable + state)}")
            seen.add(spec.name)
        for name in self.alias_of:
            if name not in self.params:
                raise ValueError(f"alias {name!r} does not name a parameterised layer")
        if self.layers and self.layers[-1].kind == "softmax":
            width = self.output_shapes()[self.output][-1]
            if width != self.num_classes:
                raise ValueError(f"output width {width} != {self.num_classes} classes")

    def trainable_items(self, include_frozen: bool = False, frozen=None):
        """Yields (layer, param name, array) for every trainable tensor.

        Layers in ``frozen`` (default: the aliased ones) are skipped unless
        ``include_frozen`` is set.
        """
        frozen = set(self.alias_of) if frozen is None else set(frozen)
        for spec in self.layers:
            if spec.name not in self.params:
                continue
            if spec.name in frozen and not include_frozen:
                continue
            for pname in PARAM_NAMES[spec.kind][0]:
                yield spec.name, pname, self.params[spec.name][pname]

    def all_tensors(self):
        for spec in self.layers:
            for pname, arr in self.params.get(spec.name, {}).items():
                yield spec.name, pname, arr

    def parameter_count(self, include_aliases: bool = True) -> int:
        return sum(
            arr.size
            for layer, pname, arr in self.all_tensors()
            if pname in PARAM_NAMES[self.layer(layer).kind][0] and (include_aliases or layer not in self.alias_of)
        )

    def output_shapes(self) -> dict[str, tuple[int, ...]]:
        """Per-activation shapes without the batch axis, from a zero forward pass."""
        feeds = {name: np.zeros((1,) + self.input_shape) for name in self.inputs}
        acts, _ = forward(self, feeds)
        return {k: v.shape[1:] for k, v in acts.items()}

    def predict_proba(self, feeds: dict[str, np.ndarray]) -> np.ndarray:
        acts, _ = forward(self, feeds)
        return acts[self.output]

    def copy(self) -> "ModelGraph":
        """Deep copy; aliased tensors become private copies that keep their alias tags."""
        params = {layer: {k: v.copy() for k, v in p.items()} for layer, p in self.params.items()}
        return ModelGraph(
            self.name,
            [LayerSpec(s.name, s.kind, s.inputs, dict(s.hyper)) for s in self.layers],
            params,
            self.inputs,
            self.class_labels,
            self.input_shape,
            dict(self.alias_of),
            dict(self.meta),
            dict(self.qcache),
        )


def stack_feeds(images, inputs) -> dict[str, np.ndarray]:
    """Batch a list of PseudoImageSets into the graph's named inputs."""
    return {name: np.stack([getattr(im, name) for im in images]) for name in inputs}


# ---------------------------------------------------------------------------
# execution


def forward(
    graph: ModelGraph,
    feeds: dict[str, np.ndarray],
    training: bool = False,
    update_stats: bool = True,
    upto: str | None = None,
    overrides: dict[str, np.ndarray] | None = None,
    frozen=None,
):
    """Run the graph on batched feeds.

    Returns (activations by name, caches by layer name). ``training``
    switches batch norm to per-batch statistics; layers in ``frozen``
    (default: the aliased ones) always use running statistics.
    ``overrides`` replaces a layer's output by a given array, e.g. to
    occlude a branch.
    """
    frozen = set(graph.alias_of) if frozen is None else set(frozen)
    acts: dict[str, np.ndarray] = {}
    for name in graph.inputs:
        if name not in feeds:
            raise ValueError(f"missing graph input {name!r}")
        arr = np.asarray(feeds[name], dtype=np.float64)
        if arr.shape[1:] != graph.input_shape:
            raise ValueError(f"input {name!r} has shape {arr.shape[1:]}, expected {graph.input_shape}")
        acts[name] = arr
    caches: dict[str, Any] = {}
    for spec in graph.layers:
        xs = [acts[src] for src in spec.inputs]
        p = graph.params.get(spec.name)
        out, cache = _forward_layer(spec, xs, p, training and spec.name not in frozen, update_stats)
        if overrides and spec.name in overrides:
            out = np.broadcast_to(overrides[spec.name], out.shape).astype(np.float64)
        acts[spec.name] = out
        caches[spec.name] = cache
        if spec.name == upto:
            break
    return acts, caches


def _forward_layer(spec: LayerSpec, xs, p, training, update_stats):
    kind, hp = spec.kind, spec.hyper
    x = xs[0] if xs else None
    if kind == "conv2d":
        return K.conv2d_batch(x, p["w"], p["b"], hp.get("stride", 1), hp.get("padding", "same")), None
    if kind == "batchnorm":
        eps = hp.get("eps", 1e-3)
        if training:
            out, cache = K.batchnorm_train(x, p["gamma"], p["beta"], eps)
            if update_stats:
                _, _, mu, var = cache
                p["running_mean"] *= BN_MOMENTUM
                p["running_mean"] += (1 - BN_MOMENTUM) * mu
                p["running_var"] *= BN_MOMENTUM
                p["running_var"] += (1 - BN_MOMENTUM) * var
            return out, ("train", cache)
        return K.batchnorm_forward(x, p["gamma"], p["beta"], p["running_mean"], p["running_var"], eps), ("eval", None)
    if kind == "relu":
        return K.relu(x), None
    if kind == "maxpool":
        return K.maxpool_batch(x, hp.get("pool", 2), hp.get("stride", 2)), None
    if kind == "gap":
        return K.global_avg_pool(x, tuple(hp.get("axes", (1, 2)))), None
    if kind == "lstm":
        hs, cache = K.lstm_batch(x, p["wx"], p["wh"], p["b"])
        return hs[:, -1], cache
    if kind == "dense":
        return K.dense_batch(x, p["w"], p["b"]), None
    if kind == "softmax":
        return K.softmax(x), None
    if kind == "eca":
        out, w, cache = K.eca_batch(x, p["kernel"])
        return out, (w, cache)
    if kind == "reshape":
        return x.reshape((len(x),) + tuple(hp["shape"])), None
    if kind == "concat":
        return np.concatenate(xs, axis=-1), None
    if kind == "dsc":
        return K.dsc_batch(x, p["dw"], p["db"], p["pw"], p["pb"]), None
    raise AssertionError(kind)


def backward(graph: ModelGraph, acts, caches, seeds: dict[str, np.ndarray]):
    """Reverse-mode pass from gradients seeded on named activations.

    Returns (parameter gradients {layer: {param: array}}, gradients of the
    graph inputs {input name: array}). Layers after the last seeded one are
    skipped, so seeding the softmax logits bypasses the softmax layer.
    """
    grads_act: dict[str, np.ndarray] = {k: np.array(v, dtype=np.float64) for k, v in seeds.items()}
    pgrads: dict[str, dict[str, np.ndarray]] = {}
    for spec in reversed(graph.layers):
        if spec.name not in grads_act:
            continue
        dout = grads_act.pop(spec.name)
        xs = [acts[src] for src in spec.inputs]
        dxs, dp = _backward_layer(spec, dout, xs, acts[spec.name], graph.params.get(spec.name), caches[spec.name])
        if dp is not None:
            pgrads[spec.name] = dp
        for src, dx in zip(spec.inputs, dxs):
            if src in grads_act:
                grads_act[src] = grads_act[src] + dx
            else:
                grads_act[src] = dx
    input_grads = {name: grads_act.get(name, np.zeros_like(acts[name])) for name in graph.inputs}
    return pgrads, input_grads


def _backward_layer(spec: LayerSpec, dout, xs, out, p, cache):
    kind, hp = spec.kind, spec.hyper
    x = xs[0] if xs else None
    if kind == "conv2d":
        dx, dw, db = K.conv2d_backward(dout, x, p["w"], hp.get("stride", 1), hp.get("padding", "same"))
        return [dx], {"w": dw, "b": db}
    if kind == "batchnorm":
        mode, c = cache
        if mode == "train":
            dx, dg, db = K.batchnorm_backward_train(dout, c, p["gamma"])
        else:
            dx, dg, db = K.batchnorm_backward_eval(
                dout, x, p["gamma"], p["running_mean"], p["running_var"], hp.get("eps", 1e-3)
            )
        return [dx], {"gamma": dg, "beta": db}
    if kind == "relu":
        return [K.relu_backward(dout, x)], None
    if kind == "maxpool":
        return [K.maxpool_backward(dout, x, hp.get("pool", 2), hp.get("stride", 2))], None
    if kind == "gap":
        return [K.gap_backward(dout, x.shape, tuple(hp.get("axes", (1, 2))))], None
    if kind == "lstm":
        dhs = np.zeros(cache[1].shape)
        dhs[:, -1] = dout
        dx, dwx, dwh, db = K.lstm_backward(dhs, cache, p["wx"], p["wh"])
        return [dx], {"wx": dwx, "wh": dwh, "b": db}
    if kind == "dense":
        dx, dw, db = K.dense_backward(dout, x, p["w"])
        return [dx], {"w": dw, "b": db}
    if kind == "softmax":
        return [out * (dout - np.sum(dout * out, axis=-1, keepdims=True))], None
    if kind == "eca":
        _, ecache = cache
        dx, dk = K.eca_backward(dout, x, p["kernel"], ecache)
        return [dx], {"kernel": dk}
    if kind == "reshape":
        return [dout.reshape(x.shape)], None
    if kind == "concat":
        splits = np.cumsum([a.shape[-1] for a in xs])[:-1]
        return np.split(dout, splits, axis=-1), None
    if kind == "dsc":
        dx, ddw, ddb, dpw, dpb = K.dsc_backward(dout, x, p["dw"], p["db"], p["pw"])
        return [dx], {"dw": ddw, "db": ddb, "pw": dpw, "pb": dpb}
    raise AssertionError(kind)
