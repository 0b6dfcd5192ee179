"""Builders for the three hierarchy modules and the PLMN ablation variants."""
from __future__ import annotations

import enum

import numpy as np

from .graph import LayerSpec, ModelGraph
from .kernels import eca_kernel_size
from .labels import COARSE_LABELS, MOVING_LABELS, STATIONARY_LABELS

FL_FILTERS = (8, 16)
FL_LSTM_HIDDEN = 32
PLMN_LSTM_HIDDEN = 64
CONV_K = 3
BRANCHES = ("fft", "wt", "gt")


class PlmnVariant(str, enum.Enum):
    FULL = "full"
    NO_ATTENTION = "no_attention"
    FFT = "fft"
    WT = "wt"
    GT = "gt"
    PLCN = "plcn"

    @property
    def display_name(self) -> str:
        return {
            "full": "PLMN",
            "no_attention": "PLMN (no attention)",
            "fft": "FFT",
            "wt": "WT",
            "gt": "GB",
            "plcn": "PLCN",
        }[self.value]

    @property
    def branches(self) -> tuple[str, ...]:
        return (self.value,) if self.value in BRANCHES else BRANCHES


# ablation report row order
ABLATION_ORDER = (
    PlmnVariant.FFT,
    PlmnVariant.WT,
    PlmnVariant.GT,
    PlmnVariant.NO_ATTENTION,
    PlmnVariant.PLCN,
    PlmnVariant.FULL,
)


# ---------------------------------------------------------------------------
# initialisers


def _uniform(rng, shape, fan_in):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, rows, cols):
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_lstm(rng, f, hid):
    wh = np.concatenate([_orthogonal(rng, hid, hid) for _ in range(4)], axis=1)
    b = np.zeros(4 * hid)
    b[hid : 2 * hid] = 1.0  # forget gate
    return {"wx": _uniform(rng, (f, 4 * hid), f), "wh": wh, "b": b}


def init_conv(rng, k, cin, cout):
    return {"w": _uniform(rng, (k, k, cin, cout), k * k * cin), "b": np.zeros(cout)}


def init_dense(rng, n, m):
    return {"w": _uniform(rng, (n, m), n), "b": np.zeros(m)}


def init_bn(c):
    return {"gamma": np.ones(c), "beta": np.zeros(c), "running_mean": np.zeros(c), "running_var": np.ones(c)}


def init_dsc(rng, k, cin, cout):
    return {
        "dw": _uniform(rng, (k, k, cin), k * k),
        "db": np.zeros(cin),
        "pw": _uniform(rng, (1, 1, cin, cout), cin),
        "pb": np.zeros(cout),
    }


def init_eca(rng, k):
    return {"kernel": _uniform(rng, (k,), k)}


# ---------------------------------------------------------------------------
# builders


def _backbone(rng, channels_in=1):
    f1, f2 = FL_FILTERS
    layers = [
        LayerSpec("expand", "reshape", ("fft",), {"shape": [16, 6, 1]}),
        LayerSpec("conv1", "conv2d", ("expand",), {"k": CONV_K, "cin": channels_in, "cout": f1, "stride": 1, "padding": "same"}),
        LayerSpec("bn1", "batchnorm", ("conv1",), {"eps": 1e-3}),
        LayerSpec("relu1", "relu", ("bn1",)),
        LayerSpec("pool1", "maxpool", ("relu1",), {"pool": 2, "stride": 2}),
        LayerSpec("conv2", "conv2d", ("pool1",), {"k": CONV_K, "cin": f1, "cout": f2, "stride": 1, "padding": "same"}),
        LayerSpec("bn2", "batchnorm", ("conv2",), {"eps": 1e-3}),
        LayerSpec("relu2", "relu", ("bn2",)),
        LayerSpec("pool2", "maxpool", ("relu2",), {"pool": 2, "stride": 2}),
        # pool the channel-column axis only; rows stay as the sequence axis
        LayerSpec("frames", "gap", ("pool2",), {"axes": [2]}),
        LayerSpec("lstm", "lstm", ("frames",), {"features": f2, "hidden": FL_LSTM_HIDDEN}),
    ]
    params = {
        "conv1": init_conv(rng, CONV_K, channels_in, f1),
        "bn1": init_bn(f1),
        "conv2": init_conv(rng, CONV_K, f1, f2),
        "bn2": init_bn(f2),
        "lstm": init_lstm(rng, f2, FL_LSTM_HIDDEN),
    }
    return layers, params


BACKBONE_LAYERS = ("conv1", "bn1", "conv2", "bn2", "lstm")


def build_first_layer(num_classes: int = 3, seed: int = 0) -> ModelGraph:
    """FFT pseudo-image -> 2x(conv, BN, ReLU, maxpool) -> GAP -> LSTM -> softmax."""
    if num_classes != len(COARSE_LABELS):
        raise ValueError("the first layer classifies the three coarse groups")
    rng = np.random.default_rng(seed)
    layers, params = _backbone(rng)
    layers += [
        LayerSpec("head", "dense", ("lstm",), {"n": FL_LSTM_HIDDEN, "m": num_classes}),
        LayerSpec("probs", "softmax", ("head",)),
    ]
    params["head"] = init_dense(rng, FL_LSTM_HIDDEN, num_classes)
    return ModelGraph("first_layer", layers, params, ("fft",), COARSE_LABELS)


def build_stationary(first_layer: ModelGraph, seed: int = 1) -> ModelGraph:
    """Same backbone as ``first_layer`` with its tensors shared, plus a fresh 2-way head."""
    rng = np.random.default_rng(seed)
    layers = [LayerSpec(s.name, s.kind, s.inputs, dict(s.hyper)) for s in first_layer.layers if s.name not in ("head", "probs")]
    params = {name: first_layer.params[name] for name in BACKBONE_LAYERS}
    layers += [
        LayerSpec("head", "dense", ("lstm",), {"n": FL_LSTM_HIDDEN, "m": 2}),
        LayerSpec("probs", "softmax", ("head",)),
    ]
    params["head"] = init_dense(rng, FL_LSTM_HIDDEN, 2)
    return ModelGraph(
        "stationary",
        layers,
        params,
        ("fft",),
        STATIONARY_LABELS,
        alias_of={name: name for name in BACKBONE_LAYERS},
    )


def build_plmn(variant: PlmnVariant | str = PlmnVariant.FULL, seed: int = 0) -> ModelGraph:
    variant = PlmnVariant(variant)
    rng = np.random.default_rng(seed)
    hid = PLMN_LSTM_HIDDEN
    layers: list[LayerSpec] = []
    params: dict = {}
    for branch in variant.branches:
        name = f"lstm_{branch}"
        layers.append(LayerSpec(name, "lstm", (branch,), {"features": 6, "hidden": hid}))
        params[name] = init_lstm(rng, 6, hid)
    width = hid * len(variant.branches)
    if len(variant.branches) > 1:
        layers.append(LayerSpec("concat", "concat", tuple(f"lstm_{b}" for b in variant.branches)))
        last = "concat"
    else:
        last = layers[-1].name
    if variant is not PlmnVariant.NO_ATTENTION:
        k = eca_kernel_size(width)
        layers.append(LayerSpec("eca", "eca", (last,), {"k": k, "channels": width}))
        params["eca"] = init_eca(rng, k)
        last = "eca"
    layers.append(LayerSpec("fused", "reshape", (last,), {"shape": [1, 1, width]}))
    last = "fused"
    for i in (1, 2):
        if variant is PlmnVariant.PLCN:
            name = f"conv{i}"
            layers.append(LayerSpec(name, "conv2d", (last,), {"k": CONV_K, "cin": width, "cout": width, "stride": 1, "padding": "same"}))
            params[name] = init_conv(rng, CONV_K, width, width)
        else:
            name = f"dsc{i}"
            layers.append(LayerSpec(name, "dsc", (last,), {"k": CONV_K, "cin": width, "cout": width}))
            params[name] = init_dsc(rng, CONV_K, width, width)
        layers.append(LayerSpec(f"relu{i}", "relu", (name,)))
        last = f"relu{i}"
    layers += [
        LayerSpec("gap", "gap", (last,), {"axes": [1, 2]}),
        LayerSpec("head", "dense", ("gap",), {"n": width, "m": len(MOVING_LABELS)}),
        LayerSpec("probs", "softmax", ("head",)),
    ]
    params["head"] = init_dense(rng, width, len(MOVING_LABELS))
    return ModelGraph(
        "plmn" if variant is PlmnVariant.FULL else f"plmn_{variant.value}",
        layers,
        params,
        variant.branches,
        MOVING_LABELS,
        meta={"variant": variant.value},
    )


def fused_layer(graph: ModelGraph) -> str:
    """Name of the fused (attention-weighted when present) feature activation."""
    names = [s.name for s in graph.layers]
    for candidate in ("eca", "concat"):
        if candidate in names:
            return candidate
    return graph.layer("fused").inputs[0]


def stage_macc_layers(graph: ModelGraph) -> tuple[str, ...]:
    """The convolution blocks after the fused-feature reshape (DSC or standard conv)."""
    names = [s.name for s in graph.layers]
    start = names.index("fused")
    return tuple(s.name for s in graph.layers[start:] if s.kind in ("dsc", "conv2d"))
