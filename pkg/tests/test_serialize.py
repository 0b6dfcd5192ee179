import struct

import numpy as np
import pytest

from hppinet.graph import LayerSpec, ModelGraph
from hppinet.serialize import (
    BadMagic,
    ModelFormatError,
    TruncatedTensor,
    UnsupportedVersion,
    from_bytes,
    load_model,
    save_model,
    to_bytes,
)
from hppinet.zoo import BACKBONE_LAYERS, build_first_layer, build_plmn, build_stationary


def assert_same_graph(a, b):
    assert [(s.name, s.kind, s.inputs, s.hyper) for s in a.layers] == [(s.name, s.kind, s.inputs, s.hyper) for s in b.layers]
    assert (a.name, a.inputs, a.class_labels, a.input_shape, a.meta) == (b.name, b.inputs, b.class_labels, b.input_shape, b.meta)
    assert set(a.params) == set(b.params)
    for layer in a.params:
        for p, arr in a.params[layer].items():
            assert arr.tobytes() == b.params[layer][p].tobytes()


@pytest.mark.parametrize("variant", ["full", "plcn", "gt"])
def test_round_trip_bit_identical(tmp_path, variant):
    g = build_plmn(variant, seed=2)
    path = tmp_path / "m.hppi"
    save_model(g, path)
    h = load_model(path)
    assert_same_graph(g, h)
    save_model(h, tmp_path / "again.hppi")
    assert path.read_bytes() == (tmp_path / "again.hppi").read_bytes()


def test_quantized_round_trip_is_canonical():
    g = build_first_layer(seed=3)
    data = to_bytes(g, quantized=True)
    h = from_bytes(data)
    assert to_bytes(h, quantized=True) == data
    assert from_bytes(to_bytes(h, quantized=True)).params["conv1"]["w"].tobytes() == h.params["conv1"]["w"].tobytes()


def test_one_layer_file_is_payload_plus_header():
    layers = [LayerSpec("head", "dense", ("x",)), LayerSpec("probs", "softmax", ("head",))]
    params = {"head": {"w": np.zeros((10, 10)), "b": np.zeros(10)}}
    g = ModelGraph("m", layers, params, ("x",), tuple("abcdefghij"), (10,))
    data = to_bytes(g)
    header = len(data) - 8 * 110
    assert header > 0
    params["head"]["w"] = np.zeros((20, 10))
    layers[0] = LayerSpec("head", "dense", ("x",))
    g2 = ModelGraph("m", layers, params, ("x",), tuple("abcdefghij"), (20,))
    assert len(to_bytes(g2)) - len(data) == 8 * 100
    assert header < 300


def test_stationary_file_stores_backbone_once(tmp_path):
    fl = build_first_layer(seed=0)
    st = build_stationary(fl)
    fl_bytes, st_bytes = len(to_bytes(fl)), len(to_bytes(st))
    backbone_bytes = 8 * sum(a.size for l, _, a in fl.all_tensors() if l in BACKBONE_LAYERS)
    assert st_bytes < backbone_bytes
    # the pair costs one backbone, not two
    assert fl_bytes + st_bytes < 2 * backbone_bytes
    save_model(fl, tmp_path / "fl.hppi")
    save_model(st, tmp_path / "st.hppi")
    fl2 = load_model(tmp_path / "fl.hppi")
    st2 = load_model(tmp_path / "st.hppi", base=fl2)
    assert st2.params["lstm"] is fl2.params["lstm"]
    assert st2.alias_of == st.alias_of
    x = {"fft": np.random.default_rng(1).normal(size=(4, 16, 6))}
    np.testing.assert_array_equal(st2.predict_proba(x), st.predict_proba(x))


def test_alias_without_base_is_an_error():
    st = build_stationary(build_first_layer())
    with pytest.raises(ModelFormatError):
        from_bytes(to_bytes(st))


def test_bad_magic():
    data = bytearray(to_bytes(build_first_layer()))
    data[:4] = b"XXXX"
    with pytest.raises(BadMagic):
        from_bytes(bytes(data))


def test_unsupported_version():
    data = bytearray(to_bytes(build_first_layer()))
    data[4:6] = struct.pack("<H", 7)
    with pytest.raises(UnsupportedVersion):
        from_bytes(bytes(data))


def test_truncated_tensor():
    g = build_first_layer()
    data = to_bytes(g)
    # cut inside the recurrent weight payload of the LSTM
    start = data.find(b"\x02\x00wh")
    assert start > 0
    with pytest.raises(TruncatedTensor):
        from_bytes(data[: start + 100])


def test_declared_length_larger_than_payload():
    layers = [LayerSpec("head", "dense", ("x",)), LayerSpec("probs", "softmax", ("head",))]
    g = ModelGraph("m", layers, {"head": {"w": np.ones((2, 2)), "b": np.ones(2)}}, ("x",), ("a", "b"), (2,))
    data = bytearray(to_bytes(g))
    # tensor record: name "w", dtype f64, ndim 2, dims (2, 2); bump the second dim to 3
    dims_at = data.find(b"\x01\x00w\x00\x02") + 5 + 4
    assert struct.unpack("<I", data[dims_at : dims_at + 4])[0] == 2
    data[dims_at : dims_at + 4] = struct.pack("<I", 3)
    with pytest.raises(TruncatedTensor):
        from_bytes(bytes(data))


def test_trailing_bytes_rejected():
    with pytest.raises(TruncatedTensor):
        from_bytes(to_bytes(build_first_layer()) + b"\x00")


def test_errors_are_distinct():
    assert len({BadMagic, UnsupportedVersion, TruncatedTensor}) == 3
    assert all(issubclass(e, ModelFormatError) for e in (BadMagic, UnsupportedVersion, TruncatedTensor))
