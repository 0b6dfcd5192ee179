import numpy as np
import pytest

from hppinet.graph import forward
from hppinet.zoo import (
    ABLATION_ORDER,
    BACKBONE_LAYERS,
    PlmnVariant,
    build_first_layer,
    build_plmn,
    build_stationary,
    fused_layer,
)


def zero_feeds(g, n=1):
    return {name: np.zeros((n,) + g.input_shape) for name in g.inputs}


def all_graphs():
    fl = build_first_layer()
    return [fl, build_stationary(fl)] + [build_plmn(v) for v in PlmnVariant]


@pytest.mark.parametrize("g", all_graphs(), ids=lambda g: g.name)
def test_zero_input_gives_normalized_deterministic_output(g):
    a = g.predict_proba(zero_feeds(g, 2))
    b = g.predict_proba(zero_feeds(g, 2))
    assert a.shape == (2, g.num_classes)
    assert np.all(np.isfinite(a))
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(a, b)


def test_output_widths():
    fl = build_first_layer()
    assert fl.num_classes == 3 and fl.class_labels == ("A", "B", "C")
    assert build_stationary(fl).class_labels == ("B1", "B2")
    assert build_plmn().class_labels == ("A1", "A2", "A3", "A4")


def test_first_layer_shapes():
    shapes = build_first_layer().output_shapes()
    assert shapes["pool1"] == (8, 3, 8)
    assert shapes["pool2"] == (4, 1, 16)
    assert shapes["frames"] == (4, 16)
    assert shapes["lstm"] == (32,)


def test_first_layer_rejects_other_widths():
    with pytest.raises(ValueError):
        build_first_layer(num_classes=4)


def test_plmn_concat_width_and_eca_kernel():
    g = build_plmn()
    shapes = g.output_shapes()
    assert shapes["concat"] == (192,)
    assert shapes["fused"] == (1, 1, 192)
    assert g.params["eca"]["kernel"].shape == (5,)
    assert g.inputs == ("fft", "wt", "gt")


def test_variants_structure():
    assert "eca" not in {s.name for s in build_plmn("no_attention").layers}
    single = build_plmn("wt")
    assert single.inputs == ("wt",)
    assert single.output_shapes()["fused"] == (1, 1, 64)
    assert single.params["eca"]["kernel"].shape == (3,)
    plcn = build_plmn("plcn")
    assert {s.kind for s in plcn.layers} >= {"conv2d"}
    assert "dsc" not in {s.kind for s in plcn.layers}


def test_plcn_has_more_parameters_than_dsc():
    full, plcn = build_plmn("full"), build_plmn("plcn")
    # stage difference: 2 x (9*192*192 + 192) vs 2 x (9*192 + 192 + 192*192 + 192)
    expected = 2 * ((9 * 192 * 192 + 192) - (9 * 192 + 192 + 192 * 192 + 192))
    assert plcn.parameter_count() - full.parameter_count() == expected > 0


def test_ablation_order_matches_report_rows():
    assert [v.display_name for v in ABLATION_ORDER] == ["FFT", "WT", "GB", "PLMN (no attention)", "PLCN", "PLMN"]


def test_stationary_shares_backbone_identity():
    fl = build_first_layer()
    st = build_stationary(fl)
    for name in BACKBONE_LAYERS:
        assert st.params[name] is fl.params[name]
        for p in fl.params[name]:
            assert st.params[name][p] is fl.params[name][p]
    assert st.params["head"] is not fl.params["head"]
    fl.params["conv1"]["w"][0, 0, 0, 0] = 123.0
    assert st.params["conv1"]["w"][0, 0, 0, 0] == 123.0
    x = np.random.default_rng(0).normal(size=(3, 16, 6))
    a, _ = forward(fl, {"fft": x})
    b, _ = forward(st, {"fft": x})
    np.testing.assert_array_equal(a["lstm"], b["lstm"])


def test_fused_layer_names():
    assert fused_layer(build_plmn()) == "eca"
    assert fused_layer(build_plmn("no_attention")) == "concat"
    assert fused_layer(build_plmn("gt")) == "eca"


def test_builders_are_seeded():
    a, b = build_plmn(seed=4), build_plmn(seed=4)
    for layer in a.params:
        for p in a.params[layer]:
            np.testing.assert_array_equal(a.params[layer][p], b.params[layer][p])
    assert not np.array_equal(build_plmn(seed=5).params["head"]["w"], a.params["head"]["w"])
