import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hppinet.explain import (
    AttributionReport,
    axis_attention_profile,
    branch_attribution_report,
    explain_plmn,
    fit_attribution_mlp,
    fused_features,
    occlusion_branch_importance,
    occlusion_deltas,
    occlusion_targets,
    pearson_matrix,
)
from hppinet.frontend import PseudoImageSet
from hppinet.train import TrainConfig, dataset_for, train_model
from hppinet.zoo import build_plmn


def single_branch_model(split, keep="fft", seed=0):
    """Full PLMN whose other two encoders read nothing (zero input weights, frozen)."""
    g = build_plmn(seed=seed)
    others = [f"lstm_{b}" for b in ("fft", "wt", "gt") if b != keep]
    for name in others:
        g.params[name]["wx"][:] = 0.0
    cfg = TrainConfig(learning_rate=3e-3, max_epochs=15, early_stop_patience=15, seed=seed)
    train_model(g, dataset_for(g, split.train), dataset_for(g, split.val), cfg, frozen=others)
    return g


def axis_only_model(axis=2, seed=0):
    g = build_plmn(seed=seed)
    for b in ("fft", "wt", "gt"):
        g.params[f"lstm_{b}"]["wx"][[c for c in range(6) if c != axis]] = 0.0
    return g


@pytest.fixture(scope="module")
def fft_only(small_split):
    return single_branch_model(small_split, "fft")


def on_simplex(v, tol=1e-12):
    v = np.asarray(v)
    return np.all(v >= 0) and abs(v.sum() - 1) < tol


def test_zero_model_gives_uniform_importance(small_split):
    g = build_plmn()
    for layer in g.params.values():
        for arr in layer.values():
            arr[...] = 0.0
    imp = occlusion_branch_importance(g, small_split.test[0], "A1")
    np.testing.assert_allclose(imp, [1 / 3] * 3, atol=1e-15)


def test_occlusion_on_simplex(small_split):
    g = build_plmn(seed=1)
    d = dataset_for(g, small_split.test)
    t = occlusion_targets(g, d.feeds, d.y)
    assert all(on_simplex(row) for row in t)


def test_constructed_fft_model_importance(fft_only, small_split):
    d = dataset_for(fft_only, small_split.test)
    deltas = occlusion_deltas(fft_only, d.feeds, d.y)
    np.testing.assert_array_equal(deltas[:, 1:], 0.0)
    assert occlusion_targets(fft_only, d.feeds, d.y)[:, 0].mean() > 0.9


def test_occlusion_invariant_to_loss_scale(fft_only, small_split):
    d = dataset_for(fft_only, small_split.test)
    raw = occlusion_deltas(fft_only, d.feeds, d.y)
    from hppinet.explain import _normalize

    for row in raw[:10]:
        np.testing.assert_allclose(_normalize(3.7 * row), _normalize(row), rtol=1e-14)


def test_mlp_loss_decreases_and_is_deterministic(small_split):
    g = build_plmn(seed=2)
    d = dataset_for(g, small_split.train)
    x, t = fused_features(g, d.feeds), occlusion_targets(g, d.feeds, d.y)
    a = fit_attribution_mlp(x, t, epochs=40, seed=1)
    b = fit_attribution_mlp(x, t, epochs=40, seed=1)
    assert a.losses[-1] < a.losses[0]
    assert a.losses == b.losses
    assert all(on_simplex(row, 1e-9) for row in a.predict(x))


def test_mlp_learns_constant_target():
    r = np.random.default_rng(0)
    x = r.normal(size=(40, 192))
    t = np.tile([0.2, 0.5, 0.3], (40, 1))
    m = fit_attribution_mlp(x, t, epochs=300, lr=1e-2, seed=0)
    assert m.losses[-1] < 1e-4


def test_mlp_rejects_empty():
    with pytest.raises(ValueError):
        fit_attribution_mlp(np.zeros((0, 192)), np.zeros((0, 3)))


def test_report_per_class_vectors(caplog):
    r = np.random.default_rng(1)
    x = r.normal(size=(5, 8))
    m = fit_attribution_mlp(x, np.full((5, 3), 1 / 3), epochs=2, seed=0)
    labels = ["A1", "A1", "A2", "A2", "A3"]
    rep = branch_attribution_report(m, x, labels, ["A1", "A2", "A3", "A4"])
    assert set(rep) == {"A1", "A2", "A3"}
    assert "A4" in caplog.text
    assert all(on_simplex(v, 1e-12) for v in rep.values())
    np.testing.assert_allclose(rep["A3"], m.predict(x[4:5])[0], rtol=1e-12)


def test_axis_profile_zero_input_is_uniform():
    g = build_plmn(seed=0)
    feeds = {b: np.zeros((2, 16, 6)) for b in g.inputs}
    prof = axis_attention_profile(g, feeds)
    for v in prof.values():
        np.testing.assert_allclose(v, 1 / 6)


def test_axis_profile_az_only(small_split):
    g = axis_only_model(axis=2)
    d = dataset_for(g, small_split.test)
    prof = axis_attention_profile(g, d.feeds)
    for b in ("fft", "wt", "gt"):
        assert on_simplex(prof[b], 1e-12)
        assert prof[b][2] > 0.9


def images_from(fft, wt, gt):
    return [PseudoImageSet(f, w, g, "A1") for f, w, g in zip(fft, wt, gt)]


def test_pearson_identities():
    r = np.random.default_rng(3)
    fft = np.abs(r.normal(size=(4, 16, 6)))
    gt = r.normal(size=(4, 16, 6))
    m = pearson_matrix(images_from(fft, 2 * fft, gt))
    assert m[0, 1] == pytest.approx(1.0, abs=1e-12)
    m = pearson_matrix(images_from(fft, -fft, gt))
    assert m[0, 1] == pytest.approx(-1.0, abs=1e-12)
    np.testing.assert_array_equal(np.diag(m), 1.0)


def test_pearson_matches_numpy():
    r = np.random.default_rng(4)
    f, w, g = (r.normal(size=(5, 16, 6)) for _ in range(3))
    m = pearson_matrix(images_from(f, w, g))
    ref = np.corrcoef(np.stack([f.ravel(), w.ravel(), g.ravel()]))
    np.testing.assert_allclose(m, ref, atol=1e-12)


def test_pearson_zero_variance_and_errors(caplog):
    r = np.random.default_rng(5)
    f = r.normal(size=(3, 16, 6))
    m = pearson_matrix(images_from(f, np.zeros_like(f), f))
    assert m[0, 1] == 0.0 and m[1, 1] == 1.0
    assert "zero variance" in caplog.text
    with pytest.raises(ValueError):
        pearson_matrix(images_from(f[:1], f[:1], f[:1]))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 3, 16, 6), elements=st.floats(-5, 5)))
def test_pearson_properties(data):
    m = pearson_matrix(images_from(data[0], data[1], data[2]))
    np.testing.assert_array_equal(m, m.T)
    np.testing.assert_array_equal(np.diag(m), 1.0)
    assert np.all(np.abs(m) <= 1 + 1e-12)


def test_explain_report_and_outputs(small_split, tmp_path):
    g = build_plmn(seed=3)
    tr, te = dataset_for(g, small_split.train), dataset_for(g, small_split.test)
    a = explain_plmn(g, tr.feeds, tr.y, te.feeds, te.y, small_split.test, epochs=5, seed=0)
    b = explain_plmn(g, tr.feeds, tr.y, te.feeds, te.y, small_split.test, epochs=5, seed=0)
    assert isinstance(a, AttributionReport)
    assert set(a.per_class) == {"A1", "A2", "A3", "A4"}
    for lab in a.per_class:
        np.testing.assert_array_equal(a.per_class[lab], b.per_class[lab])
        assert on_simplex(a.per_class[lab], 1e-12)
    text = a.to_text()
    assert "Pearson" in text and "gz" in text
    a.write_csv(tmp_path / "attr.csv")
    assert (tmp_path / "attr.csv").read_text().startswith("class,FFT,WT,GT")
