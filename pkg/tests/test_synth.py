import numpy as np
import pytest

from hppinet.frontend import WINDOW, preprocess_stream
from hppinet.labels import FINE_LABELS
from hppinet.synth import (
    DEFAULT_PROFILES,
    ActivityProfile,
    SyntheticSource,
    generate_activity_stream,
    load_dataset,
    make_dataset,
    mixed_schedule,
    override_profile,
    save_dataset,
    write_manifest,
)


def test_streams_are_deterministic():
    a = generate_activity_stream("A3", 4.0, 50, seed=7)
    b = generate_activity_stream("A3", 4.0, 50, seed=7)
    np.testing.assert_array_equal(a.values, b.values)
    c = generate_activity_stream("A3", 4.0, 50, seed=8)
    assert not np.array_equal(a.values, c.values)


@pytest.mark.parametrize("rate", [10, 25, 50])
def test_sample_count_follows_rate(rate):
    s = generate_activity_stream("C1", 3.3, rate, seed=0)
    assert abs(len(s.t) - 3.3 * rate) <= 1
    assert np.all(np.diff(s.t) > 0)
    assert np.all(np.isfinite(s.values))
    assert set(s.labels) == {"C1"}


@pytest.mark.parametrize("rate", [0, 20, 100])
def test_invalid_rate(rate):
    with pytest.raises(ValueError):
        generate_activity_stream("A1", 1.0, rate)


def test_invalid_duration():
    with pytest.raises(ValueError):
        generate_activity_stream("A1", 0.0)


def test_standing_is_quiet_compared_to_running():
    b1 = generate_activity_stream("B1", 20.0, 50, seed=1).values
    a2 = generate_activity_stream("A2", 20.0, 50, seed=1).values
    assert b1[:, 0].std() < 0.1 * a2[:, 0].std()
    assert b1[:, 2].mean() == pytest.approx(9.8, abs=0.3)
    b2 = generate_activity_stream("B2", 20.0, 50, seed=1).values
    assert b2[:, 0].mean() == pytest.approx(9.8, abs=0.3)


def test_windowed_variance_of_stationary_classes_is_small():
    def mean_window_var(label):
        ws = preprocess_stream(generate_activity_stream(label, 40 * WINDOW / 50, 50, seed=2))
        return np.mean([w.samples[:, :3].var(axis=0) for w in ws], axis=0)

    quiet = np.maximum(mean_window_var("B1"), mean_window_var("B2"))
    for label in ("A1", "A2", "A3", "A4", "C1"):
        assert np.all(10 * quiet < mean_window_var(label)), label


def test_cycling_gz_peak_at_cadence():
    rate = 50
    s = generate_activity_stream("C1", 40.0, rate, seed=0)
    gz = s.values[:, 5] - s.values[:, 5].mean()
    spec = np.abs(np.fft.rfft(gz))
    freqs = np.fft.rfftfreq(len(gz), 1 / rate)
    assert abs(freqs[np.argmax(spec)] - DEFAULT_PROFILES["C1"].freq_hz) < 0.1


def test_running_is_faster_and_stronger_than_walking():
    a1, a2 = DEFAULT_PROFILES["A1"], DEFAULT_PROFILES["A2"]
    assert a2.freq_hz > a1.freq_hz
    assert a2.amplitude[0] > a1.amplitude[0]
    assert np.sign(DEFAULT_PROFILES["A3"].ramp_az) == -np.sign(DEFAULT_PROFILES["A4"].ramp_az)


def test_profile_validation():
    with pytest.raises(ValueError):
        ActivityProfile(offset=(0.0,) * 5)
    with pytest.raises(ValueError):
        ActivityProfile(offset=(0.0,) * 6, noise_std=-1)
    fast = override_profile(DEFAULT_PROFILES, "A2", freq_hz=6.0)
    with pytest.raises(ValueError):
        generate_activity_stream("A2", 1.0, 10, profiles=fast)  # above Nyquist at 10 Hz


def test_split_counts():
    ds = make_dataset(windows_per_class=100, seed=0)
    assert ds.counts() == {"train": 490, "val": 105, "test": 105}
    for part in ("train", "val", "test"):
        labels = [im.source_label for im in getattr(ds, part)]
        assert len(set(labels)) == 7
        assert len({labels.count(l) for l in FINE_LABELS}) == 1


def test_splits_are_disjoint_and_standardized_on_train():
    ds = make_dataset(windows_per_class=30, seed=1)
    keys = {part: {w.samples.tobytes() for w in ds.windows[part]} for part in ("train", "val", "test")}
    assert not keys["train"] & keys["val"] and not keys["train"] & keys["test"] and not keys["val"] & keys["test"]
    train = np.concatenate([w.samples for w in ds.windows["train"]])
    np.testing.assert_allclose(train.mean(axis=0), 0.0, atol=1e-9)
    test = np.concatenate([w.samples for w in ds.windows["test"]])
    assert np.max(np.abs(test.mean(axis=0))) > 1e-6


@pytest.mark.parametrize("ratios", [(0.5, 0.3, 0.3), (0.7, 0.3), (1.2, -0.1, -0.1)])
def test_bad_ratios(ratios):
    with pytest.raises(ValueError):
        make_dataset(windows_per_class=5, split_ratios=ratios)


def test_dataset_round_trip(tmp_path):
    ds = make_dataset(windows_per_class=10, seed=2)
    save_dataset(ds, tmp_path / "d.npz")
    back = load_dataset(tmp_path / "d.npz")
    assert back.counts() == ds.counts() and back.seed == 2
    for a, b in zip(ds.test, back.test):
        assert a.source_label == b.source_label
        np.testing.assert_array_equal(a.gt, b.gt)
    np.testing.assert_array_equal(back.stats.std, ds.stats.std)
    write_manifest(ds, tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text()
    assert "seed=2" in text and "train=" in text


def test_source_follows_schedule_and_rate():
    src = SyntheticSource([("B1", 2), ("C1", 1)], seed=0)
    a = src.next_window(50)
    b = src.next_window(10)
    c = src.next_window(25)
    assert src.next_window(50) is None
    assert set(a.labels) == {"B1"} and set(c.labels) == {"C1"}
    assert len(a.t) == len(b.t) == WINDOW
    assert np.diff(a.t)[0] == pytest.approx(1 / 50) and np.diff(b.t)[0] == pytest.approx(1 / 10)
    assert b.t[0] > a.t[-1]


def test_mixed_schedule():
    sched = mixed_schedule(1000, seed=3)
    assert sum(n for _, n in sched) == 1000
    assert all(a[0] != b[0] for a, b in zip(sched, sched[1:]))
    assert {lab for lab, _ in sched} == set(FINE_LABELS)
