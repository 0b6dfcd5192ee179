"""Synthetic 6-axis wrist IMU streams for the seven activities, and dataset assembly.

Signatures per class:

* A1/A2 walking/running: periodic ax, ay, gz with harmonics (running is
  faster and stronger)
* A3/A4 stairs: step bursts on ay/az plus a saw-tooth az ramp that rises
  on the way up and falls on the way down
* B1/B2 standing/lying: near constant, gravity on +az or +ax
* C1 cycling: dominant gz rotation with a small accelerometer ripple
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .frontend import (
    ChannelStats,
    ImuStream,
    PseudoImageSet,
    SampleWindow,
    WINDOW,
    preprocess_stream,
    pseudoimage_set,
    standardize,
)
from .labels import FINE_LABELS

RATES = (10, 25, 50)
G = 9.81


@dataclass(frozen=True)
class ActivityProfile:
    offset: tuple[float, ...]  # per-axis baseline (gravity orientation), ax..gz
    freq_hz: float = 0.0
    amplitude: tuple[float, ...] = (0.0,) * 6
    harmonics: int = 1
    burst_amp: tuple[float, ...] = (0.0,) * 6  # short pulses once per cycle
    ramp_az: float = 0.0  # saw-tooth az component; sign gives the ramp direction
    noise_std: float = 0.05
    cadence_jitter: float = 0.05  # relative random-walk spread of the cadence
    amp_jitter: float = 0.15
    sway: float = 0.0  # slow orientation wander of the baseline

    def __post_init__(self):
        if len(self.offset) != 6 or len(self.amplitude) != 6 or len(self.burst_amp) != 6:
            raise ValueError("profiles need six per-axis values")
        if self.noise_std < 0 or self.freq_hz < 0:
            raise ValueError("noise and frequency must be non-negative")


DEFAULT_PROFILES: dict[str, ActivityProfile] = {
    "A1": ActivityProfile(
        offset=(1.5, -8.5, 4.0, 0.0, 0.0, 0.0),
        freq_hz=1.8,
        amplitude=(2.6, 2.2, 0.9, 0.6, 0.5, 1.6),
        harmonics=2,
        noise_std=0.25,
        sway=0.6,
    ),
    "A2": ActivityProfile(
        offset=(2.0, -8.0, 4.5, 0.0, 0.0, 0.0),
        freq_hz=2.8,
        amplitude=(5.5, 4.6, 2.0, 1.2, 1.0, 3.4),
        harmonics=3,
        noise_std=0.4,
        sway=0.8,
    ),
    "A3": ActivityProfile(
        offset=(1.0, -8.8, 3.5, 0.0, 0.0, 0.0),
        freq_hz=1.5,
        amplitude=(1.4, 1.2, 0.6, 0.4, 0.4, 0.9),
        harmonics=2,
        burst_amp=(0.0, 3.0, 2.6, 0.4, 0.0, 0.0),
        ramp_az=2.2,
        noise_std=0.25,
        sway=0.6,
    ),
    "A4": ActivityProfile(
        offset=(1.0, -8.8, 3.5, 0.0, 0.0, 0.0),
        freq_hz=1.9,
        amplitude=(1.6, 1.4, 0.7, 0.4, 0.4, 1.0),
        harmonics=2,
        burst_amp=(0.0, 3.4, -2.8, 0.4, 0.0, 0.0),
        ramp_az=-2.2,
        noise_std=0.25,
        sway=0.6,
    ),
    "B1": ActivityProfile(offset=(0.3, 0.2, G, 0.0, 0.0, 0.0), noise_std=0.03, sway=0.05),
    "B2": ActivityProfile(offset=(G, 0.3, 0.2, 0.0, 0.0, 0.0), noise_std=0.03, sway=0.05),
    "C1": ActivityProfile(
        offset=(-3.0, -6.5, 6.5, 0.0, 0.0, 0.0),
        freq_hz=1.2,
        amplitude=(0.45, 0.4, 0.35, 0.5, 0.4, 2.4),
        harmonics=1,
        noise_std=0.1,
        sway=0.2,
    ),
}


def _check_rate(rate_hz):
    if rate_hz not in RATES:
        raise ValueError(f"sampling rate must be one of {RATES}, got {rate_hz}")


def _random_walk(rng, n, step, limit):
    w = np.cumsum(rng.normal(0.0, step, size=n))
    return np.clip(w, -limit, limit)


def synth_samples(profile: ActivityProfile, n: int, rate_hz: float, rng: np.random.Generator, t0: float = 0.0, phase0=None):
    """Raw (n, 6) samples of one activity plus the final cycle phase."""
    dt = 1.0 / rate_hz
    if profile.freq_hz >= rate_hz / 2:
        raise ValueError("activity frequency must be below the Nyquist rate")
    cadence = profile.freq_hz * (1.0 + _random_walk(rng, n, profile.cadence_jitter * math.sqrt(dt) * 0.5, profile.cadence_jitter))
    phase_start = rng.uniform(0, 1) if phase0 is None else phase0
    cycles = phase_start + np.cumsum(cadence) * dt  # cycle count, frac = phase
    theta = 2 * math.pi * cycles
    amp_scale = 1.0 + _random_walk(rng, n, profile.amp_jitter * math.sqrt(dt), profile.amp_jitter)
    out = np.tile(np.asarray(profile.offset, dtype=float), (n, 1))
    amp = np.asarray(profile.amplitude)
    axis_phase = np.array([0.0, 0.6, 1.3, 0.4, 0.9, 1.8])
    for h in range(1, profile.harmonics + 1):
        out += (amp / h**1.5)[None, :] * amp_scale[:, None] * np.sin(h * theta[:, None] + h * axis_phase[None, :])
    burst = np.asarray(profile.burst_amp)
    if np.any(burst):
        frac = np.mod(cycles, 1.0)
        pulse = np.exp(-0.5 * ((frac - 0.15) / 0.06) ** 2)
        out += pulse[:, None] * burst[None, :] * amp_scale[:, None]
    if profile.ramp_az:
        frac = np.mod(cycles, 1.0)
        out[:, 2] += profile.ramp_az * (frac - 0.5) * amp_scale
    if profile.sway:
        for c in range(3):
            out[:, c] += _random_walk(rng, n, profile.sway * math.sqrt(dt) * 0.5, profile.sway)
    out += rng.normal(0.0, profile.noise_std, size=out.shape)
    return out, float(cycles[-1] % 1.0) if n else phase_start


def generate_activity_stream(
    label: str,
    duration_s: float,
    rate_hz: int = 50,
    seed: int = 0,
    profiles: dict[str, ActivityProfile] | None = None,
    t0: float = 0.0,
) -> ImuStream:
    """Deterministic stream of ``round(duration_s * rate_hz)`` samples of one activity."""
    _check_rate(rate_hz)
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    profile = (profiles or DEFAULT_PROFILES)[label]
    n = int(round(duration_s * rate_hz))
    rng = np.random.default_rng([seed, FINE_LABELS.index(label), rate_hz])
    values, _ = synth_samples(profile, n, rate_hz, rng)
    t = t0 + np.arange(n) / rate_hz
    return ImuStream(t, values, [label] * n)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetSplit:
    train: list[PseudoImageSet]
    val: list[PseudoImageSet]
    test: list[PseudoImageSet]
    ratios: tuple[float, float, float]
    seed: int
    stats: ChannelStats
    windows: dict[str, list[SampleWindow]] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        return {"train": len(self.train), "val": len(self.val), "test": len(self.test)}

    def manifest(self) -> str:
        lines = [f"seed={self.seed}", "ratios=" + ",".join(f"{r:g}" for r in self.ratios)]
        for split in ("train", "val", "test"):
            items = getattr(self, split)
            per = {lab: sum(1 for im in items if im.source_label == lab) for lab in FINE_LABELS}
            lines.append(f"{split}={len(items)} " + " ".join(f"{k}:{v}" for k, v in per.items()))
        return "\n".join(lines) + "\n"


def _split_counts(n, ratios):
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    return n_train, n_val, n - n_train - n_val


def make_dataset(
    profiles: dict[str, ActivityProfile] | None = None,
    windows_per_class: int = 150,
    split_ratios=(0.7, 0.15, 0.15),
    seed: int = 0,
    rate_hz: int = 50,
    labels=FINE_LABELS,
) -> DatasetSplit:
    """Balanced per-class streams -> filter -> windows -> split -> standardise -> transforms."""
    ratios = tuple(float(r) for r in split_ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {split_ratios}")
    if windows_per_class < 1:
        raise ValueError("need at least one window per class")
    rng = np.random.default_rng(seed)
    raw = {"train": [], "val": [], "test": []}
    for label in labels:
        stream = generate_activity_stream(label, windows_per_class * WINDOW / rate_hz, rate_hz, seed, profiles)
        windows = preprocess_stream(stream)[:windows_per_class]
        order = rng.permutation(len(windows))
        n_train, n_val, _ = _split_counts(len(windows), ratios)
        raw["train"] += [windows[i] for i in order[:n_train]]
        raw["val"] += [windows[i] for i in order[n_train : n_train + n_val]]
        raw["test"] += [windows[i] for i in order[n_train + n_val :]]
    stats = ChannelStats.fit(raw["train"])
    std = {k: [standardize(w, stats) for w in v] for k, v in raw.items()}
    images = {k: [pseudoimage_set(w) for w in v] for k, v in std.items()}
    return DatasetSplit(images["train"], images["val"], images["test"], ratios, seed, stats, std)


# ---------------------------------------------------------------------------
# rate-aware source for the runtime


class SyntheticSource:
    """Generates consecutive 16-sample chunks following an activity schedule.

    ``schedule`` is a list of (label, window count). Each call to
    :meth:`next_window` produces the next window at the requested rate,
    continuing the activity's cycle phase across calls.
    """

    def __init__(self, schedule, seed: int = 0, profiles=None):
        self.schedule = [(lab, int(n)) for lab, n in schedule]
        for lab, _ in self.schedule:
            if lab not in FINE_LABELS:
                raise ValueError(f"unknown activity label {lab!r}")
        self.profiles = profiles or DEFAULT_PROFILES
        self.rng = np.random.default_rng(seed)
        self.t = 0.0
        self._labels = [lab for lab, n in self.schedule for _ in range(n)]
        self._pos = 0
        self._phase = None
        self._prev_label = None

    def __len__(self) -> int:
        return len(self._labels)

    def next_window(self, rate_hz: int) -> ImuStream | None:
        _check_rate(rate_hz)
        if self._pos >= len(self._labels):
            return None
        label = self._labels[self._pos]
        self._pos += 1
        if label != self._prev_label:
            self._phase = None
        values, self._phase = synth_samples(self.profiles[label], WINDOW, rate_hz, self.rng, phase0=self._phase)
        self._prev_label = label
        t = self.t + np.arange(WINDOW) / rate_hz
        self.t = float(t[-1]) + 1.0 / rate_hz
        return ImuStream(t, values, [label] * WINDOW)


def mixed_schedule(n_windows: int, seed: int = 0, mean_run: int = 12, labels=FINE_LABELS):
    """Random activity schedule with runs of geometric length."""
    rng = np.random.default_rng(seed)
    schedule, total = [], 0
    prev = None
    while total < n_windows:
        lab = prev
        while lab == prev:
            lab = labels[int(rng.integers(len(labels)))]
        run = min(int(rng.geometric(1.0 / mean_run)), n_windows - total)
        schedule.append((lab, run))
        total += run
        prev = lab
    return schedule


def write_manifest(split: DatasetSplit, path: str | Path) -> None:
    Path(path).write_text(split.manifest(), encoding="utf-8")


def override_profile(profiles: dict[str, ActivityProfile], label: str, **changes) -> dict[str, ActivityProfile]:
    out = dict(profiles)
    out[label] = replace(out[label], **changes)
    return out


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    """Pseudo-images, labels and standardization stats as a compressed npz."""
    arrays = {"seed": np.array(split.seed), "ratios": np.array(split.ratios), "mean": split.stats.mean, "std": split.stats.std}
    for name in ("train", "val", "test"):
        items = getattr(split, name)
        for b in ("fft", "wt", "gt"):
            arrays[f"{name}_{b}"] = np.stack([getattr(im, b) for im in items]) if items else np.zeros((0, WINDOW, 6))
        arrays[f"{name}_labels"] = np.array([im.source_label for im in items], dtype="U2")
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_dataset(path: str | Path) -> DatasetSplit:
    with np.load(path) as z:
        parts = {}
        for name in ("train", "val", "test"):
            labels = [str(v) for v in z[f"{name}_labels"]]
            for lab in labels:
                if lab not in FINE_LABELS:
                    raise ValueError(f"dataset file has unknown label {lab!r}")
            parts[name] = [
                PseudoImageSet(f, w, g, lab)
                for f, w, g, lab in zip(z[f"{name}_fft"], z[f"{name}_wt"], z[f"{name}_gt"], labels)
            ]
        return DatasetSplit(
            parts["train"],
            parts["val"],
            parts["test"],
            tuple(float(r) for r in z["ratios"]),
            int(z["seed"]),
            ChannelStats(z["mean"], z["std"]),
        )
