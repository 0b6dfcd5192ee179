"""IMU preprocessing and the three spectral pseudo-images.

Raw 6-axis streams are median filtered, cut into non-overlapping 16-sample
windows, z-scored with training-split statistics and turned into three
16x6 matrices (one column per channel):

* ``fft``  - two-sided magnitude of the 16-point DFT
* ``wt``   - full-depth orthonormal Haar coefficients, coarse to fine
* ``gt``   - Gabor magnitude at the window centre over 16 frequency bins
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .labels import CHANNELS, FINE_LABELS, coarse_of, label_rank

WINDOW = 16
N_CHANNELS = len(CHANNELS)
STD_FLOOR = 1e-6
GABOR_SIGMA = 4.0
GABOR_CENTER = (WINDOW - 1) / 2.0
CSV_HEADER = ("t",) + CHANNELS + ("label",)


@dataclass(frozen=True)
class ImuSample:
    t: float
    ax: float
    ay: float
    az: float
    gx: float
    gy: float
    gz: float
    label: str

    def values(self) -> tuple[float, ...]:
        return (self.ax, self.ay, self.az, self.gx, self.gy, self.gz)


@dataclass
class ImuStream:
    """Column-oriented stream: ``t`` (n,), ``values`` (n, 6), ``labels`` (n,)."""

    t: np.ndarray
    values: np.ndarray
    labels: list[str]

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, N_CHANNELS)
        if not (len(self.t) == len(self.values) == len(self.labels)):
            raise ValueError("stream columns have different lengths")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("stream contains non-finite channel values")
        for lab in set(self.labels):
            coarse_of(lab)

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuStream":
        if not samples:
            return cls(np.zeros(0), np.zeros((0, N_CHANNELS)), [])
        return cls(
            np.array([s.t for s in samples]),
            np.array([s.values() for s in samples]),
            [s.label for s in samples],
        )

    def to_samples(self) -> list[ImuSample]:
        return [
            ImuSample(float(t), *map(float, row), label=lab)
            for t, row, lab in zip(self.t, self.values, self.labels)
        ]

    def concat(self, other: "ImuStream") -> "ImuStream":
        return ImuStream(
            np.concatenate([self.t, other.t]),
            np.concatenate([self.values, other.values]),
            self.labels + other.labels,
        )


@dataclass
class SampleWindow:
    samples: np.ndarray  # (16, 6): rows are time steps, columns ax..gz
    label: str
    coarse: str = field(default="")

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.shape != (WINDOW, N_CHANNELS):
            raise ValueError(f"window must be {WINDOW}x{N_CHANNELS}, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("window contains non-finite values")
        expected = coarse_of(self.label)
        if not self.coarse:
            self.coarse = expected
        elif self.coarse != expected:
            raise ValueError(f"coarse label {self.coarse} does not match {self.label}")


@dataclass(frozen=True)
class PseudoImageSet:
    fft: np.ndarray
    wt: np.ndarray
    gt: np.ndarray
    source_label: str

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.fft, self.wt, self.gt


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, windows: Sequence[SampleWindow]) -> "ChannelStats":
        if not windows:
            raise ValueError("cannot compute channel statistics from zero windows")
        stacked = np.concatenate([w.samples for w in windows], axis=0)
        return cls(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), STD_FLOOR))

    @classmethod
    def identity(cls) -> "ChannelStats":
        return cls(np.zeros(N_CHANNELS), np.ones(N_CHANNELS))


# ---------------------------------------------------------------------------
# preprocessing


def median_filter3(series) -> np.ndarray:
    """3-point running median with replicate padding; output keeps the length.

    Works on a 1-D sequence or column-wise on an (n, c) array.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("median filter needs at least one sample")
    padded = np.concatenate([x[:1], x, x[-1:]], axis=0)
    stacked = np.stack([padded[:-2], padded[1:-1], padded[2:]], axis=0)
    return np.median(stacked, axis=0)


def majority_label(labels: Iterable[str]) -> str:
    counts = Counter(labels)
    if not counts:
        raise ValueError("no labels")
    # highest count wins; ties go to the earliest label in FINE_LABELS
    return min(counts, key=lambda lab: (-counts[lab], label_rank(lab)))


def segment_windows(stream: ImuStream | Sequence[ImuSample]) -> list[SampleWindow]:
    """Non-overlapping 16-sample windows; the trailing remainder is dropped."""
    if not isinstance(stream, ImuStream):
        stream = ImuStream.from_samples(list(stream))
    windows = []
    for i in range(len(stream) // WINDOW):
        sl = slice(i * WINDOW, (i + 1) * WINDOW)
        windows.append(SampleWindow(stream.values[sl].copy(), majority_label(stream.labels[sl])))
    return windows


def preprocess_stream(stream: ImuStream) -> list[SampleWindow]:
    """Median filter each channel over the whole stream, then segment."""
    if len(stream) == 0:
        return []
    filtered = ImuStream(stream.t, median_filter3(stream.values), stream.labels)
    return segment_windows(filtered)


def standardize(window: SampleWindow, stats: ChannelStats) -> SampleWindow:
    mean = np.asarray(stats.mean, dtype=np.float64)
    std = np.asarray(stats.std, dtype=np.float64)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
        raise ValueError("channel statistics must be finite")
    if np.any(std <= 0):
        raise ValueError("channel std must be positive")
    return SampleWindow((window.samples - mean) / std, window.label, window.coarse)


# ---------------------------------------------------------------------------
# transforms


def fft_spectrogram(window: SampleWindow | np.ndarray) -> np.ndarray:
    x = _as_matrix(window)
    return np.abs(np.fft.fft(x, axis=0))


def haar_dwt(x: np.ndarray) -> np.ndarray:
    """Full-depth orthonormal Haar DWT along axis 0.

    Output order is ``[a_J, d_J, d_{J-1}, ..., d_1]`` (coarsest first).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 1 or n & (n - 1):
        raise ValueError("Haar DWT length must be a power of two")
    approx = x
    details = []
    while approx.shape[0] > 1:
        even, odd = approx[0::2], approx[1::2]
        details.append((even - odd) / math.sqrt(2.0))
        approx = (even + odd) / math.sqrt(2.0)
    return np.concatenate([approx] + details[::-1], axis=0)


def haar_dwt_spectrogram(window: SampleWindow | np.ndarray) -> np.ndarray:
    return haar_dwt(_as_matrix(window))


def gabor_spectrogram(window: SampleWindow | np.ndarray, sigma: float = GABOR_SIGMA) -> np.ndarray:
    """|G(t_c, k/16)| for k = 0..15 with the Gaussian centred at t_c = 7.5."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = _as_matrix(window)
    kernel = gabor_kernel(sigma)
    return np.abs(kernel @ x)


def gabor_kernel(sigma: float = GABOR_SIGMA) -> np.ndarray:
    tau = np.arange(WINDOW, dtype=np.float64)
    freqs = np.arange(WINDOW, dtype=np.float64) / WINDOW
    envelope = np.exp(-math.pi * (tau - GABOR_CENTER) ** 2 / sigma**2)
    return envelope[None, :] * np.exp(-2j * math.pi * freqs[:, None] * tau[None, :])


def pseudoimage_set(window: SampleWindow, sigma: float = GABOR_SIGMA) -> PseudoImageSet:
    return PseudoImageSet(
        fft=fft_spectrogram(window),
        wt=haar_dwt_spectrogram(window),
        gt=gabor_spectrogram(window, sigma),
        source_label=window.label,
    )


def _as_matrix(window) -> np.ndarray:
    x = window.samples if isinstance(window, SampleWindow) else np.asarray(window, dtype=np.float64)
    if x.shape != (WINDOW, N_CHANNELS):
        raise ValueError(f"expected a {WINDOW}x{N_CHANNELS} window, got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# CSV stream files


def write_stream_csv(stream: ImuStream, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t, row, lab in zip(stream.t, stream.values, stream.labels):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [lab])


def read_stream_csv(path: str | Path) -> ImuStream:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        t, vals, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
            if row[-1] not in FINE_LABELS:
                raise ValueError(f"{path}:{lineno}: unknown label {row[-1]!r}")
            t.append(float(row[0]))
            vals.append([float(v) for v in row[1:7]])
            labels.append(row[-1])
    return ImuStream(np.array(t), np.array(vals).reshape(-1, N_CHANNELS), labels)
