"""Two-stage inference: coarse dispatch, module residency and adaptive sampling rate."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import ChannelStats, ImuStream, preprocess_stream, pseudoimage_set, standardize
from .graph import stack_feeds
from .labels import COARSE_LABELS

ASRA_RATES = {"A": 50, "B": 10, "C": 25}
FIRST, PLMN, STATIONARY = "first_layer", "plmn", "stationary"
SECOND_STAGE = {"A": PLMN, "B": STATIONARY}


def asra_rate(coarse: str) -> int:
    """Sampling rate requested after a window of the given coarse group."""
    try:
        return ASRA_RATES[coarse]
    except KeyError:
        raise ValueError(f"unknown coarse label {coarse!r}") from None


@dataclass
class Models:
    """The three modules plus per-module invocation counters."""

    first_layer: object
    plmn: object
    stationary: object
    calls: Counter = field(default_factory=Counter)

    def run(self, module: str, images) -> np.ndarray:
        model = getattr(self, module)
        self.calls[module] += 1
        probs = np.asarray(model.predict_proba(stack_feeds([images], model.inputs)))
        if probs.shape != (1, len(model.class_labels)):
            raise ValueError(f"{module} returned shape {probs.shape}, expected (1, {len(model.class_labels)})")
        return probs[0]


@dataclass
class Dispatch:
    fine: str
    coarse: str
    coarse_probs: np.ndarray
    fine_probs: np.ndarray | None


def dispatch_window(images, models: Models) -> Dispatch:
    """First layer on the FFT image, then at most one second-stage model.

    A goes to PLMN (all three images), B to the stationary classifier (FFT
    image), C is final as C1.
    """
    cp = models.run(FIRST, images)
    coarse = models.first_layer.class_labels[int(np.argmax(cp))]
    if coarse not in COARSE_LABELS:
        raise ValueError(f"first layer produced unknown coarse label {coarse!r}")
    module = SECOND_STAGE.get(coarse)
    if module is None:
        return Dispatch("C1", coarse, cp, None)
    fp = models.run(module, images)
    return Dispatch(getattr(models, module).class_labels[int(np.argmax(fp))], coarse, cp, fp)


# ---------------------------------------------------------------------------
# residency


@dataclass
class ResidencyState:
    resident: set = field(default_factory=lambda: {FIRST})
    peak_ram_kib: float = 0.0
    events: list = field(default_factory=list)  # ("load" | "unload", module)

    def ram(self, ram_table) -> float:
        return float(sum(ram_table[m] for m in self.resident))


def residency_step(state: ResidencyState, coarse: str, ram_table) -> ResidencyState:
    """Make the module for ``coarse`` resident, unloading the other one first.

    C needs no second stage, so whichever one is loaded is released.
    """
    if coarse not in COARSE_LABELS:
        raise ValueError(f"unknown coarse label {coarse!r}")
    want = SECOND_STAGE.get(coarse)
    for module in (PLMN, STATIONARY):
        if module != want and module in state.resident:
            state.resident.remove(module)
            state.events.append(("unload", module))
    if want is not None and want not in state.resident:
        state.resident.add(want)
        state.events.append(("load", want))
    if PLMN in state.resident and STATIONARY in state.resident:
        raise AssertionError("PLMN and Stationary resident together")
    state.peak_ram_kib = max(state.peak_ram_kib, state.ram(ram_table))
    return state


# ---------------------------------------------------------------------------
# streaming


@dataclass
class StreamEvent:
    window: int
    coarse: str
    fine: str
    rate_hz: int
    resident_ram_kib: float
    true_label: str = ""
    resident: tuple = ()


def stream_run(source, models: Models, stats: ChannelStats, ram_table, max_windows: int | None = None, initial_rate: int = 50):
    """Frontend -> dispatch -> ASRA for each window of ``source``.

    ``source`` is either an object with ``next_window(rate_hz)`` returning an
    ``ImuStream`` chunk (None when exhausted) or an ``ImuStream``. The rate
    decided on one window is applied to the next. Returns (events, state).
    """
    state = ResidencyState()
    events: list[StreamEvent] = []
    rate = initial_rate
    chunks = _fixed_chunks(source) if isinstance(source, ImuStream) else None
    i = 0
    while max_windows is None or i < max_windows:
        chunk = next(chunks, None) if chunks is not None else source.next_window(rate)
        if chunk is None:
            break
        for window in preprocess_stream(chunk):
            images = pseudoimage_set(standardize(window, stats))
            d = dispatch_window(images, models)
            residency_step(state, d.coarse, ram_table)
            rate = asra_rate(d.coarse)
            events.append(
                StreamEvent(i, d.coarse, d.fine, rate, state.ram(ram_table), window.label, tuple(sorted(state.resident)))
            )
            i += 1
    return events, state


def _fixed_chunks(stream: ImuStream):
    # a recorded stream cannot be resampled; it is consumed as-is
    yield stream


def branch_fraction(events) -> float:
    """Empirical share of A among windows routed to a second stage."""
    ab = [e for e in events if e.coarse in SECOND_STAGE]
    return sum(e.coarse == "A" for e in ab) / len(ab) if ab else 0.0


def mean_resident_ram(events, coarse=("A", "B")) -> float:
    sel = [e.resident_ram_kib for e in events if e.coarse in coarse]
    return float(np.mean(sel)) if sel else 0.0


def co_resident(events) -> bool:
    return any(PLMN in e.resident and STATIONARY in e.resident for e in events)


def write_events_csv(events, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "coarse", "fine", "rate_hz", "resident_ram_kib"])
        for e in events:
            w.writerow([e.window, e.coarse, e.fine, e.rate_hz, f"{e.resident_ram_kib:.3f}"])
