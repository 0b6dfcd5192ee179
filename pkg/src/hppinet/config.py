"""Line-oriented ``key=value`` run configuration.

Blank lines and ``#`` comments are ignored. Besides the scalar fields of
:class:`RunConfig`, two key families are accepted:

* ``profile.<LABEL>.<field>=value`` overrides one synthetic activity profile
  field (tuples as comma-separated numbers)
* ``metrics.<module>.<acc|ram|rom|macc>=value`` injects module metrics for
  the resource report (module: first_layer, plmn, stationary)
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .labels import FINE_LABELS
from .synth import DEFAULT_PROFILES, ActivityProfile, override_profile

METRIC_MODULES = ("first_layer", "plmn", "stationary")
METRIC_FIELDS = ("acc", "ram", "rom", "macc")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    windows_per_class: int = 150
    rate_hz: int = 50
    split: tuple = (0.7, 0.15, 0.15)
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 8
    p: float = 0.5
    stream_windows: int = 1000
    stream_seed: int = 0
    mean_run: int = 12
    explain_epochs: int = 300
    profile_overrides: dict = field(default_factory=dict)  # label -> {field: value}
    metrics: dict = field(default_factory=dict)  # module -> {field: value}

    def profiles(self) -> dict[str, ActivityProfile]:
        profiles = dict(DEFAULT_PROFILES)
        for label, changes in self.profile_overrides.items():
            profiles = override_profile(profiles, label, **changes)
        return profiles

    def train_config(self):
        from .train import TrainConfig

        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.patience,
            seed=self.seed,
        )


_SCALARS = {f.name: f for f in fields(RunConfig) if f.name not in ("profile_overrides", "metrics")}
_PROFILE_FIELDS = {f.name: f for f in fields(ActivityProfile)}


def _number(text: str, key: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def _convert(key: str, text: str, default):
    if isinstance(default, tuple):
        return tuple(float(_number(t.strip(), key)) for t in text.split(","))
    value = _number(text, key)
    if isinstance(default, int) and not isinstance(value, int):
        raise ConfigError(f"{key}: expected an integer, got {text!r}")
    return type(default)(value)


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _SCALARS:
            setattr(cfg, key, _convert(key, value, getattr(RunConfig(), key)))
        elif key.startswith("profile."):
            parts = key.split(".")
            if len(parts) != 3 or parts[1] not in FINE_LABELS or parts[2] not in _PROFILE_FIELDS:
                raise ConfigError(f"line {lineno}: unknown profile key {key!r}")
            default = getattr(DEFAULT_PROFILES[parts[1]], parts[2])
            cfg.profile_overrides.setdefault(parts[1], {})[parts[2]] = _convert(key, value, default)
        elif key.startswith("metrics."):
            parts = key.split(".")
            if len(parts) != 3 or parts[1] not in METRIC_MODULES or parts[2] not in METRIC_FIELDS:
                raise ConfigError(f"line {lineno}: unknown metrics key {key!r}")
            cfg.metrics.setdefault(parts[1], {})[parts[2]] = _number(value, key)
        else:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
    if cfg.metrics and any(set(cfg.metrics.get(m, {})) != set(METRIC_FIELDS) for m in METRIC_MODULES):
        raise ConfigError("metrics.* must give acc, ram, rom and macc for all three modules")
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))
