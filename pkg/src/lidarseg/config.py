"""Flat text configuration: "section.key = value" lines into typed configs.

One file drives the whole experiment pipeline. The format is deliberately
plain: one assignment per line, # comments, no nesting, no quoting. Every
key is checked against the known table so typos fail loudly instead of
silently falling back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .geometry import SensorModel
from .network import NetworkConfig
from .samples import CropParams
from .segmentation import SegmentationParams
from .synth import CorpusSpec
from .training import TrainSchedule

_DEFAULT_SUBSETS = (100, 400, 1600, "all")


def parse_flat_config(text: str) -> dict[str, dict[str, str]]:
    """Raw section -> key -> value strings, before any typing."""
    out: dict[str, dict[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        lhs, value = line.split("=", 1)
        lhs = lhs.strip()
        if "." not in lhs:
            raise ConfigError(f"line {lineno}: key {lhs!r} missing its section prefix")
        section, key = lhs.split(".", 1)
        section, key = section.strip(), key.strip()
        if not section or not key:
            raise ConfigError(f"line {lineno}: empty section or key in {line!r}")
        sect = out.setdefault(section, {})
        if key in sect:
            raise ConfigError(f"line {lineno}: duplicate key {section}.{key}")
        sect[key] = value.strip()
    return out


def _as_int(section: str, key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {value!r} is not an integer") from exc


def _as_float(section: str, key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {value!r} is not a number") from exc


def _as_bool(section: str, key: str, value: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"{section}.{key}: {value!r} is not a boolean")


def _as_int_tuple(section: str, key: str, value: str) -> tuple[int, ...]:
    return tuple(_as_int(section, key, part.strip()) for part in value.split(",") if part.strip())


def _as_mix(section: str, key: str, value: str):
    pairs = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"{section}.{key}: expected name:weight, got {part!r}")
        name, weight = part.split(":", 1)
        pairs.append((name.strip(), _as_float(section, key, weight.strip())))
    if not pairs:
        raise ConfigError(f"{section}.{key}: empty class mix")
    return tuple(pairs)


def _as_subsets(section: str, key: str, value: str):
    out = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        if part.lower() == "all":
            out.append("all")
        else:
            size = _as_int(section, key, part)
            if size <= 0:
                raise ConfigError(f"{section}.{key}: subset sizes must be positive")
            out.append(size)
    if not out:
        raise ConfigError(f"{section}.{key}: no subset sizes given")
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything cmd_experiment needs, with desk-scale defaults."""

    train_frames: int = 200
    test_frames: int = 100
    train_seed: int = 100
    test_seed: int = 900
    noise_std: float = 0.03
    intensity_noise_std: float = 0.02
    class_mix: tuple = CorpusSpec().class_mix
    n_objects_min: int = 6
    n_objects_max: int = 12
    ground_z: float = -1.8
    sensor: SensorModel = field(default_factory=SensorModel)
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    crop: CropParams = field(default_factory=CropParams)
    conv_channels: tuple[int, ...] = (32, 32, 64)
    fc_width: int = 128
    kernel_size: int = 3
    pretrain_schedule: TrainSchedule = field(default_factory=TrainSchedule)
    finetune_schedule: TrainSchedule = field(default_factory=TrainSchedule)
    subset_sizes: tuple = _DEFAULT_SUBSETS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    run_free: bool = True
    run_frozen: bool = True
    select_on: str = "test"  # checkpoint selection: "test" or "holdout"
    pretrain_holdout_frac: float = 0.1

    def __post_init__(self):
        if self.train_frames <= 0 or self.test_frames <= 0:
            raise ConfigError("corpus frame counts must be positive")
        if not self.seeds:
            raise ConfigError("experiment needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("experiment seeds must be distinct")
        if not self.subset_sizes:
            raise ConfigError("experiment needs at least one subset size")
        if self.select_on not in ("test", "holdout"):
            raise ConfigError("select_on must be 'test' or 'holdout'")
        if not (self.run_free or self.run_frozen):
            raise ConfigError("at least one fine-tune mode must be enabled")
        # surface nested-config errors at load time, not mid-experiment
        self.corpus_spec(train=True)
        self.network_config(n_classes=5)

    def corpus_spec(self, train: bool) -> CorpusSpec:
        return CorpusSpec(
            n_frames=self.train_frames if train else self.test_frames,
            class_mix=self.class_mix,
            sensor=self.sensor,
            noise_std=self.noise_std,
            intensity_noise_std=self.intensity_noise_std,
            seed=self.train_seed if train else self.test_seed,
            n_objects_min=self.n_objects_min,
            n_objects_max=self.n_objects_max,
            ground_z=self.ground_z,
        )

    def network_config(self, n_classes: int) -> NetworkConfig:
        return NetworkConfig(
            input_size=self.crop.out_size,
            conv_channels=self.conv_channels,
            fc_width=self.fc_width,
            n_classes=n_classes,
            kernel_size=self.kernel_size,
        )


def _build_schedule(section: str, sect: dict[str, str], base: TrainSchedule) -> TrainSchedule:
    known = {
        "batch_size": ("batch_size", _as_int),
        "lr": ("lr", _as_float),
        "checkpoint_every": ("checkpoint_every", _as_int),
        "loss_stop": ("loss_stop", _as_float),
        "max_iterations": ("max_iterations", _as_int),
        "shuffle_seed": ("shuffle_seed", _as_int),
    }
    kwargs = {}
    for key, value in sect.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        name, conv = known[key]
        kwargs[name] = conv(section, key, value)
    try:
        from dataclasses import replace

        return replace(base, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_text(text: str) -> ExperimentConfig:
    raw = parse_flat_config(text)
    kwargs: dict = {}

    corpus_keys = {
        "train_frames": ("train_frames", _as_int),
        "test_frames": ("test_frames", _as_int),
        "train_seed": ("train_seed", _as_int),
        "test_seed": ("test_seed", _as_int),
        "noise_std": ("noise_std", _as_float),
        "intensity_noise_std": ("intensity_noise_std", _as_float),
        "class_mix": ("class_mix", _as_mix),
        "n_objects_min": ("n_objects_min", _as_int),
        "n_objects_max": ("n_objects_max", _as_int),
        "ground_z": ("ground_z", _as_float),
    }
    for key, value in raw.pop("corpus", {}).items():
        if key not in corpus_keys:
            raise ConfigError(f"unknown key corpus.{key}")
        name, conv = corpus_keys[key]
        kwargs[name] = conv("corpus", key, value)

    sensor_keys = {
        "rows": ("n_rows", _as_int),
        "cols": ("n_cols", _as_int),
        "elev_min_deg": ("elev_min_deg", _as_float),
        "elev_max_deg": ("elev_max_deg", _as_float),
        "max_range": ("max_range", _as_float),
    }
    sect = raw.pop("sensor", {})
    if sect:
        skw = {}
        for key, value in sect.items():
            if key not in sensor_keys:
                raise ConfigError(f"unknown key sensor.{key}")
            name, conv = sensor_keys[key]
            skw[name] = conv("sensor", key, value)
        try:
            kwargs["sensor"] = SensorModel(**skw)
        except ValueError as exc:
            raise ConfigError(f"sensor: {exc}") from exc

    seg_keys = {
        "range_diff_threshold": ("range_diff_threshold", _as_float),
        "min_segment_cells": ("min_segment_cells", _as_int),
        "ground_removal": ("ground_removal", _as_bool),
        "ground_z_threshold": ("ground_z_threshold", _as_float),
    }
    sect = raw.pop("segmentation", {})
    if sect:
        gkw = {}
        for key, value in sect.items():
            if key not in seg_keys:
                raise ConfigError(f"unknown key segmentation.{key}")
            name, conv = seg_keys[key]
            gkw[name] = conv("segmentation", key, value)
        try:
            kwargs["segmentation"] = SegmentationParams(**gkw)
        except ValueError as exc:
            raise ConfigError(f"segmentation: {exc}") from exc

    crop_keys = {
        "window_rows": ("window_rows", _as_int),
        "window_cols": ("window_cols", _as_int),
        "out_size": ("out_size", _as_int),
        "range_norm_max": ("range_norm_max", _as_float),
        "height_norm_min": ("height_norm_min", _as_float),
        "height_norm_max": ("height_norm_max", _as_float),
    }
    sect = raw.pop("crop", {})
    if sect:
        ckw = {}
        for key, value in sect.items():
            if key not in crop_keys:
                raise ConfigError(f"unknown key crop.{key}")
            name, conv = crop_keys[key]
            ckw[name] = conv("crop", key, value)
        try:
            kwargs["crop"] = CropParams(**ckw)
        except ValueError as exc:
            raise ConfigError(f"crop: {exc}") from exc

    net_keys = {
        "conv_channels": ("conv_channels", _as_int_tuple),
        "fc_width": ("fc_width", _as_int),
        "kernel_size": ("kernel_size", _as_int),
    }
    for key, value in raw.pop("network", {}).items():
        if key not in net_keys:
            raise ConfigError(f"unknown key network.{key}")
        name, conv = net_keys[key]
        kwargs[name] = conv("network", key, value)

    base = TrainSchedule()
    sect = raw.pop("pretrain", {})
    if sect:
        kwargs["pretrain_schedule"] = _build_schedule("pretrain", sect, base)
    sect = raw.pop("finetune", {})
    if sect:
        kwargs["finetune_schedule"] = _build_schedule("finetune", sect, base)

    exp_keys = {
        "subsets": ("subset_sizes", _as_subsets),
        "seeds": ("seeds", _as_int_tuple),
        "free": ("run_free", _as_bool),
        "frozen": ("run_frozen", _as_bool),
        "select_on": ("select_on", lambda s, k, v: v),
        "holdout_frac": ("pretrain_holdout_frac", _as_float),
    }
    for key, value in raw.pop("experiment", {}).items():
        if key not in exp_keys:
            raise ConfigError(f"unknown key experiment.{key}")
        name, conv = exp_keys[key]
        kwargs[name] = conv("experiment", key, value)

    if raw:
        raise ConfigError(f"unknown config section {sorted(raw)[0]!r}")
    try:
        return ExperimentConfig(**kwargs)
    except (ValueError, ConfigError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: config file not found") from exc
    return config_from_text(text)
