"""Run configuration: JSON loading, validation, defaults, serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .datagen import PartitionScheme
from .errors import ConfigError

ALGORITHMS = ("proposed", "fedavg", "local", "fedprox")
GRADIENT_ESTIMATES = ("descent_normalized", "raw_delta")
BASELINE_SCHEDULERS = ("channel_aware", "random")


@dataclass
class DataConfig:
    num_classes: int = 6
    input_dims: tuple[int, ...] = (16, 24)
    noise_std: float = 1.0
    mean_separation: float = 3.0
    samples_per_device: int = 300
    train_fraction: float = 0.8


@dataclass
class ArchConfig:
    encoder_hidden: int = 16
    feature_len: int = 8
    classifier_hidden: tuple[int, ...] = (16,)


@dataclass
class LinkConfig:
    bandwidth_hz: float = 1e6
    noise_density: float = 1e-17
    device_power_w: float = 0.1
    server_power_w: float = 1.0
    carrier_ghz: float = 2.6
    cell_radius_m: float = 50.0


@dataclass
class ComputeConfig:
    cycles_per_s: float = 1e8
    flops_per_cycle: float = 2.0
    heterogeneity: float = 1.0  # slowest device is this many times slower


@dataclass
class RunConfig:
    seed: int = 0
    rounds: int = 50
    num_devices: int = 9
    num_modalities: int = 2
    modality_profile: list[tuple[int, int]] | None = None
    partition: str = "noniid1"
    algorithm: str = "proposed"
    fedprox_mu: float = 0.01
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    compute: ComputeConfig = field(default_factory=ComputeConfig)
    lr: float = 2e-4
    coeff_lr: float = 0.01
    local_iters: int = 5
    batch_size: int = 32
    quota: int | None = None            # None -> ceil(K / 3)
    staleness_threshold: int = 10
    metric: str = "ratio"
    alpha: float = 0.0
    gradient_estimate: str = "descent_normalized"
    baseline_scheduler: str = "channel_aware"
    record_coefficients: bool = False
    record_gains: bool = False
    out_dir: str | None = None

    def effective_quota(self) -> int:
        if self.quota is None:
            return max(1, -(-self.num_devices // 3))
        return self.quota


_NESTED = {"data": DataConfig, "arch": ArchConfig, "link": LinkConfig, "compute": ComputeConfig}
_TUPLE_FIELDS = {"input_dims", "classifier_hidden"}


def _build(cls, payload: dict, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key {where}{unknown[0]}")
    kwargs = {}
    for name, value in payload.items():
        sub = _NESTED.get(name)
        if cls is RunConfig and sub is not None:
            kwargs[name] = _build(sub, value, name)
        elif name in _TUPLE_FIELDS and value is not None:
            kwargs[name] = tuple(value)
        elif name == "modality_profile" and value is not None:
            kwargs[name] = [tuple(int(v) for v in pair) for pair in value]
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(payload: dict[str, Any]) -> RunConfig:
    cfg = _build(RunConfig, payload, "")
    validate_config(cfg)
    return cfg


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: RunConfig) -> None:
    _require(cfg.rounds >= 0, "rounds: must be >= 0")
    _require(cfg.num_devices >= 1, "num_devices: must be >= 1")
    _require(cfg.num_modalities >= 1, "num_modalities: must be >= 1")
    _require(cfg.algorithm in ALGORITHMS, f"algorithm: must be one of {ALGORITHMS}")
    _require(cfg.fedprox_mu >= 0, "fedprox_mu: must be >= 0")
    try:
        scheme = PartitionScheme(cfg.partition)
    except ValueError:
        raise ConfigError(f"partition: unknown scheme {cfg.partition!r}") from None
    _require(cfg.data.num_classes >= 2, "data.num_classes: must be >= 2")
    if scheme is PartitionScheme.NONIID1:
        _require(cfg.data.num_classes >= 3, "data.num_classes: noniid1 needs >= 3 classes")
    _require(len(cfg.data.input_dims) == cfg.num_modalities,
             "data.input_dims: needs one entry per modality")
    _require(all(d >= 1 for d in cfg.data.input_dims), "data.input_dims: all dims >= 1")
    _require(cfg.data.noise_std > 0, "data.noise_std: must be positive")
    _require(cfg.data.mean_separation > 0, "data.mean_separation: must be positive")
    _require(cfg.data.samples_per_device >= 2, "data.samples_per_device: must be >= 2")
    _require(0.0 < cfg.data.train_fraction < 1.0, "data.train_fraction: must lie in (0, 1)")
    _require(cfg.arch.encoder_hidden >= 1 and cfg.arch.feature_len >= 1,
             "arch: encoder_hidden and feature_len must be >= 1")
    _require(all(h >= 1 for h in cfg.arch.classifier_hidden),
             "arch.classifier_hidden: all sizes >= 1")
    _require(cfg.lr > 0, "lr: must be positive")
    _require(cfg.coeff_lr >= 0, "coeff_lr: must be >= 0")
    _require(cfg.local_iters >= 1, "local_iters: must be >= 1")
    _require(cfg.batch_size >= 1, "batch_size: must be >= 1")
    if cfg.quota is not None:
        _require(1 <= cfg.quota <= cfg.num_devices,
                 f"quota: must lie in 1..{cfg.num_devices}")
    _require(cfg.staleness_threshold >= 1, "staleness_threshold: must be >= 1")
    _require(cfg.metric in ("ratio", "linear"), "metric: must be 'ratio' or 'linear'")
    _require(cfg.alpha >= 0, "alpha: must be >= 0")
    _require(cfg.gradient_estimate in GRADIENT_ESTIMATES,
             f"gradient_estimate: must be one of {GRADIENT_ESTIMATES}")
    _require(cfg.baseline_scheduler in BASELINE_SCHEDULERS,
             f"baseline_scheduler: must be one of {BASELINE_SCHEDULERS}")
    for name, value in (("bandwidth_hz", cfg.link.bandwidth_hz),
                        ("noise_density", cfg.link.noise_density),
                        ("device_power_w", cfg.link.device_power_w),
                        ("server_power_w", cfg.link.server_power_w),
                        ("carrier_ghz", cfg.link.carrier_ghz),
                        ("cell_radius_m", cfg.link.cell_radius_m)):
        _require(value > 0, f"link.{name}: must be positive")
    _require(cfg.compute.cycles_per_s > 0, "compute.cycles_per_s: must be positive")
    _require(cfg.compute.flops_per_cycle > 0, "compute.flops_per_cycle: must be positive")
    _require(cfg.compute.heterogeneity >= 1.0, "compute.heterogeneity: must be >= 1")
    if cfg.modality_profile is not None:
        total = sum(c for c, _ in cfg.modality_profile)
        _require(total == cfg.num_devices,
                 f"modality_profile: group sizes sum to {total}, expected {cfg.num_devices}")
        _require(all(1 <= s <= cfg.num_modalities for _, s in cfg.modality_profile),
                 "modality_profile: modality counts must lie in 1..num_modalities")


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    def as_plain(obj):
        if isinstance(obj, tuple):
            return list(obj)
        if isinstance(obj, list):
            return [as_plain(v) for v in obj]
        return obj

    out: dict[str, Any] = {}
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name in _NESTED:
            out[f.name] = {sf.name: as_plain(getattr(value, sf.name))
                           for sf in fields(type(value))}
        else:
            out[f.name] = as_plain(value)
    return out


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON config file; unknown keys are rejected."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(payload)
