"""Experiment configuration: one JSON document with typed sections.

Unknown keys are rejected with their dotted location; ``--set a.b=c``
overrides are parsed as JSON when possible and as plain strings otherwise.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .datagen import DatasetConfig
from .grasp import GraspConfig
from .trajectory import ALL_PATTERNS, Pattern, TrajectorySpec
from .unet import TrainConfig, UNetConfig

SEED_ENV = "RECONLAB_SEED"

DEFAULT_SNR_DB = (20.0, 17.0, 15.2, 14.0, 13.0, 12.2, 11.5, 11.0, 10.5, 10.0)
DEFAULT_ACCEL = (10, 11, 12, 13, 14, 15, 16)
DEFAULT_SHIFTS = (-12, -8, -4, 0, 4, 8, 12)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class DatasetSection:
    n_train: int = 24
    n_test: int = 8
    source_matrix: int = 120
    matrix: int = 96
    crop: int = 64
    frames: int = 20
    rr_range: tuple[float, float] = (600.0, 1200.0)
    n_structures: int = 6
    ncoils: int = 1
    crop_shift: tuple[int, int] = (0, 0)
    keep_radial_test: bool = True
    patterns: tuple[str, ...] = ()  # empty -> only trajectory.pattern; ["all"] -> four

    def __post_init__(self):
        names = tuple(n if n.lower() == "all" else Pattern(n).value for n in self.patterns)
        object.__setattr__(self, "patterns", names)

    def build(self, keep_radial: bool = False) -> DatasetConfig:
        return DatasetConfig(
            source_matrix=self.source_matrix, matrix=self.matrix, crop=self.crop,
            frames=self.frames, rr_range=tuple(self.rr_range), n_structures=self.n_structures,
            ncoils=self.ncoils, crop_shift=tuple(self.crop_shift), keep_radial=keep_radial)


@dataclass(frozen=True)
class TrajectorySection:
    pattern: str = "TGA_ROT"
    spokes_per_frame: int = 14
    full_spokes: int = 182
    readout_len: int = 96
    tga_index: int = 7
    phase_offset: float = 0.0
    readout_oversampling: int = 2

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern(self.pattern).value)

    def build(self, pattern: str | Pattern | None = None) -> TrajectorySpec:
        d = dataclasses.asdict(self)
        if pattern is not None:
            d["pattern"] = pattern
        return TrajectorySpec(**d)


@dataclass(frozen=True)
class UNetSection:
    levels: int = 2
    base_channels: int = 16
    convs_per_level: int = 2
    kernel: tuple[int, int, int] = (3, 3, 3)
    temporal_pool: bool = True
    mode: str = "3d"

    def __post_init__(self):
        object.__setattr__(self, "mode", self.mode.lower())

    def build(self, frames: int) -> UNetConfig:
        cfg = UNetConfig(levels=self.levels, base_channels=self.base_channels,
                         convs_per_level=self.convs_per_level, kernel=tuple(self.kernel),
                         temporal_pool=self.temporal_pool, frames=frames)
        return UNetConfig.flat2d(cfg) if self.mode == "2d" else cfg


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 40
    batch: int = 2
    lr: float = 1e-3
    loss: str = "L2"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "loss", self.loss.upper())

    def build(self, seed: int) -> TrainConfig:
        return TrainConfig(**dataclasses.asdict(self), seed=seed)


@dataclass(frozen=True)
class GraspSection:
    lam: float = 0.025
    admm_iters: int = 50
    rho: float = 1.0
    cg_iters: int = 10
    cg_tol: float = 1e-6
    circular: bool = True
    coil_radius: float = 0.05

    def build(self) -> GraspConfig:
        d = dataclasses.asdict(self)
        d.pop("coil_radius")
        return GraspConfig(**d)


@dataclass(frozen=True)
class MetricsSection:
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    edge_degree: int = 10
    profile_length: int = 15
    n_profiles: int = 6


@dataclass(frozen=True)
class SweepsSection:
    snr_db: tuple[float, ...] = DEFAULT_SNR_DB
    snr_reference: str = "rms"
    accel: tuple[float, ...] = DEFAULT_ACCEL
    crop_shifts: tuple[int, ...] = DEFAULT_SHIFTS


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    trajectory: TrajectorySection = field(default_factory=TrajectorySection)
    unet: UNetSection = field(default_factory=UNetSection)
    train: TrainSection = field(default_factory=TrainSection)
    grasp: GraspSection = field(default_factory=GraspSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    sweeps: SweepsSection = field(default_factory=SweepsSection)
    output_dir: str = "runs/desk"
    seed: int = 0

    def patterns(self) -> list[Pattern]:
        names = self.dataset.patterns or (self.trajectory.pattern,)
        if any(str(n).lower() == "all" for n in names):
            return list(ALL_PATTERNS)
        return [Pattern(n) for n in names]

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def semantic_hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring where outputs are written."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _coerce(tp, value, where: str):
    """Check/convert a JSON value against a (simple) annotation."""
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        last = None
        for arg in typing.get_args(tp):
            try:
                return _coerce(arg, value, where)
            except ConfigError as exc:
                last = exc
        raise last
    if tp is type(None):
        if value is None:
            return None
        raise ConfigError(f"{where}: expected null")
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    raise ConfigError(f"{where}: unsupported field type {tp!r}")  # pragma: no cover


def _build(cls, data, where: str):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            loc = f"{where}.{key}" if where else key
            raise ConfigError(f"{loc}: unknown key (allowed: {', '.join(sorted(names))})")
    kw = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            loc = f"{where}.{f.name}" if where else f.name
            kw[f.name] = _coerce(hints[f.name], data[f.name], loc)
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _validate(cfg: ExperimentConfig) -> None:
    try:
        cfg.patterns()
        cfg.trajectory.build()
        cfg.unet.build(cfg.dataset.frames)
        cfg.train.build(cfg.seed)
        cfg.grasp.build()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.unet.mode not in ("2d", "3d"):
        raise ConfigError(f"unet.mode: expected '2d' or '3d', got {cfg.unet.mode!r}")
    if cfg.dataset.n_train < 1 or cfg.dataset.n_test < 1:
        raise ConfigError("dataset.n_train and dataset.n_test must be >= 1")
    if cfg.dataset.crop > cfg.dataset.matrix:
        raise ConfigError("dataset.crop larger than dataset.matrix")
    if cfg.sweeps.snr_reference not in ("rms", "peak"):
        raise ConfigError("sweeps.snr_reference must be 'rms' or 'peak'")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"--set: empty key in {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    data = json.loads(json.dumps(data))
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for p in path[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"--set {'.'.join(path)}: {p} is not a section")
            node = nxt
        node[path[-1]] = value
    return data


def load_config(path: str | Path | None = None, overrides: list[str] | None = None,
                env: dict | None = None) -> ExperimentConfig:
    """Read JSON (or defaults), apply ``--set`` overrides, then ``RECONLAB_SEED``."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    data = apply_overrides(data, overrides or [])
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            data["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    cfg = _build(ExperimentConfig, data, "")
    _validate(cfg)
    return cfg
