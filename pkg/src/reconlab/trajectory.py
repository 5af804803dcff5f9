"""Radial spoke angle tables for the four sampling patterns."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


class Pattern(str, enum.Enum):
    REG_NO_ROT = "REG_NO_ROT"
    REG_ROT = "REG_ROT"
    TGA_NO_ROT = "TGA_NO_ROT"
    TGA_ROT = "TGA_ROT"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            return cls.__members__.get(value.strip().upper())
        return None

    @property
    def rotating(self) -> bool:
        return self in (Pattern.REG_ROT, Pattern.TGA_ROT)


ALL_PATTERNS = tuple(Pattern)


def tiny_golden_angle(order: int) -> float:
    """Tiny golden angle ``180 / (tau + N - 1)`` in degrees; ``order=1`` is 111.246."""
    if order < 1:
        raise ValueError(f"tiny golden angle order must be >= 1, got {order}")
    return 180.0 / (GOLDEN_RATIO + order - 1)


@dataclass(frozen=True)
class TrajectorySpec:
    pattern: Pattern = Pattern.TGA_ROT
    spokes_per_frame: int = 14
    full_spokes: int = 182
    readout_len: int = 192
    tga_index: int = 7
    phase_offset: float = 0.0
    readout_oversampling: int = 1

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if self.spokes_per_frame < 1:
            raise ValueError("spokes_per_frame must be >= 1")
        if self.full_spokes < self.spokes_per_frame:
            raise ValueError("full_spokes must be >= spokes_per_frame")
        if self.readout_len < 2:
            raise ValueError("readout_len must be >= 2")
        if self.tga_index < 1:
            raise ValueError("tga_index must be >= 1")
        if self.readout_oversampling not in (1, 2):
            raise ValueError("readout_oversampling must be 1 or 2")

    @property
    def acceleration(self) -> float:
        return self.full_spokes / self.spokes_per_frame

    @property
    def samples_per_spoke(self) -> int:
        return self.readout_len * self.readout_oversampling

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pattern"] = self.pattern.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        return cls(**d)

    def with_acceleration(self, accel: float) -> "TrajectorySpec":
        """Same pattern with ``round(full_spokes / accel)`` spokes per frame."""
        spokes = max(1, int(round(self.full_spokes / accel)))
        return TrajectorySpec(**{**asdict(self), "spokes_per_frame": spokes})


@dataclass(frozen=True)
class SpokeSet:
    angles: np.ndarray  # degrees, (S,)
    kx: np.ndarray  # cycles/pixel, (S, L)
    ky: np.ndarray

    @property
    def radius(self) -> np.ndarray:
        return np.hypot(self.kx, self.ky)

    @property
    def n_samples(self) -> int:
        return self.kx.size


def _wrap180(a: np.ndarray) -> np.ndarray:
    a = np.mod(a, 180.0)
    a[a >= 180.0] = 0.0
    return a


def spoke_angles(spec: TrajectorySpec, frame_index: int) -> np.ndarray:
    """Spoke angles (degrees, in [0, 180)) of one frame."""
    if frame_index < 0:
        raise ValueError("frame_index must be >= 0")
    S = spec.spokes_per_frame
    k = np.arange(S)
    p = spec.pattern
    if p is Pattern.REG_NO_ROT:
        a = k * (180.0 / S)
    elif p is Pattern.REG_ROT:
        a = k * (180.0 / S) + frame_index * (180.0 / spec.full_spokes)
    elif p is Pattern.TGA_NO_ROT:
        a = k * tiny_golden_angle(spec.tga_index)
    else:
        # integer global counter before the single multiply keeps angles drift-free
        g = frame_index * S + k
        a = g * tiny_golden_angle(spec.tga_index)
    return _wrap180(a.astype(np.float64) + spec.phase_offset)


def spoke_radii(n: int) -> np.ndarray:
    """Readout positions from -0.5 to 0.5 cycles/pixel inclusive."""
    return -0.5 + np.arange(n) / (n - 1)


def spoke_coordinates(spec: TrajectorySpec, frame_index: int) -> SpokeSet:
    angles = spoke_angles(spec, frame_index)
    r = spoke_radii(spec.samples_per_spoke)
    theta = np.deg2rad(angles)[:, None]
    return SpokeSet(angles=angles, kx=r * np.cos(theta), ky=r * np.sin(theta))
