"""Image-quality metrics, agreement statistics, timing and report tables."""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Iterable, Sequence, TypeVar

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.ndimage import correlate1d, map_coordinates

from .tensorio import Cine

T = TypeVar("T")


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Cine) else np.asarray(x)


def rmse(a, b) -> float:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"rmse: shape mismatch {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return math.sqrt(float(np.mean(d * d)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _blur_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    half = len(win) // 2
    out = correlate1d(correlate1d(img, win, axis=-1, mode="constant"), win, axis=-2, mode="constant")
    return out[..., half:-half, half:-half]


def ssim_map(a: np.ndarray, b: np.ndarray, win_size: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> np.ndarray:
    """SSIM over every full window position of 2D frames (..., H, W)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-2] < win_size or a.shape[-1] < win_size:
        raise ValueError(f"frame {a.shape[-2:]} smaller than the {win_size}x{win_size} window")
    w = _gaussian_window(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _blur_valid(a, w), _blur_valid(b, w)
    saa = _blur_valid(a * a, w) - mu_a**2
    sbb = _blur_valid(b * b, w) - mu_b**2
    sab = _blur_valid(a * b, w) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2))


def ssim(a, b, **kw) -> float:
    """Mean SSIM per frame, then averaged over frames (a single frame is allowed)."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    m = ssim_map(a, b, **kw)
    if m.ndim == 2:
        return float(m.mean())
    return float(np.mean(m.reshape(m.shape[0], -1).mean(axis=1)))


# --------------------------------------------------------------------------- sharpness


@dataclass(frozen=True)
class LineProfile:
    start: tuple[float, float]  # (row, col)
    end: tuple[float, float]
    n_samples: int = 15

    def __post_init__(self):
        if self.n_samples < 8:
            raise ValueError("a line profile needs at least 8 samples")

    def coordinates(self) -> np.ndarray:
        s = np.linspace(0.0, 1.0, self.n_samples)
        p0, p1 = np.asarray(self.start, float), np.asarray(self.end, float)
        return p0[:, None] + (p1 - p0)[:, None] * s[None, :]

    def sample(self, frame: np.ndarray) -> np.ndarray:
        coords = self.coordinates()
        h, w = frame.shape
        if coords.min() < 0 or coords[0].max() > h - 1 or coords[1].max() > w - 1:
            raise ValueError("line profile leaves the frame")
        return map_coordinates(np.asarray(frame, dtype=np.float64), coords, order=1)


def profile_sharpness(values: np.ndarray, degree: int = 10, dense: int = 2001) -> float:
    """Max |d/ds| of a Chebyshev least-squares fit to a min-max normalised profile."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        raise ValueError("edge sharpness undefined for a constant profile")
    v = (v - lo) / (hi - lo)
    s = np.linspace(0.0, 1.0, v.size)
    fit = Chebyshev.fit(s, v, min(degree, v.size - 1), domain=[0.0, 1.0])
    return float(np.max(np.abs(fit.deriv()(np.linspace(0.0, 1.0, dense)))))


def edge_sharpness(frame: np.ndarray, profile: LineProfile, degree: int = 10) -> float:
    return profile_sharpness(profile.sample(np.asarray(frame)), degree)


def ring_profiles(center: tuple[float, float], radius: float, n: int = 6,
                  length: int = 15) -> list[LineProfile]:
    """``n`` evenly rotated radial profiles of ``length`` pixels centred on ``radius``."""
    out = []
    half = (length - 1) / 2
    for k in range(n):
        th = 2 * math.pi * k / n
        d = np.array([math.sin(th), math.cos(th)])
        c = np.asarray(center, float)
        out.append(LineProfile(tuple(c + (radius - half) * d), tuple(c + (radius + half) * d), length))
    return out


def cine_edge_sharpness(cine, profiles: Sequence[LineProfile], degree: int = 10) -> float:
    data = _arr(cine)
    return float(np.mean([edge_sharpness(f, p, degree) for f in data for p in profiles]))


# --------------------------------------------------------------------------- agreement


def bland_altman(ref_vals: Sequence[float], test_vals: Sequence[float]) -> tuple[float, float, float]:
    """(bias, lower, upper) with limits of agreement bias -/+ 2 sample sd."""
    ref = np.asarray(ref_vals, dtype=np.float64)
    test = np.asarray(test_vals, dtype=np.float64)
    if ref.shape != test.shape or ref.ndim != 1:
        raise ValueError("bland_altman needs two equal-length vectors")
    if ref.size < 2:
        raise ValueError("bland_altman needs at least two pairs")
    d = test - ref
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    return bias, bias - 2 * sd, bias + 2 * sd


def flicker_metric(cine) -> float:
    """Mean squared second temporal difference over interior frames and all pixels."""
    x = _arr(cine).astype(np.float64)
    if x.shape[0] < 3:
        raise ValueError("flicker metric needs at least three frames")
    d2 = x[2:] - 2 * x[1:-1] + x[:-2]
    return float(np.mean(d2 * d2))


# --------------------------------------------------------------------------- timing


def timed(label: str, f: Callable[[], T]) -> tuple[T, float]:
    """Run ``f`` once and return its result and the monotonic wall time in seconds."""
    t0 = time.perf_counter()
    out = f()
    return out, time.perf_counter() - t0


@dataclass(frozen=True)
class TimingSummary:
    label: str
    times: tuple[float, ...]

    @property
    def min(self) -> float:
        return min(self.times)

    @property
    def median(self) -> float:
        return statistics.median(self.times)


def time_repeated(label: str, f: Callable[[], Any], repeats: int = 5) -> TimingSummary:
    return TimingSummary(label, tuple(timed(label, f)[1] for _ in range(repeats)))


# --------------------------------------------------------------------------- reports


@dataclass
class MetricRow:
    method: str
    pattern: str = ""
    sweep_axis: str = ""
    sweep_value: str = ""
    rmse: float = math.nan
    ssim: float = math.nan
    edge_sharpness: float = math.nan
    wall_time_s: float = math.nan
    sample: str = ""

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be >= 0")
        if not math.isnan(self.ssim) and not -1 - 1e-9 <= self.ssim <= 1 + 1e-9:
            raise ValueError("ssim outside [-1, 1]")
        if self.wall_time_s < 0:
            raise ValueError("negative wall time")


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    COLUMNS = tuple(f.name for f in fields(MetricRow))

    def add(self, **kw) -> MetricRow:
        row = MetricRow(**kw)
        self.rows.append(row)
        return row

    def extend(self, other: "MetricReport") -> None:
        self.rows.extend(other.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            kw = {}
            for f in fields(MetricRow):
                v = rec.get(f.name, "")
                kw[f.name] = float(v) if f.type == "float" else v
            rows.append(MetricRow(**kw))
        return cls(rows)

    def groups(self, keys: Iterable[str] = ("method", "pattern", "sweep_axis", "sweep_value")):
        keys = tuple(keys)
        out: dict[tuple, list[MetricRow]] = {}
        for r in self.rows:
            out.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
        return out

    def summary(self) -> list[dict]:
        """Per-group mean and sample sd of every numeric column (per-sample, then mean)."""
        res = []
        for key, rows in self.groups().items():
            entry = dict(zip(("method", "pattern", "sweep_axis", "sweep_value"), key))
            entry["n"] = len(rows)
            for col in ("rmse", "ssim", "edge_sharpness", "wall_time_s"):
                vals = [getattr(r, col) for r in rows if not math.isnan(getattr(r, col))]
                entry[f"{col}_mean"] = float(np.mean(vals)) if vals else None
                entry[f"{col}_sd"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
            res.append(entry)
        return res

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)

    def markdown(self, by: str = "pattern") -> str:
        lines = [f"| {by} | n | RMSE (x1e-2) | SSIM |", "|---|---|---|---|"]
        for e in self.summary():
            r, s = e["rmse_mean"], e["ssim_mean"]
            rsd, ssd = e["rmse_sd"] or 0.0, e["ssim_sd"] or 0.0
            lines.append(f"| {e[by]} | {e['n']} | {100 * r:.2f} ± {100 * rsd:.2f} | "
                         f"{s:.4f} ± {ssd:.4f} |")
        return "\n".join(lines) + "\n"
