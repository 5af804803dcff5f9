"""Synthetic paired (ground truth, aliased) cine datasets.

A procedurally generated short-axis phantom stands in for a breath-hold cine
library.  Each sample goes through the same steps as real training data:
resample to the real-time grid (matrix and 36.4 ms frames), corrupt by radial
undersampling at the native frame count, then crop, interpolate to a fixed
number of frames and normalise both branches identically.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from .kspace import RadialKSpace, corrupt_cine
from .tensorio import Cine, load_tensor, normalize01, rng_stream, save_tensor
from .trajectory import TrajectorySpec

REALTIME_DT_MS = 36.4
SOURCE_DT_MS = 32.0


@dataclass(frozen=True)
class Ellipse:
    cy: float  # offsets from image centre, fraction of matrix
    cx: float
    ry: float
    rx: float
    angle: float  # degrees
    intensity: float


@dataclass(frozen=True)
class PhantomSpec:
    """Fully concrete phantom description; see :meth:`sample` for the random draw."""

    seed: int = 0
    matrix: int = 240
    rr_ms: float = 900.0
    frames: int | None = None  # None -> round(rr_ms / 32)
    center: tuple[float, float] = (0.0, 0.0)  # ventricle offset, fraction of matrix
    radius: float = 0.09  # diastolic blood-pool radius, fraction of matrix
    wall: float = 0.035  # diastolic wall thickness, fraction of matrix
    contraction: float = 0.3
    systole_phase: float = 0.35  # fraction of the cycle
    blood: float = 0.55
    myocardium: float = 0.95
    papillary: tuple[tuple[float, float], ...] = ((40.0, 0.012), (150.0, 0.01))  # (deg, radius)
    body: Ellipse = Ellipse(0.0, 0.0, 0.42, 0.46, 0.0, 0.3)
    structures: tuple[Ellipse, ...] = ()
    rv: bool = True
    breathing_amplitude: float = 0.0  # pixels
    breathing_period_ms: float = 4000.0

    def __post_init__(self):
        if self.radius <= 0 or self.wall <= 0:
            raise ValueError("radii must be positive")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction fraction must lie in (0, 1)")
        if self.rr_ms <= 0:
            raise ValueError("rr_ms must be positive")

    @property
    def n_frames(self) -> int:
        return self.frames if self.frames is not None else max(2, round(self.rr_ms / SOURCE_DT_MS))

    @classmethod
    def sample(cls, seed: int, index: int = 0, matrix: int = 240,
               rr_range: tuple[float, float] = (600.0, 1200.0), n_structures: int = 6,
               breathing_amplitude: float = 0.0) -> "PhantomSpec":
        rng = rng_stream(seed, "phantom", index)
        n_pap = int(rng.integers(2, 5))
        pap = tuple((float(rng.uniform(0, 360)), float(rng.uniform(0.008, 0.014)))
                    for _ in range(n_pap))
        structures = []
        for _ in range(n_structures):
            ang = rng.uniform(0, 2 * math.pi)
            dist = rng.uniform(0.2, 0.36)
            structures.append(Ellipse(
                cy=float(dist * math.sin(ang)), cx=float(dist * math.cos(ang)),
                ry=float(rng.uniform(0.02, 0.08)), rx=float(rng.uniform(0.02, 0.08)),
                angle=float(rng.uniform(0, 180)), intensity=float(rng.uniform(0.05, 0.8))))
        body = Ellipse(0.0, 0.0, float(rng.uniform(0.38, 0.44)), float(rng.uniform(0.42, 0.47)),
                       float(rng.uniform(-10, 10)), float(rng.uniform(0.2, 0.35)))
        return cls(
            seed=int(seed) * 100003 + int(index),
            matrix=matrix,
            rr_ms=float(rng.uniform(*rr_range)),
            center=(float(rng.uniform(-0.02, 0.02)), float(rng.uniform(-0.02, 0.02))),
            radius=float(rng.uniform(0.07, 0.1)),
            wall=float(rng.uniform(0.025, 0.04)),
            contraction=float(rng.uniform(0.2, 0.4)),
            systole_phase=float(rng.uniform(0.25, 0.45)),
            blood=float(rng.uniform(0.45, 0.65)),
            myocardium=float(rng.uniform(0.85, 1.0)),
            papillary=pap,
            body=body,
            structures=tuple(structures),
            breathing_amplitude=breathing_amplitude,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _ellipse_cover(yy, xx, cy, cx, ry, rx, angle_deg=0.0):
    """Anti-aliased coverage (1-pixel ramp) of an ellipse; all lengths in pixels."""
    th = math.radians(angle_deg)
    dy, dx = yy - cy, xx - cx
    u = dx * math.cos(th) + dy * math.sin(th)
    v = -dx * math.sin(th) + dy * math.cos(th)
    rho = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    grad = np.sqrt((u / rx**2) ** 2 + (v / ry**2) ** 2) / np.maximum(rho, 1e-9)
    dist = (rho - 1.0) / np.maximum(grad, 1e-9)
    return np.clip(0.5 - dist, 0.0, 1.0)


def _paint(img, cover, value):
    return img * (1.0 - cover) + value * cover


def _contraction_profile(phase: np.ndarray, systole_phase: float) -> np.ndarray:
    """1 at end systole, 0 at end diastole, smooth and periodic."""
    return 0.5 * (1.0 + np.cos(2 * math.pi * (phase - systole_phase)))


def pool_radius(spec: PhantomSpec, phase: np.ndarray) -> np.ndarray:
    """Blood-pool radius in pixels at cycle phase(s) in [0, 1)."""
    s = _contraction_profile(np.asarray(phase, dtype=np.float64), spec.systole_phase)
    return spec.radius * spec.matrix * (1.0 - spec.contraction * s)


def generate_phantom(spec: PhantomSpec, return_masks: bool = False):
    """Render the phantom cine (one cardiac cycle at source resolution).

    With ``return_masks`` the per-frame blood-pool coverage is returned too.
    """
    m = spec.matrix
    n = spec.n_frames
    c0 = m / 2.0 - 0.5
    yy, xx = np.mgrid[0:m, 0:m].astype(np.float64)
    phase = np.arange(n) / n
    t_ms = phase * spec.rr_ms
    r_in = pool_radius(spec, phase)
    wall_area = (spec.radius + spec.wall) ** 2 - spec.radius**2
    r_out = np.sqrt(r_in**2 + wall_area * m * m)
    frames = np.empty((n, m, m), dtype=np.float64)
    pools = np.empty((n, m, m), dtype=np.float64)
    for f in range(n):
        shift = spec.breathing_amplitude * math.sin(2 * math.pi * t_ms[f] / spec.breathing_period_ms)
        cy, cx = c0 + shift, c0
        b = spec.body
        img = spec.body.intensity * _ellipse_cover(yy, xx, cy + b.cy * m, cx + b.cx * m,
                                                   b.ry * m, b.rx * m, b.angle)
        for e in spec.structures:
            img = _paint(img, _ellipse_cover(yy, xx, cy + e.cy * m, cx + e.cx * m,
                                             e.ry * m, e.rx * m, e.angle), e.intensity)
        vy, vx = cy + spec.center[0] * m, cx + spec.center[1] * m
        if spec.rv:
            # crescent-shaped right ventricle beside the left ventricle, beating in phase
            rv_scale = 1.0 - 0.5 * spec.contraction * _contraction_profile(
                phase[f], spec.systole_phase)
            rvx = vx - r_out[f] - 0.55 * spec.radius * m * rv_scale
            img = _paint(img, _ellipse_cover(yy, xx, vy, rvx + 0.2 * spec.radius * m,
                                             1.5 * spec.radius * m * rv_scale + 2,
                                             0.8 * spec.radius * m * rv_scale + 2),
                         spec.myocardium * 0.8)
            img = _paint(img, _ellipse_cover(yy, xx, vy, rvx + 0.2 * spec.radius * m,
                                             1.5 * spec.radius * m * rv_scale,
                                             0.8 * spec.radius * m * rv_scale), spec.blood)
        img = _paint(img, _ellipse_cover(yy, xx, vy, vx, r_out[f], r_out[f]), spec.myocardium)
        pool = _ellipse_cover(yy, xx, vy, vx, r_in[f], r_in[f])
        img = _paint(img, pool, spec.blood)
        for ang, rad in spec.papillary:
            a = math.radians(ang)
            d = 0.72 * r_in[f]
            img = _paint(img, _ellipse_cover(yy, xx, vy + d * math.sin(a), vx + d * math.cos(a),
                                             rad * m, rad * m), spec.myocardium)
        frames[f] = img
        pools[f] = pool
    cine = Cine(np.clip(frames, 0.0, 1.0), spec.rr_ms / n)
    if return_masks:
        return cine, pools
    return cine


# --------------------------------------------------------------------------- pipeline


def resample_spatial(frames: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resampling of (T, H, W) onto (T, size, size), pixel centres aligned."""
    t, h, w = frames.shape
    ys = (np.arange(size) + 0.5) * (h / size) - 0.5
    xs = (np.arange(size) + 0.5) * (w / size) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = np.empty((t, size, size), dtype=np.float64)
    for i in range(t):
        out[i] = map_coordinates(frames[i].astype(np.float64), [yy, xx], order=1, mode="nearest")
    return out


def resample_pipeline(src: Cine, rr_ms: float, matrix: int = 192,
                      frame_dt: float = REALTIME_DT_MS) -> Cine:
    """Resample one cardiac cycle to ``matrix`` pixels and ``frame_dt`` spaced frames.

    The output has ``floor(rr_ms / frame_dt)`` frames at times ``j * frame_dt``;
    time interpolation is linear and periodic over the cycle.
    """
    if rr_ms < frame_dt:
        raise ValueError(f"R-R interval {rr_ms} ms shorter than one frame ({frame_dt} ms)")
    n_out = int(math.floor(rr_ms / frame_dt + 1e-9))
    spatial = resample_spatial(src.data, matrix)
    n_src = spatial.shape[0]
    pos = np.arange(n_out) * frame_dt / rr_ms * n_src
    i0 = np.floor(pos).astype(int) % n_src
    i1 = (i0 + 1) % n_src
    frac = (pos - np.floor(pos))[:, None, None]
    out = (1.0 - frac) * spatial[i0] + frac * spatial[i1]
    return Cine(out, frame_dt)


def crop_bounds(height: int, width: int, size: int, shift: tuple[int, int] = (0, 0)):
    dy, dx = shift
    y0 = (height - size) // 2 + dy
    x0 = (width - size) // 2 + dx
    if y0 < 0 or x0 < 0 or y0 + size > height or x0 + size > width:
        raise ValueError(f"crop of {size} with shift {shift} leaves a {height}x{width} image")
    return y0, x0


def crop_center(cine: Cine | np.ndarray, size: int = 128, shift: tuple[int, int] = (0, 0)):
    data = cine.data if isinstance(cine, Cine) else np.asarray(cine)
    y0, x0 = crop_bounds(data.shape[-2], data.shape[-1], size, shift)
    out = data[..., y0:y0 + size, x0:x0 + size]
    return Cine(out, cine.frame_dt) if isinstance(cine, Cine) else out.copy()


def interp_frames(cine: Cine | np.ndarray, target_frames: int = 20):
    """Linear interpolation in normalised time [0, 1]; end frames are kept exactly."""
    data = cine.data if isinstance(cine, Cine) else np.asarray(cine)
    t = data.shape[0]
    if t < 2:
        raise ValueError("need at least two frames to interpolate")
    if t == target_frames:
        out = data.copy()
    else:
        pos = np.arange(target_frames) * (t - 1) / (target_frames - 1)
        i0 = np.minimum(np.floor(pos).astype(int), t - 2)
        frac = (pos - i0)[:, None, None]
        out = (1.0 - frac) * data[i0] + frac * data[i0 + 1]
        out[-1] = data[-1]
    if isinstance(cine, Cine):
        dt = cine.frame_dt * (t - 1) / (target_frames - 1)
        return Cine(out, dt)
    return out


@dataclass(frozen=True)
class DatasetConfig:
    source_matrix: int = 240
    matrix: int = 192
    crop: int = 128
    frames: int = 20
    frame_dt: float = REALTIME_DT_MS
    rr_range: tuple[float, float] = (600.0, 1200.0)
    n_structures: int = 6
    ncoils: int = 1
    crop_shift: tuple[int, int] = (0, 0)
    keep_radial: bool = False

    @classmethod
    def desk(cls, **kw) -> "DatasetConfig":
        return cls(**{"source_matrix": 120, "matrix": 96, "crop": 64, **kw})


@dataclass
class PairedSample:
    truth: Cine
    aliased: Cine
    spec: TrajectorySpec
    provenance: dict
    radial: RadialKSpace | None = field(default=None, repr=False)
    native: Cine | None = field(default=None, repr=False)


def finish_branch(cine: Cine, cfg: DatasetConfig, shift, trace, label) -> Cine:
    out = crop_center(cine, cfg.crop, shift)
    trace.append(f"{label}:crop")
    out = interp_frames(out, cfg.frames)
    trace.append(f"{label}:interp")
    out = normalize01(out)
    trace.append(f"{label}:normalize")
    return out


@dataclass
class NativeSample:
    """One phantom resampled to the real-time grid, before any cropping."""

    index: int
    phantom: PhantomSpec
    native: Cine
    aliased_native: Cine
    radial: RadialKSpace
    spec: TrajectorySpec
    trace: list[str] = field(default_factory=list)


def prepare_native(index: int, traj: TrajectorySpec, seed: int, cfg: DatasetConfig,
                   trace: list[str] | None = None) -> NativeSample:
    """Phantom -> resample -> radial corruption at the native frame count."""
    trace = trace if trace is not None else []
    pspec = PhantomSpec.sample(seed, index, cfg.source_matrix, cfg.rr_range, cfg.n_structures)
    src = generate_phantom(pspec)
    trace.append("generate_phantom")
    native = normalize01(resample_pipeline(src, pspec.rr_ms, cfg.matrix, cfg.frame_dt))
    trace.append("resample_pipeline")
    aliased, radial = corrupt_cine(native, traj, ncoils=cfg.ncoils)
    trace.append(f"aliased:corrupt[{native.n_frames}x{cfg.matrix}x{cfg.matrix}]")
    return NativeSample(index, pspec, native, Cine(aliased, native.frame_dt), radial, traj, trace)


def pair_from_native(ns: NativeSample, cfg: DatasetConfig,
                     shift: tuple[int, int] | None = None) -> PairedSample:
    """Apply the shared crop / frame interpolation / normalisation to both branches."""
    shift = tuple(cfg.crop_shift if shift is None else shift)
    truth = finish_branch(ns.native, cfg, shift, ns.trace, "truth")
    aliased = finish_branch(ns.aliased_native, cfg, shift, ns.trace, "aliased")
    prov = {"index": ns.index, "phantom": ns.phantom.to_dict(), "rr_ms": ns.phantom.rr_ms,
            "crop_shift": list(shift), "native_frames": ns.native.n_frames,
            "matrix": cfg.matrix, "crop": cfg.crop}
    keep = cfg.keep_radial
    return PairedSample(truth, aliased, ns.spec, prov,
                        ns.radial if keep else None, ns.native if keep else None)


def make_sample(index: int, traj: TrajectorySpec, seed: int, cfg: DatasetConfig,
                trace: list[str] | None = None, shift: tuple[int, int] | None = None) -> PairedSample:
    return pair_from_native(prepare_native(index, traj, seed, cfg, trace), cfg, shift)


def ventricle_geometry(provenance: dict) -> tuple[tuple[float, float], float]:
    """Ventricle centre (row, col) in cropped-cine pixels and its mid-cycle pool radius."""
    ph = provenance["phantom"]
    scale = provenance["matrix"] / ph["matrix"]
    m = provenance["matrix"]
    y0, x0 = crop_bounds(m, m, provenance["crop"], tuple(provenance["crop_shift"]))
    c0 = m / 2.0 - 0.5
    cy = c0 + ph["center"][0] * m - y0
    cx = c0 + ph["center"][1] * m - x0
    radius = ph["radius"] * ph["matrix"] * (1.0 - 0.5 * ph["contraction"]) * scale
    return (cy, cx), radius


def build_dataset(n_samples: int, traj: TrajectorySpec, seed: int,
                  cfg: DatasetConfig | None = None, start_index: int = 0,
                  workers: int = 1) -> list[PairedSample]:
    """``n_samples`` paired samples; sample ``i`` depends only on (seed, start_index + i)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cfg = cfg or DatasetConfig()
    idx = range(start_index, start_index + n_samples)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda i: make_sample(i, traj, seed, cfg), idx))
    return [make_sample(i, traj, seed, cfg) for i in idx]


def add_noise_to_snr(cine: Cine | np.ndarray, snr_db: float, seed: int,
                     reference: str = "rms", clamp: bool = True, stream: int = 0):
    """Add white Gaussian noise so that ``20 log10(signal / sigma) = snr_db``.

    ``reference="rms"`` takes the signal level as the RMS over the whole
    cine (amplitude and power ratios coincide for this choice);
    ``"peak"`` uses the maximum instead.  Negative values are clipped to 0
    when ``clamp`` is set; the result is not renormalised.  The noise
    pattern depends only on (seed, stream), so sweeping ``snr_db`` rescales
    one fixed realisation.
    """
    data = cine.data if isinstance(cine, Cine) else np.asarray(cine)
    x = data.astype(np.float64)
    if reference == "rms":
        level = math.sqrt(float(np.mean(x**2)))
    elif reference == "peak":
        level = float(np.max(np.abs(x)))
    else:
        raise ValueError(f"unknown SNR reference {reference!r}")
    if level == 0:
        raise ValueError("cannot set SNR of an all-zero cine")
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    sigma = level / 10 ** (snr_db / 20.0)
    noisy = x + sigma * rng_stream(seed, "noise", stream).standard_normal(x.shape)
    if clamp:
        noisy = np.maximum(noisy, 0.0)
    return Cine(noisy, cine.frame_dt) if isinstance(cine, Cine) else noisy.astype(np.float32)


# --------------------------------------------------------------------------- storage


def save_sample(directory: str | Path, sample: PairedSample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "truth.rct", sample.truth.data)
    save_tensor(d / "aliased.rct", sample.aliased.data)
    meta = {
        "trajectory": sample.spec.to_dict(),
        "provenance": sample.provenance,
        "frame_dt": sample.truth.frame_dt,
        "aliased_frame_dt": sample.aliased.frame_dt,
    }
    if sample.radial is not None:
        sample.radial.save(d / "radial.rct")
        save_tensor(d / "native.rct", sample.native.data)
        meta["native_frame_dt"] = sample.native.frame_dt
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_sample(directory: str | Path) -> PairedSample:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    truth = Cine(load_tensor(d / "truth.rct"), meta["frame_dt"])
    aliased = Cine(load_tensor(d / "aliased.rct"), meta["aliased_frame_dt"])
    radial = native = None
    if (d / "radial.rct").exists():
        radial = RadialKSpace.load(d / "radial.rct")
        native = Cine(load_tensor(d / "native.rct"), meta["native_frame_dt"])
    return PairedSample(truth, aliased, TrajectorySpec.from_dict(meta["trajectory"]),
                        meta["provenance"], radial, native)


def save_dataset(directory: str | Path, samples: Sequence[PairedSample]) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in samples:
        p = d / f"sample_{s.provenance['index']:05d}"
        save_sample(p, s)
        paths.append(p)
    return paths


def load_dataset(directory: str | Path) -> list[PairedSample]:
    d = Path(directory)
    dirs = sorted(p for p in d.glob("sample_*") if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no samples in {d}")
    return [load_sample(p) for p in dirs]
