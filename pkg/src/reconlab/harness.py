"""Experiment building blocks shared by the command line and the acceptance suite.

Directory layout below ``output_dir``::

    datasets/<PATTERN>/{train,test}/sample_00000/...
    models/<tag>/{model.ckpt,loss.csv}        tag = PATTERN[_l1][_2d]
    recon/<tag>/<method>/sample_00000.rct, recon/<tag>/metrics.csv
    reports/compare_patterns.{csv,md}, reports/sweep_<axis>.{csv,png}
    manifests/<command>.json
"""
from __future__ import annotations

import datetime as _dt
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .datagen import (
    DatasetConfig, PairedSample, add_noise_to_snr, build_dataset, finish_branch, load_dataset,
    make_sample, pair_from_native, prepare_native, save_dataset, ventricle_geometry,
)
from .grasp import GraspConfig, grasp_reconstruct
from .kspace import combine_coils, estimate_coil_maps
from .metrics import MetricReport, cine_edge_sharpness, rmse, ring_profiles, ssim, timed
from .tensorio import Cine, normalize01, save_tensor
from .trajectory import Pattern
from .unet import TrainResult, UNet, history_csv, load_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)


class MissingArtifactError(FileNotFoundError):
    """A prerequisite produced by an earlier command is absent."""


def _pmap(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --------------------------------------------------------------------------- layout


def dataset_dir(cfg: ExperimentConfig, pattern: Pattern | str, split: str) -> Path:
    return Path(cfg.output_dir) / "datasets" / Pattern(pattern).value / split


def model_tag(pattern: Pattern | str, loss: str = "L2", mode: str = "3d") -> str:
    tag = Pattern(pattern).value
    if loss.upper() == "L1":
        tag += "_l1"
    if mode.lower() == "2d":
        tag += "_2d"
    return tag


def model_dir(cfg: ExperimentConfig, tag: str) -> Path:
    return Path(cfg.output_dir) / "models" / tag


def default_tag(cfg: ExperimentConfig, pattern: Pattern | str | None = None) -> str:
    return model_tag(pattern or cfg.trajectory.pattern, cfg.train.loss, cfg.unet.mode)


def write_manifest(cfg: ExperimentConfig, command: str, started: _dt.datetime,
                   files: Iterable[Path], name: str | None = None) -> Path:
    """Atomically write ``manifests/<name>.json`` (temp file + rename)."""
    out = Path(cfg.output_dir)
    mdir = out / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)
    rel = sorted({str(Path(f).resolve().relative_to(out.resolve())) for f in files})
    doc = {
        "command": command,
        "config_hash": cfg.semantic_hash(),
        "tool_version": __version__,
        "started": started.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "files": rel,
        "config": cfg.to_dict(),
    }
    path = mdir / f"{name or command}.json"
    fd, tmp = tempfile.mkstemp(dir=mdir, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)
    return path


def _files_under(d: Path) -> list[Path]:
    return [p for p in d.rglob("*") if p.is_file()]


# --------------------------------------------------------------------------- datasets


def make_datasets(cfg: ExperimentConfig, jobs: int = 1) -> list[Path]:
    """Train/test sets for every configured pattern; test indices follow the training ones."""
    written = []
    n_tr, n_te = cfg.dataset.n_train, cfg.dataset.n_test
    for pattern in cfg.patterns():
        traj = cfg.trajectory.build(pattern)
        for split, start, n, keep in (("train", 0, n_tr, False),
                                      ("test", n_tr, n_te, cfg.dataset.keep_radial_test)):
            samples = build_dataset(n, traj, cfg.seed, cfg.dataset.build(keep), start, jobs)
            d = dataset_dir(cfg, pattern, split)
            save_dataset(d, samples)
            written.extend(_files_under(d))
            log.info("wrote %d %s samples for %s", n, split, pattern.value)
    return written


def load_split(cfg: ExperimentConfig, pattern: Pattern | str, split: str) -> list[PairedSample]:
    d = dataset_dir(cfg, pattern, split)
    if not d.is_dir():
        raise MissingArtifactError(f"dataset {d} not found; run make-dataset first")
    return load_dataset(d)


# --------------------------------------------------------------------------- training


def train_on(samples: Sequence[PairedSample], cfg: ExperimentConfig,
             on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    frames = samples[0].truth.n_frames
    pairs = [(s.aliased.data, s.truth.data) for s in samples]
    return train(pairs, cfg.unet.build(frames), cfg.train.build(cfg.seed), on_epoch=on_epoch)


def train_model(cfg: ExperimentConfig, pattern: Pattern | str | None = None) -> tuple[TrainResult, list[Path]]:
    pattern = Pattern(pattern or cfg.trajectory.pattern)
    samples = load_split(cfg, pattern, "train")
    tag = default_tag(cfg, pattern)
    d = model_dir(cfg, tag)
    d.mkdir(parents=True, exist_ok=True)
    ckpt_dir = d / "checkpoints" if cfg.train.checkpoint_every else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(exist_ok=True)
    pairs = [(s.aliased.data, s.truth.data) for s in samples]
    res = train(pairs, cfg.unet.build(samples[0].truth.n_frames), cfg.train.build(cfg.seed),
                checkpoint_dir=ckpt_dir)
    extra = {"pattern": pattern.value, "loss": cfg.train.loss, "mode": cfg.unet.mode,
             "initial_loss": res.initial_loss, "final_loss": res.history[-1]}
    save_checkpoint(d / "model.ckpt", res.net, extra)
    (d / "loss.csv").write_text(history_csv(res.history))
    return res, _files_under(d)


def load_model(cfg: ExperimentConfig, tag: str) -> UNet:
    path = model_dir(cfg, tag) / "model.ckpt"
    if not path.is_file():
        raise MissingArtifactError(f"checkpoint {path} not found; run train first")
    return load_checkpoint(path)[0]


# --------------------------------------------------------------------------- evaluation


def score(pred, truth, provenance: dict, cfg: ExperimentConfig) -> dict:
    m = cfg.metrics
    center, radius = ventricle_geometry(provenance)
    profiles = ring_profiles(center, radius, m.n_profiles, m.profile_length)
    return {
        "rmse": rmse(pred, truth),
        "ssim": ssim(pred, truth, win_size=m.ssim_window, sigma=m.ssim_sigma, k1=m.k1, k2=m.k2),
        "edge_sharpness": cine_edge_sharpness(pred, profiles, m.edge_degree),
    }


def _dataset_cfg(cfg: ExperimentConfig, sample: PairedSample) -> DatasetConfig:
    prov = sample.provenance
    return replace(cfg.dataset.build(), matrix=prov["matrix"], crop=prov["crop"],
                   frames=sample.truth.n_frames)


def to_output_grid(native: np.ndarray, frame_dt: float, sample: PairedSample,
                   cfg: ExperimentConfig) -> Cine:
    """Crop / interpolate / normalise a native-grid magnitude like the truth branch."""
    dcfg = _dataset_cfg(cfg, sample)
    return finish_branch(normalize01(Cine(native, frame_dt)), dcfg,
                         tuple(sample.provenance["crop_shift"]), [], "recon")


def recon_grid(sample: PairedSample, cfg: ExperimentConfig) -> Cine:
    """Density-compensated gridding; uses raw radial data when present."""
    if sample.radial is None:
        return sample.aliased
    op = sample.radial.operator()
    img = combine_coils(op.gridding_recon(sample.radial.samples.astype(np.complex128)))
    return to_output_grid(img, sample.native.frame_dt, sample, cfg)


def grasp_native(sample: PairedSample, gcfg: GraspConfig, coil_radius: float = 0.05,
                 snapshots: Sequence[int] = ()):
    if sample.radial is None:
        raise MissingArtifactError("GRASP needs raw radial data (dataset.keep_radial_test)")
    maps = None
    if sample.radial.ncoils > 1:
        y = sample.radial.samples.astype(np.complex128)
        maps = estimate_coil_maps(y, sample.radial.operator(), coil_radius)
    return grasp_reconstruct(sample.radial, gcfg, coil_maps=maps, snapshots=snapshots)


def recon_grasp(sample: PairedSample, cfg: ExperimentConfig) -> Cine:
    res = grasp_native(sample, cfg.grasp.build(), cfg.grasp.coil_radius)
    return to_output_grid(res.cine.data, sample.native.frame_dt, sample, cfg)


def recon_unet(net: UNet, sample: PairedSample) -> Cine:
    return Cine(net(sample.aliased.data), sample.aliased.frame_dt)


def evaluate(samples: Sequence[PairedSample], method: str, recon: Callable[[PairedSample], Cine],
             cfg: ExperimentConfig, pattern: str = "", sweep_axis: str = "", sweep_value="",
             jobs: int = 1, outputs: dict | None = None) -> MetricReport:
    """Reconstruct and score every sample; timings wrap the reconstruction only."""

    def one(s):
        out, dt = timed(method, lambda: recon(s))
        return out, dt, score(out, s.truth, s.provenance, cfg)

    report = MetricReport()
    for s, (out, dt, sc) in zip(samples, _pmap(one, samples, jobs)):
        report.add(method=method, pattern=pattern, sweep_axis=sweep_axis,
                   sweep_value=str(sweep_value), wall_time_s=dt,
                   sample=f"sample_{s.provenance['index']:05d}", **sc)
        if outputs is not None:
            outputs[s.provenance["index"]] = out
    return report


def run_recon(cfg: ExperimentConfig, methods: Sequence[str], pattern: Pattern | str | None = None,
              jobs: int = 1, png: bool = False) -> tuple[MetricReport, list[Path]]:
    pattern = Pattern(pattern or cfg.trajectory.pattern)
    samples = load_split(cfg, pattern, "test")
    tag = default_tag(cfg, pattern)
    net = load_model(cfg, tag) if "unet" in methods else None
    recons = {
        "grid": lambda s: recon_grid(s, cfg),
        "grasp": lambda s: recon_grasp(s, cfg),
        "unet": lambda s: recon_unet(net, s),
    }
    out_root = Path(cfg.output_dir) / "recon" / tag
    report = MetricReport()
    written: list[Path] = []
    for method in methods:
        outputs: dict[int, Cine] = {}
        report.extend(evaluate(samples, method, recons[method], cfg, pattern.value,
                               jobs=jobs, outputs=outputs))
        mdir = out_root / method
        mdir.mkdir(parents=True, exist_ok=True)
        for idx, cine in sorted(outputs.items()):
            p = mdir / f"sample_{idx:05d}.rct"
            save_tensor(p, cine.data)
            written.append(p)
            if png:
                written.extend(export_frames(cine, mdir / f"sample_{idx:05d}_png"))
    (out_root / "metrics.csv").write_text(report.to_csv())
    written.append(out_root / "metrics.csv")
    times = {m: np.median([r.wall_time_s for r in report.rows if r.method == m]) for m in methods}
    if "unet" in times and "grasp" in times:
        log.info("per-slice wall time: unet %.3f s, grasp %.3f s, ratio %.1fx",
                 times["unet"], times["grasp"], times["grasp"] / times["unet"])
    return report, written


def compare_patterns(cfg: ExperimentConfig, jobs: int = 1,
                     nets: dict | None = None) -> tuple[MetricReport, list[dict]]:
    """Each pattern's network on its own test set (the truth cines are shared)."""
    report = MetricReport()
    for pattern in (Pattern.REG_NO_ROT, Pattern.REG_ROT, Pattern.TGA_NO_ROT, Pattern.TGA_ROT):
        net = (nets or {}).get(pattern) or load_model(cfg, model_tag(pattern, cfg.train.loss,
                                                                     cfg.unet.mode))
        samples = load_split(cfg, pattern, "test")
        report.extend(evaluate(samples, "unet", lambda s: recon_unet(net, s), cfg,
                               pattern.value, jobs=jobs))
    return report, report.summary()


def write_compare_report(cfg: ExperimentConfig, report: MetricReport) -> list[Path]:
    d = Path(cfg.output_dir) / "reports"
    d.mkdir(parents=True, exist_ok=True)
    summary = report.summary()
    rows = ["pattern,n,rmse_mean,rmse_sd,ssim_mean,ssim_sd"]
    for e in summary:
        rows.append(f"{e['pattern']},{e['n']},{e['rmse_mean']!r},{e['rmse_sd']!r},"
                    f"{e['ssim_mean']!r},{e['ssim_sd']!r}")
    paths = [d / "compare_patterns.csv", d / "compare_patterns_samples.csv",
             d / "compare_patterns.md"]
    paths[0].write_text("\n".join(rows) + "\n")
    paths[1].write_text(report.to_csv())
    paths[2].write_text(report.markdown("pattern"))
    return paths


# --------------------------------------------------------------------------- sweeps


def sweep_snr(net: UNet, samples: Sequence[PairedSample], cfg: ExperimentConfig,
              levels: Sequence[float] | None = None, pattern: Pattern | str = Pattern.TGA_ROT,
              jobs: int = 1) -> MetricReport:
    """Noise added to the aliased inputs; one noise realisation per sample, rescaled per level."""
    levels = cfg.sweeps.snr_db if levels is None else levels
    name = Pattern(pattern).value
    report = evaluate(samples, "unet", lambda s: recon_unet(net, s), cfg, name,
                      "snr", "none", jobs)
    for db in levels:
        def recon(s, db=db):
            noisy = add_noise_to_snr(s.aliased, db, cfg.seed, cfg.sweeps.snr_reference,
                                     stream=s.provenance["index"])
            return Cine(net(noisy.data), noisy.frame_dt)
        report.extend(evaluate(samples, "unet", recon, cfg, name, "snr", db, jobs))
    return report


def _test_indices(cfg: ExperimentConfig) -> range:
    return range(cfg.dataset.n_train, cfg.dataset.n_train + cfg.dataset.n_test)


def sweep_accel(net: UNet, cfg: ExperimentConfig, accels: Sequence[float] | None = None,
                pattern: Pattern | str = Pattern.TGA_ROT, jobs: int = 1) -> MetricReport:
    """Test sets regenerated at each acceleration (same phantoms, fewer/more spokes)."""
    accels = cfg.sweeps.accel if accels is None else accels
    base = cfg.trajectory.build(pattern)
    report = MetricReport()
    idx = list(_test_indices(cfg))
    for a in accels:
        traj = base.with_acceleration(a)
        samples = _pmap(lambda i: make_sample(i, traj, cfg.seed, cfg.dataset.build()), idx, jobs)
        report.extend(evaluate(samples, "unet", lambda s: recon_unet(net, s), cfg,
                               Pattern(pattern).value, "accel", a))
    return report


def crop_shifts(values: Sequence[int]) -> list[tuple[int, int]]:
    return [(dy, dx) for dy in values for dx in values]


def sweep_crop(net: UNet, cfg: ExperimentConfig, values: Sequence[int] | None = None,
               pattern: Pattern | str = Pattern.TGA_ROT, jobs: int = 1) -> MetricReport:
    """Every (dy, dx) combination of ``values``; corruption is shared across shifts."""
    values = cfg.sweeps.crop_shifts if values is None else values
    traj = cfg.trajectory.build(pattern)
    dcfg = cfg.dataset.build()
    natives = _pmap(lambda i: prepare_native(i, traj, cfg.seed, dcfg), list(_test_indices(cfg)),
                    jobs)
    report = MetricReport()
    for shift in crop_shifts(values):
        samples = [pair_from_native(ns, dcfg, shift) for ns in natives]
        report.extend(evaluate(samples, "unet", lambda s: recon_unet(net, s), cfg,
                               Pattern(pattern).value, "crop", f"{shift[0]}:{shift[1]}"))
    return report


def sweep_means(report: MetricReport, column: str = "ssim") -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for r in report.rows:
        out.setdefault(r.sweep_value, []).append(getattr(r, column))
    return {k: float(np.mean(v)) for k, v in out.items()}


def plot_sweep(report: MetricReport, axis: str, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, col in zip(axes, ("rmse", "ssim")):
        means = sweep_means(report, col)
        ref = means.pop("none", None)
        if axis == "crop":
            labels = list(means)
            ax.plot(range(len(labels)), list(means.values()), "o-", ms=3)
            ax.set_xlabel("shift index (dy, dx)")
        else:
            xs = [float(k) for k in means]
            ax.plot(xs, list(means.values()), "o-")
            ax.set_xlabel("SNR (dB)" if axis == "snr" else "acceleration")
            if axis == "snr":
                ax.invert_xaxis()
        if ref is not None:
            ax.axhline(ref, color="r", lw=1)
        ax.set_ylabel(col.upper())
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


# --------------------------------------------------------------------------- images


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def export_frames(cine: Cine | np.ndarray, out_dir: str | Path, row: int | None = None) -> list[Path]:
    """One grayscale PNG per frame plus ``xt.png`` (the chosen row stacked over time)."""
    from PIL import Image

    data = cine.data if isinstance(cine, Cine) else np.asarray(cine)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    row = data.shape[1] // 2 if row is None else row
    if not 0 <= row < data.shape[1]:
        raise ValueError(f"row {row} outside 0..{data.shape[1] - 1}")
    paths = []
    for i, frame in enumerate(data):
        p = out / f"frame_{i:03d}.png"
        Image.fromarray(to_uint8(frame)).save(p)
        paths.append(p)
    p = out / "xt.png"
    Image.fromarray(to_uint8(data[:, row, :])).save(p)
    paths.append(p)
    return paths
