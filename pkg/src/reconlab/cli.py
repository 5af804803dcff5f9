"""``recon-lab`` command line.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite
artifact, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path

from . import __version__
from . import harness as H
from .config import ConfigError, ExperimentConfig, load_config
from .grasp import GraspError
from .tensorio import Cine, TensorFormatError, load_tensor
from .trajectory import Pattern
from .unet import TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("reconlab")


def _now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


def cmd_make_dataset(cfg: ExperimentConfig, args) -> int:
    t0 = _now()
    files = H.make_datasets(cfg, args.jobs)
    H.write_manifest(cfg, "make-dataset", t0, files)
    print(f"wrote {len(files)} files under {Path(cfg.output_dir) / 'datasets'}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    t0 = _now()
    res, files = H.train_model(cfg, args.pattern)
    tag = H.default_tag(cfg, args.pattern)
    H.write_manifest(cfg, "train", t0, files, name=f"train_{tag}")
    print(f"{tag}: loss {res.initial_loss:.6g} -> {res.history[-1]:.6g} "
          f"over {len(res.history)} epochs")
    return EXIT_OK


def cmd_recon(cfg: ExperimentConfig, args) -> int:
    t0 = _now()
    methods = ["grid", "grasp", "unet"] if args.method == "all" else [args.method]
    report, files = H.run_recon(cfg, methods, args.pattern, args.jobs, args.png)
    tag = H.default_tag(cfg, args.pattern)
    H.write_manifest(cfg, "recon", t0, files, name=f"recon_{tag}")
    print(report.markdown("method"), end="")
    return EXIT_OK


def cmd_compare_patterns(cfg: ExperimentConfig, args) -> int:
    t0 = _now()
    report, _ = H.compare_patterns(cfg, args.jobs)
    files = H.write_compare_report(cfg, report)
    H.write_manifest(cfg, "compare-patterns", t0, files)
    print(files[2].read_text(), end="")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    t0 = _now()
    pattern = Pattern(args.pattern or cfg.trajectory.pattern)
    net = H.load_model(cfg, H.default_tag(cfg, pattern))
    if args.axis == "snr":
        report = H.sweep_snr(net, H.load_split(cfg, pattern, "test"), cfg, pattern=pattern,
                             jobs=args.jobs)
    elif args.axis == "accel":
        report = H.sweep_accel(net, cfg, pattern=pattern, jobs=args.jobs)
    else:
        report = H.sweep_crop(net, cfg, pattern=pattern, jobs=args.jobs)
    d = Path(cfg.output_dir) / "reports"
    d.mkdir(parents=True, exist_ok=True)
    csv_path = d / f"sweep_{args.axis}.csv"
    csv_path.write_text(report.to_csv())
    summary = d / f"sweep_{args.axis}_summary.json"
    summary.write_text(report.summary_json())
    files = [csv_path, summary, H.plot_sweep(report, args.axis, d / f"sweep_{args.axis}.png")]
    H.write_manifest(cfg, "sweep", t0, files, name=f"sweep_{args.axis}")
    for value, s in H.sweep_means(report, "ssim").items():
        print(f"{args.axis}={value}: mean SSIM {s:.4f}")
    return EXIT_OK


def cmd_export_frames(cfg: ExperimentConfig, args) -> int:
    t0 = _now()
    path = Path(args.input)
    if not path.is_file():
        raise H.MissingArtifactError(f"input cine {path} not found")
    data = load_tensor(path)
    if data.ndim != 3:
        raise ConfigError(f"{path}: expected a T x H x W cine, got shape {data.shape}")
    files = H.export_frames(Cine(data), args.out, args.row)
    out = Path(args.out).resolve()
    if out.is_relative_to(Path(cfg.output_dir).resolve()):
        H.write_manifest(cfg, "export-frames", t0, files)
    print(f"wrote {len(files)} PNG files to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (defaults to the desk-scale setup)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set train.epochs=10")
    common.add_argument("--jobs", type=int, default=1, help="worker cap (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="recon-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-dataset", parents=[common], help="build paired train/test sets")
    s.add_argument("--patterns", help="comma list of patterns, or 'all'")
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("train", parents=[common], help="train a residual U-Net")
    s.add_argument("--pattern")
    s.add_argument("--loss", choices=["l1", "l2", "L1", "L2"])
    s.add_argument("--mode", choices=["2d", "3d"])
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("recon", parents=[common], help="reconstruct the test set and score it")
    s.add_argument("--method", choices=["grid", "grasp", "unet", "all"], default="all")
    s.add_argument("--pattern")
    s.add_argument("--loss", choices=["l1", "l2", "L1", "L2"])
    s.add_argument("--mode", choices=["2d", "3d"])
    s.add_argument("--png", action="store_true", help="also dump PNG frames")
    s.set_defaults(func=cmd_recon)

    s = sub.add_parser("compare-patterns", parents=[common], help="RMSE/SSIM for all four patterns")
    s.set_defaults(func=cmd_compare_patterns)

    s = sub.add_parser("sweep", parents=[common], help="robustness sweep of a trained network")
    s.add_argument("--axis", choices=["snr", "accel", "crop"], required=True)
    s.add_argument("--pattern")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("export-frames", parents=[common], help="write PNG frames and an x-t image")
    s.add_argument("--input", required=True, help="RCT1 cine file")
    s.add_argument("--out", required=True)
    s.add_argument("--row", type=int, help="row used for the x-t image (default: middle)")
    s.set_defaults(func=cmd_export_frames)
    return p


def _overrides(args) -> list[str]:
    sets = list(args.set)
    if getattr(args, "patterns", None):
        names = [n.strip() for n in args.patterns.split(",") if n.strip()]
        sets.append("dataset.patterns=" + str(names).replace("'", '"'))
    if getattr(args, "loss", None):
        sets.append(f"train.loss={args.loss.upper()}")
    if getattr(args, "mode", None):
        sets.append(f"unet.mode={args.mode}")
    return sets


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, _overrides(args))
        if getattr(args, "pattern", None):
            args.pattern = Pattern(args.pattern)
        return args.func(cfg, args)
    except TensorFormatError as exc:
        print(f"unreadable artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingError, GraspError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid setting: {exc}", file=sys.stderr)
        return EXIT_CONFIG

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
