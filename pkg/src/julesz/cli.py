"""Command-line surface: texture/stylizer training, sampling, gradient
checks, and report merging.

Every training command resolves its configuration (defaults < config file <
flags), writes a replayable manifest before any work starts, and exits 0 on
success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, checks, images
from .config import ConfigError, TrainConfig
from .generators import ParamsFileError, load_params, save_params
from .tensor import TensorError
from .trainer import (DivergenceError, TrainReport, diversity_metric, sample_stylized,
                      sample_texture, train_stylizer, train_texture)

log = logging.getLogger(__name__)

PARAMS_FILE = "generator.params"
REPORT_FILE = "report.csv"
MANIFEST_FILE = "manifest.txt"
SAMPLES_FILE = "samples.png"
STYLIZED_FILE = "stylized.png"

# flag spelling -> TrainConfig field
_FLAG_FIELDS = {
    "temp": "temperature",
    "lambda": "diversity_weight",
    "alpha": "content_weight",
    "batch": "batch_size",
    "lr": "learning_rate",
    "iters": "iterations",
    "seed": "seed",
    "norm": "norm",
    "grad_normalize": "grad_normalize",
    "size": "out_size",
    "log_every": "log_every",
    "noise_dim": "noise_dim",
    "noise_channels": "noise_channels",
    "width": "width",
    "hidden": "hidden",
    "bank_seed": "bank_seed",
    "rho_floor": "rho_floor",
    "norm_eps": "norm_eps",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float, metavar="X",
                   help="diversity weight")
    p.add_argument("--temp", type=float, help="temperature on the style loss")
    p.add_argument("--norm", choices=("in", "bn", "none"))
    p.add_argument("--size", type=int, help="output image edge")
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--log-every", type=int)
    p.add_argument("--noise-dim", type=int)
    p.add_argument("--noise-channels", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--bank-seed", type=int)
    p.add_argument("--rho-floor", type=float)
    p.add_argument("--norm-eps", type=float)
    p.add_argument("--grad-normalize", action=argparse.BooleanOptionalAction, default=None)


def _parse_config_file(path: str) -> dict:
    values = {}
    fields = set(TrainConfig.field_names())
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def _coerce(field: str, value) -> object:
    kind = type(getattr(TrainConfig(), field))
    if kind is bool:
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes"):
            return True
        if str(value).lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"bad boolean for {field}: {value!r}")
    return kind(value)


def _resolve_config(args, overrides: dict | None = None) -> TrainConfig:
    values = {f: getattr(TrainConfig(), f) for f in TrainConfig.field_names()}
    if getattr(args, "config", None):
        for key, raw in _parse_config_file(args.config).items():
            values[key] = _coerce(key, raw)
    flag_values = {
        "temp": args.temp, "lambda": args.lambda_, "batch": args.batch,
        "lr": args.lr, "iters": args.iters, "seed": args.seed, "norm": args.norm,
        "grad_normalize": args.grad_normalize, "size": args.size,
        "log_every": args.log_every, "noise_dim": args.noise_dim,
        "noise_channels": args.noise_channels, "width": args.width,
        "hidden": args.hidden, "bank_seed": args.bank_seed,
        "rho_floor": args.rho_floor, "norm_eps": args.norm_eps,
        "alpha": getattr(args, "alpha", None),
    }
    for flag, value in flag_values.items():
        if value is not None:
            values[_FLAG_FIELDS[flag]] = _coerce(_FLAG_FIELDS[flag], value)
    if overrides:
        values.update(overrides)
    return TrainConfig(**values)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: TrainConfig,
                    inputs: dict[str, str], artifacts: dict[str, str]) -> None:
    lines = {
        "command": command,
        "version": __version__,
    }
    for field, value in cfg.as_dict().items():
        lines[f"config.{field}"] = value
    for key, path in inputs.items():
        lines[f"input.{key}.path"] = os.path.abspath(path)
        if os.path.isfile(path):
            lines[f"input.{key}.sha256"] = _sha256(path)
    for key, name in artifacts.items():
        lines[f"artifact.{key}"] = name
    with open(out_dir / MANIFEST_FILE, "w") as fh:
        for key in sorted(lines):
            fh.write(f"{key}={lines[key]}\n")


def read_manifest(path) -> dict[str, str]:
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


def replay_manifest(manifest_path, out_dir) -> int:
    """Re-run the training command a manifest describes, into a fresh output
    directory.  Inputs are taken from their recorded absolute paths."""
    entries = read_manifest(manifest_path)
    command = entries["command"]
    argv = [command, "--out", str(out_dir)]
    if "input.style.path" in entries:
        argv += ["--style", entries["input.style.path"]]
    if "input.content_dir.path" in entries:
        argv += ["--content-dir", entries["input.content_dir.path"]]
    for flag, field in _FLAG_FIELDS.items():
        key = f"config.{field}"
        if key not in entries:
            continue
        if field == "grad_normalize":
            argv.append("--grad-normalize" if entries[key] == "True" else "--no-grad-normalize")
        elif field == "content_weight" and command == "train-texture":
            continue
        else:
            argv += [f"--{flag.replace('_', '-')}", entries[key]]
    return main(argv)


def _train_summary(report: TrainReport) -> str:
    last = report.rows[-1] if report.rows else None
    head = (f"final objective {last.objective:.6g} (style {last.style:.6g})"
            if last else "no training iterations")
    return f"{head}; diversity {report.final_diversity:.6g}; wall {report.wall_time_s:.1f}s"


def cmd_train_texture(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reference = images.load_image(args.style)
    _write_manifest(out_dir, "train-texture", cfg, {"style": args.style},
                    {"params": PARAMS_FILE, "report": REPORT_FILE, "samples": SAMPLES_FILE})
    gen, report = train_texture(cfg, reference)
    save_params(gen, out_dir / PARAMS_FILE)
    report.to_csv(out_dir / REPORT_FILE)
    grid = sample_texture(gen, max(cfg.batch_size, 4), seed=cfg.seed + 1)
    images.save_grid(out_dir / SAMPLES_FILE, grid)
    print(f"train-texture: {_train_summary(report)}")
    return 0


def cmd_train_style(args) -> int:
    cfg = _resolve_config(args)
    if cfg.content_weight == 0:
        log.warning("content weight is 0; stylization degenerates to texture training")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    content_dir = Path(args.content_dir)
    pngs = sorted(content_dir.glob("*.png"))
    if not pngs:
        raise ConfigError(f"{content_dir}: no .png content images found")
    corpus = [images.load_image(p) for p in pngs]
    reference = images.load_image(args.style)
    inputs = {"style": args.style, "content_dir": str(content_dir)}
    for i, p in enumerate(pngs):
        inputs[f"content.{i}"] = str(p)
    _write_manifest(out_dir, "train-style", cfg, inputs,
                    {"params": PARAMS_FILE, "report": REPORT_FILE,
                     "samples": SAMPLES_FILE, "stylized": STYLIZED_FILE})
    gen, report = train_stylizer(cfg, reference, corpus)
    save_params(gen, out_dir / PARAMS_FILE)
    report.to_csv(out_dir / REPORT_FILE)
    per_content = 4 if cfg.noise_channels > 0 else 1
    grid = sample_stylized(gen, corpus[0], max(per_content, 2), seed=cfg.seed + 1)
    images.save_grid(out_dir / SAMPLES_FILE, grid)
    rows = [sample_stylized(gen, c, per_content, seed=cfg.seed + 1) for c in corpus]
    images.save_grid(out_dir / STYLIZED_FILE, np.concatenate(rows, axis=0), cols=per_content)
    print(f"train-style: {_train_summary(report)}")
    return 0


def cmd_sample(args) -> int:
    gen = load_params(args.params)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if gen.desc.kind == "stylizer":
        if not args.content:
            raise ConfigError("sampling a stylizer requires --content <png>")
        content = images.load_image(args.content)
        samples = sample_stylized(gen, content, args.n, seed=args.seed)
    else:
        samples = sample_texture(gen, args.n, seed=args.seed)
    for i in range(samples.shape[0]):
        images.save_image(out_dir / f"sample_{i:02d}.png", samples[i])
    if samples.shape[0] >= 2:
        print(f"diversity {diversity_metric(samples):.6g}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = checks.run_suite(tol=args.tol, only=args.only)
    if not reports:
        raise ConfigError(f"no gradient checks match {args.only!r}; "
                          f"known: {', '.join(checks.CHECK_NAMES)}")
    for r in reports:
        print(r.line())
    failing = [r for r in reports if not r.passed]
    if failing:
        worst = max(failing, key=lambda r: r.max_rel_err)
        print(f"FAILED {len(failing)}/{len(reports)} checks; worst: {worst.name} "
              f"max_rel_err={worst.max_rel_err:.3e}")
        return 1
    print(f"all {len(reports)} gradient checks passed at tol {args.tol:.1e}")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs: list[tuple[str, TrainReport]] = []
    seen = set()
    for path in args.csv:
        name = Path(path).stem
        while name in seen:
            name += "+"
        seen.add(name)
        runs.append((name, TrainReport.from_csv(path)))

    merged = out_dir / "merged.csv"
    with open(merged, "w") as fh:
        fh.write("run,iteration,style,content,diversity,objective\n")
        for name, report in runs:
            for r in report.rows:
                fh.write(f"{name},{r.iteration},{r.style!r},{r.content!r},"
                         f"{r.diversity!r},{r.objective!r}\n")

    iterations = sorted({r.iteration for _, rep in runs for r in rep.rows})
    by_run = [{r.iteration: r.objective for r in rep.rows} for _, rep in runs]
    dat = out_dir / "report.dat"
    with open(dat, "w") as fh:
        fh.write("# iteration " + " ".join(f"objective:{name}" for name, _ in runs) + "\n")
        for it in iterations:
            cells = " ".join(repr(column[it]) if it in column else "nan" for column in by_run)
            fh.write(f"{it} {cells}\n")
        for name, rep in runs:
            if rep.rows:
                fh.write(f"# summary run={name} rows={len(rep.rows)} "
                         f"final_objective={rep.rows[-1].objective!r} "
                         f"final_style={rep.rows[-1].style!r} "
                         f"mean_diversity={np.mean([r.diversity for r in rep.rows])!r}\n")
            else:
                fh.write(f"# summary run={name} rows=0\n")
    print(f"wrote {merged} and {dat} ({len(runs)} run(s), {len(iterations)} iteration(s))")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="julesz",
        description="Texture and stylization generator training with a "
                    "diversity-inducing objective.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-texture", help="train a noise-to-texture generator")
    p.add_argument("--style", required=True, help="reference texture PNG")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_texture)

    p = sub.add_parser("train-style", help="train a content stylizer")
    p.add_argument("--style", required=True, help="reference texture PNG")
    p.add_argument("--content-dir", required=True, help="directory of content PNGs")
    p.add_argument("--alpha", type=float, default=None, help="content weight")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_style)

    p = sub.add_parser("sample", help="draw samples from trained parameters")
    p.add_argument("--params", required=True, help="parameter file")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--content", help="content PNG (stylizer parameters only)")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gradcheck", help="autodiff vs finite differences")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--only", help="restrict to checks whose name contains this")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="merge training CSVs for plotting")
    p.add_argument("--csv", action="append", required=True, help="report CSV (repeatable)")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("JULESZ_THREADS", "0")
    if threads not in ("", "0"):
        log.info("JULESZ_THREADS=%s requested; this build always evaluates "
                 "single-threaded (deterministic)", threads)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (TensorError, ConfigError, ParamsFileError, DivergenceError,
            images.ImageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
