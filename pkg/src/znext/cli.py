"""``znext`` command line: synth, train, predict, eval, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import checkpoint, metrics, netpbm
from .data import ManifestError, load_dataset
from .model import ModelConfig, Segmenter, predict_to_gt_size
from .synthetic import SyntheticSpec, write_synthetic
from .tensor import NonFiniteError, corrupt_backward
from .train import TrainingDiverged, resize_sample, train

log = logging.getLogger("znext")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# configuration

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_ual(text: str) -> dict:
    """``pow2``, ``exp1``, ``pow0.5``, ``weighted`` or ``off`` to loss fields."""
    text = text.strip().lower()
    if text in ("off", "none"):
        return {"ual_form": "none"}
    if text in ("weighted", "weighted-bce"):
        return {"ual_form": "weighted-bce"}
    m = re.fullmatch(r"(pow|exp)([0-9.]+(?:/[0-9.]+)?)?", text)
    if not m:
        raise ValueError(f"unknown UAL setting {text!r} (expected pow2, exp1, off, ...)")
    out = {"ual_form": m.group(1)}
    if m.group(2):
        num, _, den = m.group(2).partition("/")
        out["alpha"] = float(num) / float(den or 1)
    return out


# flat key -> (section, field, parser); section None means top level
KEYS = {
    "levels": ("encoder", "levels", int),
    "channels": ("encoder", "channels", int),
    "widths": ("encoder", "widths", _ints),
    "heads": (None, "heads", int),
    "groups": (None, "groups", int),
    "clip_len": (None, "clip_len", int),
    "scales": (None, "scales", _floats),
    "downsample": (None, "downsample", str),
    "fusion": (None, "fusion", str),
    "shift": ("temporal", "shift", _bool),
    "attention": ("temporal", "attention", _bool),
    "diffusion": ("temporal", "diffusion", _bool),
    "ual_form": ("loss", "ual_form", str),
    "alpha": ("loss", "alpha", float),
    "schedule": ("loss", "schedule", str),
    "t_min": ("loss", "t_min", float),
    "t_max": ("loss", "t_max", float),
    "lambda_min": ("loss", "lambda_min", float),
    "lambda_max": ("loss", "lambda_max", float),
    "lambda_const": ("loss", "lambda_const", float),
    "lr": (None, "lr", float),
    "decay_factor": (None, "decay_factor", float),
    "epochs": (None, "epochs", int),
    "batch_size": (None, "batch_size", int),
    "input_side": (None, "input_side", int),
    "augment": (None, "augment", _bool),
    "seed": (None, "seed", int),
}


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; unknown keys rejected."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        if key not in KEYS and key != "ual":
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def resolve_config(file_values: dict[str, str], flags: dict[str, str], base: ModelConfig | None = None) -> ModelConfig:
    """Defaults < config file < flags."""
    merged = {**file_values, **{k: v for k, v in flags.items() if v is not None}}
    d = asdict(base or ModelConfig())
    try:
        if "ual" in merged:
            for k, v in parse_ual(str(merged.pop("ual"))).items():
                merged.setdefault(k, v)
        for key, value in merged.items():
            if key not in KEYS:
                raise UsageError(f"unknown config key {key!r}")
            section, name, conv = KEYS[key]
            target = d if section is None else d[section]
            target[name] = conv(value) if isinstance(value, str) else value
        return ModelConfig.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _sidecar(ckpt) -> Path:
    return Path(f"{os.fspath(ckpt)}.json")


# commands

def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(count=args.count, side=args.side, contrast=args.contrast,
                             clip_len=args.clip_len, drift=args.drift, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        manifest = write_synthetic(args.out, spec)
    except OSError as exc:
        raise DataError(f"cannot write to {args.out}: {exc}") from None
    log.info("wrote %d samples and %s", spec.count, manifest)
    return EXIT_OK


def _load(manifest):
    try:
        return load_dataset(manifest)
    except (OSError, ManifestError, netpbm.PnmError) as exc:
        raise DataError(str(exc)) from None


def cmd_train(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    flags = {"ual": args.ual, "schedule": args.schedule, "heads": args.heads, "groups": args.groups,
             "scales": args.scales, "downsample": args.downsample, "clip_len": args.clip_len,
             "seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr}
    dataset, video = _load(args.data)
    if not dataset:
        raise DataError(f"{args.data}: manifest lists no samples")
    if video and "clip_len" not in file_values and args.clip_len is None:
        flags["clip_len"] = str(dataset[0].clip_len)
    cfg = resolve_config(file_values, {k: (str(v) if v is not None else None) for k, v in flags.items()})
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    log.info("seed: %d", cfg.seed)
    log_path = Path(args.log) if args.log else Path(f"{os.fspath(args.out)}.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch", "loss", "lambda", "lr"))

        def on_epoch(e):
            writer.writerow((e.epoch, repr(e.loss), repr(e.lam), repr(e.lr)))
            fh.flush()
            log.info("epoch %d loss %.5f lambda %.4f lr %.2e", e.epoch, e.loss, e.lam, e.lr)

        try:
            result = train(dataset, cfg, on_epoch=on_epoch)
        except ValueError as exc:
            raise DataError(str(exc)) from None
    checkpoint.save_model(args.out, result.model)
    _sidecar(args.out).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    log.info("saved %s (%d parameters)", args.out, result.model.param_count())
    return EXIT_OK


def _predict_config(args) -> ModelConfig:
    sidecar = _sidecar(args.ckpt)
    if args.config:
        return resolve_config(read_config_file(args.config), {})
    if sidecar.exists():
        try:
            return ModelConfig.from_dict(json.loads(sidecar.read_text()))
        except (ValueError, TypeError) as exc:
            raise DataError(f"{sidecar}: {exc}") from None
    raise UsageError(f"no config: pass --config or keep {sidecar} next to the checkpoint")


def cmd_predict(args) -> int:
    cfg = _predict_config(args)
    model = Segmenter(cfg)
    try:
        checkpoint.load_model(args.ckpt, model, force=args.force)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except checkpoint.CheckpointError as exc:
        raise DataError(f"{args.ckpt}: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.ckpt}: checkpoint does not fit the model: {exc}") from None
    dataset, video = _load(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for sample in dataset:
        gt_h, gt_w = sample.masks.shape[2:]
        resized = resize_sample(sample, cfg.input_side)
        clip_len = sample.clip_len if video else None
        pred = model.predict(resized.frames, clip_len)
        pred = predict_to_gt_size(pred, gt_h, gt_w).data
        for name, p in zip(sample.names, pred):
            netpbm.write_prediction(out / f"{name}.pgm", p[0])
            count += 1
    log.info("wrote %d predictions to %s", count, out)
    return EXIT_OK


def _pgm_index(directory) -> dict[str, Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    return {p.stem: p for p in sorted(d.glob("*.pgm"))}


def worker_count() -> int:
    env = os.environ.get("ZNEXT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"ZNEXT_THREADS must be an integer, got {env!r}") from None
    return min(4, os.cpu_count() or 1)


def cmd_eval(args) -> int:
    preds, gts = _pgm_index(args.pred), _pgm_index(args.gt)
    only_pred = sorted(set(preds) - set(gts))
    only_gt = sorted(set(gts) - set(preds))
    if only_pred or only_gt:
        parts = []
        if only_gt:
            parts.append("missing predictions for: " + ", ".join(str(gts[n]) for n in only_gt))
        if only_pred:
            parts.append("missing masks for: " + ", ".join(str(Path(args.gt) / f"{n}.pgm") for n in only_pred))
        raise DataError("; ".join(parts))
    if not preds:
        raise DataError(f"no .pgm files in {args.pred}")
    names = sorted(preds)

    def one(name):
        try:
            p = netpbm.read_prediction(preds[name])
            g = netpbm.read_mask(gts[name])
        except netpbm.PnmError as exc:
            raise DataError(str(exc)) from None
        if p.shape != g.shape:
            raise DataError(f"{name}: prediction {p.shape} and mask {g.shape} differ in size")
        return metrics.evaluate(p, g)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        reports = list(pool.map(one, names))
    for name, r in zip(names, reports):
        for w in r.warnings:
            log.warning("%s: %s", name, w)
    summary = metrics.write_report_csv(args.out, names, reports)
    if args.curves:
        curves = Path(args.curves)
        curves.mkdir(parents=True, exist_ok=True)
        for name, r in zip(names, reports):
            metrics.write_curves_csv(curves / f"{name}.csv", r)
        metrics.write_curves_csv(curves / "mean.csv", summary)
    log.info("mean: %s", " ".join(f"{k}={v:.4f}" for k, v in summary.scalars().items()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import run_checks, selected

    try:
        selected(args.module)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ok = True
    ctx = corrupt_backward(args.corrupt_op) if args.corrupt_op else contextlib.nullcontext()
    with ctx:
        for check, report in run_checks(args.module, args.seed):
            status = "ok" if report.ok else "FAIL"
            ok &= report.ok
            detail = f"  ({report.failure})" if report.failure else ""
            print(f"{check.name:<24} {check.group:<7} max_rel_err={report.max_error:.3e} "
                  f"tol={check.tol:.0e} coords={sum(report.checked):<5} {status}{detail}", flush=True)
    print("all checks passed" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> Parser:
    p = Parser(prog="znext", description="Zoom-pyramid camouflaged object segmentation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("synth", help="generate a synthetic camouflage dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--side", type=int, default=64)
    s.add_argument("--contrast", type=float, default=0.15)
    s.add_argument("--clip-len", type=int, default=1)
    s.add_argument("--drift", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on a manifest")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="CSV log path (default: <out>.csv)")
    t.add_argument("--ual")
    t.add_argument("--schedule", choices=("cosine", "linear", "constant"))
    t.add_argument("--heads", type=int)
    t.add_argument("--groups", type=int)
    t.add_argument("--scales")
    t.add_argument("--downsample", choices=("hybrid", "max", "avg", "bilinear", "bicubic"))
    t.add_argument("--clip-len", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="write prediction maps for a manifest")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.add_argument("--force", action="store_true", help="load despite a config digest mismatch")
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score predictions against masks")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--curves")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--module", default="all")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corrupt-op", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (TrainingDiverged, NonFiniteError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
