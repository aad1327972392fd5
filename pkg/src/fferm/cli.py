"""Command-line front end: train, evaluate, sweep, shift.

Every run writes a flat-text manifest holding the fully resolved
configuration; output CSVs carry a short hash of that configuration so a
result file can always be traced back to the exact flags that produced it.
Re-running with --from-manifest reproduces a run byte for byte (timestamps
live in the manifest but are excluded from the hash).

Exit codes: 0 ok, 2 configuration error, 3 numeric abort during training,
4 accuracy target unreachable in a shift experiment.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_csv, split, standardize
from .divergences import parse_divergence
from .errors import ConfigError, FfermError, NonFiniteUpdate, TargetUnreachable
from .experiments import (
    METHODS,
    default_lambda_grid,
    shift_cross_domain_experiment,
    shift_flip_experiment,
)
from .metrics import metrics_report
from .models import forward_batch, load_model, save_model
from .robust import GRADNORM, LINF, RobustConfig, robust_train_linf, robust_train_smallshift
from .training import TrainerConfig, train

DEFAULTS = {
    "div": "chi2",
    "lam": 0.0,
    "eta_theta": 1e-5,
    "eta_alpha": 1e-6,
    "epochs": 2000,
    "warmup": 300,
    "batch_size": 64,
    "seed": 0,
    "notion": "dp",
    "robust": "none",
    "delta": 0.1,
    "p_norm": "2",
    "out_dir": ".",
    "test_fraction": 0.2,
    "arch": "linear",
    "width": 16,
    "grid": 10,
    "target_acc": 0.8,
    "methods": ",".join(METHODS),
}

_SHARED_FLAGS = [
    ("--data", str, "training CSV path"),
    ("--features", str, "comma-separated feature column names"),
    ("--label", str, "label column name"),
    ("--groups", str, "comma-separated sensitive-group column names"),
    ("--div", str, "divergence token: chi2|kl|reverse-kl|tv|js|hellinger|alpha:<a>"),
    ("--lambda", float, "fairness weight"),
    ("--eta-theta", float, "model step size"),
    ("--eta-alpha", float, "dual step size"),
    ("--epochs", int, "total epochs"),
    ("--warmup", int, "epochs trained with lambda forced to 0"),
    ("--batch-size", int, "minibatch size"),
    ("--seed", int, "RNG seed"),
    ("--notion", str, "dp|eo|eodds"),
    ("--robust", str, "none|gradnorm|linf"),
    ("--delta", float, "shift radius for robust modes"),
    ("--p-norm", str, "ball norm for gradnorm mode: 2|inf"),
    ("--out-dir", str, "output directory"),
    ("--test-fraction", float, "held-out fraction (0 disables the split)"),
    ("--arch", str, "linear|onehidden"),
    ("--width", int, "hidden width for onehidden"),
    ("--config", str, "flat key=value config file (flags override it)"),
    ("--from-manifest", str, "manifest of a previous run to reproduce"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fferm", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    specs = {
        "train": [],
        "evaluate": [("--model", str, "model checkpoint to evaluate")],
        "sweep": [("--grid", int, "log-spaced lambda grid size (plus lambda=0)")],
        "shift": [
            ("--flip-fractions", str, "comma-separated group-flip fractions"),
            ("--train-data", str, "training-domain CSV (cross-domain mode)"),
            ("--methods", str, "comma-separated subset of " + ",".join(METHODS)),
            ("--target-acc", float, "accuracy every method is matched to"),
        ],
    }
    for cmd, extra in specs.items():
        sp = sub.add_parser(cmd)
        for flag, typ, help_ in _SHARED_FLAGS + extra:
            dest = "lam" if flag == "--lambda" else flag.lstrip("-").replace("-", "_")
            sp.add_argument(flag, type=typ, default=None, dest=dest, help=help_)
        if cmd == "shift":
            sp.add_argument(
                "--eval-data", action="append", default=None,
                help="evaluation-domain CSV (repeatable)",
            )
    return parser


# -- option resolution -----------------------------------------------------------


def _read_kv_file(path: str, what: str) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc}") from exc
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(key: str, raw: str):
    kind = {
        "lam": float, "eta_theta": float, "eta_alpha": float, "delta": float,
        "test_fraction": float, "target_acc": float,
        "epochs": int, "warmup": int, "batch_size": int, "seed": int,
        "width": int, "grid": int,
    }.get(key, str)
    return kind(raw)


def resolve_options(args: argparse.Namespace) -> dict:
    """CLI flag > config file > manifest > built-in default."""
    opts = dict(DEFAULTS)
    if getattr(args, "from_manifest", None):
        manifest = _read_kv_file(args.from_manifest, "manifest")
        if manifest.get("cmd", args.cmd) != args.cmd:
            raise ConfigError(
                f"--from-manifest: manifest records cmd={manifest.get('cmd')!r}, not {args.cmd!r}"
            )
        for key, raw in manifest.items():
            if key.startswith("arg."):
                name = key[4:]
                opts[name] = _coerce(name, raw) if raw != "" else None
    if getattr(args, "config", None):
        for key, raw in _read_kv_file(args.config, "config file").items():
            name = key.replace("-", "_")
            opts[name] = _coerce(name, raw)
    for key, value in vars(args).items():
        if key in ("cmd", "config", "from_manifest"):
            continue
        if value is not None:
            opts[key] = value
    opts["cmd"] = args.cmd
    return opts


def _require(opts: dict, *names: str) -> None:
    for name in names:
        if not opts.get(name):
            raise ConfigError(f"--{name.replace('_', '-')} is required")


def config_hash(opts: dict) -> str:
    """Short digest of everything that can influence the results.

    out_dir only decides where files land, so it stays out of the hash and a
    reproduced run into a fresh directory emits byte-identical CSVs.
    """
    lines = [f"cmd={opts['cmd']}"]
    for key in sorted(opts):
        if key in ("cmd", "out_dir") or opts[key] is None:
            continue
        value = opts[key]
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, list):
            value = ";".join(map(str, value))
        lines.append(f"arg.{key}={value}")
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:12]


def write_manifest(opts: dict, out_dir: Path, outputs: dict, started: float) -> Path:
    path = out_dir / "manifest.txt"
    lines = ["# fferm run manifest v1", f"cmd={opts['cmd']}", f"version={__version__}",
             f"config_hash={config_hash(opts)}"]
    for key in sorted(opts):
        if key == "cmd" or opts[key] is None:
            continue
        value = opts[key]
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, list):
            value = ";".join(map(str, value))
        lines.append(f"arg.{key}={value}")
    lines.append(f"started={time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime(started))}")
    lines.append(f"finished={time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime())}")
    for name, target in outputs.items():
        lines.append(f"out.{name}={target}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows_csv(path: Path, columns: list[str], rows: list[dict], manifest_hash: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns + ["manifest_hash"]) + "\n")
        for row in rows:
            fh.write(",".join([_fmt(row[c]) for c in columns] + [manifest_hash]) + "\n")


# -- data plumbing ----------------------------------------------------------------


def _load_dataset(opts: dict, key: str = "data"):
    _require(opts, key, "features", "label", "groups")
    return load_csv(
        opts[key],
        feature_cols=[c.strip() for c in opts["features"].split(",") if c.strip()],
        label_col=opts["label"],
        group_cols=[c.strip() for c in opts["groups"].split(",") if c.strip()],
        standardize_features=False,
    )


def _split_and_standardize(data, opts):
    frac = float(opts["test_fraction"])
    if frac == 0.0:
        return standardize(data), None
    train_part, test_part = split(data, frac, int(opts["seed"]))
    return standardize(train_part, test_part)


def _trainer_config(opts: dict) -> TrainerConfig:
    spec = parse_divergence(str(opts["div"]))
    common = dict(
        divergence=spec,
        lam=float(opts["lam"]),
        eta_theta=float(opts["eta_theta"]),
        eta_alpha=float(opts["eta_alpha"]),
        epochs_total=int(opts["epochs"]),
        warmup_epochs=int(opts["warmup"]),
        batch_size=int(opts["batch_size"]),
        seed=int(opts["seed"]),
        fairness_notion=str(opts["notion"]),
        model=str(opts["arch"]),
        hidden_width=int(opts["width"]),
    )
    robust = str(opts["robust"])
    if robust == "none":
        return TrainerConfig(**common)
    if robust not in (GRADNORM, LINF):
        raise ConfigError(f"--robust must be none|{GRADNORM}|{LINF}")
    p_norm = {"2": 2.0, "inf": math.inf}.get(str(opts["p_norm"]))
    if p_norm is None:
        raise ConfigError("--p-norm must be 2 or inf")
    return RobustConfig(**common, mode=robust, delta=float(opts["delta"]), p_norm=p_norm)


def _run_training(data, cfg, eval_data):
    if isinstance(cfg, RobustConfig):
        runner = robust_train_smallshift if cfg.mode == GRADNORM else robust_train_linf
        return runner(data, cfg, eval_data)
    return train(data, cfg, eval_data)


# -- subcommands --------------------------------------------------------------------


def cmd_train(opts: dict) -> int:
    started = time.time()
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(opts)
    train_part, test_part = _split_and_standardize(data, opts)
    cfg = _trainer_config(opts)
    report = _run_training(train_part, cfg, test_part)
    h = config_hash(opts)
    report_path = out_dir / "report.csv"
    model_path = out_dir / "model.bin"
    report.to_csv(report_path, manifest_hash=h)
    save_model(report.final_params, model_path)
    write_manifest(opts, out_dir, {"report": report_path, "model": model_path}, started)
    return 0


def cmd_evaluate(opts: dict) -> int:
    started = time.time()
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _require(opts, "model")
    data = _load_dataset(opts)
    data = standardize(data)
    params = load_model(opts["model"])
    probs, _ = forward_batch(params, data.features)
    preds = np.argmax(probs, axis=1)
    spec = parse_divergence(str(opts["div"]))
    rep = metrics_report(preds, data.groups, data.labels, spec, k=data.k)
    row = {
        "accuracy": rep.accuracy,
        "dpv": rep.dpv,
        "eov": rep.eov,
        "eoddsv": rep.eoddsv,
        "divergence_value": rep.divergence_value,
    }
    h = config_hash(opts)
    metrics_path = out_dir / "metrics.csv"
    write_rows_csv(metrics_path, list(row), [row], h)
    write_manifest(opts, out_dir, {"metrics": metrics_path}, started)
    return 0


def cmd_sweep(opts: dict) -> int:
    started = time.time()
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(opts)
    train_part, test_part = _split_and_standardize(data, opts)
    tokens = [t.strip() for t in str(opts["div"]).split(",") if t.strip()]
    h = config_hash(opts)
    outputs = {}
    for token in tokens:
        spec = parse_divergence(token)
        cfg = replace(_trainer_config({**opts, "div": token, "lam": 0.0}))
        rows = []
        for lam in default_lambda_grid(spec, int(opts["grid"])):
            rep = _run_training(train_part, replace(cfg, lam=lam), test_part)
            suffix = "_test" if test_part is not None else "_train"
            rows.append(
                {
                    "lambda": lam,
                    "accuracy": rep.final("acc" + suffix),
                    "dpv": rep.final("dpv" + suffix),
                    "eov": rep.final("eov" + suffix),
                    "eoddsv": rep.final("eoddsv" + suffix),
                }
            )
        rows.sort(key=lambda r: r["lambda"])
        name = f"tradeoff_{token.replace(':', '-')}.csv"
        write_rows_csv(out_dir / name, ["lambda", "accuracy", "dpv", "eov", "eoddsv"], rows, h)
        outputs[f"tradeoff.{token}"] = out_dir / name
    write_manifest(opts, out_dir, outputs, started)
    return 0


def cmd_shift(opts: dict) -> int:
    started = time.time()
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = [m.strip() for m in str(opts["methods"]).split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"--methods: unknown method {m!r}")
    cfg = _trainer_config({**opts, "robust": "none"})
    flip = opts.get("flip_fractions")
    cross_train = opts.get("train_data")
    if flip:
        data = _load_dataset(opts)
        data = standardize(data)
        fractions = [float(v) for v in str(flip).split(",") if v != ""]
        rows = shift_flip_experiment(
            data, cfg, fractions, methods=methods, delta=float(opts["delta"]),
            target_acc=float(opts["target_acc"]),
        )
    elif cross_train:
        eval_paths = opts.get("eval_data")
        if isinstance(eval_paths, str):
            eval_paths = [p for p in eval_paths.split(";") if p]
        if not eval_paths:
            raise ConfigError("--eval-data is required in cross-domain mode")
        train_data = standardize(_load_dataset(opts, key="train_data"))
        eval_sets = {}
        for path in eval_paths:
            eval_sets[Path(path).stem] = standardize(
                _load_dataset({**opts, "data": path})
            )
        rows = shift_cross_domain_experiment(
            train_data, eval_sets, cfg, methods=methods, delta=float(opts["delta"]),
            target_acc=float(opts["target_acc"]),
        )
    else:
        raise ConfigError("--flip-fractions or --train-data is required")
    h = config_hash(opts)
    shift_path = out_dir / "shift.csv"
    write_rows_csv(
        shift_path, ["method", "setting", "lambda", "accuracy", "dpv"], rows, h
    )
    write_manifest(opts, out_dir, {"shift": shift_path}, started)
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "shift": cmd_shift,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        return COMMANDS[args.cmd](opts)
    except TargetUnreachable as exc:
        print(f"fferm: {exc}", file=sys.stderr)
        return 4
    except NonFiniteUpdate as exc:
        print(f"fferm: {exc}", file=sys.stderr)
        return 3
    except (FfermError, OSError) as exc:
        print(f"fferm: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
