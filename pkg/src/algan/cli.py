"""Command-line entry point.

Exit codes: 0 success, 2 configuration/validation failure, 3 numeric failure.
Output directories default to ``$ALGAN_OUT_ROOT/<config name>`` (or
``./runs/<config name>``) and are never overwritten without ``--overwrite``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import evaluation as E
from .config import ExperimentConfig, load_config
from .data import KINDS, SyntheticSpec, generate, read_feature_file, write_feature_file
from .errors import AlganError, ConfigError, DimensionError, TrainingError
from .experiment import Manifest, run_experiment, write_jsonl
from .nn import load_checkpoint

logger = logging.getLogger("algan")

OUT_ROOT_ENV = "ALGAN_OUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SWEEP_PARAMS = {"sigma": float, "alpha": float, "xi": float, "n_z": int, "n_dis": int}


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,1,5"`` or ``"0-9"`` (inclusive range) or a mix of both."""
    seeds: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}", "--seeds") from None
    if not seeds:
        raise ConfigError("no seeds given", "--seeds")
    return tuple(seeds)


def resolve_out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out_dir:
        base = Path(args.out_dir)
    elif cfg.output_dir:
        base = Path(cfg.output_dir)
    else:
        base = Path(os.environ.get(OUT_ROOT_ENV, "runs")) / Path(args.config).stem
    if base.exists() and any(base.iterdir()):
        if args.new_run:
            i = 1
            while (base / f"run-{i:03d}").exists():
                i += 1
            base = base / f"run-{i:03d}"
        elif args.overwrite:
            shutil.rmtree(base)
        else:
            raise ConfigError(f"{base} exists and is not empty; pass --overwrite or --new-run", "--out-dir")
    base.mkdir(parents=True, exist_ok=True)
    return base


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seeds:
        cfg.seeds = parse_seeds(args.seeds)
    return cfg


def cmd_train(args) -> int:
    cfg = _load(args)
    out = resolve_out_dir(args, cfg)
    report = run_experiment(cfg, out, jobs=args.jobs)
    sys.stdout.write(report.table())
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    networks, meta, arrays = load_checkpoint(args.checkpoint)
    disc = networks["discriminator"]
    values, _ = read_feature_file(args.data)
    d = disc.in_dim
    if values.shape[1] == d + 1:
        x, labels = values[:, :-1], values[:, -1]
        if not np.isin(labels, (0, 1)).all():
            raise ConfigError("last column must hold 0/1 labels", "data")
        labels = labels.astype(np.int64)
    elif values.shape[1] == d:
        x, labels = values, None
    else:
        raise DimensionError(f"checkpoint expects {d} features, data has {values.shape[1]} columns")
    x = (x - arrays["norm_mean"]) / arrays["norm_std"]
    scores = E.anomaly_score(disc, x)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("eval_scores.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    E.write_scores(out, scores, labels)
    summary: dict = {"n": int(len(scores)), "scores_file": str(out)}
    if labels is not None and 0 < labels.sum() < len(labels):
        summary["auroc"] = E.auroc(scores, labels)
    else:
        summary["auroc"] = None
        summary["notice"] = "single-class data: AUROC unavailable, scores only"
    threshold = args.threshold if args.threshold is not None else meta.get("threshold")
    if threshold is not None:
        flagged = E.classify(scores, threshold)
        summary["threshold"] = threshold if math.isfinite(threshold) else str(threshold)
        summary["n_flagged_anomalous"] = int(flagged.sum())
        if labels is not None:
            summary["confusion"] = E.confusion_counts(scores, labels, threshold)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _grid_report(rows: list[dict], key_names: list[str]) -> str:
    head = " ".join(f"{k:>14}" for k in key_names) + f" {'mean_auroc':>11} {'std':>8} {'n':>3}"
    lines = [head]
    for r in rows:
        keys = " ".join(f"{str(r[k]):>14}" for k in key_names)
        agg = r["test_auroc"]
        mean = "n/a" if agg["mean"] is None else f"{agg['mean']:.4f}"
        std = "n/a" if agg["std"] is None else f"{agg['std']:.4f}"
        lines.append(f"{keys} {mean:>11} {std:>8} {agg['n']:>3}")
    return "\n".join(lines) + "\n"


ABLATION_CELLS = (
    ("neither", False, False),
    ("buffer_only", True, False),
    ("anomalous_only", False, True),
    ("both", True, True),
)


def ablation_configs(cfg: ExperimentConfig) -> list[tuple[str, bool, bool, ExperimentConfig]]:
    """The 2x2 grid: anomalous latents off means alpha=1, buffer off means xi=1."""
    out = []
    for name, buffered, anomalous in ABLATION_CELLS:
        params = {
            "alpha": cfg.model.latent.alpha if anomalous else 1.0,
            "xi": cfg.training.xi if buffered else 1.0,
        }
        out.append((name, buffered, anomalous, cfg.with_params(**params)))
    return out


def cmd_ablate(args) -> int:
    cfg = _load(args)
    cells = ablation_configs(cfg)
    out = resolve_out_dir(args, cfg)
    manifest = Manifest(out)
    rows = []
    for name, buffered, anomalous, cell_cfg in cells:
        report = run_experiment(cell_cfg, out, manifest, prefix=name, jobs=args.jobs)
        rows.append({"cell": name, "buffered_data": buffered, "anomalous_latent": anomalous,
                     "alpha": cell_cfg.model.latent.alpha, "xi": cell_cfg.training.xi,
                     "test_auroc": report.aggregate, "seeds": report.entries})
    write_jsonl(manifest.path("ablation.jsonl"), rows)
    table = _grid_report(rows, ["cell", "buffered_data", "anomalous_latent"])
    manifest.path("ablation.txt").write_text(table)
    manifest.write()
    sys.stdout.write(table)
    return EXIT_OK


def parse_values(param: str, text: str) -> list:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown parameter {param!r}; choose from {sorted(SWEEP_PARAMS)}", "--param")
    conv = SWEEP_PARAMS[param]
    try:
        values = [conv(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse values {text!r} as {conv.__name__}", "--values") from None
    if not values:
        raise ConfigError("no values given", "--values")
    return values


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = parse_values(args.param, args.values)
    configs = [(v, cfg.with_params(**{args.param: v})) for v in values]  # validates every value up front
    out = resolve_out_dir(args, cfg)
    manifest = Manifest(out)
    rows = []
    for v, c in configs:
        report = run_experiment(c, out, manifest, prefix=f"{args.param}_{v}", jobs=args.jobs)
        rows.append({"param": args.param, "value": v, "test_auroc": report.aggregate, "seeds": report.entries})
    write_jsonl(manifest.path("sweep.jsonl"), rows)
    table = _grid_report(rows, ["value"])
    manifest.path("sweep.txt").write_text(table)
    manifest.write()
    sys.stdout.write(f"sweep over {args.param}\n" + table)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(kind=args.kind, n_normal=args.n_normal, n_anomalous=args.n_anomalous, dim=args.dim,
                         seed=args.seed)
    x, labels = generate(spec)
    out = Path(args.out)
    if out.exists() and not args.overwrite:
        raise ConfigError(f"{out} exists; pass --overwrite", "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_file(out, x, labels)
    print(f"wrote {len(x)} rows ({spec.n_normal} normal, {spec.n_anomalous} anomalous, dim {x.shape[1]}) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="algan", description="ALGAN anomaly detection")
    parser.add_argument("-v", "--verbose", action="store_true", help="log validation progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--out-dir", help=f"output directory (default ${OUT_ROOT_ENV}/<config name>)")
        p.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 0-9")
        p.add_argument("--jobs", type=int, default=1, help="train seeds in parallel processes")
        group = p.add_mutually_exclusive_group()
        group.add_argument("--overwrite", action="store_true", help="replace an existing output directory")
        group.add_argument("--new-run", action="store_true", help="write into a fresh run-NNN subdirectory")

    p = sub.add_parser("train", help="train over all seeds and export artifacts")
    run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a feature file with a saved checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("data", help="feature file; an extra trailing column is read as 0/1 labels")
    p.add_argument("--threshold", type=float, help="anomalous iff score > threshold (use --threshold=-inf)")
    p.add_argument("--out", help="scores file (default: eval_scores.csv next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="buffer x anomalous-latent 2x2 ablation")
    run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="one-parameter hyperparameter sweep")
    run_flags(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a labeled synthetic feature file")
    p.add_argument("out")
    p.add_argument("--kind", default="gauss_nd", choices=KINDS)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--n-normal", type=int, default=1000)
    p.add_argument("--n-anomalous", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AlganError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
