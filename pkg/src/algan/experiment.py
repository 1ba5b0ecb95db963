"""Per-seed experiment pipeline and artifact writing shared by the CLI commands."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation as E
from .config import ExperimentConfig, config_to_dict
from .core import RunReport, train
from .data import DataSplit, load_features, make_synthetic, write_split_manifest
from .nn import Network, build_generator, init_params, save_checkpoint

logger = logging.getLogger(__name__)


def build_data(cfg: ExperimentConfig, seed: int) -> DataSplit:
    """Synthetic data uses its own fixed seed for generation and ``seed`` for the split."""
    ds = cfg.dataset
    if ds.synthetic is not None:
        return make_synthetic(ds.synthetic, split_seed=seed)
    f = ds.features
    return load_features(f.path, label_column=f.label_column, fractions=f.fractions, seed=seed,
                         standardize=f.standardize)


def build_networks(cfg: ExperimentConfig, feature_dim: int, seed: int) -> tuple[Network, Network]:
    m = cfg.model
    g_seed, d_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
    gen = build_generator(m.latent.dim, feature_dim, m.generator_hidden, seed=g_seed)
    disc = init_params([feature_dim, *m.discriminator_hidden, 1], d_seed, activation="leaky_relu",
                       slope=m.leaky_slope, spectral=True, n_power_iters=m.n_power_iters)
    return gen, disc


@dataclass
class SeedResult:
    seed: int
    report: RunReport
    data: DataSplit
    gen: Network
    disc: Network
    test_scores: np.ndarray
    test_auroc: float | None
    threshold: float | None

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "best_epoch": self.report.best_epoch,
            "best_val_auroc": _num(self.report.best_auroc),
            "test_auroc": self.test_auroc,
            "threshold": self.threshold,
            "d_steps": self.report.d_steps,
            "g_steps": self.report.g_steps,
        }


def _num(x: float) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


def run_seed(cfg: ExperimentConfig, seed: int, on_validation=None) -> SeedResult:
    data = build_data(cfg, seed)
    gen, disc = build_networks(cfg, data.feature_dim, seed)
    has_val = len(data.val_y) and 0 < data.val_y.sum() < len(data.val_y)

    def evaluator(g, d, epoch):
        return E.auroc(E.anomaly_score(d, data.val_x), data.val_y)

    report = train(cfg.train_config(seed), data.train, gen, disc,
                   evaluator if has_val else None, on_validation)
    test_scores = E.anomaly_score(disc, data.test_x) if len(data.test_x) else np.empty(0)
    test_auroc = None
    if len(data.test_y) and 0 < data.test_y.sum() < len(data.test_y):
        test_auroc = E.auroc(test_scores, data.test_y)
    threshold = None
    if has_val and cfg.evaluation.threshold_policy == "youden":
        threshold = E.youden_threshold(E.anomaly_score(disc, data.val_x), data.val_y)
    return SeedResult(seed, report, data, gen, disc, test_scores, test_auroc, threshold)


def aggregate(values: list[float | None]) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"n": 0, "mean": None, "std": None}
    arr = np.asarray(vals, dtype=np.float64)
    return {"n": len(vals), "mean": float(arr.mean()), "std": float(arr.std())}


@dataclass
class MetricsReport:
    entries: list[dict] = field(default_factory=list)

    @property
    def aggregate(self) -> dict:
        return aggregate([e["test_auroc"] for e in self.entries])

    def records(self) -> list[dict]:
        return [{"type": "seed", **e} for e in self.entries] + [{"type": "aggregate", "test_auroc": self.aggregate}]

    def table(self) -> str:
        lines = [f"{'seed':>6} {'best_epoch':>10} {'val_auroc':>10} {'test_auroc':>10}"]
        for e in self.entries:
            lines.append(f"{e['seed']:>6} {e['best_epoch']:>10} {_fmt(e['best_val_auroc']):>10} {_fmt(e['test_auroc']):>10}")
        agg = self.aggregate
        lines.append(f"test AUROC over {agg['n']} seed(s): {_fmt(agg['mean'])} +/- {_fmt(agg['std'])}")
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.4f}"


class Manifest:
    """Tracks every file written under one output directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.files: list[str] = []

    def path(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        rel = str(p.relative_to(self.root))
        if rel not in self.files:
            self.files.append(rel)
        return p

    def write(self) -> Path:
        p = self.root / "manifest.json"
        with open(p, "w") as fh:
            json.dump({"files": sorted(self.files + ["manifest.json"])}, fh, indent=2)
        return p


def write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def write_seed_artifacts(cfg: ExperimentConfig, res: SeedResult, manifest: Manifest, prefix: str) -> None:
    d = res.data
    meta = {
        "seed": res.seed,
        "best_epoch": res.report.best_epoch,
        "best_val_auroc": _num(res.report.best_auroc),
        "threshold": res.threshold,
        "config": config_to_dict(cfg),
    }
    save_checkpoint(manifest.path(prefix, "checkpoint.npz"), {"generator": res.gen, "discriminator": res.disc},
                    meta, {"norm_mean": d.mean, "norm_std": d.std})
    write_jsonl(manifest.path(prefix, "metrics.jsonl"), res.report.trace)
    with open(manifest.path(prefix, "auroc_trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "auroc", "d_loss", "g_loss"])
        for r in res.report.trace:
            w.writerow([r["epoch"], repr(r["auroc"]), repr(r["d_loss"]), repr(r["g_loss"])])
    with open(manifest.path(prefix, "losses.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "d_loss", "g_loss"])
        for i, (dl, gl) in enumerate(zip(res.report.d_losses, res.report.g_losses), start=1):
            w.writerow([i, repr(dl), repr(gl)])
    write_split_manifest(d, manifest.path(prefix, "split_manifest.csv"))
    if len(res.test_scores):
        ids = d.indices.get("test")
        E.write_scores(manifest.path(prefix, "scores_test.csv"), res.test_scores, d.test_y, ids)
        hist = E.histogram_export(res.test_scores, d.test_y, cfg.evaluation.bins)
        E.write_histogram(manifest.path(prefix, "histogram_test.csv"), hist)


def _run_seed_job(args):
    cfg, seed = args
    res = run_seed(cfg, seed)
    return res


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None, manifest: Manifest | None = None,
                   prefix: str = "", jobs: int = 1) -> MetricsReport:
    """Train every configured seed; write artifacts when ``out_dir`` is given."""
    seeds = list(cfg.seeds)
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_job, [(cfg, s) for s in seeds]))
    else:
        results = [run_seed(cfg, s) for s in seeds]
    results.sort(key=lambda r: r.seed)
    report = MetricsReport([r.summary() for r in results])
    if out_dir is not None:
        own = manifest is None
        manifest = manifest or Manifest(out_dir)
        for r in results:
            write_seed_artifacts(cfg, r, manifest, os.path.join(prefix, f"seed_{r.seed}"))
        write_jsonl(manifest.path(prefix, "report.jsonl"), report.records())
        manifest.path(prefix, "report.txt").write_text(report.table())
        if own:
            manifest.write()
    return report
