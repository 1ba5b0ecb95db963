"""Synthetic anomaly datasets, feature-file ingestion and split logic.

Every dataset is split the same way: normal rows are shuffled into
train/val/test by the given fractions, anomalous rows go 50/50 into val and
test only.  Standardization statistics are computed on the train split and
reused for val and test.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

NORMAL, ANOMALOUS = 0, 1
KINDS = ("gauss2d", "gauss_nd", "two_moons_like", "ring_anomaly", "shift_anomaly", "perturb_anomaly")


@dataclass
class DataSplit:
    train: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    indices: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.train.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Apply the train-derived standardization to raw rows."""
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def split(
    x: np.ndarray,
    labels: np.ndarray | None = None,
    fractions: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    standardize: bool = True,
) -> DataSplit:
    """Deterministic shuffled split of ``x`` with optional 0/1 ``labels``."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.zeros(len(x), dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"need three non-negative fractions summing to 1, got {fractions}", "fractions")
    rng = np.random.default_rng(seed)
    normal_idx = rng.permutation(np.flatnonzero(labels == NORMAL))
    anom_idx = rng.permutation(np.flatnonzero(labels == ANOMALOUS))
    n = len(normal_idx)
    n_train = int(math.floor(fractions[0] * n + 0.5))
    n_val = int(math.floor(fractions[1] * n + 0.5))
    n_test = n - n_train - n_val
    for name, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        if count <= 0:
            raise ConfigError(f"{name} split receives no normal samples (n_normal={n})", "fractions")
    n_val_anom = int(math.floor(len(anom_idx) / 2 + 0.5))
    idx = {
        "train": np.sort(normal_idx[:n_train]),
        "val": np.sort(np.concatenate([normal_idx[n_train:n_train + n_val], anom_idx[:n_val_anom]])),
        "test": np.sort(np.concatenate([normal_idx[n_train + n_val:], anom_idx[n_val_anom:]])),
    }
    train = x[idx["train"]]
    if standardize:
        mean = train.mean(axis=0)
        std = train.std(axis=0)
        std = np.where(std > 0, std, 1.0)
    else:
        mean = np.zeros(x.shape[1])
        std = np.ones(x.shape[1])
    return DataSplit(
        train=(train - mean) / std,
        val_x=(x[idx["val"]] - mean) / std,
        val_y=labels[idx["val"]],
        test_x=(x[idx["test"]] - mean) / std,
        test_y=labels[idx["test"]],
        mean=mean,
        std=std,
        indices=idx,
    )


def write_split_manifest(data: DataSplit, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "index"])
        for name in ("train", "val", "test"):
            for i in data.indices.get(name, ()):
                w.writerow([name, int(i)])


# -- synthetic data ---------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic benchmark description.

    Geometry per kind (normal data is N(0, I_dim) unless noted):

    * ``gauss2d``: 2-D normals; anomalies on a ring of radius ``radius`` with
      radial noise N(0, ``noise``^2) clipped to 3 standard deviations.
    * ``ring_anomaly``: the same shell construction in ``dim`` dimensions with
      radius ``radius * sqrt(dim / 2)`` so it stays outside the normal bulk.
    * ``gauss_nd``: anomalies N(``separation`` * 1/sqrt(dim), I_dim).
    * ``shift_anomaly``: normals shifted by +/-``magnitude`` along one random axis.
    * ``perturb_anomaly``: block-shift perturbations of normals
      (see :func:`gen_perturb_anomalies`).
    * ``two_moons_like``: 2-D interleaved half circles; anomalies uniform in
      the bounding box at least ``noise``-scaled margin away from both arcs.
    """

    kind: str = "gauss2d"
    n_normal: int = 1000
    n_anomalous: int = 200
    dim: int = 2
    seed: int = 0
    radius: float = 4.0
    noise: float = 0.1
    separation: float = 8.0
    magnitude: float = 6.0
    patch_fraction: tuple[float, float] = (0.2, 0.3)
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    standardize: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {KINDS}", "dataset.kind")
        if self.n_normal < 1 or self.n_anomalous < 1 or self.dim < 1:
            raise ConfigError("n_normal, n_anomalous and dim must be positive", "dataset")
        if self.kind in ("gauss2d", "two_moons_like") and self.dim != 2:
            raise ConfigError(f"{self.kind} is two-dimensional", "dataset.dim")
        if self.radius <= 0 or self.noise < 0:
            raise ConfigError("radius must be positive and noise non-negative", "dataset")


def _random_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    d = rng.standard_normal((n, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _shell(rng: np.random.Generator, n: int, dim: int, radius: float, noise: float) -> np.ndarray:
    r = radius + np.clip(rng.normal(0.0, 1.0, n), -3.0, 3.0) * noise
    return _random_directions(rng, n, dim) * r[:, None]


def _moons(rng: np.random.Generator, n: int, noise: float) -> np.ndarray:
    t = rng.uniform(0.0, np.pi, n)
    upper = rng.random(n) < 0.5
    pts = np.where(
        upper[:, None],
        np.c_[np.cos(t), np.sin(t)],
        np.c_[1.0 - np.cos(t), 0.5 - np.sin(t)],
    )
    return pts + rng.normal(0.0, noise, (n, 2))


def _moon_distance(pts: np.ndarray) -> np.ndarray:
    t = np.linspace(0.0, np.pi, 400)
    curve = np.r_[np.c_[np.cos(t), np.sin(t)], np.c_[1.0 - np.cos(t), 0.5 - np.sin(t)]]
    d = np.linalg.norm(pts[:, None, :] - curve[None, :, :], axis=2)
    return d.min(axis=1)


def gen_perturb_anomalies(
    normal: np.ndarray,
    patch_fraction: float | tuple[float, float] = (0.2, 0.3),
    magnitude: float = 6.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Vector analog of cut-and-paste defects.

    Each row gets one contiguous coordinate block, covering ``patch_fraction``
    of the dimensions (drawn uniformly per row when given as a range), shifted
    by ``magnitude`` with a random sign.
    """
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = (patch_fraction, patch_fraction) if np.isscalar(patch_fraction) else patch_fraction
    if not (0.0 < lo <= hi < 1.0):
        raise ConfigError(f"patch_fraction must lie in (0, 1), got {patch_fraction}", "patch_fraction")
    out = np.array(normal, dtype=np.float64, copy=True)
    n, d = out.shape
    for i in range(n):
        frac = lo if lo == hi else rng.uniform(lo, hi)
        k = min(d, max(1, int(math.floor(frac * d + 0.5))))
        start = int(rng.integers(0, d - k + 1))
        out[i, start:start + k] += magnitude * (1.0 if rng.random() < 0.5 else -1.0)
    return out


def generate(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Raw samples and 0/1 labels for ``spec`` (normals first)."""
    rng = np.random.default_rng(spec.seed)
    n, m, d = spec.n_normal, spec.n_anomalous, spec.dim
    if spec.kind == "two_moons_like":
        normal = _moons(rng, n, spec.noise)
        margin = max(0.5, 5.0 * spec.noise)
        chunks, have = [], 0
        while have < m:
            cand = np.c_[rng.uniform(-2.0, 3.0, 4 * m), rng.uniform(-1.5, 2.0, 4 * m)]
            cand = cand[_moon_distance(cand) > margin]
            chunks.append(cand)
            have += len(cand)
        anomalous = np.concatenate(chunks)[:m]
    else:
        normal = rng.standard_normal((n, d))
        if spec.kind == "gauss2d":
            anomalous = _shell(rng, m, 2, spec.radius, spec.noise)
        elif spec.kind == "ring_anomaly":
            anomalous = _shell(rng, m, d, spec.radius * math.sqrt(d / 2.0), spec.noise)
        elif spec.kind == "gauss_nd":
            anomalous = rng.standard_normal((m, d)) + spec.separation / math.sqrt(d)
        elif spec.kind == "shift_anomaly":
            anomalous = rng.standard_normal((m, d))
            axes = rng.integers(0, d, m)
            signs = np.where(rng.random(m) < 0.5, -1.0, 1.0)
            anomalous[np.arange(m), axes] += signs * spec.magnitude
        else:  # perturb_anomaly
            base = rng.standard_normal((m, d))
            anomalous = gen_perturb_anomalies(base, spec.patch_fraction, spec.magnitude, rng)
    x = np.concatenate([normal, anomalous])
    labels = np.r_[np.zeros(n, dtype=np.int64), np.ones(m, dtype=np.int64)]
    return x, labels


def make_synthetic(spec: SyntheticSpec, split_seed: int | None = None) -> DataSplit:
    x, labels = generate(spec)
    return split(x, labels, spec.fractions, spec.seed if split_seed is None else split_seed, spec.standardize)


def gen_toy2d(spec: SyntheticSpec | None = None, **overrides) -> DataSplit:
    """2-D N(0, I) normals with radius-``radius`` ring anomalies, split 60/20/20."""
    spec = SyntheticSpec(kind="gauss2d") if spec is None else spec
    if overrides:
        spec = replace(spec, **overrides)
    if spec.kind != "gauss2d":
        raise ConfigError("gen_toy2d needs kind='gauss2d'", "dataset.kind")
    return make_synthetic(spec)


# -- feature files ----------------------------------------------------------------


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_feature_file(path: str | os.PathLike) -> tuple[np.ndarray, list[str] | None]:
    """Parse a comma-separated numeric file with an optional single header row."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if b"\x00" in raw[:4096]:
        raise ParseError(f"{path}: looks like a binary file")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text") from exc
    rows = [(i + 1, r) for i, r in enumerate(csv.reader(io.StringIO(text))) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c) for c in rows[0][1]):
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
        if not rows:
            raise ParseError(f"{path}: header but no data rows")
    width = len(header) if header is not None else len(rows[0][1])
    values = np.empty((len(rows), width))
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != width:
            raise ParseError(f"{path}:{lineno}: expected {width} columns, found {len(cells)}")
        for c, cell in enumerate(cells):
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric cell {cell.strip()!r} in column {c + 1}") from None
    return values, header


def write_feature_file(path: str | os.PathLike, x: np.ndarray, labels: np.ndarray | None = None,
                       header: bool = True) -> None:
    x = np.asarray(x, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"f{i}" for i in range(x.shape[1])] + (["label"] if labels is not None else []))
        for i, row in enumerate(x):
            w.writerow([repr(float(v)) for v in row] + ([int(labels[i])] if labels is not None else []))


def load_features(
    path: str | os.PathLike,
    label_column: bool = False,
    fractions: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    standardize: bool = True,
    train_only: bool = False,
) -> DataSplit:
    """Read feature vectors and split them.

    With ``label_column`` the last column holds 0 (normal) / 1 (anomalous).
    Unlabeled files and ``train_only`` files become a train-only split; a
    ``train_only`` file containing anomalous rows is rejected.
    """
    values, _ = read_feature_file(path)
    if label_column:
        if values.shape[1] < 2:
            raise ParseError(f"{path}: label column requested but only one column present")
        raw_labels = values[:, -1]
        if not np.isin(raw_labels, (0.0, 1.0)).all():
            bad = int(np.flatnonzero(~np.isin(raw_labels, (0.0, 1.0)))[0])
            raise ParseError(f"{path}: data row {bad + 1}: label must be 0 or 1, got {raw_labels[bad]}")
        x, labels = values[:, :-1], raw_labels.astype(np.int64)
    else:
        x, labels = values, np.zeros(len(values), dtype=np.int64)
    if not train_only and label_column:
        return split(x, labels, fractions, seed, standardize)
    if (labels == ANOMALOUS).any():
        raise ValidationError(f"{path}: training file contains {int(labels.sum())} anomalous rows")
    return _train_only(x, standardize)


def _train_only(x: np.ndarray, standardize: bool) -> DataSplit:
    if standardize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 0, std, 1.0)
    else:
        mean, std = np.zeros(x.shape[1]), np.ones(x.shape[1])
    d = x.shape[1]
    empty = np.empty((0, d))
    none = np.empty(0, dtype=np.int64)
    return DataSplit((x - mean) / std, empty, none, empty.copy(), none.copy(), mean, std,
                     {"train": np.arange(len(x)), "val": none, "test": none})
