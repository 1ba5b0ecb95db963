"""Experiment configuration: nested YAML sections validated into dataclasses.

Unknown keys are rejected and every error names the dotted field path.
Omitted training/model values fall back to the published ALGAN settings.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .core import LatentSpec, TrainConfig
from .data import SyntheticSpec
from .errors import AlganError, ConfigError


@dataclass
class FeatureSource:
    path: str
    label_column: bool = True
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    standardize: bool = True


@dataclass
class DatasetSection:
    synthetic: SyntheticSpec | None = None
    features: FeatureSource | None = None


@dataclass
class ModelSection:
    generator_hidden: tuple[int, ...] = (512, 1024)
    discriminator_hidden: tuple[int, ...] = (1024, 512)
    leaky_slope: float = 0.2
    n_power_iters: int = 1
    latent: LatentSpec = field(default_factory=LatentSpec)


@dataclass
class TrainingSection:
    epochs: int = 192
    n_z: int = 2
    n_dis: int = 2
    batch_size: int = 16
    xi: float = 0.75
    lr_g: float = 2e-4
    lr_d: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    val_period: int = 8
    latent_reuse: str = "pool"
    fake_bn_mode: str = "eval"


@dataclass
class EvaluationSection:
    bins: int = 50
    threshold_policy: str = "youden"

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigError("must be >= 1", "evaluation.bins")
        if self.threshold_policy not in ("youden", "none"):
            raise ConfigError("must be 'youden' or 'none'", "evaluation.threshold_policy")


@dataclass
class ExperimentConfig:
    dataset: DatasetSection
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output_dir: str | None = None
    seeds: tuple[int, ...] = (0,)

    def train_config(self, seed: int) -> TrainConfig:
        t, lat = self.training, self.model.latent
        return TrainConfig(
            epochs=t.epochs, n_z=t.n_z, n_dis=t.n_dis, batch_size=t.batch_size,
            alpha=lat.alpha, xi=t.xi, sigma=lat.sigma, latent_dim=lat.dim,
            lr_g=t.lr_g, lr_d=t.lr_d, beta1=t.beta1, beta2=t.beta2, adam_eps=t.adam_eps,
            val_period=t.val_period, seed=seed, latent_reuse=t.latent_reuse,
            fake_bn_mode=t.fake_bn_mode,
        )

    def with_params(self, **params) -> "ExperimentConfig":
        """Copy with hyperparameters replaced by name (sigma, alpha, xi, n_z, n_dis, ...)."""
        cfg = dataclasses.replace(self)
        latent = {k: params.pop(k) for k in ("sigma", "alpha") if k in params}
        if latent:
            cfg.model = dataclasses.replace(self.model, latent=_build(LatentSpec, {
                **dataclasses.asdict(self.model.latent), **latent}, "model.latent"))
        if params:
            cfg.training = _build(TrainingSection, {**dataclasses.asdict(self.training), **params}, "training")
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if (self.dataset.synthetic is None) == (self.dataset.features is None):
            raise ConfigError("exactly one of 'synthetic' or 'features' is required", "dataset")
        if not self.seeds:
            raise ConfigError("at least one seed is required", "seeds")
        try:
            self.train_config(self.seeds[0])
        except ConfigError as exc:
            section = "model.latent" if exc.field in ("sigma", "alpha", "latent.dim") else "training"
            raise ConfigError(exc.reason, f"{section}.{exc.field.split('.')[-1]}") from None
        for name in ("generator_hidden", "discriminator_hidden"):
            dims = getattr(self.model, name)
            if not dims or any(int(d) < 1 for d in dims):
                raise ConfigError("needs positive layer widths", f"model.{name}")


def _convert(tp: Any, value: Any, path: str) -> Any:
    origin = getattr(tp, "__origin__", None)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError("expected a mapping", path)
        return _build(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError("expected a list", path)
        inner = tp.__args__[0]
        return tuple(_convert(inner, v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    return value


def _resolve(annotation: Any) -> Any:
    # annotations are strings under postponed evaluation
    if isinstance(annotation, str):
        annotation = annotation.replace(" | None", "")
        return eval(annotation, globals())
    return annotation


def _build(cls, raw: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown key(s) {unknown}; expected one of {sorted(known)}", where)
    kwargs = {}
    for name, value in raw.items():
        sub = f"{path}.{name}" if path else name
        if value is None:
            kwargs[name] = None
            continue
        kwargs[name] = _convert(_resolve(known[name].type), value, sub)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.field and not exc.field.startswith(path):
            leaf = exc.field.split(".")[-1]
            raise ConfigError(exc.reason, f"{path}.{leaf}" if path else leaf) from None
        raise
    except TypeError as exc:
        raise ConfigError(str(exc), path) from None


def config_from_dict(raw: dict, base_dir: str | os.PathLike | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    raw = dict(raw)
    if "dataset" not in raw:
        raise ConfigError("missing section", "dataset")
    output = raw.pop("output", None) or {}
    if not isinstance(output, dict) or set(output) - {"dir"}:
        raise ConfigError("only 'dir' is allowed", "output")
    cfg = _build(ExperimentConfig, {**raw, "output_dir": output.get("dir")}, "")
    if cfg.dataset.features is not None and base_dir is not None:
        p = Path(cfg.dataset.features.path)
        if not p.is_absolute():
            cfg.dataset.features.path = str(Path(base_dir) / p)
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return config_from_dict(raw, Path(path).parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["output"] = {"dir": out.pop("output_dir")}
    return out


__all__ = ["AlganError", "ExperimentConfig", "load_config", "config_from_dict", "config_to_dict"]
