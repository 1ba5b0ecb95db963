"""ALGAN training: latent pools, the sample buffer, losses and the epoch loop.

The discriminator sees three groups besides real data: fake-normal samples
``G(z_n)``, fake-anomalous samples ``G(z_a)`` from high-variance latents, and
buffered samples generated in earlier epochs.  All three are labelled "not
real".  The generator is trained only through ``D(G(z_n))``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from . import tensor as T
from .errors import ConfigError, TrainingError
from .nn import AdamState, Network, adam_step
from .tensor import Tensor

logger = logging.getLogger(__name__)

NORMAL, ANOMALOUS = 0, 1


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LatentSpec:
    dim: int = 100
    sigma: float = 4.0
    alpha: float = 0.75

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ConfigError("must be a positive integer", "latent.dim")
        if not self.sigma > 1.0:
            raise ConfigError(f"sigma must exceed 1, got {self.sigma}", "sigma")
        # alpha == 1 switches anomalous latents off (ablation)
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}", "alpha")


def sample_latents(
    spec: LatentSpec, n: int, kind: Literal["mixed_for_D", "normal_for_G"], rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` latent rows and their labels (0 normal, 1 anomalous).

    ``mixed_for_D`` returns exactly ``round(alpha * n)`` rows from N(0, I) and
    the remainder from N(0, sigma^2 I), shuffled together.
    """
    if n < 1:
        raise ConfigError(f"need at least one latent, got {n}", "n")
    if kind == "normal_for_G":
        return rng.standard_normal((n, spec.dim)), np.zeros(n, dtype=np.int64)
    if kind != "mixed_for_D":
        raise ConfigError(f"unknown latent kind {kind!r}", "kind")
    n_normal = round_half_up(spec.alpha * n)
    z = rng.standard_normal((n, spec.dim))
    labels = np.zeros(n, dtype=np.int64)
    z[n_normal:] *= spec.sigma
    labels[n_normal:] = ANOMALOUS
    order = rng.permutation(n)
    return z[order], labels[order]


@dataclass
class LatentPool:
    """Latents reused across the batches of one refresh period."""

    z_d: np.ndarray
    z_d_labels: np.ndarray
    z_g: np.ndarray
    refresh_epoch: int

    @classmethod
    def sample(cls, spec: LatentSpec, n: int, epoch: int, rng: np.random.Generator) -> "LatentPool":
        z_d, labels = sample_latents(spec, n, "mixed_for_D", rng)
        z_g, _ = sample_latents(spec, n, "normal_for_G", rng)
        return cls(z_d, labels, z_g, epoch)

    def slice_d(self, j: int, batch: int) -> tuple[np.ndarray, np.ndarray]:
        lo = (j * batch) % len(self.z_d)
        return self.z_d[lo:lo + batch], self.z_d_labels[lo:lo + batch]

    def slice_g(self, j: int, batch: int) -> np.ndarray:
        lo = (j * batch) % len(self.z_g)
        return self.z_g[lo:lo + batch]


class SampleBuffer:
    """Fixed-capacity store of generated samples.

    Samples are appended until ``capacity`` is reached.  After that the buffer
    only changes through :meth:`refresh`, which overwrites ``ceil(capacity/2)``
    uniformly chosen slots with uniformly chosen fresh samples.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ConfigError("capacity must be positive", "buffer.capacity")
        self.capacity = int(capacity)
        self.samples = np.empty((0, dim))
        self.labels = np.empty(0, dtype=np.int64)
        self.last_replaced: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    @property
    def refresh_count(self) -> int:
        return -(-self.capacity // 2)

    def push(self, samples: np.ndarray, labels: np.ndarray) -> int:
        """Append until full; returns how many rows were taken."""
        room = self.capacity - len(self)
        take = max(0, min(room, len(samples)))
        if take:
            self.samples = np.concatenate([self.samples, np.array(samples[:take], dtype=np.float64)])
            self.labels = np.concatenate([self.labels, np.asarray(labels[:take], dtype=np.int64)])
        return take

    def refresh(self, fresh: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Overwrite half the slots with fresh samples; returns the replaced slot indices."""
        if not self.full:
            self.push(fresh, labels)
            return np.empty(0, dtype=np.int64)
        k = self.refresh_count
        if len(fresh) < k:
            raise ConfigError(f"refresh needs {k} fresh samples, got {len(fresh)}", "buffer")
        slots = rng.choice(self.capacity, size=k, replace=False)
        picks = rng.choice(len(fresh), size=k, replace=False)
        self.samples = self.samples.copy()
        self.samples[slots] = fresh[picks]
        self.labels = self.labels.copy()
        self.labels[slots] = np.asarray(labels)[picks]
        self.last_replaced = np.sort(slots)
        return self.last_replaced

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        n = min(n, len(self))
        return self.samples[rng.choice(len(self), size=n, replace=False)]


def buffer_refresh(buf: SampleBuffer, fresh: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return buf.refresh(fresh, labels, rng)


# -- losses -----------------------------------------------------------------------


def _check_finite(t: Tensor, what: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise TrainingError(f"non-finite {what}")


def discriminator_loss(d_real: Tensor, d_fake: Tensor, d_buffer: Tensor | None = None, xi: float = 0.75) -> Tensor:
    """Negative log-likelihood of labelling real as 1 and everything else as 0.

    With a buffer term the generated and buffered groups are weighted ``xi``
    and ``1 - xi``; without it both real and generated terms have weight 1.
    Uses ``log sigmoid(x) = -softplus(-x)`` and ``log(1 - sigmoid(x)) = -softplus(x)``.
    """
    for t, what in ((d_real, "real logits"), (d_fake, "fake logits")):
        if t.size == 0:
            raise TrainingError(f"empty {what}")
        _check_finite(t, what)
    real = T.softplus(-d_real).mean()
    fake = T.softplus(d_fake).mean()
    if d_buffer is None:
        return real + fake
    _check_finite(d_buffer, "buffer logits")
    buffered = T.softplus(d_buffer).mean()
    return real + T.scale(fake, xi) + T.scale(buffered, 1.0 - xi)


def generator_loss(d_logits: Tensor) -> Tensor:
    """Non-saturating generator objective ``mean(-log D(G(z)))``."""
    _check_finite(d_logits, "generator logits")
    return T.softplus(-d_logits).mean()


# -- configuration / report -------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 192
    n_z: int = 2
    n_dis: int = 2
    batch_size: int = 16
    alpha: float = 0.75
    xi: float = 0.75
    sigma: float = 4.0
    latent_dim: int = 100
    lr_g: float = 2e-4
    lr_d: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    val_period: int = 8
    seed: int = 0
    latent_reuse: Literal["pool", "literal"] = "pool"
    # generator BatchNorm mode when producing fakes for the discriminator step
    fake_bn_mode: Literal["train", "eval"] = "eval"

    def __post_init__(self):
        for name in ("epochs", "n_z", "n_dis", "batch_size", "val_period", "latent_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be a positive integer", name)
        for name in ("lr_g", "lr_d"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", name)
        # xi == 1 switches the buffer term off (ablation)
        if not 0.0 < self.xi <= 1.0:
            raise ConfigError(f"xi must lie in (0, 1], got {self.xi}", "xi")
        if self.latent_reuse not in ("pool", "literal"):
            raise ConfigError("must be 'pool' or 'literal'", "latent_reuse")
        if self.fake_bn_mode not in ("train", "eval"):
            raise ConfigError("must be 'train' or 'eval'", "fake_bn_mode")
        self.latent_spec  # validates sigma / alpha

    @property
    def latent_spec(self) -> LatentSpec:
        return LatentSpec(self.latent_dim, self.sigma, self.alpha)

    @property
    def buffer_capacity(self) -> int:
        return 2 * self.batch_size

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    trace: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_auroc: float = float("nan")
    best_state: dict | None = None
    checkpoint: str | None = None
    d_losses: list[float] = field(default_factory=list)
    g_losses: list[float] = field(default_factory=list)
    d_steps: int = 0
    g_steps: int = 0
    latent_epochs: list[int] = field(default_factory=list)
    buffer_term_epochs: list[int] = field(default_factory=list)

    @property
    def auroc_trace(self) -> list[float]:
        return [r["auroc"] for r in self.trace]

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_auroc": self.best_auroc,
            "trace": self.trace,
            "d_steps": self.d_steps,
            "g_steps": self.g_steps,
        }


Evaluator = Callable[[Network, Network, int], float]


def networks_state(gen: Network, disc: Network) -> dict:
    return {"generator": gen.state_dict(), "discriminator": disc.state_dict()}


def restore_state(gen: Network, disc: Network, state: dict) -> None:
    gen.load_state_dict(state["generator"])
    disc.load_state_dict(state["discriminator"])


# -- training steps -----------------------------------------------------------------


def discriminator_step(
    gen: Network,
    disc: Network,
    opt: AdamState,
    x_real: np.ndarray,
    z_d: np.ndarray,
    x_buffer: np.ndarray | None,
    xi: float,
    gen_mode: str = "train",
) -> tuple[float, np.ndarray]:
    """One discriminator update; returns the loss and the detached generated batch."""
    x_fake = gen.forward(z_d, gen_mode).detach()
    groups = [Tensor(x_real), x_fake] + ([Tensor(x_buffer)] if x_buffer is not None else [])
    disc.requires_grad_(True)
    logits = disc.forward(T.concat(groups), "train")
    n_r, n_f = len(x_real), len(z_d)
    d_real = logits[0:n_r]
    d_fake = logits[n_r:n_r + n_f]
    d_buf = logits[n_r + n_f:] if x_buffer is not None else None
    loss = discriminator_loss(d_real, d_fake, d_buf, xi)
    disc.zero_grad()
    loss.backward()
    adam_step(opt, disc.parameters())
    return loss.item(), x_fake.data


def generator_step(gen: Network, disc: Network, opt: AdamState, z_g: np.ndarray) -> float:
    """One generator update through ``D(G(z_g))``; discriminator weights stay fixed."""
    gen.requires_grad_(True)
    disc.requires_grad_(False)
    try:
        loss = generator_loss(disc.forward(gen.forward(z_g, "train"), "train"))
        gen.zero_grad()
        loss.backward()
        adam_step(opt, gen.parameters())
    finally:
        disc.requires_grad_(True)
    return loss.item()


def _refresh_due(epoch: int, n_z: int) -> bool:
    return epoch == 1 or epoch % n_z == 0


def train(
    config: TrainConfig,
    train_x: np.ndarray,
    gen: Network,
    disc: Network,
    evaluator: Evaluator | None = None,
    on_validation: Callable[[dict], None] | None = None,
) -> RunReport:
    """Run the ALGAN epoch loop and keep the best-validation networks.

    ``evaluator(gen, disc, epoch)`` returns a validation AUROC.  It is called
    every ``val_period`` epochs and at the final epoch.  On return ``gen`` and
    ``disc`` hold the best-scoring state (or the final state without an
    evaluator).
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    if train_x.ndim != 2 or len(train_x) == 0:
        raise ConfigError("training set is empty", "data.train")
    if gen.out_dim != train_x.shape[1] or disc.in_dim != train_x.shape[1]:
        raise ConfigError(
            f"network dims (G out {gen.out_dim}, D in {disc.in_dim}) do not match data dim {train_x.shape[1]}",
            "model",
        )
    if gen.in_dim != config.latent_dim:
        raise ConfigError(f"generator expects {gen.in_dim}-d latents, config has {config.latent_dim}", "latent_dim")

    root = np.random.SeedSequence(config.seed)
    data_rng, latent_rng, buffer_rng = (np.random.default_rng(s) for s in root.spawn(3))
    spec = config.latent_spec
    mb = config.batch_size
    n = len(train_x)
    n_batches = max(1, n // mb)
    pool_size = mb if config.latent_reuse == "literal" else n_batches * mb

    opt_d = AdamState(config.lr_d, config.beta1, config.beta2, config.adam_eps)
    opt_g = AdamState(config.lr_g, config.beta1, config.beta2, config.adam_eps)
    buf = SampleBuffer(config.buffer_capacity, train_x.shape[1])
    report = RunReport()
    pool: LatentPool | None = None

    for epoch in range(1, config.epochs + 1):
        if _refresh_due(epoch, config.n_z):
            pool = LatentPool.sample(spec, pool_size, epoch, latent_rng)
            report.latent_epochs.append(epoch)
        use_buffer = epoch > 1
        if use_buffer:
            report.buffer_term_epochs.append(epoch)
        order = data_rng.permutation(n)
        staged: list[tuple[np.ndarray, np.ndarray]] = []
        d_sum = g_sum = 0.0
        for j in range(n_batches):
            x = train_x[order[j * mb:(j + 1) * mb]]
            z_d, z_labels = pool.slice_d(0 if config.latent_reuse == "literal" else j, mb)
            x_fake = None
            for _ in range(config.n_dis):
                x_buf = buf.sample(mb, buffer_rng) if use_buffer else None
                try:
                    d_loss, x_fake = discriminator_step(gen, disc, opt_d, x, z_d, x_buf, config.xi, config.fake_bn_mode)
                except TrainingError as exc:
                    raise TrainingError(f"epoch {epoch}, batch {j + 1}: discriminator: {exc}") from exc
                report.d_steps += 1
                d_sum += d_loss
            if buf.full:
                staged.append((x_fake, z_labels))
            else:
                taken = buf.push(x_fake, z_labels)
                if taken < len(x_fake):
                    staged.append((x_fake[taken:], z_labels[taken:]))
            z_g = pool.slice_g(0 if config.latent_reuse == "literal" else j, mb)
            try:
                g_loss = generator_step(gen, disc, opt_g, z_g)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {j + 1}: generator: {exc}") from exc
            report.g_steps += 1
            g_sum += g_loss
        if staged and buf.full:
            fresh = np.concatenate([s for s, _ in staged])
            labels = np.concatenate([lab for _, lab in staged])
            if len(fresh) >= buf.refresh_count:
                buf.refresh(fresh, labels, buffer_rng)

        d_mean = d_sum / (n_batches * config.n_dis)
        g_mean = g_sum / n_batches
        if not (math.isfinite(d_mean) and math.isfinite(g_mean)):
            raise TrainingError(f"epoch {epoch}: non-finite loss (D {d_mean}, G {g_mean})")
        report.d_losses.append(d_mean)
        report.g_losses.append(g_mean)

        if evaluator is not None and (epoch % config.val_period == 0 or epoch == config.epochs):
            auroc = float(evaluator(gen, disc, epoch))
            record = {"epoch": epoch, "auroc": auroc, "d_loss": d_mean, "g_loss": g_mean}
            report.trace.append(record)
            logger.info("epoch %d: val AUROC %.4f (D %.4f, G %.4f)", epoch, auroc, d_mean, g_mean)
            if on_validation is not None:
                on_validation(record)
            if report.best_state is None or auroc > report.best_auroc:
                report.best_auroc = auroc
                report.best_epoch = epoch
                report.best_state = networks_state(gen, disc)

    if report.best_state is None:
        report.best_epoch = config.epochs
        report.best_state = networks_state(gen, disc)
    else:
        restore_state(gen, disc, report.best_state)
    return report
