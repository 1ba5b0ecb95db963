import math

import mpmath
import numpy as np
import pytest

from algan import core
from algan.core import (LatentPool, LatentSpec, SampleBuffer, TrainConfig, discriminator_loss, discriminator_step,
                        generator_loss, generator_step, sample_latents, train)
from algan.errors import ConfigError, TrainingError
from algan.nn import AdamState, build_discriminator, build_generator
from algan.tensor import Tensor

mpmath.mp.dps = 50


def _small_nets(seed=0, data_dim=2, latent_dim=100):
    return (build_generator(latent_dim, data_dim, (16, 16), seed=seed),
            build_discriminator(data_dim, (16, 16), seed=seed + 1))


def _toy_train(n=64, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 2))


# -- latents ------------------------------------------------------------------


def test_mixed_latent_counts(rng):
    z, labels = sample_latents(LatentSpec(alpha=0.75), 16, "mixed_for_D", rng)
    assert z.shape == (16, 100)
    assert (labels == 0).sum() == 12 and (labels == 1).sum() == 4


@pytest.mark.parametrize("n", [1, 3, 7, 16, 33, 100])
@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.75, 0.9, 1.0])
def test_normal_fraction_is_exact_per_draw(n, alpha, rng):
    for _ in range(5):
        _, labels = sample_latents(LatentSpec(alpha=alpha), n, "mixed_for_D", rng)
        assert (labels == 0).sum() == math.floor(alpha * n + 0.5)


def test_latent_squared_norms_follow_chi_square(rng):
    z, labels = sample_latents(LatentSpec(sigma=4.0, alpha=0.5), 20000, "mixed_for_D", rng)
    sq = (z**2).sum(axis=1)
    assert abs(sq[labels == 0].mean() - 100.0) <= 10.0
    assert abs(sq[labels == 1].mean() - 1600.0) <= 160.0
    zg, lg = sample_latents(LatentSpec(), 10000, "normal_for_G", rng)
    assert np.all(lg == 0) and abs((zg**2).sum(axis=1).mean() - 100.0) <= 10.0


@pytest.mark.parametrize("kw", [{"sigma": 1.0}, {"sigma": 0.5}, {"alpha": 0.0}, {"alpha": 1.5}, {"dim": 0}])
def test_latent_spec_validation(kw):
    with pytest.raises(ConfigError):
        LatentSpec(**kw)


def test_latent_pool_slices_cover_pool(rng):
    pool = LatentPool.sample(LatentSpec(), 48, 1, rng)
    rows = np.vstack([pool.slice_d(j, 16)[0] for j in range(3)])
    np.testing.assert_array_equal(rows, pool.z_d)
    assert np.all(np.isin(pool.z_d_labels, (0, 1)))


# -- buffer --------------------------------------------------------------------


def test_buffer_fill_and_capacity(rng):
    buf = SampleBuffer(32, 2)
    assert buf.push(rng.normal(size=(20, 2)), np.zeros(20)) == 20
    assert buf.push(rng.normal(size=(20, 2)), np.zeros(20)) == 12
    assert len(buf) == 32 and buf.full
    buf.refresh(rng.normal(size=(40, 2)), np.ones(40), rng)
    assert len(buf) == 32


def test_buffer_refresh_replaces_exactly_half(rng):
    buf = SampleBuffer(32, 3)
    buf.push(rng.normal(size=(32, 3)), np.zeros(32))
    before = buf.samples.copy()
    slots = buf.refresh(rng.normal(size=(50, 3)) + 100.0, np.ones(50), rng)
    changed = np.flatnonzero(np.any(buf.samples != before, axis=1))
    assert len(changed) == 16
    np.testing.assert_array_equal(changed, slots)
    assert buf.labels.sum() == 16


@pytest.mark.parametrize("cap", [1, 2, 5, 31, 32])
def test_buffer_refresh_count_is_ceil_half(cap, rng):
    buf = SampleBuffer(cap, 1)
    buf.push(np.zeros((cap, 1)), np.zeros(cap))
    slots = buf.refresh(np.ones((cap, 1)), np.ones(cap), rng)
    assert len(slots) == len(set(slots)) == -(-cap // 2)


def test_buffer_refresh_is_deterministic():
    fresh = np.random.default_rng(0).normal(size=(40, 2))
    sets = []
    for _ in range(2):
        buf = SampleBuffer(32, 2)
        buf.push(np.zeros((32, 2)), np.zeros(32))
        sets.append(buf.refresh(fresh, np.zeros(40), np.random.default_rng(7)).tolist())
    assert sets[0] == sets[1]


def test_buffer_stores_detached_copies(rng):
    buf = SampleBuffer(4, 2)
    x = rng.normal(size=(4, 2))
    buf.push(x, np.zeros(4))
    x[:] = 0.0
    assert not np.all(buf.samples == 0.0)
    assert isinstance(buf.samples, np.ndarray)


# -- losses ----------------------------------------------------------------------


def _mp_log_sigmoid(x):
    return -mpmath.log(1 + mpmath.exp(-mpmath.mpf(x)))


def _mp_log_one_minus_sigmoid(x):
    return -mpmath.log(1 + mpmath.exp(mpmath.mpf(x)))


def _mp_mean(vals):
    return mpmath.fsum(vals) / len(vals)


def test_discriminator_loss_at_zero_logits():
    z = Tensor(np.zeros((4, 1)))
    assert discriminator_loss(z, z, z, 0.75).item() == pytest.approx(2 * math.log(2), abs=1e-15)
    assert discriminator_loss(z, z, None, 0.75).item() == pytest.approx(2 * math.log(2), abs=1e-15)


def test_discriminator_loss_perfect_limit():
    big = Tensor(np.full((3, 1), 800.0))
    assert discriminator_loss(big, -big, -big, 0.75).item() == pytest.approx(0.0, abs=1e-300)


def test_discriminator_loss_matches_high_precision_oracle(rng):
    for _ in range(20):
        r, f, b = (rng.uniform(-8, 8, (rng.integers(1, 20), 1)) for _ in range(3))
        xi = float(rng.uniform(0.05, 1.0))
        got = discriminator_loss(Tensor(r), Tensor(f), Tensor(b), xi).item()
        want = -(_mp_mean([_mp_log_sigmoid(v) for v in r.ravel()])
                 + xi * _mp_mean([_mp_log_one_minus_sigmoid(v) for v in f.ravel()])
                 + (1 - xi) * _mp_mean([_mp_log_one_minus_sigmoid(v) for v in b.ravel()]))
        assert abs(got - float(want)) <= 1e-12
        got = discriminator_loss(Tensor(r), Tensor(f), None, xi).item()
        want = -(_mp_mean([_mp_log_sigmoid(v) for v in r.ravel()])
                 + _mp_mean([_mp_log_one_minus_sigmoid(v) for v in f.ravel()]))
        assert abs(got - float(want)) <= 1e-12


def test_generator_loss_values(rng):
    assert generator_loss(Tensor(np.zeros((5, 1)))).item() == pytest.approx(math.log(2), abs=1e-15)
    assert generator_loss(Tensor(np.full((2, 1), 800.0))).item() == pytest.approx(0.0, abs=1e-300)
    for _ in range(20):
        x = rng.uniform(-8, 8, (rng.integers(1, 30), 1))
        want = -_mp_mean([_mp_log_sigmoid(v) for v in x.ravel()])
        assert abs(generator_loss(Tensor(x)).item() - float(want)) <= 1e-12


def test_losses_reject_non_finite():
    ok = Tensor(np.zeros((2, 1)))
    bad = Tensor(np.array([[0.0], [np.nan]]))
    with pytest.raises(TrainingError):
        discriminator_loss(bad, ok)
    with pytest.raises(TrainingError):
        discriminator_loss(ok, ok, Tensor(np.array([[np.inf]])))
    with pytest.raises(TrainingError):
        generator_loss(bad)


def test_all_generated_groups_are_labelled_fake(rng):
    """Raising a real logit lowers the loss; raising any generated or buffered logit raises it."""
    r, f, b = (Tensor(rng.normal(size=(4, 1)), requires_grad=True) for _ in range(3))
    discriminator_loss(r, f, b, 0.75).backward()
    assert np.all(r.grad < 0) and np.all(f.grad > 0) and np.all(b.grad > 0)


# -- training steps ------------------------------------------------------------


def _param_bytes(net):
    return [p.data.tobytes() for _, p in net.parameters()]


def test_discriminator_step_leaves_generator_untouched(rng):
    gen, disc = _small_nets()
    before_g, before_d = _param_bytes(gen), _param_bytes(disc)
    discriminator_step(gen, disc, AdamState(1e-4), rng.normal(size=(8, 2)), rng.normal(size=(8, 100)),
                       rng.normal(size=(8, 2)), 0.75)
    assert _param_bytes(gen) == before_g
    assert _param_bytes(disc) != before_d
    assert all(p.grad is None for _, p in gen.parameters())


def test_generator_step_leaves_discriminator_untouched(rng):
    gen, disc = _small_nets()
    before_g, before_d = _param_bytes(gen), _param_bytes(disc)
    generator_step(gen, disc, AdamState(2e-4), rng.normal(size=(8, 100)))
    assert _param_bytes(disc) == before_d
    assert _param_bytes(gen) != before_g


def test_generator_latents_are_normal_only(monkeypatch):
    seen = []
    real_step = core.generator_step

    def spy(gen, disc, opt, z_g):
        seen.append(z_g.copy())
        return real_step(gen, disc, opt, z_g)

    monkeypatch.setattr(core, "generator_step", spy)
    gen, disc = _small_nets()
    train(TrainConfig(epochs=2, batch_size=16, sigma=8.0), _toy_train(), gen, disc)
    sq = np.concatenate([(z**2).sum(axis=1) for z in seen])
    # anomalous latents (sigma 8) would have squared norms near 6400
    assert sq.max() < 250.0


# -- training loop -------------------------------------------------------------


def test_step_counts_and_schedule():
    gen, disc = _small_nets()
    rep = train(TrainConfig(epochs=8, n_z=2, n_dis=3, batch_size=16), _toy_train(70), gen, disc)
    batches = 70 // 16
    assert rep.d_steps == 8 * batches * 3
    assert rep.g_steps == 8 * batches
    assert rep.latent_epochs == [1, 2, 4, 6, 8]
    assert rep.buffer_term_epochs == list(range(2, 9))


def test_latent_refresh_with_n_z_three():
    gen, disc = _small_nets()
    rep = train(TrainConfig(epochs=7, n_z=3, batch_size=32), _toy_train(), gen, disc)
    assert rep.latent_epochs == [1, 3, 6]


def test_single_epoch_never_uses_buffer(monkeypatch):
    used = []
    real_step = core.discriminator_step

    def spy(gen, disc, opt, x, z_d, x_buf, xi, mode="eval"):
        used.append(x_buf is not None)
        return real_step(gen, disc, opt, x, z_d, x_buf, xi, mode)

    monkeypatch.setattr(core, "discriminator_step", spy)
    gen, disc = _small_nets()
    train(TrainConfig(epochs=1), _toy_train(), gen, disc)
    assert used and not any(used)
    used.clear()
    gen, disc = _small_nets()
    train(TrainConfig(epochs=2, batch_size=16), _toy_train(), gen, disc)
    assert used == [False] * 8 + [True] * 8


def test_validation_schedule_and_best_checkpoint():
    scripted = iter([0.6, 0.9, 0.7])
    states = {}

    def evaluator(g, d, epoch):
        states[epoch] = d.state_dict()
        return next(scripted)

    gen, disc = _small_nets()
    rep = train(TrainConfig(epochs=20, val_period=8, batch_size=32), _toy_train(), gen, disc, evaluator)
    assert [r["epoch"] for r in rep.trace] == [8, 16, 20]
    assert rep.best_epoch == 16 and rep.best_auroc == 0.9 == max(rep.auroc_trace)
    for k, v in disc.state_dict().items():
        np.testing.assert_array_equal(v, states[16][k])


def test_training_is_deterministic():
    traces = []
    for _ in range(2):
        gen, disc = _small_nets(seed=3)
        x = _toy_train(seed=3)
        ev = lambda g, d, e: float(np.mean(d.forward(x, "eval").data))
        rep = train(TrainConfig(epochs=4, val_period=2, batch_size=16, seed=5), x, gen, disc, ev)
        traces.append((rep.auroc_trace, rep.d_losses, rep.g_losses))
    assert traces[0] == traces[1]


def test_empty_training_set_is_config_error():
    gen, disc = _small_nets()
    with pytest.raises(ConfigError):
        train(TrainConfig(epochs=1), np.empty((0, 2)), gen, disc)


def test_non_finite_loss_reports_context():
    gen, disc = _small_nets()
    gen.parameters()[0][1].data[0, 0] = np.nan
    with pytest.raises(TrainingError, match=r"epoch 1, batch 1"):
        train(TrainConfig(epochs=1), _toy_train(), gen, disc)


@pytest.mark.parametrize("kw", [{"xi": 0.0}, {"xi": 1.2}, {"epochs": 0}, {"lr_d": 0.0}, {"n_dis": 0},
                                {"latent_reuse": "x"}, {"fake_bn_mode": "x"}, {"sigma": 1.0}])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.n_z, c.n_dis, c.batch_size, c.alpha, c.xi, c.sigma) == (2, 2, 16, 0.75, 0.75, 4.0)
    assert (c.lr_g, c.lr_d, c.beta1, c.beta2, c.val_period) == (2e-4, 1e-4, 0.0, 0.9, 8)
    assert c.buffer_capacity == 32


def test_literal_latent_reuse_uses_one_batch(monkeypatch):
    seen = []
    real_step = core.discriminator_step

    def spy(gen, disc, opt, x, z_d, x_buf, xi, mode="eval"):
        seen.append(z_d.tobytes())
        return real_step(gen, disc, opt, x, z_d, x_buf, xi, mode)

    monkeypatch.setattr(core, "discriminator_step", spy)
    gen, disc = _small_nets()
    train(TrainConfig(epochs=1, latent_reuse="literal"), _toy_train(), gen, disc)
    assert len(set(seen)) == 1
    seen.clear()
    gen, disc = _small_nets()
    train(TrainConfig(epochs=1, latent_reuse="pool"), _toy_train(), gen, disc)
    assert len(set(seen)) == 4
