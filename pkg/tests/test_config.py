import numpy as np
import pytest

from algan.config import config_from_dict, config_to_dict, load_config
from algan.errors import ConfigError

TOY = {"dataset": {"synthetic": {"kind": "gauss2d"}}}


def test_empty_sections_use_published_defaults():
    cfg = config_from_dict(TOY)
    t = cfg.train_config(0)
    assert (t.epochs, t.n_z, t.n_dis, t.batch_size, t.alpha, t.xi, t.sigma) == (192, 2, 2, 16, 0.75, 0.75, 4.0)
    assert (t.lr_g, t.lr_d, t.beta1, t.beta2, t.val_period, t.latent_dim) == (2e-4, 1e-4, 0.0, 0.9, 8, 100)
    assert cfg.model.generator_hidden == (512, 1024) and cfg.model.discriminator_hidden == (1024, 512)


@pytest.mark.parametrize("raw, field", [
    ({**TOY, "trainin": {}}, "trainin"),
    ({**TOY, "training": {"epoch": 3}}, "training"),
    ({"dataset": {"synthetic": {"kind": "gauss2d", "radis": 1}}}, "dataset.synthetic"),
    ({**TOY, "model": {"latent": {"sigma": 1.0}}}, "model.latent.sigma"),
    ({**TOY, "model": {"latent": {"alpha": 0.0}}}, "model.latent.alpha"),
    ({**TOY, "training": {"xi": 0.0}}, "training.xi"),
    ({**TOY, "training": {"epochs": "ten"}}, "training.epochs"),
    ({**TOY, "training": {"epochs": 0}}, "training.epochs"),
    ({**TOY, "model": {"generator_hidden": [8, 0]}}, "model.generator_hidden"),
    ({**TOY, "evaluation": {"bins": 0}}, "evaluation.bins"),
    ({"dataset": {}}, "dataset"),
    ({"dataset": {"synthetic": {"kind": "nope"}}}, "dataset.synthetic.kind"),
    ({**TOY, "seeds": []}, "seeds"),
])
def test_invalid_configs_name_the_field(raw, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.field is not None and info.value.field.startswith(field), info.value.field


def test_yaml_round_trip(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("dataset:\n  features:\n    path: data.csv\ntraining:\n  epochs: 4\nseeds: [1, 2]\n"
                 "output:\n  dir: out\n")
    cfg = load_config(p)
    assert cfg.dataset.features.path == str(tmp_path / "data.csv")
    assert cfg.seeds == (1, 2) and cfg.training.epochs == 4 and cfg.output_dir == "out"
    d = config_to_dict(cfg)
    assert d["output"] == {"dir": "out"} and d["training"]["epochs"] == 4


def test_bad_yaml_is_config_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("dataset: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_with_params_routes_and_validates():
    cfg = config_from_dict(TOY)
    c2 = cfg.with_params(sigma=6.0, n_dis=3, alpha=1.0, xi=1.0)
    assert c2.model.latent.sigma == 6.0 and c2.model.latent.alpha == 1.0
    assert c2.training.n_dis == 3 and c2.training.xi == 1.0
    assert cfg.model.latent.sigma == 4.0 and cfg.training.n_dis == 2
    with pytest.raises(ConfigError):
        cfg.with_params(sigma=1.0)
    with pytest.raises(ConfigError):
        cfg.with_params(n_z=0)


def test_example_configs_load():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for p in sorted(root.glob("*.yaml")):
        load_config(p)
