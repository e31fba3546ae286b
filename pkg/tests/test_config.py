"""
Tests for configuration loading, validation and overrides.
"""

import pytest

from ktnet.config import Config, config_from_dict, dumps, load_config, override, save_config
from ktnet.errors import ConfigError


class TestDefaults:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg == Config()
        assert cfg.data.image_size == 128
        assert cfg.model.dilations == (1, 2, 3)
        assert cfg.ktm.mode == "v2-full"
        assert cfg.loss.uv == 10.0
        assert cfg.eval.kappa == 0.255
        assert cfg.eval.medium_area == 1024.0
        assert cfg.imbalance.strategy == "none"

    def test_round_trip(self, tmp_path, cfg):
        path = tmp_path / "run.toml"
        save_config(cfg, path)
        assert load_config(path) == cfg
        assert "[model]" in dumps(cfg)


class TestValidation:
    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[model]\nwidth = 3\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="unknown configuration key: model.width"):
            load_config(path)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown configuration key: solver"):
            config_from_dict({"solver": {"lr": 1.0}})

    @pytest.mark.parametrize(
        "data, message",
        [
            ({"seed": "1"}, "seed: expected an integer"),
            ({"seed": True}, "seed: expected an integer"),
            ({"model": {"strengthen": 1}}, "model.strengthen: expected a boolean"),
            ({"optim": {"lr": "fast"}}, "optim.lr: expected a number"),
            ({"model": {"dilations": 2}}, "model.dilations: expected a list"),
            ({"model": {"dilations": [1, 2.5]}}, r"model.dilations\[1\]: expected an integer"),
            ({"model": 3}, "model: expected a table"),
        ],
    )
    def test_wrong_types(self, data, message):
        with pytest.raises(ConfigError, match=message):
            config_from_dict(data)

    def test_integers_are_accepted_as_floats(self):
        cfg = config_from_dict({"optim": {"lr": 1}})
        assert cfg.optim.lr == 1.0
        assert isinstance(cfg.optim.lr, float)

    @pytest.mark.parametrize(
        "values, message",
        [
            ({"model.icr": "v3"}, "model.icr"),
            ({"model.pipeline": "yolo"}, "model.pipeline"),
            ({"ktm.mode": "full"}, "ktm.mode"),
            ({"ktm.sources": ["loc", "pose"]}, r"ktm.sources\[1\]"),
            ({"ktm.sources": []}, "ktm.sources"),
            ({"model.dilations": []}, "model.dilations"),
            ({"data.image_size": 100}, "divisible by 32"),
            ({"eval.threads": 0}, "eval.threads"),
            ({"imbalance.strategy": "ktm-only", "ktm.mode": "off"}, "ktm-only"),
            ({"model.pipeline": "fcn"}, "fcn needs data.n_instances = 1"),
        ],
    )
    def test_invalid_values(self, values, message):
        with pytest.raises(ConfigError, match=message):
            override(Config(), **values)

    def test_fcn_with_one_instance(self):
        cfg = override(Config(), **{"model.pipeline": "fcn", "data.n_instances": 1})
        assert cfg.model.pipeline == "fcn"

    def test_error_code(self):
        with pytest.raises(ConfigError) as info:
            config_from_dict({"nope": 1})
        assert info.value.one_line() == "error[E_CONFIG]: unknown configuration key: nope"

    def test_toml_syntax_error(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[model\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="broken.toml"):
            load_config(path)


class TestOverride:
    def test_dotted_keys(self, cfg):
        out = override(cfg, **{"eval.threads": 4, "seed": 7})
        assert out.eval.threads == 4
        assert out.seed == 7
        assert out.model == cfg.model

    def test_none_values_are_skipped(self, cfg):
        assert override(cfg, **{"seed": None}) == cfg

    def test_tuples(self, cfg):
        assert override(cfg, **{"model.dilations": (1, 4)}).model.dilations == (1, 4)
