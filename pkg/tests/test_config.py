import math

import pytest

from livqual.classifier import fit_lda, save_model
from livqual.config import DEFAULT_CONFIG, LivQualConfig, Settings, config_from_dict, load_config, save_config
from livqual.errors import ConfigError


class TestDefaults:
    def test_documented_defaults(self):
        config = LivQualConfig()
        assert config.block_size == 32
        assert config.gabor.n_orientations == 8
        assert config.bands.n_bands == 30
        assert config.thresholds.t_abrupt == pytest.approx(math.pi / 8)
        assert config.thresholds.unreliable_overlap == 0.5
        assert config.epsilon.relative == 1e-6

    def test_is_frozen(self):
        with pytest.raises(Exception):
            DEFAULT_CONFIG.block_size = 16

    @pytest.mark.parametrize(
        "data, field",
        [
            ({"block_size": 4}, "block_size"),
            ({"bands": {"f_low": 0.3, "f_high": 0.2}}, "f_low"),
            ({"thresholds": {"freq_min": 0.3, "freq_max": 0.2}}, "freq_min"),
            ({"gabor": {"sigma": -1}}, "gabor.sigma"),
            ({"colour": "red"}, "colour"),
        ],
        ids=["block-size", "band-order", "frequency-order", "negative-sigma", "unknown-key"],
    )
    def test_invalid_values(self, data, field):
        with pytest.raises(ConfigError, match=field):
            config_from_dict(data)


class TestLoadConfig:
    def test_none_gives_defaults(self):
        assert load_config(None) is DEFAULT_CONFIG

    def test_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"block_size": 16, "gabor": {"sigma": 3.0}}')
        config = load_config(path)
        assert config.block_size == 16
        assert config.gabor.sigma == 3.0

    def test_yaml(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("block_size: 24\nthresholds:\n  a_min: 5\n")
        config = load_config(path)
        assert (config.block_size, config.thresholds.a_min) == (24, 5.0)

    def test_key_values(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("# tuned for 1000 dpi\nblock_size = 64\ngabor.frequency=0.05  # half\n\n")
        config = load_config(path)
        assert config.block_size == 64
        assert config.gabor.frequency == 0.05

    def test_model_file_supplies_its_config(self, tmp_path):
        config = LivQualConfig(block_size=16)
        model = fit_lda([[float(i)] * 10 for i in range(4)], ["real", "real", "fake", "fake"], 0b1, "s", config)
        path = save_model(model, tmp_path / "model.json")
        assert load_config(path) == config

    def test_saved_config_round_trips(self, tmp_path):
        config = LivQualConfig(block_size=48)
        path = tmp_path / "saved.json"
        save_config(config, path)
        assert load_config(path) == config

    def test_errors_name_the_file(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("block_size: [unclosed\n")
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert info.value.source == str(path)

    def test_line_without_equals(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("block_size 32\n")
        with pytest.raises(ConfigError, match="line 1"):
            load_config(path)

    def test_invalid_value_names_the_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"block_size": 2}')
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert "block_size" in str(info.value)
        assert str(path) in str(info.value)

    def test_non_mapping(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path)


class TestSettings:
    def test_from_environment(self):
        settings = Settings.from_env({
            "LIVQUAL_THREADS": "3",
            "LIVQUAL_LOG_LEVEL": "debug",
            "BRAINTRUST_API_KEY": "sk-test",
            "BRAINTRUST_PROJECT": "liveness",
        })
        assert settings.threads == 3
        assert settings.log_level == "DEBUG"
        assert settings.braintrust_project == "liveness"
        assert "sk-test" not in repr(settings)

    def test_defaults(self):
        settings = Settings.from_env({})
        assert settings.threads >= 1
        assert settings.braintrust_api_key is None
        assert settings.braintrust_project == "livqual"

    @pytest.mark.parametrize("threads", ["many", "0"])
    def test_bad_thread_count(self, threads):
        with pytest.raises(ConfigError):
            Settings.from_env({"LIVQUAL_THREADS": threads})

    def test_workers_are_capped(self):
        settings = Settings.from_env({"LIVQUAL_THREADS": "4"})
        assert settings.workers() == 4
        assert settings.workers(16) == 4
        assert settings.workers(2) == 2
        assert settings.workers(0) == 1
