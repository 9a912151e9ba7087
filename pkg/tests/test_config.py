import logging
from pathlib import Path

import pytest

from config import BIOLOGY_GAMMA, SCHEMA, SPLITS, AppConfig, ExperimentSpec, describe_defaults, parse_config
from utils.errors import ConfigError

MINIMAL = """\
[experiment]
dataset = synthetic:physics_like
variants = ae
"""


class TestParseConfig:
    def test_minimal_config_fills_defaults(self, write_config):
        spec = parse_config(write_config(MINIMAL))
        assert spec.variants == ("ae",)
        assert spec.splits == SPLITS
        assert spec.seed == 0
        assert spec.profile == "physics_like"
        assert spec.model_options["omega1"] == 0.5 and spec.model_options["omega2"] == 0.5
        config = spec.kiae_config(33, "kiae")
        assert (config.fc_dims, config.lstm_hidden, config.batch_size) == ((64, 32), 32, 16)
        assert (spec.train_fraction, spec.folds, spec.subsample) == (0.8, 5, 90)
        assert spec.missing_policy == "fill"

    def test_omega2_inferred_from_omega1(self, write_config):
        spec = parse_config(write_config(MINIMAL + "[model]\nomega1 = 0.7\n"))
        assert spec.model_options["omega2"] == pytest.approx(0.3)

    def test_out_of_range_omega_cites_bound_and_line(self, write_config):
        with pytest.raises(ConfigError, match=r"\[0, 1\]") as info:
            parse_config(write_config(MINIMAL + "[model]\nomega1 = 1.2\n"))
        assert info.value.line == 5

    def test_inconsistent_weights(self, write_config):
        with pytest.raises(ConfigError) as info:
            parse_config(write_config(MINIMAL + "[model]\nomega1 = 0.7\nomega2 = 0.7\n"))
        assert info.value.line == 6

    def test_unknown_key(self, write_config):
        with pytest.raises(ConfigError, match="unknown key") as info:
            parse_config(write_config(MINIMAL + "colour = blue\n"))
        assert info.value.line == 4

    def test_unknown_section(self, write_config):
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config(write_config(MINIMAL + "[extras]\n"))

    def test_type_mismatch(self, write_config):
        with pytest.raises(ConfigError, match="integer") as info:
            parse_config(write_config(MINIMAL + "\n# training\n[model]\nepochs = ten\n"))
        assert info.value.line == 7

    def test_missing_required_key_cites_last_line(self, write_config):
        with pytest.raises(ConfigError, match="variants") as info:
            parse_config(write_config("[experiment]\ndataset = data.csv\nseed = 3\n"))
        assert info.value.line == 3

    def test_bad_variant_name(self, write_config):
        with pytest.raises(ConfigError):
            parse_config(write_config("[experiment]\ndataset = d.csv\nvariants = ae, vae\n"))

    def test_unknown_profile(self, write_config):
        with pytest.raises(ConfigError, match="profile"):
            parse_config(write_config("[experiment]\ndataset = synthetic:chemistry_like\nvariants = ae\n"))

    def test_full_config(self, write_config, tmp_path):
        text = f"""\
; comparison on a CSV dataset
[experiment]
dataset = {tmp_path / 'data.csv'}
variants = ae, kiae, noisy_kiae
splits = fit, test
seed = 42
output = {tmp_path / 'out'}
label_column = species
categorical_columns = c1, c2
known_fraction = 0.5
missing_policy = ignore

[model]
repr_dim = 8
window = 16
jump = 4
sequence_mode = per_feature

[knowledge]
gamma = 0-1:1, 0-2:2, 1-2:3
k_neighbors = 3

[evaluation]
folds = 3
"""
        spec = parse_config(write_config(text))
        assert spec.variants == ("ae", "kiae", "noisy_kiae")
        assert spec.splits == ("fit", "test")
        assert spec.seed == 42
        assert spec.output_dir == tmp_path / "out"
        assert spec.label_column == "species"
        assert spec.categorical_columns == ("c1", "c2")
        assert spec.missing_policy == "ignore"
        assert spec.gamma == {(0, 1): 1.0, (0, 2): 2.0, (1, 2): 3.0}
        assert spec.dataset_name == "data"
        config = spec.kiae_config(64, "kiae")
        assert (config.repr_dim, config.window, config.jump, config.sequence_mode) == (8, 16, 4, "per_feature")

    def test_file_settings_override_profile_defaults(self, write_config):
        text = "[experiment]\ndataset = synthetic:physics_like\nvariants = kiae\n[model]\nepochs = 7\nfc_a = 12\n"
        config = parse_config(write_config(text)).kiae_config(33, "kiae")
        assert config.epochs == 7
        assert config.learning_rate == 2e-3
        assert config.fc_dims == (12, 32)

    def test_output_dir_from_environment(self, write_config, monkeypatch, tmp_path):
        monkeypatch.setenv(AppConfig.OUTPUT_ENV_VAR, str(tmp_path / "from_env"))
        assert parse_config(write_config(MINIMAL)).output_dir == tmp_path / "from_env"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_config(tmp_path / "nope.ini")


class TestExperimentSpec:
    def test_ae_forces_reconstruction_only(self):
        spec = ExperimentSpec(dataset="synthetic:physics_like", variants=("ae", "kiae"))
        ae = spec.kiae_config(5, "ae")
        kiae = spec.kiae_config(5, "kiae")
        assert (ae.omega1, ae.omega2) == (1.0, 0.0)
        assert (kiae.omega1, kiae.omega2) == (0.5, 0.5)

    def test_profile_defaults_sit_beneath_explicit_options(self):
        biology = ExperimentSpec(dataset="synthetic:biology_like", variants=("kiae",))
        config = biology.kiae_config(512, "kiae")
        assert (config.repr_dim, config.epochs, config.learning_rate) == (8, 400, 2e-3)
        assert biology.synthetic_separation == 8.0
        tuned = ExperimentSpec(dataset="synthetic:biology_like", variants=("kiae",), model_options={"epochs": 3}, separation=5.0)
        assert tuned.kiae_config(512, "kiae").epochs == 3
        assert tuned.synthetic_separation == 5.0

    def test_csv_dataset_keeps_model_defaults(self):
        spec = ExperimentSpec(dataset="data.csv", variants=("kiae",))
        config = spec.kiae_config(9, "kiae")
        assert (config.repr_dim, config.epochs, config.learning_rate) == (4, 10, 1e-3)
        assert spec.synthetic_separation == 4.0

    def test_biology_gamma_default(self):
        spec = ExperimentSpec(dataset="synthetic:biology_like", variants=("kiae",))
        table = spec.gamma_table(3)
        for (x, y), value in BIOLOGY_GAMMA.items():
            assert table.gamma[x, y] == value
        assert ExperimentSpec(dataset="synthetic:physics_like", variants=("kiae",)).gamma_table(2).gamma[0, 1] == 1.0

    def test_overrides_skip_none(self, tmp_path):
        spec = ExperimentSpec(dataset="a.csv", variants=("ae",), seed=1, output_dir=tmp_path)
        changed = spec.with_overrides(seed=None, variants=("kiae",), dataset=None)
        assert changed.seed == 1 and changed.variants == ("kiae",) and changed.dataset == "a.csv"

    def test_paths_checked_before_training(self, tmp_path):
        spec = ExperimentSpec(dataset=str(tmp_path / "absent.csv"), variants=("ae",), output_dir=tmp_path / "out")
        with pytest.raises(FileNotFoundError):
            spec.check_paths()


class TestAppConfig:
    def test_log_level_sources(self, monkeypatch):
        monkeypatch.setenv(AppConfig.LOG_ENV_VAR, "debug")
        assert AppConfig.log_level() == logging.DEBUG
        assert AppConfig.log_level("error") == logging.ERROR
        assert AppConfig.log_level("chatty") == logging.INFO

    def test_default_output_dir(self, monkeypatch):
        monkeypatch.delenv(AppConfig.OUTPUT_ENV_VAR, raising=False)
        assert AppConfig.default_output_dir() == Path("kiae_out")


def test_every_key_is_documented():
    text = describe_defaults()
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text
        for key in keys:
            assert f"  {key} = " in text
