"""Config layering: preset < file < flag overrides; seed precedence chain."""

import pytest

from ssl_distill.config import (
    ConfigError,
    ENV_SEED,
    PRESETS,
    load_experiment,
    parse_config_text,
    resolve,
)

NO_ENV = {}


class TestParse:
    def test_basic_lines(self):
        values = parse_config_text("pretrain.lr = 0.1\n# comment\n\nsplit.seed=4\n")
        assert values == {"pretrain.lr": "0.1", "split.seed": "4"}

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("pretrain.learning_rate = 0.1")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("pretrain.lr 0.1")

    def test_empty_value(self):
        with pytest.raises(ConfigError, match="empty value"):
            parse_config_text("pretrain.lr =")


class TestPresets:
    def test_desk_resolves(self):
        exp = resolve("desk", None, None, None, NO_ENV)
        assert exp.preset == "desk"
        assert exp.label_fraction == 0.05
        assert exp.teacher_spec == "tiny-t"
        assert exp.student_spec == "tiny-s"
        assert exp.stages["pretrain"].epochs == 30
        assert exp.stages["finetune_teacher"].epochs == 20
        assert exp.stages["distill"].epochs == 40
        assert exp.stages["finetune_student"].epochs == 20
        assert exp.strong_policy.crop_scale_min == 0.6
        assert exp.weak_policy.rotation_max == 0.0

    def test_paper_resolves(self):
        exp = resolve("paper", None, None, None, NO_ENV)
        assert exp.generator.image_size == 299
        assert exp.label_fraction == 0.02
        assert exp.stages["pretrain"].epochs == 100
        assert exp.stages["distill"].epochs == 200

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            resolve("lab", None, None, None, NO_ENV)

    def test_momentum_defaults(self):
        exp = resolve("desk", None, None, None, NO_ENV)
        for st, cfg in exp.stages.items():
            assert cfg.momentum == 0.9, st


class TestPrecedence:
    def test_file_beats_preset(self):
        exp = resolve("desk", {"pretrain.lr": "0.123"}, None, None, NO_ENV)
        assert exp.stages["pretrain"].lr == 0.123

    def test_flag_beats_file(self):
        exp = resolve(
            "desk", {"pretrain.lr": "0.123"}, {"pretrain.lr": "0.456"}, None, NO_ENV
        )
        assert exp.stages["pretrain"].lr == 0.456

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            resolve("desk", None, {"pretrain.nesterov": "1"}, None, NO_ENV)

    def test_bad_type_rejected(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            resolve("desk", None, {"pretrain.epochs": "many"}, None, NO_ENV)


class TestSeedPrecedence:
    def test_default_zero(self):
        assert resolve("desk", None, None, None, NO_ENV).seed == 0

    def test_env_used_when_nothing_else(self):
        assert resolve("desk", None, None, None, {ENV_SEED: "7"}).seed == 7

    def test_config_beats_env(self):
        exp = resolve("desk", {"experiment.seed": "3"}, None, None, {ENV_SEED: "7"})
        assert exp.seed == 3

    def test_flag_beats_everything(self):
        exp = resolve("desk", {"experiment.seed": "3"}, None, 9, {ENV_SEED: "7"})
        assert exp.seed == 9

    def test_bad_env_seed(self):
        with pytest.raises(ConfigError, match=ENV_SEED):
            resolve("desk", None, None, None, {ENV_SEED: "soon"})

    def test_seed_reaches_stage_configs(self):
        exp = resolve("desk", None, None, 5, NO_ENV)
        assert all(cfg.seed == 5 for cfg in exp.stages.values())


class TestLoadExperiment:
    def test_reads_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("split.label_fraction = 0.1\nexperiment.seed = 2\n")
        exp = load_experiment(str(path), "desk", None, None, NO_ENV)
        assert exp.label_fraction == 0.1
        assert exp.seed == 2

    def test_rejects_bad_fraction(self):
        with pytest.raises(ConfigError, match="label_fraction"):
            resolve("desk", {"split.label_fraction": "1.5"}, None, None, NO_ENV)

    def test_rejects_bad_threshold(self):
        with pytest.raises(ConfigError, match="threshold"):
            resolve("desk", {"pseudo_label.threshold": "0"}, None, None, NO_ENV)

    def test_presets_cover_schema(self):
        # every preset must resolve without missing-key errors
        for name in PRESETS:
            resolve(name, None, None, None, NO_ENV)
