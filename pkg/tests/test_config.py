import pytest

from samdaq.config import Config, ConfigError, load_config, parse_config_text, preset


def test_defaults_match_reference_settings():
    cfg = Config()
    assert (cfg.num_video_queries, cfg.num_frame_queries, cfg.query_hidden_dim) == (8, 30, 64)
    assert cfg.update_strategy == "addition" and cfg.embedding_mode == "sparse"
    assert cfg.supervised_levels == (4,) and cfg.loss_alpha == 0.5
    assert cfg.lr == 1e-4 and cfg.weight_decay == 0.05 and cfg.iterations == 2000


def test_file_round_trip(tmp_path):
    cfg = Config(input_size=32, supervised_levels=(3, 4), float64=True, update_strategy="none")
    path = tmp_path / "c.txt"
    path.write_text(cfg.dumps(), encoding="utf-8")
    assert load_config(path) == cfg


def test_parse_comments_and_overrides(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\ninput_size = 32  # inline\n\nseed=3\n", encoding="utf-8")
    cfg = load_config(path, seed="5")
    assert cfg.input_size == 32 and cfg.seed == 5


@pytest.mark.parametrize("text", ["bogus_key = 1", "input_size = big", "float64 = maybe",
                                  "update_strategy = sum", "input_size = 20", "no equals sign"])
def test_invalid_configs(tmp_path, text):
    path = tmp_path / "c.txt"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_validation():
    with pytest.raises(ConfigError):
        Config(stage_channels=(16, 16, 32, 64))
    with pytest.raises(ConfigError):
        Config(supervised_levels=(1,))
    with pytest.raises(ConfigError):
        Config(peft="prefix")


def test_presets():
    cfg = preset("smoke", seed=2)
    assert cfg.input_size == 32 and cfg.iterations == 2000 and cfg.seed == 2
    with pytest.raises(ConfigError):
        preset("huge")


def test_parse_config_text():
    assert parse_config_text("a = 1\nb=x y") == {"a": "1", "b": "x y"}
