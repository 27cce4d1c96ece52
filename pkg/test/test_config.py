import pytest

from app.config import PipelineConfig, load_config
from app.exceptions import ConfigError


def test_bundled_defaults_match_model_defaults():
    assert load_config() == PipelineConfig()


def test_unknown_key_names_the_field(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("labelgen:\n  tau: 0.5\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.field == "labelgen.tau"


def test_out_of_range_value(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("labelgen:\n  tau_duration: 1.5\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.field == "labelgen.tau_duration"


def test_radii_and_clustering_must_agree(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("labelgen:\n  radii: {car: 2.0}\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_partial_file_keeps_other_defaults(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("refinement:\n  conf_threshold: 0.5\nseed: 3\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg.refinement.conf_threshold == 0.5 and cfg.seed == 3
    assert cfg.labelgen == PipelineConfig().labelgen


def test_overrides():
    cfg = PipelineConfig().with_overrides(seed=9, workers=4)
    assert (cfg.seed, cfg.workers) == (9, 4)
    assert PipelineConfig().with_overrides() == PipelineConfig()
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides(workers=0)


def test_unknown_class_lookup():
    with pytest.raises(ConfigError):
        PipelineConfig().labelgen.radius_for("tram")
