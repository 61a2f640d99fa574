from __future__ import annotations

import pytest

from blindspot.config import OUTPUT_ROOT_ENV, ConfigError, RunConfig, dump_config, load_config


def _write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_defaults_validate():
    config = load_config()
    assert config.geometry.variant == "blindspot"
    assert config.frame_geometry().grid_shape == (14, 14)


def test_file_then_overrides(tmp_path):
    path = _write(tmp_path, "seed: 4\npretrain:\n  steps: 12\n  lr: 0.001\n")
    config = load_config(path, {"pretrain.steps": "7"})
    assert config.seed == 4
    assert config.pretrain.lr == 0.001
    assert config.pretrain.steps == 7  # command line wins


def test_unknown_key_names_its_line(tmp_path):
    path = _write(tmp_path, "seed: 1\ngeometry:\n  bogus: 3\n", name="bad.yaml")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 3
    assert str(info.value).startswith(f"{path}:3:")


def test_unknown_section(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(_write(tmp_path, "optimizer:\n  lr: 1\n"))


def test_type_error_names_its_line(tmp_path):
    path = _write(tmp_path, "model:\n  depth: 2\n  embed_dim: wide\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 3


@pytest.mark.parametrize(
    "override",
    [
        {"geometry.variant": "fovea"},
        {"geometry.camera_fov": "0x70"},
        {"geometry.frame": "224"},
        {"geometry.tube_ratio": "1.5"},
        {"model.n_heads": "5"},
        {"multimodal.tau": "0"},
        {"data.clip_frames": "3"},
        {"pretrain.steps": "many"},
        {"learning_rate": "1"},
    ],
)
def test_invalid_values(override):
    with pytest.raises(ConfigError):
        load_config(overrides=override)


def test_bad_yaml(tmp_path):
    with pytest.raises(ConfigError, match="YAML"):
        load_config(_write(tmp_path, "seed: [1,\n"))


def test_dump_round_trip(tmp_path):
    config = load_config(overrides={"seed": "9", "curation.length": "68f"})
    again = load_config(_write(tmp_path, dump_config(config)))
    assert again.to_dict() == config.to_dict()


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    assert str(RunConfig().output_root()) == "runs"
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert RunConfig().output_root() == tmp_path
    assert RunConfig(output_dir="x").output_root().name == "x"


def test_output_dir_not_in_hash():
    assert RunConfig(output_dir="a").hashable() == RunConfig(output_dir="b").hashable()
