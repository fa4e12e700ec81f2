import json

import pytest

from src.config import settings as settings_module
from src.config.settings import Settings, get_settings, init_settings
from src.models.errors import ConfigError

TOML_TEXT = """\
dimension = 3
order = 2
workers = 2

[shape]
kind = "sphere"
center = [0.5, 0.5, 0.5]
radius = 0.2

[refine]
base_level = 2
boundary_level = 4
seeds = [[3, 1, 1, 1]]

[partition]
rank_count = 4
load_tol = 0.2

[solver]
rel_tol = 1e-8
jacobi = true
dirichlet_mode = "projected"

[study]
convergence_levels = [2, 3, 4]
condition_norm = "2"
"""


def test_defaults_without_file(tmp_path, monkeypatch):
    monkeypatch.setattr(settings_module, "_get_config_path", lambda: tmp_path / "config.toml")
    settings = Settings.load()
    assert settings == Settings()
    assert settings.DIMENSION == 2
    assert settings.SHAPE == {"kind": "none"}


def test_load_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TOML_TEXT, encoding="utf-8")
    settings = Settings.load(path)
    assert settings.DIMENSION == 3
    assert settings.ORDER == 2
    assert settings.WORKERS == 2
    assert settings.SHAPE["kind"] == "sphere"
    assert settings.SEEDS == [[3, 1, 1, 1]]
    assert settings.RANK_COUNT == 4
    assert settings.LOAD_TOL == pytest.approx(0.2)
    assert settings.REL_TOL == pytest.approx(1e-8)
    assert settings.ABS_TOL == pytest.approx(1e-6)
    assert settings.JACOBI is True
    assert settings.DIRICHLET_MODE == "projected"
    assert settings.CONVERGENCE_LEVELS == [2, 3, 4]
    assert settings.CONDITION_NORM == "2"


def test_load_json_matches_toml(tmp_path):
    toml_path = tmp_path / "run.toml"
    toml_path.write_text(TOML_TEXT, encoding="utf-8")
    data = {
        "dimension": 3, "order": 2, "workers": 2,
        "shape": {"kind": "sphere", "center": [0.5, 0.5, 0.5], "radius": 0.2},
        "refine": {"base_level": 2, "boundary_level": 4, "seeds": [[3, 1, 1, 1]]},
        "partition": {"rank_count": 4, "load_tol": 0.2},
        "solver": {"rel_tol": 1e-8, "jacobi": True, "dirichlet_mode": "projected"},
        "study": {"convergence_levels": [2, 3, 4], "condition_norm": "2"},
    }
    json_path = tmp_path / "run.json"
    json_path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    assert Settings.load(json_path) == Settings.load(toml_path)


def test_unknown_key_reports_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("order = 1\n\n[solver]\nrel_tol = 1e-8\ntolerance = 1e-3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="第 5 行: 未知配置键 solver.tolerance"):
        Settings.load(path)


def test_unknown_top_level_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "order": 1,\n  "colour": "red"\n}\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="第 3 行: 未知配置键 colour"):
        Settings.load(path)


def test_syntax_errors(tmp_path):
    toml_path = tmp_path / "broken.toml"
    toml_path.write_text("order = \n", encoding="utf-8")
    with pytest.raises(ConfigError, match="TOML"):
        Settings.load(toml_path)
    json_path = tmp_path / "broken.json"
    json_path.write_text('{"order": }', encoding="utf-8")
    with pytest.raises(ConfigError, match="JSON"):
        Settings.load(json_path)
    list_path = tmp_path / "list.json"
    list_path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        Settings.load(list_path)


def test_missing_explicit_file(tmp_path):
    with pytest.raises(ConfigError):
        Settings.load(tmp_path / "absent.toml")


@pytest.mark.parametrize("overrides", [
    {"DIMENSION": 4},
    {"ORDER": 3},
    {"WORKERS": 0},
    {"RANK_COUNT": 0},
    {"LOAD_TOL": -0.1},
    {"DIRICHLET_MODE": "weak"},
    {"SOLVE_MODE": "direct"},
    {"MANUFACTURED": "cubic"},
    {"CONDITION_NORM": "inf"},
    {"BASE_LEVEL": 21},
    {"SDF_LEVELS": [4, -1]},
    {"SEEDS": [[2, 1]]},
])
def test_validation(overrides):
    with pytest.raises(ConfigError):
        Settings(**overrides)


def test_wrong_value_types(tmp_path):
    path = tmp_path / "types.toml"
    path.write_text("order = true\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="order"):
        Settings.load(path)
    path.write_text("[refine]\nseeds = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="seeds"):
        Settings.load(path)
    path.write_text("shape = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        Settings.load(path)


def test_overrides_ignore_none():
    base = Settings()
    changed = base.with_overrides(WORKERS=3, SEED=None, OUT_DIR="results")
    assert changed.WORKERS == 3
    assert changed.SEED == base.SEED
    assert changed.OUT_DIR == "results"
    assert base.WORKERS == 1
    with pytest.raises(ConfigError):
        base.with_overrides(WORKERS=0)


def test_init_settings_sets_singleton(tmp_path, monkeypatch):
    monkeypatch.setattr(settings_module, "_settings", None)
    path = tmp_path / "run.toml"
    path.write_text("order = 2\n", encoding="utf-8")
    settings = init_settings(path, SEED=7)
    assert settings.ORDER == 2
    assert settings.SEED == 7
    assert get_settings() is settings
