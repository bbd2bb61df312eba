import hashlib
from pathlib import Path

import pytest

from geolab.config import SCHEMA, config_from_dict, load_config
from geolab.errors import ConfigError
from geolab.runs import build_grid, build_model, check_spacing

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.digest == hashlib.sha256((CONFIGS / name).read_bytes()).hexdigest()
    build_model(cfg)


def test_defaults_fill_every_section():
    cfg = config_from_dict({})
    for section, keys in SCHEMA.items():
        assert set(cfg.section(section)) == set(keys)
    assert cfg.seed == 0
    assert cfg.section("grid")["k"] == "auto"


def test_digest_changes_with_bytes(tmp_path):
    a = load_config(write(tmp_path, "seed = 1\n"))
    b = load_config(write(tmp_path, "seed = 1 \n"))
    assert a.digest != b.digest


def test_with_seed_copies(tmp_path):
    cfg = load_config(write(tmp_path, "seed = 3\n"))
    other = cfg.with_seed(9)
    assert (cfg.seed, other.seed) == (3, 9)


@pytest.mark.parametrize("text, fragment", [
    ("[grid]\nq = 1.0\n\nkk = 4\n", "unknown key 'grid.kk' (line 4)"),
    ("[grid]\nclosure = \"open\"\n", "'grid.closure' must be one of"),
    ("[nope]\nx = 1\n", "unknown section [nope] (line 1)"),
    ("seed = \"zero\"\n", "'seed' must be int, got 'zero' (line 1)"),
    ("[grid]\nk = true\n", "'grid.k' must be int or str"),
    ("schema_version = 2\n", "schema_version 2 is not supported"),
    ("[grid]\nk = \"many\"\n", "'grid.k' must be an integer or \"auto\""),
    ("[grid]\nk = 1\n", "'grid.k' must be >= 2"),
    ("[grid]\nq = 1.0\nq_prime = 1.0\n", "'grid.q_prime' must lie in [0, grid.q)"),
    ("[find]\nstarts = 0\n", "'find.starts' must be >= 1"),
    ("seed = \n", "run.toml"),
])
def test_config_errors_name_the_field(tmp_path, text, fragment):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, text))
    assert fragment in str(err.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "absent.toml")


def test_auto_grid_needs_energy_bound():
    cfg = config_from_dict({"manifold": {"model": "torus"}})
    model, _ = build_model(cfg)
    with pytest.raises(ConfigError, match="energy_bound"):
        build_grid(cfg, model)
    cfg = config_from_dict({"energy_bound": 1.0, "manifold": {"model": "torus"}})
    grid = build_grid(cfg, model)
    assert grid.satisfies_spacing(model.injrad, 1.0)


def test_spacing_strict_and_warn():
    raw = {"manifold": {"model": "torus"}, "grid": {"k": 8}}
    cfg = config_from_dict(raw)
    model, _ = build_model(cfg)
    grid = build_grid(cfg, model)
    with pytest.raises(ConfigError, match="spacing"):
        check_spacing(cfg, grid, model, [1.0])
    cfg = config_from_dict({**raw, "grid": {"k": 8, "spacing": "warn"}})
    assert check_spacing(cfg, grid, model, [1.0]) == {"energy_bound": 4.0, "spacing_ok": False}


@pytest.mark.parametrize("model, iso", [
    ("torus", {"kind": "rotation"}),
    ("torus", {"kind": "translation"}),
    ("torus", {"kind": "translation", "vector": [0.1, 0.2, 0.3]}),
    ("sphere", {"kind": "translation", "vector": [0.1, 0.2, 0.3]}),
])
def test_bad_isometry_is_a_config_error(model, iso):
    cfg = config_from_dict({"manifold": {"model": model}, "isometry": iso})
    with pytest.raises(ConfigError, match="isometry"):
        build_model(cfg)
