import pytest

from natlm.config import SEED_ENV, load_config


def write(tmp_path, text):
    path = tmp_path / "natlm.ini"
    path.write_text(text)
    return str(path)


def test_defaults():
    cfg = load_config(env={})
    assert (cfg.tau, cfg.k, cfg.weights, cfg.seed) == (0.5, 5, (0.7, 0.3), 0)
    assert cfg.backend.backend == "mock" and cfg.backend.samples == 3 and cfg.backend.temperature == 0.7


def test_precedence_file_env_overrides(tmp_path):
    path = write(tmp_path, "[scan]\ntau = 0.7\nseed = 3\nk = 2\n[backend]\ntemperature = 0.2\nsamples = 5\n")
    cfg = load_config(path, env={})
    assert (cfg.tau, cfg.seed, cfg.k) == (0.7, 3, 2)
    assert (cfg.backend.temperature, cfg.backend.samples) == (0.2, 5)
    cfg = load_config(path, env={SEED_ENV: "11"})
    assert cfg.seed == 11
    cfg = load_config(path, {"seed": 12, "tau": None, "samples": 1}, env={SEED_ENV: "11"})
    assert (cfg.seed, cfg.tau, cfg.backend.samples) == (12, 0.7, 1)


def test_bool_coercion(tmp_path):
    assert load_config(write(tmp_path, "[scan]\nexclude_self = no\n"), env={}).exclude_self is False


def test_unknown_keys(tmp_path):
    with pytest.raises(ValueError, match="unknown \\[scan\\] key"):
        load_config(write(tmp_path, "[scan]\nbogus = 1\n"), env={})
    with pytest.raises(KeyError):
        load_config(overrides={"bogus": 1}, env={})


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/natlm.ini", env={})


def test_validation():
    with pytest.raises(ValueError):
        load_config(overrides={"tau": 1.5}, env={})
    with pytest.raises(ValueError):
        load_config(overrides={"k": 0}, env={})
