import pytest

import config as config_module
from app.cache import ResultCache
from config import Config, get_environment_config, load_config


def test_global_settings_are_merged():
    settings = Config("production")
    assert settings.get("beta_hi_start") == 1.0
    assert settings.bisection_min_steps == 10
    assert settings.environment == "production"
    assert settings.get("no_such_key", 42) == 42


def test_development_environment(monkeypatch):
    monkeypatch.setenv("ENVIRONMENT", "development")
    merged = get_environment_config()
    assert merged["environment"] == "development"
    assert merged["log_level"] == "debug"
    assert merged["jobs"] == 1


def test_environment_variables_override_yaml(monkeypatch, tmp_path):
    monkeypatch.setenv("SHIFTSCOPE_JOBS", "3")
    monkeypatch.setenv("SHIFTSCOPE_OUTPUT_DIR", str(tmp_path))
    merged = get_environment_config("development")
    assert merged["jobs"] == 3
    assert merged["output_dir"] == str(tmp_path)


def test_production_uses_all_cpus(monkeypatch):
    monkeypatch.delenv("SHIFTSCOPE_JOBS", raising=False)
    assert get_environment_config("production")["jobs"] >= 1


def test_reload_picks_up_environment(monkeypatch):
    settings = Config("production")
    monkeypatch.setenv("SHIFTSCOPE_LOG_LEVEL", "warning")
    settings.reload("production")
    assert settings.log_level == "warning"


def test_missing_file(monkeypatch, tmp_path):
    monkeypatch.setattr(config_module, "CONFIG_DIR", tmp_path)
    with pytest.raises(FileNotFoundError):
        load_config()


class TestResultCache:
    def test_hits_and_misses(self):
        cache = ResultCache(maxsize=4)
        assert cache.get("a") is None
        cache.set("a", 1.5)
        assert cache.get("a") == 1.5
        stats = cache.get_stats()
        assert stats["hits"] == 1
        assert stats["misses"] == 1
        assert stats["size"] == 1

    def test_least_recently_used_is_evicted(self):
        cache = ResultCache(maxsize=2)
        cache.set("a", 1)
        cache.set("b", 2)
        cache.get("a")
        cache.set("c", 3)
        assert cache.get("b") is None
        assert cache.get("a") == 1

    def test_clear_resets_statistics(self):
        cache = ResultCache()
        cache.set("a", 1)
        cache.get("a")
        cache.clear()
        assert cache.get_stats() == {"size": 0, "maxsize": 1000, "hits": 0, "misses": 0}
