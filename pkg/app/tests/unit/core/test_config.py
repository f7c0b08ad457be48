import pytest
from pydantic import ValidationError

from app.src.core.config import Settings, get_settings, reset_settings


class TestSettingsBasics:
    """Test Settings defaults and environment binding."""

    def test_defaults(self, clean_env):
        settings = Settings(_env_file=None)

        assert settings.environment == "development"
        assert settings.log_level == "INFO"
        assert settings.threads is None
        assert settings.desk_factor == 20
        assert settings.checkpoint_every is None

    def test_env_prefix(self, clean_env, monkeypatch):
        monkeypatch.setenv("SEVTRAIN_LOG_LEVEL", "DEBUG")
        monkeypatch.setenv("SEVTRAIN_THREADS", "3")
        monkeypatch.setenv("SEVTRAIN_DESK_FACTOR", "10")

        settings = Settings(_env_file=None)

        assert settings.log_level == "DEBUG"
        assert settings.threads == 3
        assert settings.desk_factor == 10

    def test_unprefixed_variables_ignored(self, clean_env, monkeypatch):
        monkeypatch.setenv("THREADS", "7")

        assert Settings(_env_file=None).threads is None

    @pytest.mark.parametrize("field", ["threads", "desk_factor", "checkpoint_every"])
    def test_positive_fields(self, clean_env, field):
        with pytest.raises(ValidationError):
            Settings(_env_file=None, **{field: 0})


class TestSettingsCache:
    """Test the process-wide settings accessor."""

    def test_cached_until_reset(self, clean_env, monkeypatch):
        first = get_settings()
        assert get_settings() is first

        monkeypatch.setenv("SEVTRAIN_ENVIRONMENT", "test")
        reset_settings()

        assert get_settings() is not first
        assert get_settings().environment == "test"
