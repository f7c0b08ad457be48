import pytest

from app.src.core.util.retrier import Retrier


class TestRetrier:
    """Test exponential backoff retries."""

    def test_returns_first_success(self):
        sleeps = []
        calls = iter([OSError("busy"), OSError("busy"), "done"])

        def operation():
            outcome = next(calls)
            if isinstance(outcome, Exception):
                raise outcome
            return outcome

        result = Retrier(base_delay=0.1, sleep=sleeps.append).execute(operation)

        assert result == "done"
        assert sleeps == [0.1, 0.2]

    def test_delay_capped(self):
        sleeps = []

        def operation():
            raise OSError("busy")

        with pytest.raises(OSError):
            Retrier(max_attempts=5, base_delay=1.0, max_delay=3.0, sleep=sleeps.append).execute(operation)

        assert sleeps == [1.0, 2.0, 3.0, 3.0]

    def test_other_errors_not_retried(self):
        sleeps = []

        def operation():
            raise ValueError("bad")

        with pytest.raises(ValueError):
            Retrier(sleep=sleeps.append).execute(operation)

        assert sleeps == []

    def test_zero_attempts_is_rejected(self):
        with pytest.raises(ValueError, match="max_attempts"):
            Retrier(max_attempts=0).execute(lambda: "never")
