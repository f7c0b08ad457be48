import pytest

from app.src.core.exceptions.data_exceptions import CorruptionSpecError
from app.src.domain.corruption import NATIVE_KINDS, CorruptionKind
from app.src.infrastructure.corruption_config import (
    get_config,
    get_corruption_table,
    load_corruption_table,
)


class TestCorruptionConfig:
    """Test the YAML parameter tables."""

    def test_shipped_tables(self):
        raw = get_config()

        assert set(raw) == {kind.value for kind in NATIVE_KINDS}
        assert get_corruption_table().value(CorruptionKind.SATURATION, 5) == 0.0

    def test_override_file(self, tmp_path):
        path = tmp_path / "table.yaml"
        path.write_text(
            "\n".join(
                f"{kind.value}: [1, 2, 3, 4, 5]" for kind in NATIVE_KINDS
            )
        )

        table = load_corruption_table(path)

        assert table.value(CorruptionKind.PIXELATE, 3) == 3.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorruptionSpecError):
            load_corruption_table(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "table.yaml"
        path.write_text("brightness: [0.1, 0.2\n")

        with pytest.raises(CorruptionSpecError):
            load_corruption_table(path)
