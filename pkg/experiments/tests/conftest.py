import json
from pathlib import Path

import pytest

SNAPSHOTS = Path(__file__).parent / "fixtures" / "values.json"


@pytest.fixture
def snapshot():
    """
    Сравнение числа с сохранённым в fixtures/values.json. Отсутствующее значение
    записывается, тест при этом пропускается: файл нужно закоммитить.
    """
    def compare(name: str, value: float, rel: float):
        stored = json.loads(SNAPSHOTS.read_text(encoding="utf-8")) if SNAPSHOTS.exists() else {}
        if name not in stored:
            stored[name] = float(value)
            SNAPSHOTS.parent.mkdir(exist_ok=True)
            SNAPSHOTS.write_text(json.dumps(stored, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            pytest.skip(f"{name} = {value!r} записано в {SNAPSHOTS.name}")
        assert value == pytest.approx(stored[name], rel=rel), name
    return compare
