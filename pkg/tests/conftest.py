import numpy as np
import pytest


@pytest.fixture
def write_csv(tmp_path):
    """Write rows (first row = header) to a CSV under tmp_path and return its path."""
    def _write(name, rows):
        path = tmp_path / name
        path.write_text("\n".join(",".join(str(c) for c in r) for r in rows) + "\n",
                        encoding="utf-8")
        return path
    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
