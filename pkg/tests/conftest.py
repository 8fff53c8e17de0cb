import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from pihedge.data import fixture_path
from pihedge.market_data import load_ohlcv_csv


@pytest.fixture(scope="session")
def fixture_csv() -> Path:
    return fixture_path()


@pytest.fixture(scope="session")
def fixture_episodes(fixture_csv):
    return load_ohlcv_csv(fixture_csv)
