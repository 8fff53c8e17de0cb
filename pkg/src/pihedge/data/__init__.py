"""Bundled data files."""

from pathlib import Path


def fixture_path() -> Path:
    """Synthetic 6-day x 77-bar OHLCV fixture shipped with the package."""
    return Path(__file__).resolve().parent / "synthetic_ohlcv.csv"
