"""Regenerate the bundled synthetic OHLCV fixture (6 trading days x 77 bars).

Five-minute bars from 09:35 to 15:55, per-day volatility levels chosen so the
days are clearly distinguishable. Deterministic; run from the repo root:

    python tools/make_fixture.py
"""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "pihedge" / "data" / "synthetic_ohlcv.csv"

DAYS = ["2024-03-04", "2024-03-05", "2024-03-06", "2024-03-07", "2024-03-08", "2024-03-11"]
DAY_VOL = [0.004, 0.006, 0.012, 0.003, 0.018, 0.008]
BARS_PER_DAY = 77
SEED = 20240304


def main() -> None:
    rng = np.random.default_rng(SEED)
    rows = []
    close = 90.0
    for day, vol in zip(DAYS, DAY_VOL):
        start = datetime.fromisoformat(f"{day}T09:35:00")
        close *= 1.0 + rng.normal(0.0, 3.0 * vol)  # overnight gap
        for slot in range(BARS_PER_DAY):
            bar_open = close
            ret = rng.normal(0.0, vol)
            close = bar_open * (1.0 + ret)
            wick_up = abs(rng.normal(0.0, 0.5 * vol)) + 1e-4
            wick_dn = abs(rng.normal(0.0, 0.5 * vol)) + 1e-4
            high = max(bar_open, close) * (1.0 + wick_up)
            low = min(bar_open, close) * (1.0 - wick_dn)
            volume = float(np.round(rng.lognormal(13.5, 0.8)))
            o, h, l, c = (round(v, 4) for v in (bar_open, high, low, close))
            h = max(h, o, c)
            l = min(l, o, c)
            stamp = (start + timedelta(minutes=5 * slot)).isoformat()
            rows.append([stamp, o, h, l, c, volume])

    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "open", "high", "low", "close", "volume"])
        for row in rows:
            writer.writerow(row)
    print(f"wrote {len(rows)} bars to {OUT}")


if __name__ == "__main__":
    main()
