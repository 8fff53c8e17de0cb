"""OHLCV ingestion, trading-day episodes, and the (decision, price change) dataset."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence


DEFAULT_COLUMNS = {
    "timestamp": "timestamp",
    "open": "open",
    "high": "high",
    "low": "low",
    "close": "close",
    "volume": "volume",
}


class MarketDataError(ValueError):
    """Invalid market data (bad bar, bad file, bad episode)."""


class CsvFormatError(MarketDataError):
    """Malformed CSV input; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyEpisodeError(MarketDataError):
    """An episode yields no samples after optional first-slot dropping."""


@dataclass(frozen=True)
class OhlcvBar:
    """One price bar: open/high/low/close in USD, traded volume in shares."""

    open: float
    high: float
    low: float
    close: float
    volume: float
    slot_index: int

    def __post_init__(self) -> None:
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise MarketDataError(f"prices must be positive, got {self}")
        if self.low > min(self.open, self.close) or max(self.open, self.close) > self.high:
            raise MarketDataError(
                f"bar range violated: need low <= min(o, c) <= max(o, c) <= high, got {self}"
            )
        if self.volume < 0:
            raise MarketDataError(f"volume must be nonnegative, got {self.volume}")
        if self.slot_index < 0:
            raise MarketDataError(f"slot_index must be >= 0, got {self.slot_index}")


@dataclass(frozen=True)
class Episode:
    """Bars of one trading day, ordered by slot index."""

    bars: tuple[OhlcvBar, ...]
    label: str
    first_slot_dropped: bool = False

    def __post_init__(self) -> None:
        if not self.bars:
            raise EmptyEpisodeError(f"episode {self.label!r} has no bars")
        indices = [bar.slot_index for bar in self.bars]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise MarketDataError(
                f"episode {self.label!r}: slot_index must be strictly increasing, got {indices}"
            )

    def __len__(self) -> int:
        return len(self.bars)


@dataclass(frozen=True)
class DecisionSample:
    """Quantized dominant-investor decision d (signed USD) and price change g."""

    d: float
    g: float

    def __post_init__(self) -> None:
        if not (self.g > -1.0):
            raise MarketDataError(f"price change must exceed -1, got {self.g}")


def quantize_decision(bar: OhlcvBar) -> float:
    """Signed money-flow proxy d = v*h*(h-o)/(h-l)*sign(c-o).

    A flat bar (h == l) carries no directional signal, so d = 0; likewise
    sign(0) = 0 when close equals open.
    """
    if bar.high == bar.low:
        return 0.0
    direction = float(math.copysign(1.0, bar.close - bar.open)) if bar.close != bar.open else 0.0
    return bar.volume * bar.high * (bar.high - bar.open) / (bar.high - bar.low) * direction


def price_change(bar: OhlcvBar) -> float:
    """Fractional intrabar price change g = c/o - 1."""
    if bar.open <= 0:
        raise MarketDataError(f"open price must be positive, got {bar.open}")
    return bar.close / bar.open - 1.0


def episode_bars(episode: Episode, drop_first: bool = True) -> tuple[OhlcvBar, ...]:
    """The episode's bars after the optional first-slot drop.

    The first slot's open and volume are driven by pre-market activity, so it
    is excluded by default (skipped if the episode is already marked dropped).
    """
    bars = episode.bars
    if drop_first and not episode.first_slot_dropped:
        lowest = min(bar.slot_index for bar in bars)
        bars = tuple(bar for bar in bars if bar.slot_index != lowest)
    if not bars:
        raise EmptyEpisodeError(
            f"episode {episode.label!r} has no bars left after dropping the first slot"
        )
    return bars


def build_dataset(episode: Episode, drop_first: bool = True) -> tuple[DecisionSample, ...]:
    """Map an episode's bars to (d, g) samples, in bar order."""
    return tuple(
        DecisionSample(d=quantize_decision(bar), g=price_change(bar))
        for bar in episode_bars(episode, drop_first)
    )


def _parse_float(raw: str, name: str, line_number: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise CsvFormatError(line_number, f"cannot parse {name}={raw!r} as a number") from None
    if not math.isfinite(value):
        raise CsvFormatError(line_number, f"{name}={raw!r} is not finite")
    return value


def load_ohlcv_csv(
    source: str | Path | IO[str],
    columns: Mapping[str, str] | None = None,
) -> list[Episode]:
    """Read an OHLCV CSV and group bars into per-calendar-day episodes.

    `columns` maps the canonical names (timestamp/open/high/low/close/volume)
    to the file's header names. Rows of each day must appear in strictly
    increasing time order. Timestamps are ISO-8601.
    """
    mapping = dict(DEFAULT_COLUMNS)
    if columns:
        mapping.update(columns)

    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_ohlcv_csv(fh, columns)

    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        return []
    missing = [name for name in mapping.values() if name not in reader.fieldnames]
    if missing:
        raise CsvFormatError(1, f"missing required columns: {missing}")

    days: dict[str, list[tuple[datetime, OhlcvBar]]] = {}
    for row in reader:
        line_number = reader.line_num
        try:
            stamp = datetime.fromisoformat(row[mapping["timestamp"]])
        except ValueError:
            raise CsvFormatError(
                line_number, f"bad timestamp {row[mapping['timestamp']]!r}"
            ) from None
        day_key = stamp.date().isoformat()
        bars = days.setdefault(day_key, [])
        if bars and stamp <= bars[-1][0]:
            raise CsvFormatError(
                line_number,
                f"timestamps within {day_key} must be strictly increasing "
                f"({stamp.isoformat()} after {bars[-1][0].isoformat()})",
            )
        try:
            bar = OhlcvBar(
                open=_parse_float(row[mapping["open"]], "open", line_number),
                high=_parse_float(row[mapping["high"]], "high", line_number),
                low=_parse_float(row[mapping["low"]], "low", line_number),
                close=_parse_float(row[mapping["close"]], "close", line_number),
                volume=_parse_float(row[mapping["volume"]], "volume", line_number),
                slot_index=len(bars),
            )
        except MarketDataError as exc:
            raise CsvFormatError(line_number, str(exc)) from None
        bars.append((stamp, bar))

    return [
        Episode(bars=tuple(bar for _, bar in day_bars), label=day)
        for day, day_bars in sorted(days.items())
    ]


def dump_dataset_csv(samples: Sequence[DecisionSample], sink: IO[str]) -> None:
    """Write samples as CSV with columns slot,d,g (floats via repr, lossless)."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["slot", "d", "g"])
    for slot, sample in enumerate(samples):
        writer.writerow([slot, repr(float(sample.d)), repr(float(sample.g))])


def load_dataset_csv(source: IO[str]) -> tuple[DecisionSample, ...]:
    """Read back a dataset dump produced by dump_dataset_csv."""
    reader = csv.DictReader(source)
    samples = []
    for row in reader:
        samples.append(DecisionSample(d=float(row["d"]), g=float(row["g"])))
    return tuple(samples)


def dataset_to_string(samples: Sequence[DecisionSample]) -> str:
    buf = io.StringIO()
    dump_dataset_csv(samples, buf)
    return buf.getvalue()


def decisions_and_changes(samples: Iterable[DecisionSample]):
    """Split samples into parallel (d, g) float lists."""
    ds, gs = [], []
    for sample in samples:
        ds.append(sample.d)
        gs.append(sample.g)
    return ds, gs
