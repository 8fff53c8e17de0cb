"""Pipeline configuration: an INI file with sections, overridable by CLI flags."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class DataConfig:
    csv: str = ""  # empty = bundled synthetic fixture
    drop_first_slot: bool = True
    timestamp_column: str = "timestamp"
    open_column: str = "open"
    high_column: str = "high"
    low_column: str = "low"
    close_column: str = "close"
    volume_column: str = "volume"

    def column_mapping(self) -> dict[str, str]:
        return {
            "timestamp": self.timestamp_column,
            "open": self.open_column,
            "high": self.high_column,
            "low": self.low_column,
            "close": self.close_column,
            "volume": self.volume_column,
        }


@dataclass
class BdnnConfig:
    lam: float = 0.7
    sigma: float = 2.5
    learning_rate: float = 1e-3
    epochs: int = 2000
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    architecture: tuple[int, ...] = (1, 16, 16, 1)
    standardize: bool = True


@dataclass
class VhmnConfig:
    hidden_states: int = 2
    visible_bins: int = 30
    observation_bins: int = 30
    alpha_dir: float = 1000.0
    restarts: int = 5
    tol: float = 1e-6
    max_iters: int = 500
    seed: int = 0


@dataclass
class SimulateConfig:
    paths: int = 1000
    horizon: int = 0     # 0 = one episode's post-drop length
    s0: float = 0.0      # 0 = first open price of the episode
    mu: float = 0.0      # per slot
    sigma_s: float = 0.0  # per slot
    seed: int = 0


@dataclass
class OptionConfig:
    kind: str = "call"
    strike: float = 100.0
    shares: float = 100.0
    maturity_slots: int = 0  # 0 = simulation horizon
    rate_annual_pct: float = 1.059
    slot_minutes: float = 5.0
    trading_days: int = 252
    minutes_per_day: float = 390.0
    eta: float = 1.0
    pure_risk_hedge: bool = False
    kappa: float = 0.0
    ridge: float = 0.001
    basis_count: int = 12

    def rate_per_slot(self) -> float:
        return per_slot_rate(
            self.rate_annual_pct / 100.0,
            self.slot_minutes,
            self.trading_days,
            self.minutes_per_day,
        )


@dataclass
class OutputConfig:
    directory: str = "out"
    figures: bool = True


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    bdnn: BdnnConfig = field(default_factory=BdnnConfig)
    vhmn: VhmnConfig = field(default_factory=VhmnConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    option: OptionConfig = field(default_factory=OptionConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def hash(self) -> str:
        """Digest of the computation-defining sections (output location excluded)."""
        payload = asdict(self)
        payload.pop("output")
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def per_slot_rate(
    annual_rate: float,
    slot_minutes: float,
    trading_days: int = 252,
    minutes_per_day: float = 390.0,
) -> float:
    """Linear conversion: per-slot rate = annual rate x slot share of the trading year."""
    return annual_rate * slot_minutes / (trading_days * minutes_per_day)


def _coerce(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(part) for part in raw.replace(" ", "").split(","))
    return raw


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read an INI config; missing file path raises, missing keys keep defaults."""
    config = PipelineConfig()
    if path is None:
        return config
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    for section_name, section in vars(config).items():
        if not parser.has_section(section_name):
            continue
        for key, default in vars(section).items():
            if parser.has_option(section_name, key):
                try:
                    setattr(section, key, _coerce(parser.get(section_name, key), default))
                except ValueError as exc:
                    raise ValueError(f"config [{section_name}] {key}: {exc}") from None
        unknown = set(parser.options(section_name)) - set(vars(section))
        if unknown:
            raise ValueError(f"config [{section_name}] has unknown keys: {sorted(unknown)}")
    unknown_sections = set(parser.sections()) - set(vars(config))
    if unknown_sections:
        raise ValueError(f"config has unknown sections: {sorted(unknown_sections)}")
    return config
