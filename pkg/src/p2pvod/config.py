"""Simulation configuration and the flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

from .placement import PLACEMENTS
from .replication import STRATEGIES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    # cluster sizing
    peers: int = 1500
    serving_fraction: float = 0.5
    base_uplink_channels: int = 4  # non-serving peer uplink
    uplink_ratio: int = 2  # serving uplink = ratio * base
    max_movies_per_peer: int = 10
    proxy_channels: int = 120
    proxy_buffer_bytes: int = 5_000_000_000
    # catalog and workload
    movies: int = 20
    zipf_skew: float = 0.271
    arrival_per_hour: float = 300.0
    movie_duration_s: float = 7200.0
    movie_size_bytes: int = 1_000_000_000
    num_blocks: int = 100
    # churn and repair
    mean_up_s: float = 3600.0
    mean_dn_s: float = 32400.0
    repair_gamma: float = 1.0
    # policies
    strategy: str = "proposed"
    placement: str = "slf"
    placement_round: int = 0  # 0 = number of eligible peers
    weight_scale: float = 1.0
    batch_interval_s: float = 600.0
    handoff_fraction: float = 0.1
    chaining_latency_s: float = 0.0
    copy_rate_factor: float = 100.0
    # run control
    sim_duration_s: float = 14400.0
    seeds: Tuple[int, ...] = (1,)
    out_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("peers", "movies", "movie_duration_s", "movie_size_bytes", "num_blocks",
                    "max_movies_per_peer", "batch_interval_s", "sim_duration_s", "uplink_ratio",
                    "weight_scale", "copy_rate_factor")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        nonneg = ("proxy_channels", "proxy_buffer_bytes", "zipf_skew", "arrival_per_hour", "mean_up_s",
                  "mean_dn_s", "repair_gamma", "base_uplink_channels", "placement_round",
                  "chaining_latency_s")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        if not 0.0 <= self.serving_fraction <= 1.0:
            raise ConfigError(f"serving_fraction must lie in [0, 1], got {self.serving_fraction!r}")
        if not 0.0 <= self.handoff_fraction <= 1.0:
            raise ConfigError(f"handoff_fraction must lie in [0, 1], got {self.handoff_fraction!r}")
        if self.mean_up_s + self.mean_dn_s <= 0:
            raise ConfigError("mean_up_s and mean_dn_s cannot both be zero")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; valid strategies: {', '.join(STRATEGIES)}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown placement {self.placement!r}; valid placements: {', '.join(PLACEMENTS)}")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")

    @property
    def serving_peers(self) -> int:
        return int(round(self.peers * self.serving_fraction))

    @property
    def aggregate_rate(self) -> float:
        return self.arrival_per_hour / 3600.0

    @property
    def availability(self) -> float:
        return self.mean_up_s / (self.mean_up_s + self.mean_dn_s)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def with_availability(self, a_up: float) -> "SimConfig":
        """Same mean uptime, downtime rescaled so the up fraction equals ``a_up``."""
        if not 0 < a_up <= 1:
            raise ConfigError("availability must lie in (0, 1]")
        return self.replace(mean_dn_s=self.mean_up_s * (1 - a_up) / a_up)

    def echo(self) -> Dict[str, str]:
        """Every effective key rendered as it would appear in a config file."""
        return {f.name: format_value(getattr(self, f.name)) for f in fields(self)}

    def hash(self) -> str:
        """Digest of everything except seeds and output location."""
        d = {k: v for k, v in self.echo().items() if k not in ("seeds", "out_dir")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


KEYS = tuple(f.name for f in fields(SimConfig))
_TYPES = {f.name: f.type for f in fields(SimConfig)}


def format_value(v: Any) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, raw: str) -> Any:
    if key not in _TYPES:
        raise ConfigError(f"unknown key {key!r}")
    t = _TYPES[key]
    raw = raw.strip()
    try:
        if key == "seeds":
            parts = [s for s in raw.replace(",", " ").split() if s]
            return tuple(int(s) for s in parts)
        if t == "int":
            return int(float(raw)) if float(raw).is_integer() else _bad(key, raw)
        if t == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return raw


def _bad(key, raw):
    raise ConfigError(f"invalid value for {key}: {raw!r}")


def parse_text(text: str) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, raw)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> SimConfig:
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            values.update(parse_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for k, v in (overrides or {}).items():
        values[k] = parse_value(k, v) if isinstance(v, str) else v
    try:
        return SimConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: SimConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.echo().items())
