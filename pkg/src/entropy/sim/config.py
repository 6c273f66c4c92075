"""Simulation configuration and result records."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..codec import CodecParams

HOURS_PER_YEAR = 8760.0


@dataclass(frozen=True)
class AttackerConfig:
    """A one-shot takedown of ``fraction * N`` honest nodes at ``at_hours``."""

    fraction: float = 0.0
    strategy: str = "greedy"
    fragments_cap: int | None = None
    at_hours: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("attacked fraction must lie in [0, 1]")
        if self.strategy not in ("greedy", "random"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int = 1000
    objects: int = 100
    churn_per_year: float = 12.0
    byzantine_fraction: float = 0.0
    years: float = 1.0
    codec: CodecParams = CodecParams()
    heartbeat_hours: float = 1.0
    liveness_timeout_hours: float | None = None
    jitter_hours: float | None = None
    repair_latency_hours: float = 1.0
    cache_ttl_hours: float = 0.0
    lottery_slack: float = 32.0
    real_crypto: bool = False
    trace_chunk: int | None = None
    attack: AttackerConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1 or self.objects < 0:
            raise ValueError("need at least one node and a non-negative object count")
        if not 0.0 <= self.byzantine_fraction < 1.0:
            raise ValueError("byzantine_fraction must lie in [0, 1)")
        if self.churn_per_year < 0 or self.years < 0:
            raise ValueError("churn and duration must be non-negative")
        if self.repair_latency_hours < 0 or self.cache_ttl_hours < 0:
            raise ValueError("latencies must be non-negative")

    @property
    def timeout_hours(self) -> float:
        if self.liveness_timeout_hours is not None:
            return self.liveness_timeout_hours
        return 3 * self.heartbeat_hours

    @property
    def jitter_window(self) -> float:
        return self.jitter_hours if self.jitter_hours is not None else self.heartbeat_hours

    @property
    def duration_hours(self) -> float:
        return self.years * HOURS_PER_YEAR

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SimConfig":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(raw.get("codec"), dict):
            raw["codec"] = CodecParams(**raw["codec"])
        if isinstance(raw.get("attack"), dict):
            raw["attack"] = AttackerConfig(**raw["attack"])
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SimMetrics:
    system: str
    objects: int
    lost_objects: int = 0
    loss_times_hours: list[float] = field(default_factory=list)
    repair_fragments: int = 0
    repair_traffic_objects: float = 0.0
    repairs: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    node_failures: int = 0
    attacked_nodes: int = 0
    storage_ratio_initial: float = 0.0
    storage_ratio_final: float = 0.0
    starved_repairs: int = 0
    lost_chunks: int = 0
    trace: list[tuple[float, int]] | None = None

    @property
    def lost_fraction(self) -> float:
        return self.lost_objects / self.objects if self.objects else 0.0

    def summary(self) -> dict[str, Any]:
        out = {k: v for k, v in asdict(self).items() if k not in ("trace", "loss_times_hours")}
        out["lost_fraction"] = self.lost_fraction
        if self.trace:
            out["trace_min"] = min(v for _, v in self.trace)
        return out
