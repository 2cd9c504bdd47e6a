"""End-to-end latency prediction from per-bitwidth anchor measurements.

Swapping any one linear layer from FP8 to FP4 is treated as saving the same
amount of time, so a plan with FP4 fraction ``f`` costs
``overhead + fp8 - f * (fp8 - fp4)``. Running without a plan costs the
FP16 anchor.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class CostTableError(ValueError):
    pass


@dataclass(frozen=True)
class CostEntry:
    lat_fp16: float
    lat_fp8: float
    lat_fp4: float


@dataclass
class CostTable:
    entries: dict[str, CostEntry]
    overhead_ms: float = 0.0

    def __getitem__(self, size_tag: str) -> CostEntry:
        try:
            return self.entries[size_tag]
        except KeyError:
            raise KeyError(f"unknown model size tag {size_tag!r}; "
                           f"known: {', '.join(self.entries)}") from None

    def to_dict(self) -> dict:
        return {
            "sizes": {t: {"fp16": e.lat_fp16, "fp8": e.lat_fp8, "fp4": e.lat_fp4}
                      for t, e in self.entries.items()},
            "overhead_ms": self.overhead_ms,
        }


@dataclass(frozen=True)
class LatencyEstimate:
    total_ms: float
    breakdown: dict[str, float] = field(default_factory=dict)


def _from_dict(doc: Mapping) -> CostTable:
    if "sizes" not in doc or not isinstance(doc["sizes"], Mapping):
        raise CostTableError("cost table needs a 'sizes' object")
    entries = {}
    for tag, row in doc["sizes"].items():
        try:
            e = CostEntry(float(row["fp16"]), float(row["fp8"]), float(row["fp4"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise CostTableError(f"size {tag!r}: needs numeric fp16/fp8/fp4 ({exc})") from None
        if not 0 < e.lat_fp4 <= e.lat_fp8 <= e.lat_fp16:
            raise CostTableError(
                f"size {tag!r}: expected 0 < fp4 <= fp8 <= fp16, got "
                f"fp4={e.lat_fp4}, fp8={e.lat_fp8}, fp16={e.lat_fp16}")
        entries[str(tag)] = e
    overhead = float(doc.get("overhead_ms", 0.0))
    if overhead < 0:
        raise CostTableError("overhead_ms must be >= 0")
    return CostTable(entries, overhead)


def default_cost_table() -> CostTable:
    text = resources.files("fpx").joinpath("data/cost_table.json").read_text()
    return _from_dict(json.loads(text))


def load_cost_table(config=None) -> CostTable:
    """Build a table from None (bundled defaults), a dict, or a JSON file path."""
    if config is None:
        return default_cost_table()
    if isinstance(config, CostTable):
        return config
    if isinstance(config, Mapping):
        return _from_dict(config)
    path = Path(config)
    if not path.exists():
        raise FileNotFoundError(f"cost table not found: {path}")
    return _from_dict(json.loads(path.read_text()))


def estimate_fraction(table: CostTable, size_tag: str, fp4_fraction: float) -> LatencyEstimate:
    if not 0.0 <= fp4_fraction <= 1.0:
        raise ValueError(f"fp4 fraction must be in [0, 1], got {fp4_fraction}")
    e = table[size_tag]
    fp8_part = (1.0 - fp4_fraction) * e.lat_fp8
    fp4_part = fp4_fraction * e.lat_fp4
    total = table.overhead_ms + e.lat_fp8 - fp4_fraction * (e.lat_fp8 - e.lat_fp4)
    return LatencyEstimate(total, {"overhead": table.overhead_ms, "fp8": fp8_part, "fp4": fp4_part})


def estimate(table: CostTable, size_tag: str, plan=None) -> LatencyEstimate:
    if plan is None:
        e = table[size_tag]
        return LatencyEstimate(table.overhead_ms + e.lat_fp16,
                               {"overhead": table.overhead_ms, "fp16": e.lat_fp16})
    return estimate_fraction(table, size_tag, plan.fp4_fraction)


@dataclass(frozen=True)
class ParetoPoint:
    size_tag: str
    gamma: float
    latency_ms: float
    quality_proxy: float
    bitwidth_avg: float
    dominated: bool


def _dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def pareto_points(table: CostTable, size_tags: Sequence[str],
                  sweeps: Mapping[str, Sequence]) -> list[ParetoPoint]:
    """Flatten sweeps into (size, gamma) points; both axes are minimised."""
    raw = []
    for tag in size_tags:
        for row in sweeps[tag]:
            lat = estimate(table, tag, row.plan).total_ms
            raw.append((tag, row.gamma, lat, row.quality_proxy, row.plan.bitwidth_avg))
    coords = [(r[2], r[3]) for r in raw]
    out = []
    for r, c in zip(raw, coords):
        dominated = any(_dominates(o, c) for o in coords if o is not c)
        out.append(ParetoPoint(*r, dominated=dominated))
    return out
