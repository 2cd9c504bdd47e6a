"""Bundled defaults: the reference toy model, corpus, market day and agent sets."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .agents import QualityMap, from_plan
from .hft import MarketTick, parse_csv, synthetic_day
from .latency import CostTable, default_cost_table
from .planner import SweepRow, gamma_grid, sweep
from .toymodel import ToyTransformer, generate_corpus, init_model, read_corpus

# 5 blocks -> 20 linear layers, so every gamma on the 0.1 grid is an exact layer count
DEFAULT_MODEL = {"seed": 42, "num_blocks": 5, "d_model": 32, "d_ff": 64, "vocab": 64}
DEFAULT_CORPUS = {"seed": 7, "num_sequences": 8, "seq_len": 32}
REFERENCE_DAY = {"seed": 11, "seconds": 7200, "num_opportunities": 100}
DEFAULT_P_MAX = 0.95
DEFAULT_P_FLOOR = 0.2


def data_path(name: str) -> Path:
    return Path(str(resources.files("fpx").joinpath("data", name)))


def default_model(**overrides) -> ToyTransformer:
    cfg = {**DEFAULT_MODEL, **overrides}
    return init_model(cfg["seed"], cfg["num_blocks"], cfg["d_model"], cfg["d_ff"], cfg["vocab"])


def default_corpus() -> list[list[int]]:
    return read_corpus(data_path("corpus.txt"))


def build_default_corpus(vocab: int = DEFAULT_MODEL["vocab"]) -> list[list[int]]:
    c = DEFAULT_CORPUS
    return generate_corpus(c["seed"], vocab, c["num_sequences"], c["seq_len"])


def reference_day() -> list[MarketTick]:
    return parse_csv(data_path("market_reference.csv").read_text(), "market_reference.csv")


def build_reference_day() -> list[MarketTick]:
    return synthetic_day(**REFERENCE_DAY)


@dataclass
class ReferenceSweep:
    rows: list[SweepRow]
    quality_map: QualityMap
    cost_table: CostTable


def reference_sweep(model: ToyTransformer | None = None, corpus=None,
                    p_max: float = DEFAULT_P_MAX, p_floor: float = DEFAULT_P_FLOOR) -> ReferenceSweep:
    """Sweep the 0.1 gamma grid and calibrate the quality map on its FP4 end."""
    model = model or default_model()
    corpus = corpus or default_corpus()
    rows = sweep(model, corpus, gamma_grid())
    qmap = QualityMap.calibrated(rows[-1].quality_proxy, p_max, p_floor)
    return ReferenceSweep(rows, qmap, default_cost_table())


def gamma_agents(ref: ReferenceSweep, size_tag: str, seed: int = 0):
    return [from_plan(size_tag, r.plan, ref.cost_table, ref.quality_map, r.quality_proxy,
                      seed=seed + i) for i, r in enumerate(ref.rows)]
