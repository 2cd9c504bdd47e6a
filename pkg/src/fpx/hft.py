"""Per-second trading backtester where slower agents capture less of each spread.

A tick is the per-second low/high of one symbol. When ``(high - low) / low``
reaches the threshold ``b`` an opportunity opens, and no new one can open
for ``cooling_s`` seconds afterwards. Every agent sees the opportunity at the
same instant and answers after its own latency ``delta``. Prices decay
linearly toward the far side of the spread:

    d     = min(1, delta / t_decay)
    buy   = low  + (high - low) * d / 2
    sell  = high - (high - low) * d / 2

so the captured margin is ``margin * max(0, 1 - delta / t_decay)``.

Round-trip mode (default) buys the low leg and sells the high leg at once;
a wrong-direction order ("sell") does the reverse and loses the same
amount. Directional mode holds a long position between opportunities and
marks it at the final tick's midpoint. Short selling is not modelled.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .agents import Action, Agent, Observation
from .tensorcore import Rng


@dataclass(frozen=True)
class TradeOrder:
    side: str  # "buy" | "sell"
    fraction: float = 1.0

    def __post_init__(self):
        if self.side not in ("buy", "sell"):
            raise ValueError(f"side must be 'buy' or 'sell', got {self.side!r}")


@dataclass(frozen=True)
class MarketTick:
    ts: int
    low: float
    high: float
    volume: float | None = None

    @property
    def margin(self) -> float:
        return (self.high - self.low) / self.low

    @property
    def mid(self) -> float:
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class Opportunity:
    tick: MarketTick
    margin: float
    opened_at_ms: float


@dataclass(frozen=True)
class TradeFill:
    agent: str
    side: str
    fraction: float
    price: float
    exit_price: float | None
    shares: float
    latency_ms: float
    margin: float
    captured_margin: float
    pnl: float
    clamped: bool = False


@dataclass
class HftConfig:
    threshold: float = 0.02
    cooling_s: float = 60.0
    initial_cash: float = 10_000.0
    t_decay_ms: float = 1000.0
    round_trip: bool = True
    trade_fraction: float = 1.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold b must be > 0")
        if self.cooling_s < 0:
            raise ValueError("cooling window must be >= 0")
        if self.t_decay_ms <= 0:
            raise ValueError("t_decay_ms must be > 0")
        if self.initial_cash <= 0:
            raise ValueError("initial cash must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "HftConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class Portfolio:
    cash: float
    initial_cash: float
    position: float = 0.0
    cost_basis: float = 0.0  # total cost of the open position
    realized_pnl: float = 0.0
    fills: list[TradeFill] = field(default_factory=list)

    def value(self, mark: float) -> float:
        return self.cash + self.position * mark

    def accounting_residual(self) -> float:
        """Relative gap in ``cash + cost_basis == initial + realized P&L``."""
        lhs = self.cash + self.cost_basis
        rhs = self.initial_cash + self.realized_pnl
        return abs(lhs - rhs) / max(abs(rhs), 1e-300)


class MarketDataError(ValueError):
    pass


# -- market data --------------------------------------------------------------

def parse_csv(text: str, source: str = "<string>") -> list[MarketTick]:
    numbered = [(i, r) for i, r in enumerate(csv.reader(io.StringIO(text)), 1)
                if r and any(c.strip() for c in r)]
    if not numbered:
        raise MarketDataError(f"{source}: empty market file")
    header = [c.strip().lower() for c in numbered[0][1]]
    body_start = 1
    if header[:3] != ["ts", "low", "high"]:
        # headerless file: treat the first row as data
        header, body_start = ["ts", "low", "high", "volume"][: len(header)], 0
    has_volume = len(header) > 3 and header[3] == "volume"
    ticks, problems = [], []
    prev_ts = None
    for lineno, row in numbered[body_start:]:
        try:
            ts = int(row[0])
            low, high = float(row[1]), float(row[2])
            vol = float(row[3]) if has_volume and len(row) > 3 and row[3].strip() else None
        except (ValueError, IndexError):
            problems.append(f"line {lineno}: cannot parse {row!r}")
            continue
        if not (math.isfinite(low) and math.isfinite(high)):
            problems.append(f"line {lineno}: non-finite price")
        elif low <= 0:
            problems.append(f"line {lineno}: low must be > 0 (got {low})")
        elif low > high:
            problems.append(f"line {lineno}: low {low} > high {high}")
        elif prev_ts is not None and ts <= prev_ts:
            problems.append(f"line {lineno}: timestamp {ts} not after {prev_ts}")
        else:
            ticks.append(MarketTick(ts, low, high, vol))
            prev_ts = ts
            continue
    if problems:
        raise MarketDataError(f"{source}: {len(problems)} bad row(s):\n  " + "\n  ".join(problems))
    if not ticks:
        raise MarketDataError(f"{source}: no data rows")
    return ticks


def ingest_csv(path) -> list[MarketTick]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"market file not found: {path}")
    return parse_csv(path.read_text(), str(path))


def format_csv(ticks: Sequence[MarketTick]) -> str:
    with_volume = any(t.volume is not None for t in ticks)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["ts", "low", "high", "volume"] if with_volume else ["ts", "low", "high"])
    for t in ticks:
        row = [t.ts, repr(t.low), repr(t.high)]
        if with_volume:
            row.append("" if t.volume is None else repr(t.volume))
        w.writerow(row)
    return out.getvalue()


def write_csv(ticks: Sequence[MarketTick], path) -> None:
    Path(path).write_text(format_csv(ticks))


class MarketDataFetcher(Protocol):
    def fetch(self, symbol: str, date: str) -> str:
        """Return market CSV text for ``symbol`` on ``date`` (YYYY-MM-DD)."""


class FileMarketDataFetcher:
    """Reads ``<root>/<SYMBOL>_<date>.csv``."""

    def __init__(self, root):
        self.root = Path(root)

    def fetch(self, symbol: str, date: str) -> str:
        path = self.root / f"{symbol.upper()}_{date}.csv"
        if not path.exists():
            raise FileNotFoundError(f"no market file for {symbol} on {date}: {path}")
        return path.read_text()


class HttpMarketDataFetcher:
    """Placeholder for a live data vendor; not implemented."""

    def __init__(self, base_url: str, api_key: str | None = None):
        self.base_url = base_url
        self.api_key = api_key

    def fetch(self, symbol: str, date: str) -> str:
        raise NotImplementedError("live market data fetching is not available; "
                                  "use FileMarketDataFetcher with exported CSV files")


def synthetic_day(seed: int, seconds: int = 3600, start_ts: int = 1722864600,
                  base_price: float = 100.0, num_opportunities: int = 10,
                  min_gap_s: int = 61, quiet_spread: tuple[float, float] = (0.001, 0.008),
                  opp_margin: tuple[float, float] = (0.025, 0.04)) -> list[MarketTick]:
    """A random-walk day with exactly ``num_opportunities`` wide-spread seconds.

    Quiet seconds keep the spread below 1%; opportunity seconds are spaced at
    least ``min_gap_s`` apart so a 60 s cooling window never hides one.
    """
    if num_opportunities * min_gap_s > seconds:
        raise ValueError("day too short for the requested opportunities")
    rng = Rng(seed)
    slack = seconds - num_opportunities * min_gap_s
    # spread the slack uniformly at random over the gaps
    cuts = sorted(rng.below(slack + 1) for _ in range(num_opportunities))
    opp_at = {cuts[i] + i * min_gap_s for i in range(num_opportunities)}
    ticks = []
    mid = base_price
    for s in range(seconds):
        mid *= math.exp(0.0002 * (2.0 * rng.next_uniform() - 1.0))
        if s in opp_at:
            spread = rng.uniform(*opp_margin)
        else:
            spread = rng.uniform(*quiet_spread)
        low = round(mid / (1.0 + spread / 2.0), 4)
        high = round(low * (1.0 + spread), 4)
        ticks.append(MarketTick(start_ts + s, low, high))
    return ticks


def flat_day(seconds: int = 600, start_ts: int = 1722864600, price: float = 100.0) -> list[MarketTick]:
    return [MarketTick(start_ts + s, price, price) for s in range(seconds)]


# -- simulation ---------------------------------------------------------------

def detect_opportunities(ticks: Sequence[MarketTick], config: HftConfig) -> list[Opportunity]:
    out = []
    last_ts = None
    for t in ticks:
        m = t.margin
        if m >= config.threshold and (last_ts is None or t.ts - last_ts >= config.cooling_s):
            out.append(Opportunity(t, m, t.ts * 1000.0))
            last_ts = t.ts
    return out


def decay_fraction(latency_ms: float, config: HftConfig) -> float:
    return min(1.0, max(0.0, latency_ms) / config.t_decay_ms)


def _fill(portfolio: Portfolio, name: str, opp: Opportunity, order: TradeOrder,
          latency_ms: float, config: HftConfig) -> TradeFill | None:
    t = opp.tick
    d = decay_fraction(latency_ms, config)
    width = t.high - t.low
    low_leg = t.low + width * d * 0.5
    high_leg = t.high - width * d * 0.5
    fraction = order.fraction
    clamped = False
    if fraction > 1.0:
        fraction, clamped = 1.0, True
    if fraction <= 0.0:
        return None
    edge = opp.margin * max(0.0, 1.0 - d)

    if config.round_trip:
        notional = fraction * portfolio.cash
        shares = notional / low_leg
        sign = 1.0 if order.side == "buy" else -1.0
        pnl = sign * shares * (high_leg - low_leg)
        portfolio.cash += pnl
        portfolio.realized_pnl += pnl
        fill = TradeFill(name, order.side, fraction, low_leg if sign > 0 else high_leg,
                         high_leg if sign > 0 else low_leg, shares, latency_ms, opp.margin,
                         sign * edge, pnl, clamped)
    elif order.side == "buy":
        notional = fraction * portfolio.cash
        shares = notional / low_leg
        portfolio.cash -= notional
        portfolio.position += shares
        portfolio.cost_basis += notional
        fill = TradeFill(name, "buy", fraction, low_leg, None, shares, latency_ms, opp.margin,
                         edge, 0.0, clamped)
    else:
        if portfolio.position <= 0.0:
            return None
        shares = fraction * portfolio.position
        basis = portfolio.cost_basis * (shares / portfolio.position)
        proceeds = shares * high_leg
        pnl = proceeds - basis
        portfolio.cash += proceeds
        portfolio.position -= shares
        portfolio.cost_basis -= basis
        portfolio.realized_pnl += pnl
        if portfolio.position <= 1e-12 * max(1.0, shares):
            portfolio.position, portfolio.cost_basis = 0.0, 0.0
        fill = TradeFill(name, "sell", fraction, high_leg, None, shares, latency_ms, opp.margin,
                         edge, pnl, clamped)
    portfolio.fills.append(fill)
    if portfolio.accounting_residual() > 1e-9:
        raise RuntimeError(f"accounting identity violated for {name}")
    return fill


def execute(opportunity: Opportunity, actions: Sequence[tuple[Agent, Action]],
            config: HftConfig, portfolios: dict[str, Portfolio]) -> list[TradeFill]:
    """Fill every non-no-op order, fastest responder first (ties by name)."""
    for agent, action in actions:
        if action.issued_at_ms < opportunity.opened_at_ms:
            raise ValueError(f"action from {agent.name} issued before the opportunity opened")
    ranked = sorted(actions, key=lambda aa: (aa[1].issued_at_ms - opportunity.opened_at_ms, aa[0].name))
    fills = []
    for agent, action in ranked:
        if action.is_noop or not isinstance(action.payload, TradeOrder):
            continue
        f = _fill(portfolios[agent.name], agent.name, opportunity, action.payload,
                  action.issued_at_ms - opportunity.opened_at_ms, config)
        if f is not None:
            fills.append(f)
    return fills


@dataclass
class AgentReport:
    index: int
    name: str
    size_tag: str | None
    gamma: float | None
    latency_ms: float
    trades: int
    yield_pct: float
    portfolio: Portfolio


@dataclass
class DayReport:
    rows: list[AgentReport]
    opportunities: list[Opportunity]

    def by_name(self, name: str) -> AgentReport:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["agent", "name", "size_tag", "gamma", "latency_ms", "trades", "yield_pct"])
        for r in self.rows:
            w.writerow([r.index, r.name, r.size_tag or "",
                        "" if r.gamma is None else f"{r.gamma:.2f}",
                        f"{r.latency_ms:.3f}", r.trades, f"{r.yield_pct:.6f}"])
        return out.getvalue()


def _observation(opp: Opportunity, pf: Portfolio, session_end_ts: int, config: HftConfig) -> Observation:
    prior = [f.price for f in pf.fills[-5:]]
    if config.round_trip or pf.position <= 0.0:
        best, wrong = TradeOrder("buy", config.trade_fraction), TradeOrder("sell", config.trade_fraction)
    else:
        best, wrong = TradeOrder("sell", 1.0), TradeOrder("buy", config.trade_fraction)
    payload = {
        "symbol_low": opp.tick.low,
        "symbol_high": opp.tick.high,
        "margin": opp.margin,
        "prior_execution_prices": prior,
        "available_cash": pf.cash,
        "position": pf.position,
        "time_remaining_s": session_end_ts - opp.tick.ts,
        "best_action": best,
        "wrong_action": wrong,
    }
    return Observation(payload, opp.opened_at_ms)


def run_day(ticks: Sequence[MarketTick], agents: Sequence[Agent], config: HftConfig,
            reset_agents: bool = True) -> DayReport:
    if not agents:
        raise ValueError("need at least one agent")
    names = [a.name for a in agents]
    if len(set(names)) != len(names):
        raise ValueError("agent names must be unique")
    if reset_agents:
        for a in agents:
            a.reset()
    portfolios = {a.name: Portfolio(config.initial_cash, config.initial_cash) for a in agents}
    opps = detect_opportunities(ticks, config)
    end_ts = ticks[-1].ts if ticks else 0
    latencies: dict[str, list[float]] = {a.name: [] for a in agents}
    for opp in opps:
        actions = []
        for a in agents:
            act = a.decide(_observation(opp, portfolios[a.name], end_ts, config))
            latencies[a.name].append(act.latency_ms)
            actions.append((a, act))
        execute(opp, actions, config, portfolios)
    mark = ticks[-1].mid if ticks else 0.0
    rows = []
    for i, a in enumerate(agents):
        pf = portfolios[a.name]
        y = (pf.value(mark) - config.initial_cash) / config.initial_cash * 100.0
        lat = latencies[a.name]
        mean_lat = math.fsum(lat) / len(lat) if lat else a.nominal_latency_ms
        rows.append(AgentReport(i, a.name, a.size_tag, a.gamma, mean_lat, len(pf.fills), y, pf))
    return DayReport(rows, opps)
