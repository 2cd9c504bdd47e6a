import math

import pytest

from fpx.agents import Action, LatencyQualityAgent, ScriptedAgent
from fpx.hft import (
    FileMarketDataFetcher, HftConfig, MarketDataError, MarketTick, Opportunity, Portfolio, TradeOrder,
    decay_fraction, detect_opportunities, execute, flat_day, format_csv, ingest_csv, parse_csv, run_day,
    synthetic_day,
)
from fpx.scenarios import data_path


def ticks_from(layout, start=1000):
    return [MarketTick(start + i, lo, hi) for i, (lo, hi) in enumerate(layout)]


def test_margin_and_mid():
    t = MarketTick(0, 100.0, 103.0)
    assert t.margin == pytest.approx(0.03)
    assert t.mid == 101.5


def test_threshold_and_cooling_window():
    layout = [(100, 100.1)] * 200
    for i in (10, 40, 71, 72, 150):
        layout[i] = (100, 103)
    layout[100] = (100, 102)  # exactly at threshold counts
    opps = detect_opportunities(ticks_from(layout), HftConfig())
    # 40 is inside the window after 10; 71 is 61 s after 10; 72 follows 71 too closely
    assert [o.tick.ts - 1000 for o in opps] == [10, 71, 150]
    opps = detect_opportunities(ticks_from(layout), HftConfig(cooling_s=0))
    assert len(opps) == 6
    assert opps[0].opened_at_ms == 1010 * 1000.0


def test_decay_fraction():
    cfg = HftConfig(t_decay_ms=1000)
    assert decay_fraction(0, cfg) == 0
    assert decay_fraction(250, cfg) == 0.25
    assert decay_fraction(5000, cfg) == 1.0


def opp_at(low, high, ts=10):
    t = MarketTick(ts, low, high)
    return Opportunity(t, t.margin, ts * 1000.0)


def order_agent(name, order, latency):
    return ScriptedAgent(name, lambda o, c, r: order, latency)


def test_round_trip_fill_by_hand():
    cfg = HftConfig(initial_cash=1000.0)
    opp = opp_at(100.0, 104.0)
    agent = order_agent("a", TradeOrder("buy", 1.0), 500.0)
    pf = {"a": Portfolio(1000.0, 1000.0)}
    act = Action(TradeOrder("buy", 1.0), opp.opened_at_ms + 500.0, opp.opened_at_ms)
    (fill,) = execute(opp, [(agent, act)], cfg, pf)
    # d = 0.5, legs 101 and 103, 1000/101 shares, each earning 2
    assert fill.price == 101.0 and fill.exit_price == 103.0
    assert fill.pnl == pytest.approx(1000 / 101 * 2)
    assert fill.captured_margin == pytest.approx(0.04 * 0.5)
    assert pf["a"].cash == pytest.approx(1000 + 2000 / 101)


def test_wrong_side_loses():
    cfg = HftConfig(initial_cash=1000.0)
    opp = opp_at(100.0, 104.0)
    agent = order_agent("a", None, 0.0)
    pf = {"a": Portfolio(1000.0, 1000.0)}
    act = Action(TradeOrder("sell", 0.5), opp.opened_at_ms, opp.opened_at_ms)
    (fill,) = execute(opp, [(agent, act)], cfg, pf)
    assert fill.pnl == pytest.approx(-500 / 100 * 4)


def test_directional_buy_then_sell():
    cfg = HftConfig(round_trip=False, initial_cash=1000.0)
    pf = {"a": Portfolio(1000.0, 1000.0)}
    agent = order_agent("a", None, 0.0)
    o1 = opp_at(100.0, 103.0, ts=10)
    execute(o1, [(agent, Action(TradeOrder("buy"), o1.opened_at_ms, o1.opened_at_ms))], cfg, pf)
    assert pf["a"].cash == 0 and pf["a"].position == pytest.approx(10)
    o2 = opp_at(101.0, 104.0, ts=100)
    execute(o2, [(agent, Action(TradeOrder("sell"), o2.opened_at_ms, o2.opened_at_ms))], cfg, pf)
    assert pf["a"].position == 0 and pf["a"].cash == pytest.approx(1040)
    assert pf["a"].realized_pnl == pytest.approx(40)
    assert pf["a"].accounting_residual() < 1e-9


def test_sell_without_position_is_ignored():
    cfg = HftConfig(round_trip=False)
    pf = {"a": Portfolio(1000.0, 1000.0)}
    o = opp_at(100.0, 103.0)
    assert execute(o, [(order_agent("a", None, 0.0),
                        Action(TradeOrder("sell"), o.opened_at_ms, o.opened_at_ms))], cfg, pf) == []


def test_order_validation_and_clamp():
    with pytest.raises(ValueError):
        TradeOrder("short")
    cfg = HftConfig(initial_cash=100.0)
    pf = {"a": Portfolio(100.0, 100.0)}
    o = opp_at(100.0, 103.0)
    order = TradeOrder.__new__(TradeOrder)
    object.__setattr__(order, "side", "buy")
    object.__setattr__(order, "fraction", 3.0)
    (fill,) = execute(o, [(order_agent("a", None, 0), Action(order, o.opened_at_ms, o.opened_at_ms))],
                      cfg, pf)
    assert fill.clamped and fill.fraction == 1.0


def test_action_before_open_is_rejected():
    o = opp_at(100.0, 103.0)
    with pytest.raises(ValueError):
        execute(o, [(order_agent("a", None, 0), Action(TradeOrder("buy"), 0.0, 0.0))], HftConfig(),
                {"a": Portfolio(1.0, 1.0)})


def test_flat_day_and_noops_keep_cash():
    day = flat_day(300)
    a = ScriptedAgent("idle", lambda o, c, r: None, 10.0)
    b = LatencyQualityAgent("p1", 10.0, 1.0)
    rep = run_day(day, [a, b], HftConfig())
    assert rep.opportunities == []
    assert all(r.yield_pct == 0.0 and r.trades == 0 for r in rep.rows)


def test_single_opportunity_day_by_hand():
    ticks = ingest_csv(data_path("market_one_opportunity.csv"))
    cfg = HftConfig()
    rep = run_day(ticks, [LatencyQualityAgent("fast", 0.0, 1.0), LatencyQualityAgent("slow", 400.0, 1.0)],
                  cfg)
    assert len(rep.opportunities) == 1
    # instant: the full 3%; at 400 ms each leg moves 0.6 inward, legs 100.6 and 102.4
    assert rep.by_name("fast").yield_pct == pytest.approx(3.0)
    assert rep.by_name("slow").yield_pct == pytest.approx(100 * 1.8 / 100.6)


def test_latency_ordering_on_synthetic_day():
    day = synthetic_day(5, seconds=1800, num_opportunities=20)
    agents = [LatencyQualityAgent(f"d{d}", float(d), 1.0) for d in (0, 200, 600, 999)]
    ys = [r.yield_pct for r in run_day(day, agents, HftConfig()).rows]
    assert ys == sorted(ys, reverse=True) and len(set(ys)) == 4


def test_synthetic_day_shape():
    day = synthetic_day(3, seconds=1200, num_opportunities=12)
    assert len(day) == 1200
    assert len(detect_opportunities(day, HftConfig())) == 12
    assert all(t.low > 0 and t.high >= t.low for t in day)
    assert synthetic_day(3, seconds=1200, num_opportunities=12) == day
    with pytest.raises(ValueError):
        synthetic_day(0, seconds=100, num_opportunities=5)


def test_csv_round_trip_and_errors(tmp_path):
    day = synthetic_day(1, seconds=50, num_opportunities=0)
    assert parse_csv(format_csv(day)) == day
    with pytest.raises(MarketDataError, match="line 3"):
        parse_csv("ts,low,high\n1,100,101\n2,abc,101\n")
    with pytest.raises(MarketDataError):
        parse_csv("")
    with pytest.raises(MarketDataError):
        parse_csv("time,bid,ask\n1,2,3\n")
    with pytest.raises(FileNotFoundError, match="gone.csv"):
        ingest_csv(tmp_path / "gone.csv")


def test_file_fetcher(tmp_path):
    (tmp_path / "ACME_2024-08-05.csv").write_text("ts,low,high\n1,1,2\n")
    assert parse_csv(FileMarketDataFetcher(tmp_path).fetch("ACME", "2024-08-05"))[0].high == 2


def test_report_csv_columns():
    rep = run_day(flat_day(10), [LatencyQualityAgent("x", 5.0, 1.0)], HftConfig())
    assert rep.to_csv().splitlines()[0] == "agent,name,size_tag,gamma,latency_ms,trades,yield_pct"


def test_compounding_matches_product_of_margins():
    day = synthetic_day(8, seconds=900, num_opportunities=8)
    rep = run_day(day, [LatencyQualityAgent("z", 0.0, 1.0)], HftConfig())
    growth = math.prod(1 + o.margin for o in rep.opportunities)
    assert rep.rows[0].yield_pct == pytest.approx(100 * (growth - 1), rel=1e-12)


def test_parse_rejects_invariant_violations():
    assert parse_csv("ts,low,high\n1722859200,100.0,103.0\n")[0] == MarketTick(1722859200, 100.0, 103.0)
    with pytest.raises(MarketDataError, match="line 4: low 105.0 > high 103.0"):
        parse_csv("ts,low,high\n1,100,101\n\n2,105,103\n")
    with pytest.raises(MarketDataError, match="not after"):
        parse_csv("ts,low,high\n5,100,101\n5,100,101\n")
    with pytest.raises(MarketDataError, match="low must be > 0"):
        parse_csv("ts,low,high\n1,0,1\n")


def test_below_threshold_not_emitted():
    assert detect_opportunities(ticks_from([(100, 101.5)]), HftConfig()) == []


def test_decay_midpoint_and_floor():
    cfg = HftConfig(initial_cash=1000.0)
    opp = opp_at(100.0, 103.0)
    agent = order_agent("a", None, 0.0)
    for delta, captured in ((500.0, 0.015), (1000.0, 0.0), (2500.0, 0.0)):
        pf = {"a": Portfolio(1000.0, 1000.0)}
        act = Action(TradeOrder("buy"), opp.opened_at_ms + delta, opp.opened_at_ms)
        (fill,) = execute(opp, [(agent, act)], cfg, pf)
        assert fill.captured_margin == pytest.approx(captured)
    assert fill.pnl == 0.0 and pf["a"].cash == 1000.0


def test_faster_of_two_wins_on_one_opportunity():
    ticks = ingest_csv(data_path("market_one_opportunity.csv"))
    rep = run_day(ticks, [LatencyQualityAgent("q", 100.0, 1.0), LatencyQualityAgent("s", 900.0, 1.0)],
                  HftConfig())
    assert rep.by_name("q").yield_pct > rep.by_name("s").yield_pct > 0
