"""Tick-resolved duel between two agents, plus an ELO round-robin ladder.

Time advances in fixed ticks (200 ms by default, five actions per second).
At every tick boundary ``T``:

1. every fighter whose previous decision is finished (``issued_at <= T``)
   is shown the current state and starts a new decision;
2. actions land on the first boundary at or after their ``issued_at``
   (never two for the same fighter on one tick; a collision slides to the
   next free tick) and are resolved simultaneously.

A landed correct action deals ``damage``; if the observation it was based
on is more than one tick old the hit is scaled by ``stale_penalty``. Wrong
actions whiff. A round ends when a fighter reaches 0 hp, or after
``max_ticks`` when the higher hp wins. A match is first to
``rounds_to_win`` rounds, capped at ``max_rounds``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

from .agents import Agent, Observation
from .tensorcore import derive_seed

HIT = "HIT"
WHIFF = "WHIFF"


@dataclass
class DuelConfig:
    tick_ms: float = 200.0
    rounds_to_win: int = 2
    max_rounds: int = 5
    max_ticks: int = 300
    hp_start: float = 100.0
    damage: float = 10.0
    stale_penalty: float = 0.5

    def __post_init__(self):
        if self.tick_ms <= 0:
            raise ValueError("tick_ms must be > 0")
        if self.hp_start <= 0:
            raise ValueError("hp_start must be > 0")
        if self.rounds_to_win < 1 or self.max_rounds < self.rounds_to_win:
            raise ValueError("need 1 <= rounds_to_win <= max_rounds")
        if self.max_ticks < 1:
            raise ValueError("max_ticks must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "DuelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def landing_tick(issued_at_ms: float, tick_ms: float) -> int:
    """Index of the first tick boundary at or after ``issued_at_ms``."""
    k = math.ceil(issued_at_ms / tick_ms)
    # guard against 400.00000000000006 style float noise on exact boundaries
    if k > 0 and math.isclose((k - 1) * tick_ms, issued_at_ms, rel_tol=0, abs_tol=1e-9):
        k -= 1
    return k


@dataclass
class DuelState:
    tick: int
    hp: list[float]
    pending: list[list]  # per fighter: [(land_tick, action)]
    observed_at: list[float]


@dataclass
class DuelResult:
    agent_a: str
    agent_b: str
    winner: str | None
    rounds: list[dict]
    transcript: list[tuple]

    @property
    def score_a(self) -> float:
        if self.winner is None:
            return 0.5
        return 1.0 if self.winner == self.agent_a else 0.0

    def transcript_bytes(self) -> bytes:
        return json.dumps(self.transcript, separators=(",", ":")).encode()


def _payload(me: int, state: DuelState) -> dict:
    return {
        "tick": state.tick,
        "hp_self": state.hp[me],
        "hp_opponent": state.hp[1 - me],
        "moves": [HIT, WHIFF],
        "best_action": HIT,
        "wrong_action": WHIFF,
    }


def run_duel(agent_a: Agent, agent_b: Agent, config: DuelConfig, seed: int) -> DuelResult:
    if agent_a is agent_b or agent_a.name == agent_b.name:
        raise ValueError("a duel needs two distinct agents")
    fighters = (agent_a, agent_b)
    for side, ag in enumerate(fighters):
        ag.reset(derive_seed(seed, side, ag.seed))
    tick_ms = config.tick_ms
    transcript: list[tuple] = []
    rounds: list[dict] = []
    wins = [0, 0]
    global_tick = 0
    for rnd in range(config.max_rounds):
        state = DuelState(global_tick, [config.hp_start, config.hp_start], [[], []], [0.0, 0.0])
        busy_until = [-math.inf, -math.inf]
        last_land = [global_tick - 1, global_tick - 1]
        winner_idx = None
        for _ in range(config.max_ticks):
            now = global_tick * tick_ms
            state.tick = global_tick
            for i, ag in enumerate(fighters):
                if busy_until[i] <= now:
                    act = ag.decide(Observation(_payload(i, state), now))
                    busy_until[i] = act.issued_at_ms
                    land = max(landing_tick(act.issued_at_ms, tick_ms), last_land[i] + 1, global_tick)
                    last_land[i] = land
                    state.pending[i].append((land, act))
            dmg = [0.0, 0.0]
            for i in range(2):
                keep = []
                for land, act in state.pending[i]:
                    if land != global_tick:
                        keep.append((land, act))
                        continue
                    stale = now - act.observed_at_ms > tick_ms + 1e-9
                    landed = act.payload == HIT
                    hit = config.damage * (config.stale_penalty if stale else 1.0) if landed else 0.0
                    dmg[1 - i] += hit
                    transcript.append((rnd, global_tick, i, act.payload if act.payload else "NOOP",
                                       bool(stale), hit))
                state.pending[i] = keep
            if dmg[0] or dmg[1]:
                state.hp = [max(0.0, state.hp[0] - dmg[0]), max(0.0, state.hp[1] - dmg[1])]
                transcript.append((rnd, global_tick, "hp", state.hp[0], state.hp[1]))
            global_tick += 1
            if state.hp[0] <= 0.0 or state.hp[1] <= 0.0:
                break
        if state.hp[0] > state.hp[1]:
            winner_idx = 0
        elif state.hp[1] > state.hp[0]:
            winner_idx = 1
        if winner_idx is not None:
            wins[winner_idx] += 1
        rounds.append({"round": rnd, "hp_a": state.hp[0], "hp_b": state.hp[1],
                       "winner": None if winner_idx is None else fighters[winner_idx].name})
        transcript.append((rnd, global_tick, "round", rounds[-1]["winner"]))
        if max(wins) >= config.rounds_to_win:
            break
    if wins[0] > wins[1]:
        winner = agent_a.name
    elif wins[1] > wins[0]:
        winner = agent_b.name
    else:
        winner = None
    return DuelResult(agent_a.name, agent_b.name, winner, rounds, transcript)


# -- ELO ----------------------------------------------------------------------

@dataclass
class EloTable:
    ratings: dict[str, float] = field(default_factory=dict)
    k_factor: float = 32.0
    log: list[dict] = field(default_factory=list)

    @classmethod
    def for_agents(cls, names: Sequence[str], initial: float = 1000.0, k_factor: float = 32.0) -> "EloTable":
        return cls({n: float(initial) for n in names}, k_factor)


def expected_score(r_a: float, r_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / 400.0))


def elo_update(table: EloTable, a: str, b: str, score_a: float) -> EloTable:
    if a not in table.ratings or b not in table.ratings:
        raise KeyError(f"both players must be rated: {a!r}, {b!r}")
    if score_a not in (0.0, 0.5, 1.0):
        raise ValueError(f"score must be 0, 0.5 or 1, got {score_a}")
    ra, rb = table.ratings[a], table.ratings[b]
    ea = expected_score(ra, rb)
    delta = table.k_factor * (score_a - ea)
    table.ratings[a] = ra + delta
    table.ratings[b] = rb - delta
    table.log.append({"a": a, "b": b, "score_a": score_a, "delta": delta})
    return table


# -- ladder -------------------------------------------------------------------

@dataclass
class LadderResult:
    names: list[str]
    elo: EloTable
    wins: dict[str, int]
    losses: dict[str, int]
    draws: dict[str, int]
    # pair_score[a][b]: points a took from b (win 1, draw 0.5); pair_games likewise
    pair_score: dict[str, dict[str, float]]
    pair_games: dict[str, dict[str, int]]
    matches: list[DuelResult]

    def win_rate(self, a: str, b: str) -> float:
        n = self.pair_games[a][b]
        return self.pair_score[a][b] / n if n else float("nan")

    def ranking(self) -> list[str]:
        return sorted(self.names, key=lambda n: (-self.elo.ratings[n], n))

    def ratings_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["agent", "rating", "wins", "losses", "draws"])
        for n in self.names:
            w.writerow([n, f"{self.elo.ratings[n]:.6f}", self.wins[n], self.losses[n], self.draws[n]])
        return out.getvalue()

    def matrix_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["agent"] + self.names)
        for a in self.names:
            w.writerow([a] + ["" if a == b else f"{self.win_rate(a, b):.6f}" for b in self.names])
        return out.getvalue()

    def matches_jsonl(self) -> str:
        lines = [json.dumps({"a": m.agent_a, "b": m.agent_b, "winner": m.winner, "rounds": m.rounds},
                            sort_keys=True) for m in self.matches]
        return "\n".join(lines) + "\n"


def run_ladder(agents: Sequence[Agent], matches_per_pair: int = 40, config: DuelConfig | None = None,
               seed: int = 0, k_factor: float = 32.0, initial_rating: float = 1000.0) -> LadderResult:
    """Round-robin over ordered pairs; ratings update after every match.

    Match ``m`` between agents ``i`` and ``j`` uses seed
    ``derive_seed(seed, i, j, m)`` so any single match can be replayed alone.
    """
    if len(agents) < 2:
        raise ValueError("a ladder needs at least two agents")
    names = [a.name for a in agents]
    if len(set(names)) != len(names):
        raise ValueError("agent names must be unique")
    config = config or DuelConfig()
    elo = EloTable.for_agents(names, initial_rating, k_factor)
    wins = dict.fromkeys(names, 0)
    losses = dict.fromkeys(names, 0)
    draws = dict.fromkeys(names, 0)
    pair_score = {a: dict.fromkeys(names, 0.0) for a in names}
    pair_games = {a: dict.fromkeys(names, 0) for a in names}
    matches = []
    for i, a in enumerate(agents):
        for j, b in enumerate(agents):
            if i == j:
                continue
            for m in range(matches_per_pair):
                res = run_duel(a, b, config, derive_seed(seed, i, j, m))
                s = res.score_a
                elo_update(elo, a.name, b.name, s)
                pair_score[a.name][b.name] += s
                pair_score[b.name][a.name] += 1.0 - s
                pair_games[a.name][b.name] += 1
                pair_games[b.name][a.name] += 1
                if res.winner is None:
                    draws[a.name] += 1
                    draws[b.name] += 1
                else:
                    loser = b.name if res.winner == a.name else a.name
                    wins[res.winner] += 1
                    losses[loser] += 1
                matches.append(res)
    return LadderResult(names, elo, wins, losses, draws, pair_score, pair_games, matches)
