"""Agents: a decision policy plus an inference-latency model.

Simulators hand an agent an :class:`Observation` stamped with the current
simulated time; the returned :class:`Action` carries ``issued_at_ms``, the
time at which the decision would reach the environment.

Observation payloads are plain dicts. Simulators that want to score the
surrogate agents put the correct and the wrong response for the current
state under ``"best_action"`` and ``"wrong_action"``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from .latency import CostTable, estimate
from .tensorcore import Rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    payload: Any
    timestamp_ms: float


@dataclass(frozen=True)
class Action:
    payload: Any  # None means no-op
    issued_at_ms: float
    observed_at_ms: float
    correct: bool | None = None

    @property
    def latency_ms(self) -> float:
        return self.issued_at_ms - self.observed_at_ms

    @property
    def is_noop(self) -> bool:
        return self.payload is None


@dataclass(frozen=True)
class LatencyModel:
    """Constant latency, optionally plus uniform jitter in [0, jitter_ms)."""

    base_ms: float
    jitter_ms: float = 0.0

    def __post_init__(self):
        if self.base_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency and jitter must be >= 0")

    def draw(self, rng: Rng) -> float:
        if self.jitter_ms == 0.0:
            return self.base_ms
        return self.base_ms + self.jitter_ms * rng.next_uniform()


# policy(observation, context, rng) -> payload
Policy = Callable[[Observation, list, Rng], Any]


class Agent:
    """A named policy with a latency model and its own seeded generator.

    Instances are stateful (generator, context) and belong to one
    simulation loop at a time. ``reset`` restarts both.
    """

    def __init__(self, name: str, policy: Policy, latency: LatencyModel | float, seed: int = 0,
                 size_tag: str | None = None, gamma: float | None = None):
        self.name = name
        self.policy = policy
        self.latency = latency if isinstance(latency, LatencyModel) else LatencyModel(float(latency))
        self.seed = seed
        self.size_tag = size_tag
        self.gamma = gamma
        self.errors = 0
        self.reset()

    def reset(self, seed: int | None = None) -> None:
        self.rng = Rng(self.seed if seed is None else seed)
        self.context: list[tuple[Observation, Action]] = []

    @property
    def nominal_latency_ms(self) -> float:
        return self.latency.base_ms + 0.5 * self.latency.jitter_ms

    def _run_policy(self, observation: Observation):
        """Return (payload, correct, measured latency or None)."""
        return self.policy(observation, self.context, self.rng), None, None

    def decide(self, observation: Observation) -> Action:
        delay = self.latency.draw(self.rng)
        try:
            payload, correct, measured = self._run_policy(observation)
        except Exception:
            logger.exception("agent %s: policy failed; emitting no-op", self.name)
            self.errors += 1
            payload, correct, measured = None, None, None
        if measured is not None:
            delay = measured
        if not math.isfinite(delay) or delay < 0:
            delay = self.latency.base_ms
        action = Action(payload, observation.timestamp_ms + delay, observation.timestamp_ms, correct)
        self.context.append((observation, action))
        return action

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}, latency={self.latency})"


class ScriptedAgent(Agent):
    pass


class LatencyQualityAgent(Agent):
    """Picks the observation's ``best_action`` with probability ``p``, else ``wrong_action``."""

    def __init__(self, name: str, latency: LatencyModel | float, p: float, seed: int = 0,
                 size_tag: str | None = None, gamma: float | None = None):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"accuracy p must be in [0, 1], got {p}")
        self.p = p
        super().__init__(name, _no_policy, latency, seed, size_tag, gamma)

    def _run_policy(self, observation: Observation):
        payload = observation.payload
        hit = self.rng.next_uniform() < self.p
        key = "best_action" if hit else "wrong_action"
        return payload.get(key), hit, None

    def __repr__(self) -> str:
        return f"LatencyQualityAgent({self.name!r}, latency={self.latency}, p={self.p})"


def _no_policy(observation, context, rng):
    raise RuntimeError("LatencyQualityAgent has no free-form policy")


@dataclass(frozen=True)
class QualityMap:
    """``p = p_max * exp(-alpha * proxy)``; non-increasing in the proxy."""

    p_max: float = 0.95
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError("p_max must be in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def __call__(self, proxy: float) -> float:
        return self.p_max * math.exp(-self.alpha * max(0.0, proxy))

    @classmethod
    def calibrated(cls, proxy_at_full_fp4: float, p_max: float = 0.95,
                   p_floor: float = 0.2) -> "QualityMap":
        """Choose ``alpha`` so the all-FP4 plan maps to ``p_floor``."""
        if proxy_at_full_fp4 <= 0:
            raise ValueError("need a positive proxy for the all-FP4 plan")
        if not 0 < p_floor <= p_max:
            raise ValueError("need 0 < p_floor <= p_max")
        return cls(p_max, math.log(p_max / p_floor) / proxy_at_full_fp4)


def from_plan(size_tag: str, plan, cost_table: CostTable, quality_map: QualityMap,
              quality_proxy: float = 0.0, name: str | None = None, seed: int = 0,
              jitter_ms: float = 0.0) -> LatencyQualityAgent:
    """Agent whose latency is the predicted cost of ``plan`` and whose accuracy
    follows the plan's quality proxy. ``plan=None`` is the unquantized model."""
    lat = estimate(cost_table, size_tag, plan).total_ms
    gamma = None if plan is None else plan.gamma
    if name is None:
        name = f"{size_tag}-fp16" if plan is None else f"{size_tag}-g{gamma:.1f}"
    proxy = 0.0 if plan is None else quality_proxy
    return LatencyQualityAgent(name, LatencyModel(lat, jitter_ms), quality_map(proxy), seed,
                               size_tag=size_tag, gamma=gamma)


@dataclass
class AgentSpec:
    """Config-file description of one agent (consumed by ``fpx hft`` and ``fpx arena``)."""

    name: str
    latency_ms: float | None = None
    jitter_ms: float = 0.0
    p: float = 1.0
    seed: int = 0
    size_tag: str | None = None
    gamma: float | None = None
    precision: str | None = None
    llm: dict | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "AgentSpec":
        known = {f for f in cls.__dataclass_fields__ if f != "extra"}
        if "name" not in d:
            raise ValueError(f"agent entry without a name: {d}")
        return cls(**{k: v for k, v in d.items() if k in known},
                   extra={k: v for k, v in d.items() if k not in known})
