"""Optional adapter that asks an OpenAI-compatible chat endpoint for actions.

Request body (POST ``base_url + path``)::

    {"model": <model>, "messages": [{"role": "user", "content": <prompt>}],
     "max_tokens": <max_tokens>}

with ``Authorization: Bearer $FPX_LLM_API_KEY`` when that variable is set.
The reply is read from ``choices[0].message.content``. Wall-clock time of
the round trip is the agent's latency. Any transport error, timeout or
unparseable reply becomes a no-op action; the simulation never stops.

Reply grammars (case-insensitive, first match wins)::

    trading: ACTION: BUY|SELL|HOLD [fraction]
    duel:    ACTION: <move>
"""

from __future__ import annotations

import logging
import os
import re
import time
from collections.abc import Callable
from dataclasses import dataclass

import httpx

from .agents import Action, Agent, LatencyModel, Observation
from .hft import TradeOrder

logger = logging.getLogger(__name__)

API_KEY_ENV = "FPX_LLM_API_KEY"
ENABLE_ENV = "FPX_ENABLE_LLM"


class LlmDisabledError(RuntimeError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    path: str = "/v1/chat/completions"
    timeout_ms: float = 5000.0
    max_tokens: int = 32
    enabled: bool = False

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/" + self.path.lstrip("/")

    @classmethod
    def from_dict(cls, d: dict) -> "EndpointConfig":
        fields = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in fields})


_TRADE_RE = re.compile(r"ACTION:\s*(BUY|SELL|HOLD)\b(?:\s+([0-9]*\.?[0-9]+))?", re.IGNORECASE)
_DUEL_RE = re.compile(r"ACTION:\s*([A-Za-z_][A-Za-z0-9_]*)", re.IGNORECASE)


def parse_trade_action(text: str) -> TradeOrder | None:
    m = _TRADE_RE.search(text or "")
    if not m:
        raise ValueError(f"no trade action in reply: {text!r}")
    side = m.group(1).lower()
    if side == "hold":
        return None
    frac = float(m.group(2)) if m.group(2) else 1.0
    if not 0.0 < frac <= 1.0:
        raise ValueError(f"trade fraction {frac} outside (0, 1]")
    return TradeOrder(side, frac)


def parse_duel_action(text: str) -> str | None:
    m = _DUEL_RE.search(text or "")
    if not m:
        raise ValueError(f"no duel action in reply: {text!r}")
    return m.group(1).upper()


def _enabled(config: EndpointConfig) -> bool:
    return config.enabled or os.environ.get(ENABLE_ENV, "") in ("1", "true", "yes")


class LlmAdapter:
    """Blocking chat-completion client. Refuses to exist unless enabled."""

    def __init__(self, config: EndpointConfig, client: httpx.Client | None = None):
        if not _enabled(config):
            raise LlmDisabledError(
                f"LLM adapter is disabled; set enabled=true in the endpoint config or {ENABLE_ENV}=1")
        self.config = config
        self.errors = 0
        self._client = client or httpx.Client(timeout=config.timeout_ms / 1000.0)

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.config.max_tokens,
        }
        resp = self._client.post(self.config.url, json=body, headers=headers)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"] or ""

    def decide(self, prompt: str, parser: Callable[[str], object], observed_at_ms: float = 0.0) -> Action:
        start = time.perf_counter()
        try:
            payload = parser(self.complete(prompt))
        except Exception as exc:
            self.errors += 1
            logger.warning("LLM call failed or reply unparseable: %s", exc)
            payload = None
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        return Action(payload, observed_at_ms + elapsed_ms, observed_at_ms)

    def close(self) -> None:
        self._client.close()


def llm_adapter_decide(endpoint_config: EndpointConfig, prompt: str,
                       parser: Callable[[str], object], observed_at_ms: float = 0.0) -> Action:
    adapter = LlmAdapter(endpoint_config)
    try:
        return adapter.decide(prompt, parser, observed_at_ms)
    finally:
        adapter.close()


def default_prompt(observation: Observation) -> str:
    state = {k: v for k, v in observation.payload.items() if k not in ("best_action", "wrong_action")}
    return f"State: {state}\nReply with one line of the form 'ACTION: ...'."


class LlmAgent(Agent):
    """Agent backed by an LLM endpoint; measured wall time is its latency."""

    def __init__(self, name: str, config: EndpointConfig, parser: Callable[[str], object],
                 prompt_builder: Callable[[Observation], str] = default_prompt, seed: int = 0,
                 adapter: LlmAdapter | None = None):
        self.adapter = adapter or LlmAdapter(config)
        self.parser = parser
        self.prompt_builder = prompt_builder
        super().__init__(name, lambda *a: None, LatencyModel(0.0), seed)

    def _run_policy(self, observation: Observation):
        action = self.adapter.decide(self.prompt_builder(observation), self.parser,
                                     observation.timestamp_ms)
        self.errors = self.adapter.errors
        return action.payload, None, action.latency_ms
