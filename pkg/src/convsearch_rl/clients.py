"""HTTP clients for the LLM judge and the query rewriter.

Both post a chat-style body with a single user message rendered from the
bundled prompt templates. Their outputs are for evaluation and data
preparation only and never enter the training reward.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Sequence

import httpx

from .dialogue import Turn
from .environment import load_asset, render_context

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "CONVSEARCH_API_KEY"
RETRIABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class ClientError(RuntimeError):
    """Raised when an endpoint keeps failing after all retries."""


def render_judge_prompt(question: str, golden_answer: str, predicted_answer: str) -> str:
    return (load_asset("judge_prompt.txt")
            .replace("{question}", question)
            .replace("{golden_answer}", golden_answer)
            .replace("{predicted_answer}", predicted_answer))


def render_rewrite_prompt(history: Sequence[Turn], utterance: str) -> str:
    return (load_asset("rewrite_prompt.txt")
            .replace("{ctx}", render_context(history))
            .replace("{user_utterance}", utterance))


def parse_verdict(text: str) -> bool | None:
    """True/False from the first token of a reply, case-insensitive; None otherwise."""
    words = text.strip().split()
    if not words:
        return None
    first = words[0].strip(".,:;!\"'*").lower()
    return {"true": True, "false": False}.get(first)


@dataclass
class Exchange:
    """One audited request/response pair."""

    request: dict
    status: int | None
    response: str | None
    error: str | None = None


@dataclass
class ChatClient:
    """Minimal chat-completions client with bounded retries and exponential backoff.

    Pass ``transport=httpx.MockTransport(handler)`` to run offline.
    """

    endpoint: str
    model: str = "default"
    token_env: str = DEFAULT_TOKEN_ENV
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    transport: httpx.BaseTransport | None = None
    sleep: object = time.sleep
    log: list[Exchange] = field(default_factory=list)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt: str) -> str:
        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        last_error = "no attempt made"
        with httpx.Client(transport=self.transport, timeout=self.timeout) as http:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = http.post(self.endpoint, json=body, headers=self._headers())
                except httpx.TransportError as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                    self.log.append(Exchange(body, None, None, last_error))
                    continue
                self.log.append(Exchange(body, resp.status_code, resp.text))
                if resp.status_code in RETRIABLE_STATUS:
                    last_error = f"HTTP {resp.status_code}"
                    continue
                if resp.status_code >= 400:
                    raise ClientError(f"{self.endpoint} returned HTTP {resp.status_code}")
                return _message_text(resp)
        raise ClientError(f"{self.endpoint} failed after {self.max_retries + 1} attempts ({last_error})")


def _message_text(resp: httpx.Response) -> str:
    try:
        payload = resp.json()
    except ValueError:
        return resp.text
    if isinstance(payload, dict) and "choices" in payload:
        return payload["choices"][0]["message"]["content"]
    if isinstance(payload, dict) and "content" in payload:
        return payload["content"]
    return resp.text


def judge_client(client: ChatClient, question: str, golden: str, predicted: str) -> bool | None:
    """Ask the judge whether ``predicted`` matches ``golden``; None for an unparseable verdict."""
    reply = client.complete(render_judge_prompt(question, golden, predicted))
    verdict = parse_verdict(reply)
    if verdict is None:
        logger.warning("invalid judge verdict %r; excluded from accuracy", reply[:80])
    return verdict


def rewrite_client(client: ChatClient, history: Sequence[Turn], utterance: str) -> str:
    """Model rewrite of ``utterance`` given ``history``, returned verbatim."""
    return client.complete(render_rewrite_prompt(history, utterance))


@dataclass
class JudgeSummary:
    correct: int
    judged: int
    invalid: int
    verdicts: list

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.judged if self.judged else None

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "correct": self.correct, "judged": self.judged,
                "invalid": self.invalid, "verdicts": self.verdicts}


def judge_records(client: ChatClient, records: Sequence[dict]) -> JudgeSummary:
    """Judge EvalReport per-turn records; invalid verdicts leave the denominator."""
    verdicts = [judge_client(client, r["question"], r["gold_answer"], r["prediction"])
                for r in records]
    valid = [v for v in verdicts if v is not None]
    return JudgeSummary(sum(valid), len(valid), len(verdicts) - len(valid), verdicts)
