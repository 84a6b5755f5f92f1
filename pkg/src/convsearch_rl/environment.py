"""Episode mechanics: prompt construction, search/answer actions, recovery notices."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .corpus import Passage, RetrievalResult
from .dialogue import Conversation, Turn
from .protocol import (ENVIRONMENT, INVALID_ACTION_NOTICE, SEARCH_LIMIT_NOTICE, Answer,
                       Information, Notice, SearchCall, Think, Trajectory, render)
from .validation import check_non_negative_int, check_positive_int


@lru_cache(maxsize=None)
def load_asset(name: str) -> str:
    text = resources.files("convsearch_rl").joinpath("assets", name).read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


def policy_template() -> str:
    return load_asset("policy_prompt.txt")


def render_context(history: Sequence[Turn]) -> str:
    lines = []
    for turn in history:
        lines.append(f"User: {turn.question}")
        lines.append(f"Assistant: {turn.answer}")
    return "\n" + "\n".join(lines) if lines else ""


def build_prompt(history: Sequence[Turn], utterance: str, max_prompt_tokens: int = 3500) -> tuple[str, int]:
    """Instantiate the policy instruction, dropping the oldest turns to fit the budget.

    Returns the prompt and the number of history turns kept.
    """
    template = policy_template()
    history = list(history)
    while True:
        prompt = (template.replace("{context_block}", render_context(history))
                  .replace("{last_user_utterance}", utterance))
        if len(prompt.split()) <= max_prompt_tokens or not history:
            return prompt, len(history)
        history.pop(0)


def format_passage(rank: int, passage: Passage) -> str:
    body = " ".join(passage.text.split())
    return f"Doc {rank}(Title: {passage.title}) {body}"


@dataclass(frozen=True)
class EnvConfig:
    top_k: int = 3
    max_searches: int = 2
    max_invalid_actions: int = 3
    max_prompt_tokens: int = 3500
    max_emission_tokens: int = 256

    def __post_init__(self):
        check_positive_int(self.top_k, "top_k")
        check_non_negative_int(self.max_searches, "max_searches")
        check_non_negative_int(self.max_invalid_actions, "max_invalid_actions")
        check_positive_int(self.max_prompt_tokens, "max_prompt_tokens")
        check_positive_int(self.max_emission_tokens, "max_emission_tokens")


@dataclass(frozen=True)
class Observation:
    prompt: str
    trajectory: Trajectory
    utterance: str
    history: tuple[Turn, ...]
    retrieved: tuple[tuple[Passage, ...], ...] = ()
    searches_used: int = 0
    invalid_actions: int = 0
    max_searches: int = 2

    @property
    def text(self) -> str:
        body = render(self.trajectory, check=False)
        return f"{self.prompt}\n{body}" if body else self.prompt

    def with_segment(self, segment) -> "Observation":
        return replace(self, trajectory=self.trajectory.append(segment))


@dataclass(frozen=True)
class EnvStep:
    observation: Observation
    injected: object | None
    terminal: bool
    searches_used: int
    invalid_actions: int
    result: RetrievalResult | None = None


_LEADING_THINK = re.compile(r"\s*<think>(.*?)</think>", re.DOTALL)
_ACTION = re.compile(r"\s*<(search|answer)>(.*?)</\1>\s*", re.DOTALL)
_TAG = re.compile(r"</?(think|search|information|answer)>")


def split_emission(emission: str) -> tuple[list[str], str | None, str | None, str]:
    """Split an emission into leading think texts, action kind, action body, leftover.

    ``kind`` is None when no well-formed action ends the emission; the
    leftover then holds the unparsed remainder.
    """
    thinks = []
    pos = 0
    while True:
        m = _LEADING_THINK.match(emission, pos)
        if m is None:
            break
        thinks.append(m.group(1))
        pos = m.end()
    rest = emission[pos:]
    m = _ACTION.fullmatch(rest)
    if m is None or _TAG.search(m.group(2)):
        return thinks, None, None, rest
    return thinks, m.group(1), m.group(2), ""


class SearchEnvironment:
    """One conversational search episode at a time over a shared read-only retriever.

    The retriever needs ``search(query, k) -> RetrievalResult`` and
    ``passage(pid) -> Passage``.
    """

    def __init__(self, retriever, config: EnvConfig = EnvConfig()):
        self.retriever = retriever
        self.config = config
        self._obs: Observation | None = None
        self._terminal = True
        self.results: list[RetrievalResult] = []
        self.conversation: Conversation | None = None
        self.turn_index: int | None = None

    @property
    def observation(self) -> Observation:
        if self._obs is None:
            raise RuntimeError("call reset() before using the environment")
        return self._obs

    @property
    def terminal(self) -> bool:
        return self._terminal

    @property
    def trajectory(self) -> Trajectory:
        return self.observation.trajectory

    def reset(self, conversation: Conversation, turn_index: int) -> Observation:
        if not 0 <= turn_index < len(conversation.turns):
            raise IndexError(
                f"turn_index {turn_index} out of range for conversation "
                f"{conversation.id!r} with {len(conversation.turns)} turns"
            )
        history = conversation.history(turn_index)
        utterance = conversation.turns[turn_index].question
        prompt, kept = build_prompt(history, utterance, self.config.max_prompt_tokens)
        self.conversation = conversation
        self.turn_index = turn_index
        self.results = []
        self._terminal = False
        self._obs = Observation(
            prompt=prompt,
            trajectory=Trajectory(),
            utterance=utterance,
            history=tuple(history[len(history) - kept:]),
            max_searches=self.config.max_searches,
        )
        return self._obs

    def _invalid(self, policy_segments: list, notice_text: str) -> EnvStep:
        obs = self._obs
        invalid = obs.invalid_actions + 1
        traj = obs.trajectory.append(*policy_segments)
        if invalid > self.config.max_invalid_actions:
            injected = Answer("", origin=ENVIRONMENT)
            self._terminal = True
        else:
            injected = Notice(notice_text)
        traj = traj.append(injected)
        self._obs = replace(obs, trajectory=traj, invalid_actions=invalid)
        return EnvStep(self._obs, injected, self._terminal, obs.searches_used, invalid)

    def step(self, emission: str) -> EnvStep:
        if self._obs is None or self._terminal:
            raise RuntimeError("episode is terminal; call reset() first")
        cfg = self.config
        words = emission.split()
        if len(words) > cfg.max_emission_tokens:
            truncated = " ".join(words[:cfg.max_emission_tokens])
            return self._invalid([Think(_TAG.sub("", truncated))], INVALID_ACTION_NOTICE)

        thinks, kind, body, leftover = split_emission(emission)
        segments = [Think(t) for t in thinks]
        if kind is None:
            if leftover.strip():
                segments.append(Think(leftover.replace("</think>", "")))
            return self._invalid(segments, INVALID_ACTION_NOTICE)

        obs = self._obs
        if kind == "answer":
            answer = Answer(body)
            self._obs = replace(obs, trajectory=obs.trajectory.append(*segments, answer))
            self._terminal = True
            return EnvStep(self._obs, None, True, obs.searches_used, obs.invalid_actions)

        call = SearchCall(body)
        if not call.query:
            segments.append(Think(f"<search>{body}</search>"))
            return self._invalid(segments, INVALID_ACTION_NOTICE)
        if obs.searches_used >= cfg.max_searches:
            segments.append(Think(f"<search>{body}</search>"))
            return self._invalid(segments, SEARCH_LIMIT_NOTICE)

        result = self.retriever.search(call.query, cfg.top_k)
        passages = tuple(self.retriever.passage(pid) for pid in result.ids)
        info = Information(tuple(format_passage(r, p) for r, p in enumerate(passages, start=1)))
        self.results.append(result)
        self._obs = replace(
            obs,
            trajectory=obs.trajectory.append(*segments, call, info),
            retrieved=obs.retrieved + (passages,),
            searches_used=obs.searches_used + 1,
        )
        return EnvStep(self._obs, info, False, obs.searches_used + 1, obs.invalid_actions, result)
