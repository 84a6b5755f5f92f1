"""Tag grammar for think/search/information/answer trajectories.

A rendered trajectory is its segments joined by newlines. Inside a
``<think>`` block every character up to ``</think>`` is reasoning text, so
malformed or quoted tags there are plain content. Environment notices are
rendered as bare text and recognized by exact match.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

logger = logging.getLogger(__name__)

POLICY = "policy"
ENVIRONMENT = "environment"

TAGS = ("think", "search", "information", "answer")
SEPARATOR = "\n"

INVALID_ACTION_NOTICE = (
    "My previous action is invalid. If I want to search, I should put the query "
    "between <search> and </search>. If I want to give the final answer, I should "
    "put the answer between <answer> and </answer>."
)
SEARCH_LIMIT_NOTICE = (
    "My previous action is invalid. I have reached the limit of search calls. "
    "If I want to give the final answer, I should put the answer between "
    "<answer> and </answer>."
)
NOTICES = (INVALID_ACTION_NOTICE, SEARCH_LIMIT_NOTICE)


class ProtocolError(ValueError):
    """Base class for trajectory grammar violations."""


class ParseError(ProtocolError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class StructureError(ProtocolError):
    pass


class LimitError(ProtocolError):
    pass


@dataclass(frozen=True)
class Think:
    text: str
    origin: str = POLICY

    def render(self) -> str:
        return f"<think>{self.text}</think>"


@dataclass(frozen=True)
class SearchCall:
    text: str
    origin: str = POLICY

    @property
    def query(self) -> str:
        return self.text.strip()

    def render(self) -> str:
        return f"<search>{self.text}</search>"


@dataclass(frozen=True)
class Information:
    passages: tuple[str, ...] = ()
    origin: str = ENVIRONMENT

    def render(self) -> str:
        return f"<information>{SEPARATOR.join(self.passages)}</information>"


@dataclass(frozen=True)
class Answer:
    text: str
    origin: str = POLICY

    @property
    def answer(self) -> str:
        return self.text.strip()

    def render(self) -> str:
        return f"<answer>{self.text}</answer>"


@dataclass(frozen=True)
class Notice:
    text: str = INVALID_ACTION_NOTICE
    origin: str = ENVIRONMENT

    def render(self) -> str:
        return self.text


Segment = Think | SearchCall | Information | Answer | Notice


@dataclass(frozen=True)
class Trajectory:
    segments: tuple = ()

    @property
    def terminal(self) -> bool:
        return bool(self.segments) and isinstance(self.segments[-1], Answer)

    @property
    def queries(self) -> list[str]:
        return [s.query for s in self.segments if isinstance(s, SearchCall)]

    @property
    def answer(self) -> str | None:
        if self.terminal:
            return self.segments[-1].answer
        return None

    @property
    def search_count(self) -> int:
        return sum(isinstance(s, SearchCall) for s in self.segments)

    def reasoning_tokens(self) -> int:
        return sum(len(s.text.split()) for s in self.segments
                   if isinstance(s, Think) and s.origin == POLICY)

    def append(self, *segments) -> "Trajectory":
        return Trajectory(self.segments + tuple(segments))

    def __add__(self, other: "Trajectory") -> "Trajectory":
        return Trajectory(self.segments + other.segments)

    def __len__(self) -> int:
        return len(self.segments)


def validate(trajectory: Trajectory, max_searches: int | None = 2,
             top_k: int | None = 3) -> None:
    segs = trajectory.segments
    for i, seg in enumerate(segs):
        if isinstance(seg, Information):
            if seg.origin != ENVIRONMENT:
                raise StructureError(f"segment {i}: information must be environment-injected")
            if i == 0 or not isinstance(segs[i - 1], SearchCall):
                raise StructureError(f"segment {i}: information must follow a search call")
            if top_k is not None and len(seg.passages) > top_k:
                raise LimitError(
                    f"segment {i}: {len(seg.passages)} passages exceeds top-k {top_k}"
                )
        elif isinstance(seg, Notice) and seg.origin != ENVIRONMENT:
            raise StructureError(f"segment {i}: notices must be environment-injected")
        elif isinstance(seg, SearchCall) and not seg.query:
            raise StructureError(f"segment {i}: empty search query")
        elif isinstance(seg, Answer) and i != len(segs) - 1:
            raise StructureError(f"segment {i}: answer must be the final segment")
    if max_searches is not None and trajectory.search_count > max_searches:
        raise LimitError(
            f"{trajectory.search_count} search calls exceed the limit of {max_searches}"
        )


def render(trajectory: Trajectory, *, check: bool = True) -> str:
    if check:
        validate(trajectory, max_searches=None, top_k=None)
    return SEPARATOR.join(seg.render() for seg in trajectory.segments)


_OPEN = re.compile(r"<(think|search|information|answer)>")
_ANY_TAG = re.compile(r"</?(think|search|information|answer)>")


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def parse(text: str, max_searches: int | None = 2, top_k: int | None = 3) -> Trajectory:
    """Parse rendered trajectory text into segments.

    Raises :class:`ParseError` for unmatched tags or stray text,
    :class:`StructureError` for ordering violations and
    :class:`LimitError` when search or passage limits are exceeded.
    """
    segments = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        notice = next((nt for nt in NOTICES if text.startswith(nt, pos)), None)
        if notice is not None:
            segments.append(Notice(notice))
            pos += len(notice)
            continue
        m = _OPEN.match(text, pos)
        if m is None:
            stray = _ANY_TAG.match(text, pos)
            if stray is not None and stray.group(0).startswith("</"):
                raise ParseError(f"unmatched closing tag {stray.group(0)}", _byte_offset(text, pos))
            if isinstance(segments[-1] if segments else None, Answer):
                logger.warning("ignoring text after </answer> at offset %d",
                               _byte_offset(text, pos))
                break
            raise ParseError("text outside of any segment", _byte_offset(text, pos))
        tag = m.group(1)
        close = f"</{tag}>"
        end = text.find(close, m.end())
        if end < 0:
            raise ParseError(f"unmatched opening tag <{tag}>", _byte_offset(text, pos))
        body = text[m.end():end]
        if tag != "think":
            # nested tags outside think blocks are not part of the grammar
            inner = _ANY_TAG.search(body)
            if inner is not None:
                raise ParseError(
                    f"tag {inner.group(0)} inside <{tag}>",
                    _byte_offset(text, m.end() + inner.start()),
                )
        if isinstance(segments[-1] if segments else None, Answer):
            raise StructureError("answer must be the final segment")
        if tag == "think":
            segments.append(Think(body))
        elif tag == "search":
            segments.append(SearchCall(body))
        elif tag == "information":
            segments.append(Information(tuple(body.split(SEPARATOR)) if body else ()))
        else:
            segments.append(Answer(body))
        pos = end + len(close)
    trajectory = Trajectory(tuple(segments))
    validate(trajectory, max_searches=max_searches, top_k=top_k)
    return trajectory


# ------------------------------------------------------------------ masking


@dataclass(frozen=True)
class LossMask:
    tokens: tuple[str, ...]
    weights: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.weights)

    def __add__(self, other: "LossMask") -> "LossMask":
        return LossMask(self.tokens + other.tokens, self.weights + other.weights)

    @property
    def masked_count(self) -> int:
        return sum(1 for w in self.weights if w == 0)


def segment_tokens(segment, tokenizer: Callable[[str], Sequence[str]] = str.split) -> list[str]:
    """Word tokens of one rendered segment, with each tag a single token."""
    if isinstance(segment, Notice):
        return list(tokenizer(segment.text))
    tag = type(segment).__name__.lower()
    tag = {"searchcall": "search"}.get(tag, tag)
    body = SEPARATOR.join(segment.passages) if isinstance(segment, Information) else segment.text
    return [f"<{tag}>", *tokenizer(body), f"</{tag}>"]


def loss_mask(trajectory: Trajectory, tokenizer: Callable[[str], Sequence[str]] = str.split) -> LossMask:
    tokens: list[str] = []
    weights: list[int] = []
    for seg in trajectory.segments:
        toks = segment_tokens(seg, tokenizer)
        tokens.extend(toks)
        weights.extend([0 if seg.origin == ENVIRONMENT else 1] * len(toks))
    return LossMask(tuple(tokens), tuple(weights))
