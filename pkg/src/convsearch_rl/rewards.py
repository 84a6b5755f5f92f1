"""Answer F1, intent reward and the composite trajectory reward."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import RetrievalResult, hit_at
from .text import normalize_answer
from .validation import check_non_negative_real, check_positive_int

INTENT_MODES = ("query_f1", "hit_at_n", "off")


def f1(a: str, b: str) -> float:
    """Word-level F1 over normalized token multisets (symmetric)."""
    ta, tb = normalize_answer(a or ""), normalize_answer(b or "")
    if not ta or not tb:
        return 0.0
    common = sum((Counter(ta) & Counter(tb)).values())
    if common == 0:
        return 0.0
    precision = common / len(ta)
    recall = common / len(tb)
    return 2 * precision * recall / (precision + recall)


def answer_reward(y: str | None, y_star: str) -> float:
    if not y:
        return 0.0
    return f1(y, y_star)


def intent_reward(queries: Sequence[str], rewrite: str | None) -> float:
    if not queries or not rewrite:
        return 0.0
    return max(f1(q, rewrite) for q in queries)


def hit_reward(per_query_results: Sequence[RetrievalResult], relevant: set[str], n: int = 3) -> int:
    check_positive_int(n, "n")
    return int(any(hit_at(r, relevant, n) for r in per_query_results))


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.2
    intent_mode: str = "query_f1"
    n: int = 3

    def __post_init__(self):
        check_non_negative_real(self.alpha, "alpha")
        check_positive_int(self.n, "n")
        if self.intent_mode not in INTENT_MODES:
            raise ValueError(f"intent_mode must be one of {INTENT_MODES}, got {self.intent_mode!r}")


@dataclass(frozen=True)
class RewardBreakdown:
    answer_f1: float
    intent: float
    alpha: float
    total: float
    per_query: tuple[float, ...] = ()
    hit: int = 0

    def to_dict(self) -> dict:
        return {
            "answer_f1": self.answer_f1,
            "intent": self.intent,
            "alpha": self.alpha,
            "total": self.total,
            "per_query": list(self.per_query),
            "hit": self.hit,
        }


def total_reward(trajectory, turn, results: Sequence[RetrievalResult] = (),
                 config: RewardConfig = RewardConfig()) -> RewardBreakdown:
    """Score a terminal trajectory for one conversation turn.

    ``results`` are the retrieval results of the trajectory's search calls,
    needed only for the hit-based intent mode and the ``hit`` diagnostic.
    """
    answer = trajectory.answer
    answer_f1 = answer_reward(answer, turn.answer)
    queries = trajectory.queries
    relevant = set(turn.relevant_ids or ())
    hit = hit_reward(results, relevant, config.n) if results and relevant else 0

    per_query: tuple[float, ...] = ()
    if config.intent_mode == "query_f1":
        if turn.rewrite:
            per_query = tuple(f1(q, turn.rewrite) for q in queries)
        intent = max(per_query, default=0.0)
    elif config.intent_mode == "hit_at_n":
        intent = float(hit)
    else:
        intent = 0.0
    return RewardBreakdown(
        answer_f1=answer_f1,
        intent=intent,
        alpha=config.alpha,
        total=answer_f1 + config.alpha * intent,
        per_query=per_query,
        hit=hit,
    )
