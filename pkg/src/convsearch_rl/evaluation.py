"""Greedy evaluation, per-turn records, aggregates and analysis tables."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import hit_at, mrr, ndcg_at, recall_at
from .dialogue import Conversation
from .environment import EnvConfig, SearchEnvironment
from .rewards import RewardConfig, f1
from .training import run_episode

RETRIEVAL_METRICS = ("ndcg@3", "recall@10", "mrr", "hit@3")
REPORT_VERSION = 1


@dataclass
class EvalReport:
    per_turn: list[dict]
    aggregates: dict
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"format_version": REPORT_VERSION, "meta": self.meta,
                "aggregates": self.aggregates, "per_turn": self.per_turn}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        if payload.get("format_version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {payload.get('format_version')!r}")
        return cls(payload["per_turn"], payload["aggregates"], payload.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def _mean(xs) -> float | None:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def aggregate(per_turn: Sequence[dict]) -> dict:
    """Aggregates recomputable from the per-turn records alone."""
    out: dict = {
        "turns": len(per_turn),
        "answer_f1": _mean(r["answer_f1"] for r in per_turn),
        "intent_f1": _mean(r["intent_f1"] for r in per_turn),
        "mean_searches": _mean(r["searches_used"] for r in per_turn),
        "mean_reasoning_tokens": _mean(r["reasoning_tokens"] for r in per_turn),
        "invalid_rate": _mean(float(r["invalid_actions"] > 0) for r in per_turn),
    }
    for name in RETRIEVAL_METRICS:
        out[name] = _mean(r["retrieval"][name] if r["retrieval"] else None for r in per_turn)
    out["searches_histogram"] = {
        str(k): v for k, v in sorted(Counter(r["searches_used"] for r in per_turn).items())}
    out["f1_by_searches"] = {
        str(k): _mean(r["answer_f1"] for r in per_turn if r["searches_used"] == k)
        for k in sorted({r["searches_used"] for r in per_turn})
    }
    # turns without a query, or without labels, fall in the miss bin
    bins: dict[str, list[float]] = {"0": [], "1": []}
    for r in per_turn:
        hit = r["retrieval"]["hit@3"] if r["retrieval"] else 0.0
        bins[str(int(hit))].append(r["answer_f1"])
    out["f1_by_hit@3"] = {k: {"count": len(v), "answer_f1": _mean(v)} for k, v in bins.items()}
    return out


def evaluate(policy, conversations: Sequence[Conversation], retriever,
             env_config: EnvConfig = EnvConfig(), reward_config: RewardConfig = RewardConfig(),
             qrels: Mapping | None = None, meta: dict | None = None) -> EvalReport:
    """Run every turn greedily and collect per-turn records.

    ``policy`` is either an object with ``act`` or a callable
    ``(conversation, turn_index) -> policy`` for per-turn scripted policies.
    Retrieval metrics use the first issued query re-run at depth 10 against
    the turn's relevance labels (``qrels`` overrides the turn's own ids).
    """
    env = SearchEnvironment(retriever, env_config)
    per_turn = []
    for conv in conversations:
        for t, turn in enumerate(conv.turns):
            actor = policy if hasattr(policy, "act") else policy(conv, t)
            ep = run_episode(env, actor, conv, t, reward_config, greedy=True)
            traj = ep.trajectory
            relevant = set(qrels.get((conv.id, t), ())) if qrels is not None else set(turn.relevant_ids or ())
            queries = traj.queries
            retrieval = None
            if queries and relevant:
                deep = retriever.search(queries[0], 10)
                retrieval = {
                    "ndcg@3": ndcg_at(deep, relevant, 3),
                    "recall@10": recall_at(deep, relevant, 10),
                    "mrr": mrr(deep, relevant),
                    "hit@3": float(hit_at(deep, relevant, 3)),
                }
            per_turn.append({
                "conversation_id": conv.id,
                "turn_index": t,
                "question": turn.question,
                "gold_answer": turn.answer,
                "rewrite": turn.rewrite,
                "prediction": traj.answer or "",
                "queries": queries,
                "answer_f1": ep.reward.answer_f1,
                "intent_f1": (max((f1(q, turn.rewrite) for q in queries), default=0.0)
                              if turn.rewrite else None),
                "searches_used": traj.search_count,
                "reasoning_tokens": traj.reasoning_tokens(),
                "invalid_actions": ep.invalid_actions,
                "retrieval": retrieval,
            })
    return EvalReport(per_turn, aggregate(per_turn), dict(meta or {}))


# ----------------------------------------------------------------- tables


def reasoning_length_table(reports: Mapping[str, EvalReport], bins=(0, 10, 20, 40, 80)) -> dict:
    """Distribution of policy reasoning tokens per run, bucketed by lower edge."""
    out = {}
    for name, rep in reports.items():
        lengths = [r["reasoning_tokens"] for r in rep.per_turn]
        counts = Counter(max(b for b in bins if n >= b) for n in lengths)
        out[name] = {
            "mean": _mean(lengths),
            "median": float(np.median(lengths)) if lengths else None,
            "buckets": {str(b): counts.get(b, 0) for b in bins},
        }
    return out


def search_table(reports: Mapping[str, EvalReport]) -> dict:
    return {name: {"histogram": rep.aggregates["searches_histogram"],
                   "answer_f1": rep.aggregates["f1_by_searches"]}
            for name, rep in reports.items()}


def alpha_sweep_table(reports: Mapping[str, EvalReport]) -> list[dict]:
    rows = []
    for name, rep in reports.items():
        if "alpha" not in rep.meta:
            continue
        rows.append({"run": name, "alpha": rep.meta["alpha"],
                     "answer_f1": rep.aggregates["answer_f1"],
                     "intent_f1": rep.aggregates["intent_f1"],
                     "hit@3": rep.aggregates["hit@3"]})
    return sorted(rows, key=lambda r: (r["alpha"], r["run"]))


def report(reports: Mapping[str, EvalReport]) -> dict:
    return {
        "reasoning_length": reasoning_length_table(reports),
        "searches": search_table(reports),
        "retrieval_bins": {n: r.aggregates["f1_by_hit@3"] for n, r in reports.items()},
        "alpha_sweep": alpha_sweep_table(reports),
    }


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.4f}" if isinstance(x, float) else str(x)


def format_report(tables: dict) -> str:
    lines = ["Reasoning length", "run\tmean\tmedian\tbuckets"]
    for name, row in tables["reasoning_length"].items():
        buckets = " ".join(f"{k}+:{v}" for k, v in row["buckets"].items())
        lines.append(f"{name}\t{_fmt(row['mean'])}\t{_fmt(row['median'])}\t{buckets}")
    lines += ["", "Searches vs answer F1", "run\tsearches\tturns\tanswer_f1"]
    for name, row in tables["searches"].items():
        for k, count in row["histogram"].items():
            lines.append(f"{name}\t{k}\t{count}\t{_fmt(row['answer_f1'][k])}")
    lines += ["", "Answer F1 by first-query hit@3", "run\thit\tturns\tanswer_f1"]
    for name, row in tables["retrieval_bins"].items():
        for k, cell in row.items():
            lines.append(f"{name}\t{k}\t{cell['count']}\t{_fmt(cell['answer_f1'])}")
    lines += ["", "Reward ratio sweep", "run\talpha\tanswer_f1\tintent_f1\thit@3"]
    for row in tables["alpha_sweep"]:
        lines.append(f"{row['run']}\t{_fmt(float(row['alpha']))}\t{_fmt(row['answer_f1'])}\t"
                     f"{_fmt(row['intent_f1'])}\t{_fmt(row['hit@3'])}")
    return "\n".join(lines) + "\n"


def gold_policy(conversation: Conversation, turn_index: int):
    """Scripted oracle: search the gold rewrite, then answer with the gold answer."""
    from .policy import ScriptedPolicy
    turn = conversation.turns[turn_index]
    return ScriptedPolicy([f"<search>{turn.rewrite or turn.question}</search>",
                           f"<answer>{turn.answer}</answer>"])


def answer_only_policy(conversation: Conversation, turn_index: int):
    from .policy import ScriptedPolicy
    return ScriptedPolicy([f"<answer>{conversation.turns[turn_index].answer}</answer>"])

