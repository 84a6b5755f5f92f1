"""Macro-token policies and the linear critic.

A macro-token is one whole emission unit: a think stub, a candidate search
query, a candidate answer sentence copied from retrieved passages, or an
abstention. The trainable policy is a softmax over ``w . phi(obs, action)``
for the actions available at the current observation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dialogue import extract_entities, has_pronoun, history_entities, resolve_reference
from .environment import Observation
from .protocol import SearchCall, Think
from .text import normalize_answer, retrieval_tokens

FEATURE_VERSION = "macro-v1"

POLICY_FEATURES = (
    "think",
    "think_after_search",
    "search",
    "search_second",
    "search_raw",
    "search_unresolved_pronoun",
    "search_recent_entity",
    "search_older_entity",
    "search_utterance_overlap",
    "search_entity_only",
    "search_repeat",
    "search_length",
    "answer",
    "answer_query_overlap",
    "answer_utterance_overlap",
    "answer_recent_entity",
    "answer_query_entity",
    "answer_new_entity",
    "answer_top_rank",
    "answer_last_search",
    "answer_length",
    "abstain",
    "abstain_after_search",
)
CRITIC_FEATURES = (
    "bias",
    "no_search_yet",
    "one_search",
    "two_searches",
    "utterance_pronoun",
    "after_information",
    "after_think",
    "retrieved_query_entity",
    "retrieved_recent_entity",
    "last_query_pronoun",
    "later_turn",
)
_PIDX = {name: i for i, name in enumerate(POLICY_FEATURES)}
_CIDX = {name: i for i, name in enumerate(CRITIC_FEATURES)}

ABSTAIN_TEXT = "No relevant information is found."
_SENTENCE = re.compile(r"(?<=[.!?])\s+")
_DOC_PREFIX = re.compile(r"^Doc \d+\(Title: [^)]*\) ")


@dataclass(frozen=True)
class MacroAction:
    kind: str  # think | search | answer | abstain
    text: str

    @property
    def emission(self) -> str:
        tag = {"think": "think", "search": "search"}.get(self.kind, "answer")
        return f"<{tag}>{self.text}</{tag}>"

    @property
    def terminal(self) -> bool:
        return self.kind in ("answer", "abstain")


@dataclass(frozen=True)
class MacroVocabulary:
    actions: tuple[MacroAction, ...]
    features: np.ndarray  # (len(actions), len(POLICY_FEATURES))

    def __len__(self) -> int:
        return len(self.actions)

    def index(self, action: MacroAction) -> int:
        try:
            return self.actions.index(action)
        except ValueError:
            raise KeyError(f"action {action!r} is not in the vocabulary") from None


# ----------------------------------------------------------- observation view


@dataclass(frozen=True)
class _Context:
    utterance: str
    utterance_tokens: frozenset
    entities: tuple[str, ...]  # history entities, most recent first
    queries: tuple[str, ...]
    searches_used: int
    max_searches: int
    last_is_think: bool
    known_tokens: frozenset  # lowercase capitalized words seen in dialogue or queries


def _tokset(text: str) -> frozenset:
    return frozenset(normalize_answer(text))


def _mentions(text_tokens: frozenset, entity: str) -> bool:
    ent = normalize_answer(entity)
    return bool(ent) and all(t in text_tokens for t in ent)


def _context(obs: Observation) -> _Context:
    segments = obs.trajectory.segments
    queries = tuple(s.query for s in segments if isinstance(s, SearchCall))
    known = set()
    for text in (obs.utterance, *queries, *(t.question for t in obs.history),
                 *(t.answer for t in obs.history)):
        known.update(e.lower() for ent in extract_entities(text) for e in ent.split())
        first = text.split()[:1]
        known.update(w.lower().strip("?.!,") for w in first)
    last = segments[-1] if segments else None
    return _Context(
        utterance=obs.utterance,
        utterance_tokens=_tokset(obs.utterance),
        entities=tuple(history_entities(obs.history)),
        queries=queries,
        searches_used=obs.searches_used,
        max_searches=obs.max_searches,
        last_is_think=isinstance(last, Think),
        known_tokens=frozenset(known),
    )


def think_stub(obs: Observation) -> str:
    if obs.searches_used == 0:
        return f" The user is asking: {obs.utterance} "
    return " Let me check whether the retrieved information answers the question. "


def _search_candidates(ctx: _Context) -> list[tuple[str, str, str | None]]:
    """(query, construction, entity) triples in a fixed order."""
    out = [(ctx.utterance, "raw", None)]
    for ent in ctx.entities:
        if has_pronoun(ctx.utterance):
            out.append((resolve_reference(ctx.utterance, ent), "resolved", ent))
        out.append((f"{ent} {ctx.utterance}", "concat", ent))
        out.append((ent, "entity", ent))
    seen, unique = set(), []
    for item in out:
        if item[0] not in seen:
            seen.add(item[0])
            unique.append(item)
    return unique


def _answer_candidates(obs: Observation) -> list[tuple[str, int, int]]:
    """(sentence, search index, passage rank) for sentences in retrieved passages."""
    seen, out = set(), []
    for s_idx, passages in enumerate(obs.retrieved):
        for rank, passage in enumerate(passages):
            for sentence in _SENTENCE.split(passage.text.strip()):
                sentence = sentence.strip()
                if sentence and sentence not in seen:
                    seen.add(sentence)
                    out.append((sentence, s_idx, rank))
    return out


def build_vocabulary(obs: Observation) -> MacroVocabulary:
    ctx = _context(obs)
    actions: list[MacroAction] = []
    rows: list[np.ndarray] = []
    d = len(POLICY_FEATURES)

    def add(action: MacroAction, **feats: float):
        row = np.zeros(d)
        for name, value in feats.items():
            row[_PIDX[name]] = value
        actions.append(action)
        rows.append(row)

    searched = float(ctx.searches_used > 0)
    if not ctx.last_is_think:
        add(MacroAction("think", think_stub(obs)), think=1.0, think_after_search=searched)

    if ctx.searches_used < ctx.max_searches:
        recent = ctx.entities[0] if ctx.entities else None
        older = ctx.entities[1:]
        u_tokens = retrieval_tokens(ctx.utterance)
        for query, how, ent in _search_candidates(ctx):
            q_tokens = set(retrieval_tokens(query))
            q_norm = _tokset(query)
            add(
                MacroAction("search", query),
                search=1.0,
                search_second=searched,
                search_raw=float(how == "raw"),
                search_unresolved_pronoun=float(how in ("raw", "concat") and has_pronoun(ctx.utterance)),
                search_recent_entity=float(recent is not None and _mentions(q_norm, recent)),
                search_older_entity=float(any(_mentions(q_norm, e) for e in older)),
                search_utterance_overlap=(sum(t in q_tokens for t in u_tokens) / len(u_tokens)
                                          if u_tokens else 0.0),
                search_entity_only=float(how == "entity"),
                search_repeat=float(query in ctx.queries),
                search_length=len(query.split()) / 10.0,
            )

    last_query = _tokset(ctx.queries[-1]) if ctx.queries else frozenset()
    query_entities = [e for q in ctx.queries[-1:] for e in extract_entities(" " + q)]
    recent = ctx.entities[0] if ctx.entities else None
    n_searches = len(obs.retrieved)
    for sentence, s_idx, rank in _answer_candidates(obs):
        s_norm = _tokset(sentence)
        words = [w.strip("\"'.,;:!?()") for w in sentence.split()]
        new_entity = any(
            w[:1].isupper() and i > 0 and w.lower() not in ctx.known_tokens
            for i, w in enumerate(words) if w
        )
        add(
            MacroAction("answer", sentence),
            answer=1.0,
            answer_query_overlap=(len(s_norm & last_query) / len(last_query)) if last_query else 0.0,
            answer_utterance_overlap=(len(s_norm & ctx.utterance_tokens) / len(ctx.utterance_tokens)
                                      if ctx.utterance_tokens else 0.0),
            answer_recent_entity=float(recent is not None and _mentions(s_norm, recent)),
            answer_query_entity=float(any(_mentions(s_norm, e) for e in query_entities)),
            answer_new_entity=float(new_entity),
            answer_top_rank=float(rank == 0),
            answer_last_search=float(s_idx == n_searches - 1),
            answer_length=len(sentence.split()) / 10.0,
        )
    add(MacroAction("abstain", ABSTAIN_TEXT), abstain=1.0, abstain_after_search=searched)
    return MacroVocabulary(tuple(actions), np.vstack(rows))


def critic_features(obs: Observation) -> np.ndarray:
    ctx = _context(obs)
    psi = np.zeros(len(CRITIC_FEATURES))
    psi[_CIDX["bias"]] = 1.0
    psi[_CIDX[("no_search_yet", "one_search", "two_searches")[min(ctx.searches_used, 2)]]] = 1.0
    psi[_CIDX["utterance_pronoun"]] = float(has_pronoun(ctx.utterance))
    segments = obs.trajectory.segments
    last = type(segments[-1]).__name__ if segments else ""
    psi[_CIDX["after_information"]] = float(last == "Information")
    psi[_CIDX["after_think"]] = float(last == "Think")
    texts = [_tokset(p.text) for passages in obs.retrieved for p in passages]
    q_entities = [e for q in ctx.queries[-1:] for e in extract_entities(" " + q)]
    psi[_CIDX["retrieved_query_entity"]] = float(
        any(_mentions(t, e) for t in texts for e in q_entities))
    recent = ctx.entities[0] if ctx.entities else None
    psi[_CIDX["retrieved_recent_entity"]] = float(
        recent is not None and any(_mentions(t, recent) for t in texts))
    psi[_CIDX["last_query_pronoun"]] = float(bool(ctx.queries) and has_pronoun(ctx.queries[-1]))
    psi[_CIDX["later_turn"]] = float(bool(obs.history))
    return psi


# ------------------------------------------------------------------ policies


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


@dataclass(frozen=True)
class Decision:
    """One policy macro-token choice, kept for the PPO batch."""

    features: np.ndarray
    action_index: int
    log_prob: float
    critic_features: np.ndarray
    action: MacroAction


class LinearSoftmaxPolicy:
    """Softmax policy over macro-actions with linear scores ``features @ weights``."""

    def __init__(self, weights: np.ndarray | None = None, frozen: bool = False):
        if weights is None:
            weights = np.zeros(len(POLICY_FEATURES))
        weights = np.array(weights, dtype=float)
        if weights.shape != (len(POLICY_FEATURES),):
            raise ValueError(f"expected {len(POLICY_FEATURES)} weights, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("policy weights must be finite")
        if frozen:
            weights.setflags(write=False)
        self._weights = weights
        self.frozen = frozen

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @weights.setter
    def weights(self, value) -> None:
        if self.frozen:
            raise AttributeError("cannot update a frozen policy snapshot")
        value = np.array(value, dtype=float)
        if value.shape != self._weights.shape or not np.all(np.isfinite(value)):
            raise ValueError("weights must be a finite vector of the registry size")
        self._weights = value

    def snapshot(self) -> "LinearSoftmaxPolicy":
        return LinearSoftmaxPolicy(self._weights.copy(), frozen=True)

    # feature-matrix level, used by the optimizer
    def log_probs_from_features(self, features: np.ndarray) -> np.ndarray:
        return _log_softmax(features @ self._weights)

    def probs_from_features(self, features: np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs_from_features(features))

    def grad_log_prob_from_features(self, features: np.ndarray, index: int) -> np.ndarray:
        p = self.probs_from_features(features)
        return features[index] - p @ features

    # observation level
    def vocabulary(self, obs: Observation) -> MacroVocabulary:
        return build_vocabulary(obs)

    def log_prob(self, obs: Observation, action: MacroAction) -> float:
        vocab = self.vocabulary(obs)
        return float(self.log_probs_from_features(vocab.features)[vocab.index(action)])

    def grad_log_prob(self, obs: Observation, action: MacroAction) -> np.ndarray:
        vocab = self.vocabulary(obs)
        return self.grad_log_prob_from_features(vocab.features, vocab.index(action))

    def sample(self, obs: Observation, rng: np.random.Generator) -> MacroAction:
        vocab = self.vocabulary(obs)
        p = self.probs_from_features(vocab.features)
        return vocab.actions[int(rng.choice(len(p), p=p))]

    def act(self, obs: Observation, rng: np.random.Generator | None = None,
            greedy: bool = False) -> tuple[str, list[Decision]]:
        """Choose macro-tokens until one ends in a search or answer; return the emission."""
        decisions: list[Decision] = []
        parts: list[str] = []
        while True:
            vocab = self.vocabulary(obs)
            logp = self.log_probs_from_features(vocab.features)
            if greedy:
                idx = int(np.argmax(logp))
            else:
                p = np.exp(logp)
                idx = int(rng.choice(len(p), p=p / p.sum()))
            action = vocab.actions[idx]
            decisions.append(Decision(vocab.features, idx, float(logp[idx]),
                                      critic_features(obs), action))
            parts.append(action.emission)
            if action.kind != "think":
                return "".join(parts), decisions
            obs = obs.with_segment(Think(action.text))

    def get_state(self) -> list[float]:
        return [float(x) for x in self._weights]


class LinearCritic:
    def __init__(self, weights: np.ndarray | None = None):
        if weights is None:
            weights = np.zeros(len(CRITIC_FEATURES))
        self.weights = np.array(weights, dtype=float)
        if self.weights.shape != (len(CRITIC_FEATURES),):
            raise ValueError(f"expected {len(CRITIC_FEATURES)} critic weights")

    def value(self, features: np.ndarray) -> float:
        return float(features @ self.weights)

    def grad_value(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=float).copy()

    def value_obs(self, obs: Observation) -> float:
        return self.value(critic_features(obs))

    def copy(self) -> "LinearCritic":
        return LinearCritic(self.weights.copy())

    def get_state(self) -> list[float]:
        return [float(x) for x in self.weights]


class ScriptExhausted(RuntimeError):
    pass


class ScriptedPolicy:
    """Replays fixed emission strings regardless of the observation."""

    def __init__(self, script: Sequence[str]):
        self.script = tuple(script)
        self._pos = 0

    def reset(self) -> None:
        self._pos = 0

    def act(self, obs: Observation, rng=None, greedy: bool = False) -> tuple[str, list]:
        if self._pos >= len(self.script):
            raise ScriptExhausted(
                f"script of {len(self.script)} emissions ended before the episode terminated"
            )
        emission = self.script[self._pos]
        self._pos += 1
        return emission, []


def scripted_policy(script: Sequence[str]) -> ScriptedPolicy:
    return ScriptedPolicy(script)


def kl_divergence(p_log: np.ndarray, q_log: np.ndarray) -> float:
    return float(np.sum(np.exp(p_log) * (p_log - q_log)))
