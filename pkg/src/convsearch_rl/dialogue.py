"""Conversation data model, JSONL loader/saver, statistics and a synthetic generator."""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import Passage, Qrels
from .validation import check_positive_int, check_unit_interval


@dataclass(frozen=True)
class Turn:
    question: str
    answer: str
    rewrite: str | None = None
    relevant_ids: frozenset[str] | None = None

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise ValueError("turn question must be non-empty")
        if self.rewrite is not None and not self.rewrite.strip():
            raise ValueError("turn rewrite, when present, must be non-empty")
        if self.relevant_ids is not None and not isinstance(self.relevant_ids, frozenset):
            object.__setattr__(self, "relevant_ids", frozenset(self.relevant_ids))

    def to_dict(self) -> dict:
        record = {"question": self.question, "answer": self.answer}
        if self.rewrite is not None:
            record["rewrite"] = self.rewrite
        if self.relevant_ids is not None:
            record["relevant_ids"] = sorted(self.relevant_ids)
        return record


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ValueError(f"conversation {self.id!r} has no turns")
        object.__setattr__(self, "turns", tuple(self.turns))

    def history(self, turn_index: int) -> tuple[Turn, ...]:
        return self.turns[:turn_index]

    def to_dict(self) -> dict:
        return {"id": self.id, "turns": [t.to_dict() for t in self.turns]}


def _parse_turn(raw, lineno: int, position: int) -> Turn:
    if not isinstance(raw, dict):
        raise ValueError(f"line {lineno}: turn {position} is not an object")
    for name in ("question", "answer"):
        if name not in raw:
            raise ValueError(f"line {lineno}: turn {position} is missing required field {name!r}")
    relevant = raw.get("relevant_ids")
    try:
        return Turn(
            question=raw["question"],
            answer=raw["answer"],
            rewrite=raw.get("rewrite"),
            relevant_ids=frozenset(relevant) if relevant is not None else None,
        )
    except ValueError as exc:
        raise ValueError(f"line {lineno}: turn {position}: {exc}") from exc


def parse_conversation(line: str, lineno: int = 1) -> Conversation:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
    if not isinstance(record, dict):
        raise ValueError(f"line {lineno}: expected a JSON object")
    for name in ("id", "turns"):
        if name not in record:
            raise ValueError(f"line {lineno}: missing required field {name!r}")
    if not isinstance(record["turns"], list) or not record["turns"]:
        raise ValueError(f"line {lineno}: 'turns' must be a non-empty list")
    turns = tuple(_parse_turn(t, lineno, i) for i, t in enumerate(record["turns"]))
    return Conversation(id=str(record["id"]), turns=turns)


def load_dataset(path) -> list[Conversation]:
    conversations = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                conversations.append(parse_conversation(line, lineno))
    return conversations


def dumps_conversation(conversation: Conversation) -> str:
    return json.dumps(conversation.to_dict(), ensure_ascii=False)


def save_dataset(conversations: Iterable[Conversation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(dumps_conversation(conv) + "\n")


def dataset_stats(conversations: Sequence[Conversation]) -> dict:
    if not conversations:
        raise ValueError("dataset_stats needs at least one conversation")
    n_turns = sum(len(c.turns) for c in conversations)
    answer_words = sum(len(t.answer.split()) for c in conversations for t in c.turns)
    return {
        "conversations": len(conversations),
        "turns": n_turns,
        "mean_answer_length": answer_words / n_turns,
    }


def qrels_from_conversations(conversations: Iterable[Conversation]) -> Qrels:
    return {
        (c.id, i): set(t.relevant_ids)
        for c in conversations
        for i, t in enumerate(c.turns)
        if t.relevant_ids is not None
    }


# ------------------------------------------------------ reference handling

_ITS = re.compile(r"\bits\s+([^?.!]+)", re.IGNORECASE)
_THERE = re.compile(r"\bthere\b", re.IGNORECASE)
_IT = re.compile(r"\bit\b", re.IGNORECASE)
_CAPITALIZED = re.compile(r"[A-Z][\w'-]*")


def has_pronoun(utterance: str) -> bool:
    return any(p.search(utterance) for p in (_ITS, _THERE, _IT))


def resolve_reference(utterance: str, entity: str) -> str:
    """Substitute the first referring expression in ``utterance`` with ``entity``.

    ``its X`` becomes ``the X of <entity>``, ``there`` becomes ``in <entity>``
    and a bare ``it`` becomes the entity. Utterances without a pronoun are
    returned unchanged.
    """
    m = _ITS.search(utterance)
    if m:
        return f"{utterance[:m.start()]}the {m.group(1).rstrip()} of {entity}{utterance[m.end():]}"
    for pattern, repl in ((_THERE, f"in {entity}"), (_IT, entity)):
        m = pattern.search(utterance)
        if m:
            return utterance[:m.start()] + repl + utterance[m.end():]
    return utterance


def extract_entities(text: str) -> list[str]:
    """Capitalized spans that do not start a sentence, in order of appearance."""
    entities: list[str] = []
    for sentence in re.split(r"(?<=[.!?])\s+", text.strip()):
        words = sentence.split()
        span: list[str] = []
        for i, word in enumerate(words):
            token = word.strip("\"'“”‘’()[]{},.;:!?")
            if i > 0 and token and _CAPITALIZED.fullmatch(token):
                span.append(token)
                continue
            if span:
                entities.append(" ".join(span))
                span = []
        if span:
            entities.append(" ".join(span))
    return entities


def history_entities(history: Sequence[Turn], limit: int = 3) -> list[str]:
    """Distinct entities from prior user questions, most recent first."""
    seen: list[str] = []
    for turn in reversed(history):
        for ent in reversed(extract_entities(turn.question)):
            if ent not in seen:
                seen.append(ent)
            if len(seen) == limit:
                return seen
    return seen


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    n_conversations: int = 100
    turns_per_conversation: int = 3
    entity_pool_size: int = 100
    anaphora_rate: float = 0.7
    distractors_per_conversation: int = 2
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.n_conversations, "n_conversations")
        check_positive_int(self.turns_per_conversation, "turns_per_conversation")
        check_positive_int(self.entity_pool_size, "entity_pool_size")
        check_positive_int(self.distractors_per_conversation, "distractors_per_conversation")
        check_unit_interval(self.anaphora_rate, "anaphora_rate")


@dataclass(frozen=True)
class _Attribute:
    name: str
    explicit: str
    anaphoric: str
    answer: str
    topic: str


ATTRIBUTES = (
    _Attribute("capital", "What is the capital of {e}?", "What is its capital?",
               "The capital of {e} is {v}.", "capital city"),
    _Attribute("language", "Which language is spoken in {e}?", "Which language is spoken there?",
               "The main language spoken in {e} is {v}.", "spoken language"),
    _Attribute("founder", "Who founded {e}?", "Who founded it?",
               "{e} was founded by {v}.", "founding history"),
    _Attribute("currency", "What currency does {e} use?", "What currency does it use?",
               "The currency used in {e} is the {v}.", "currency and money"),
    _Attribute("dish", "What is the national dish of {e}?", "What is its national dish?",
               "The national dish of {e} is {v}.", "national dish and food"),
    _Attribute("river", "Which river flows through {e}?", "Which river flows through it?",
               "The {v} river flows through {e}.", "river valleys"),
    _Attribute("festival", "What festival is celebrated in {e}?", "What festival is celebrated there?",
               "The {v} festival is celebrated in {e} every spring.", "festival calendar"),
    _Attribute("mountain", "What is the highest mountain in {e}?", "What is the highest mountain there?",
               "The highest mountain in {e} is Mount {v}.", "highest mountain peaks"),
)

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "kr", "tr", "qu", "th", "sh", "gl")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "n", "r", "l", "s", "x", "nd")
_SUFFIXES = ("ia", "ar", "on", "eth", "is", "ora", "und", "ek")
_FILLERS = (
    "{e} lies in the {dir} part of the continent.",
    "Travel writers describe {e} as {adj} and welcoming.",
    "Most visitors reach {e} by train from the {dir} border.",
    "{e} has a long tradition of {craft} and {craft2}.",
)
_DIRS = ("northern", "southern", "eastern", "western", "central")
_ADJS = ("quiet", "lively", "rugged", "green", "windswept", "sunny")
_CRAFTS = ("weaving", "pottery", "boatbuilding", "glassmaking", "printing", "carving")
_DISTRACTORS = (
    "Visitors to {e} often ask about its {topic}, and local guides give differing accounts.",
    "A recent travel forum thread about {e} discussed {topic} without reaching a conclusion.",
)


def _name_stream(rng: random.Random):
    seen: set[str] = set()
    while True:
        word = "".join(
            rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)
            for _ in range(rng.choice((1, 2)))
        ) + rng.choice(_SUFFIXES)
        word = word.capitalize()
        if word not in seen and len(word) >= 5:
            seen.add(word)
            yield word


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()):
    """Build ``(conversations, corpus, qrels)`` deterministically from ``spec``.

    Every turn asks about one (entity, attribute) fact. Anaphoric turns
    refer to the most recently mentioned entity with ``it``/``its``/``there``;
    their gold rewrite is the explicit question. Each fact has exactly one
    passage containing the gold answer sentence verbatim.
    """
    rng = random.Random(spec.seed)
    names = _name_stream(rng)
    entities = [next(names) for _ in range(spec.entity_pool_size)]
    values: dict[tuple[str, str], str] = {}
    used_facts: set[tuple[str, str]] = set()

    def value_for(entity: str, attr: _Attribute) -> str:
        key = (entity, attr.name)
        if key not in values:
            values[key] = next(names)
        return values[key]

    def pick_fact(entity: str | None, used_in_conv: set[tuple[str, str]]):
        # prefer facts not used anywhere so each passage is labeled for one turn
        if entity is None:
            fresh = [e for e in entities
                     if sum((e, a.name) not in used_facts for a in ATTRIBUTES)
                     >= spec.turns_per_conversation]
            entity = rng.choice(fresh or entities)
        unused = [a for a in ATTRIBUTES if (entity, a.name) not in used_facts]
        if unused:
            return entity, rng.choice(unused)
        candidates = [a for a in ATTRIBUTES if (entity, a.name) not in used_in_conv]
        return entity, rng.choice(candidates or list(ATTRIBUTES))

    written_facts: set[tuple[str, str]] = set()
    raw_passages: list[tuple[str, str, str]] = []  # (key, title, text)
    conv_specs = []
    for c in range(spec.n_conversations):
        used_in_conv: set[tuple[str, str]] = set()
        turns_raw = []
        current = None
        for t in range(spec.turns_per_conversation):
            anaphoric = t > 0 and rng.random() < spec.anaphora_rate
            # non-anaphoric follow-ups stay on topic half of the time
            same_topic = anaphoric or (t > 0 and rng.random() < 0.5)
            ent, attr = pick_fact(current if same_topic else None, used_in_conv)
            used_facts.add((ent, attr.name))
            used_in_conv.add((ent, attr.name))
            current = ent
            explicit = attr.explicit.format(e=ent)
            question = attr.anaphoric if anaphoric else explicit
            answer = attr.answer.format(e=ent, v=value_for(ent, attr))
            turns_raw.append((question, answer, explicit, ent, attr))
        conv_specs.append(turns_raw)

        for _ in range(spec.distractors_per_conversation):
            _, _, _, ent, attr = rng.choice(turns_raw)
            template = rng.choice(_DISTRACTORS)
            raw_passages.append(("", ent, template.format(e=ent, topic=attr.topic)))

    for turns_raw in conv_specs:
        for _, answer, _, ent, attr in turns_raw:
            key = (ent, attr.name)
            if key in written_facts:
                continue
            written_facts.add(key)
            filler = rng.choice(_FILLERS).format(
                e=ent, dir=rng.choice(_DIRS), adj=rng.choice(_ADJS),
                craft=rng.choice(_CRAFTS), craft2=rng.choice(_CRAFTS),
            )
            sentences = [answer, filler]
            rng.shuffle(sentences)
            raw_passages.append((f"{ent}|{attr.name}", ent, " ".join(sentences)))

    order = list(range(len(raw_passages)))
    rng.shuffle(order)
    width = max(4, len(str(len(order))))
    corpus: list[Passage] = []
    key_to_id: dict[str, str] = {}
    for new_pos, old_pos in enumerate(order):
        key, title, text = raw_passages[old_pos]
        pid = f"p{new_pos:0{width}d}"
        corpus.append(Passage(id=pid, title=title, text=text))
        if key:
            key_to_id[key] = pid
    corpus.sort(key=lambda p: p.id)

    conversations = []
    qrels: Qrels = {}
    for c, turns_raw in enumerate(conv_specs):
        conv_id = f"syn{c:04d}"
        turns = []
        for t, (question, answer, explicit, ent, attr) in enumerate(turns_raw):
            pid = key_to_id[f"{ent}|{attr.name}"]
            turns.append(Turn(question=question, answer=answer, rewrite=explicit,
                              relevant_ids=frozenset({pid})))
            qrels[(conv_id, t)] = {pid}
        conversations.append(Conversation(id=conv_id, turns=tuple(turns)))
    return conversations, corpus, qrels
