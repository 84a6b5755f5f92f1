"""Passage collection, BM25 inverted index and IR metrics."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .text import retrieval_tokens
from .validation import check_positive_int

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    title: str = ""

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("passage id must be a non-empty string")
        if not self.text or not self.text.strip():
            raise ValueError(f"passage {self.id!r} has empty text")


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    hits: tuple[tuple[str, float], ...] = ()

    @property
    def ids(self) -> list[str]:
        return [pid for pid, _ in self.hits]

    @property
    def scores(self) -> list[float]:
        return [score for _, score in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


@dataclass
class Index:
    """Immutable-by-convention inverted index with BM25 statistics."""

    postings: dict[str, list[tuple[str, int]]]
    lengths: dict[str, int]
    passages: dict[str, Passage]
    k1: float = 1.2
    b: float = 0.75
    avg_length: float = field(init=False)

    def __post_init__(self):
        self.avg_length = sum(self.lengths.values()) / len(self.lengths)

    @property
    def doc_count(self) -> int:
        return len(self.lengths)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def to_dict(self) -> dict:
        return {
            "format_version": INDEX_FORMAT_VERSION,
            "k1": self.k1,
            "b": self.b,
            "passages": [
                {"id": p.id, "title": p.title, "text": p.text}
                for p in sorted(self.passages.values(), key=lambda p: p.id)
            ],
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "Index":
        if payload.get("format_version") != INDEX_FORMAT_VERSION:
            raise ValueError(
                f"unsupported index format {payload.get('format_version')!r}"
            )
        passages = [Passage(**p) for p in payload["passages"]]
        return build_index(passages, k1=payload["k1"], b=payload["b"])


def build_index(corpus: Iterable[Passage], k1: float = 1.2, b: float = 0.75) -> Index:
    passages: dict[str, Passage] = {}
    for passage in corpus:
        if passage.id in passages:
            raise ValueError(f"duplicate passage id {passage.id!r}")
        passages[passage.id] = passage
    if not passages:
        raise ValueError("cannot build an index over an empty corpus")

    postings: dict[str, list[tuple[str, int]]] = defaultdict(list)
    lengths: dict[str, int] = {}
    # sorted ids make the index independent of corpus order
    for pid in sorted(passages):
        tokens = retrieval_tokens(passage_document(passages[pid]))
        lengths[pid] = len(tokens)
        for term, tf in sorted(Counter(tokens).items()):
            postings[term].append((pid, tf))
    return Index(dict(postings), lengths, passages, k1=k1, b=b)


def passage_document(passage: Passage) -> str:
    """Text that gets indexed: title (if any) followed by the body."""
    return f"{passage.title} {passage.text}" if passage.title else passage.text


def bm25_term_score(idf: float, tf: int, length: int, avg_length: float,
                    k1: float, b: float) -> float:
    norm = k1 * (1.0 - b + b * length / avg_length)
    return idf * tf * (k1 + 1.0) / (tf + norm)


def rank(scores: Mapping[str, float], k: int) -> list[tuple[str, float]]:
    """Order by descending score, ties by ascending id; keep positive scores."""
    ordered = sorted(
        ((pid, s) for pid, s in scores.items() if s > 0.0),
        key=lambda item: (-item[1], item[0]),
    )
    return ordered[:k]


def search(index: Index, query: str, k: int = 3) -> RetrievalResult:
    check_positive_int(k, "k")
    scores: dict[str, float] = defaultdict(float)
    for term in retrieval_tokens(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for pid, tf in plist:
            scores[pid] += bm25_term_score(
                idf, tf, index.lengths[pid], index.avg_length, index.k1, index.b
            )
    return RetrievalResult(query=query, hits=tuple(rank(scores, k)))


class BM25Retriever(BaseEstimator):
    """Estimator wrapper around :func:`build_index` / :func:`search`.

    ``fit`` takes a sequence of :class:`Passage`; ``search`` returns a
    :class:`RetrievalResult`. Any object exposing ``search(query, k)`` and
    ``passage(pid)`` can stand in for this class in the environment.
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b

    def fit(self, passages: Sequence[Passage], y=None):
        if self.k1 < 0 or not 0.0 <= self.b <= 1.0:
            raise ValueError(f"invalid BM25 parameters k1={self.k1}, b={self.b}")
        self.index_ = build_index(passages, k1=self.k1, b=self.b)
        return self

    @classmethod
    def from_index(cls, index: Index) -> "BM25Retriever":
        retriever = cls(k1=index.k1, b=index.b)
        retriever.index_ = index
        return retriever

    def search(self, query: str, k: int = 3) -> RetrievalResult:
        check_is_fitted(self, "index_")
        return search(self.index_, query, k)

    def passage(self, pid: str) -> Passage:
        check_is_fitted(self, "index_")
        return self.index_.passages[pid]


# ---------------------------------------------------------------- metrics


def _ranked_ids(result) -> list[str]:
    return result.ids if isinstance(result, RetrievalResult) else list(result)


def ndcg_at(result, relevant: set[str], k: int) -> float:
    """Binary-gain nDCG@k with log2 discounts."""
    check_positive_int(k, "k")
    if not relevant:
        return 0.0
    ids = _ranked_ids(result)[:k]
    dcg = sum(1.0 / math.log2(r + 2) for r, pid in enumerate(ids) if pid in relevant)
    ideal = sum(1.0 / math.log2(r + 2) for r in range(min(k, len(relevant))))
    return dcg / ideal


def recall_at(result, relevant: set[str], k: int) -> float:
    check_positive_int(k, "k")
    if not relevant:
        return 0.0
    found = set(_ranked_ids(result)[:k]) & set(relevant)
    return len(found) / len(relevant)


def mrr(result, relevant: set[str]) -> float:
    for r, pid in enumerate(_ranked_ids(result), start=1):
        if pid in relevant:
            return 1.0 / r
    return 0.0


def hit_at(result, relevant: set[str], n: int) -> int:
    check_positive_int(n, "n")
    return int(any(pid in relevant for pid in _ranked_ids(result)[:n]))


# --------------------------------------------------------------------- io


def load_corpus(path) -> list[Passage]:
    passages = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                passages.append(
                    Passage(id=record["id"], text=record["text"],
                            title=record.get("title", ""))
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad passage record ({exc})") from exc
    return passages


def save_corpus(passages: Iterable[Passage], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in passages:
            fh.write(json.dumps({"id": p.id, "title": p.title, "text": p.text},
                                ensure_ascii=False) + "\n")


def save_index(index: Index, path) -> None:
    Path(path).write_text(json.dumps(index.to_dict(), ensure_ascii=False), encoding="utf-8")


def load_index(path) -> Index:
    return Index.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


Qrels = dict[tuple[str, int], set[str]]


def load_qrels(path) -> Qrels:
    """Read ``conversation_id<TAB>turn_index<TAB>passage_id<TAB>relevance`` lines."""
    qrels: Qrels = defaultdict(set)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            conv_id, turn, pid, rel = parts
            try:
                turn_index, relevance = int(turn), int(rel)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if relevance > 0:
                qrels[(conv_id, turn_index)].add(pid)
            else:
                qrels.setdefault((conv_id, turn_index), set())
    return dict(qrels)


def save_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (conv_id, turn_index) in sorted(qrels):
            for pid in sorted(qrels[(conv_id, turn_index)]):
                fh.write(f"{conv_id}\t{turn_index}\t{pid}\t1\n")


def check_qrels(qrels: Qrels, passage_ids: Iterable[str]) -> None:
    known = set(passage_ids)
    for key, pids in qrels.items():
        missing = pids - known
        if missing:
            raise ValueError(f"qrels for {key} reference unknown passages {sorted(missing)}")
