import pytest
from hypothesis import given, settings, strategies as st

from convsearch_rl.corpus import RetrievalResult
from convsearch_rl.dialogue import Turn
from convsearch_rl.protocol import Answer, Information, SearchCall, Trajectory
from convsearch_rl.rewards import (RewardConfig, answer_reward, f1, hit_reward, intent_reward,
                                   total_reward)
from convsearch_rl.text import normalize_answer

from oracles import oracle_f1
from vectors import T9_GOLD, T9_PRED, T10_GOLD, T10_PRED

words = st.sampled_from(["the", "a", "an", "Paris", "paris.", "capital", "of", "France,", "is",
                         "it", "x", "y", "z", "café", "«quoted»", "B-52", "don't"])
phrases = st.lists(words, max_size=12).map(" ".join)


def test_normalize_answer_examples():
    assert normalize_answer("The Night Chicago Died!") == ["night", "chicago", "died"]
    assert normalize_answer("An apple, a day") == ["apple", "day"]
    assert normalize_answer("“quoted” – text") == ["quoted", "text"]


def test_worked_example_f1_values():
    assert f1(T10_PRED, T10_GOLD) == pytest.approx(0.56, abs=0.005)
    assert f1(T9_PRED, T9_GOLD) == pytest.approx(0.8627, abs=0.005)


def test_f1_edge_cases():
    assert f1("", "anything") == 0.0
    assert f1("the a an", "the") == 0.0
    assert f1("Paris", "paris.") == 1.0
    assert f1("x y", "z") == 0.0


@settings(max_examples=300, deadline=None)
@given(phrases, phrases)
def test_f1_matches_oracle_and_is_symmetric(a, b):
    assert f1(a, b) == pytest.approx(oracle_f1(a, b), abs=1e-12)
    assert f1(a, b) == pytest.approx(f1(b, a), abs=1e-12)
    assert 0.0 <= f1(a, b) <= 1.0


@settings(max_examples=200, deadline=None)
@given(phrases)
def test_f1_self_is_one_when_nonempty(a):
    assert f1(a, a) == (1.0 if normalize_answer(a) else 0.0)


def test_answer_reward_missing_answer():
    assert answer_reward(None, "gold") == 0.0
    assert answer_reward("", "gold") == 0.0


def test_intent_reward_examples():
    rewrite = "What festival is celebrated in Taisousia?"
    assert intent_reward([], rewrite) == 0.0
    assert intent_reward(["What festival is celebrated there?"], rewrite) == pytest.approx(8 / 11)
    assert intent_reward(["Taisousia"], rewrite) == pytest.approx(2 / 7)
    assert intent_reward(["zzz", rewrite], rewrite) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(phrases, max_size=4), phrases, phrases)
def test_intent_reward_monotone_in_queries(queries, extra, rewrite):
    assert intent_reward(queries + [extra], rewrite) >= intent_reward(queries, rewrite)


def test_hit_reward():
    r1 = RetrievalResult("q", (("a", 2.0), ("b", 1.0), ("c", 0.5), ("d", 0.1)))
    r2 = RetrievalResult("q2", (("e", 1.0),))
    assert hit_reward([r1], {"c"}, 3) == 1
    assert hit_reward([r1], {"d"}, 3) == 0
    assert hit_reward([r1, r2], {"e"}, 1) == 1
    assert hit_reward([], {"a"}, 3) == 0


def _traj(queries, answer):
    segs = []
    for q in queries:
        segs += [SearchCall(q), Information(("Doc 1(Title: t) x",))]
    segs.append(Answer(answer))
    return Trajectory(tuple(segs))


def test_total_reward_composition():
    turn = Turn("What about its capital?", "The capital of Voria is Blen.",
                rewrite="What about the capital of Voria?", relevant_ids=frozenset({"p1"}))
    traj = _traj(["What about its capital?", "What about the capital of Voria?"],
                 "The capital of Voria is Blen.")
    results = [RetrievalResult("a", (("p9", 1.0),)), RetrievalResult("b", (("p1", 1.0),))]
    r = total_reward(traj, turn, results, RewardConfig(alpha=0.2))
    assert r.answer_f1 == 1.0 and r.intent == 1.0 and r.hit == 1
    assert r.total == pytest.approx(1.2)
    assert len(r.per_query) == 2
    off = total_reward(traj, turn, results, RewardConfig(alpha=0.2, intent_mode="off"))
    assert off.total == 1.0
    hit = total_reward(traj, turn, results, RewardConfig(alpha=0.5, intent_mode="hit_at_n", n=1))
    assert hit.total == pytest.approx(1.5)


def test_total_reward_without_rewrite_disables_intent():
    turn = Turn("q?", "gold answer")
    r = total_reward(_traj(["q"], "gold answer"), turn)
    assert r.intent == 0.0 and r.total == 1.0


def test_intent_paid_on_forced_termination():
    turn = Turn("Where is it?", "x", rewrite="Where is Voria?")
    traj = Trajectory((SearchCall("Where is Voria?"), Information(()), Answer("", origin="environment")))
    r = total_reward(traj, turn)
    assert r.answer_f1 == 0.0
    assert r.intent == 1.0 and r.total == pytest.approx(0.2)


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(alpha=-1)
    with pytest.raises(ValueError):
        RewardConfig(intent_mode="bogus")
    with pytest.raises(ValueError):
        RewardConfig(n=0)
