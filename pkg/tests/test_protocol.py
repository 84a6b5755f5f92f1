import pytest
from hypothesis import given, settings, strategies as st

from convsearch_rl.protocol import (ENVIRONMENT, INVALID_ACTION_NOTICE, SEARCH_LIMIT_NOTICE, Answer,
                                    Information, LimitError, Notice, ParseError, SearchCall,
                                    StructureError, Think, Trajectory, loss_mask, parse, render,
                                    validate)
from convsearch_rl.rewards import answer_reward

from vectors import T10_GOLD, T10_TRANSCRIPT

plain = st.text(st.characters(blacklist_characters="<>\n", blacklist_categories=("Cs",)), max_size=30)
nonblank = plain.filter(lambda s: s.strip())
think_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=40).filter(
    lambda s: "</think>" not in s)
passage = st.text(st.characters(blacklist_characters="<>\n", blacklist_categories=("Cs",)),
                  min_size=1, max_size=30)


@st.composite
def trajectories(draw):
    segs = []
    searches = 0
    for _ in range(draw(st.integers(0, 5))):
        kind = draw(st.sampled_from(["think", "search", "notice"]))
        if kind == "think":
            segs.append(Think(draw(think_text)))
        elif kind == "notice":
            segs.append(Notice(draw(st.sampled_from([INVALID_ACTION_NOTICE, SEARCH_LIMIT_NOTICE]))))
        elif searches < 2:
            searches += 1
            segs.append(SearchCall(draw(nonblank)))
            segs.append(Information(tuple(draw(st.lists(passage, max_size=3)))))
    if draw(st.booleans()):
        segs.append(Answer(draw(plain)))
    return Trajectory(tuple(segs))


@settings(max_examples=500, deadline=None)
@given(trajectories())
def test_parse_render_roundtrip(traj):
    text = render(traj)
    assert parse(text) == traj
    assert render(parse(text)) == text


def test_render_joins_with_newline():
    traj = Trajectory((Think("t"), SearchCall("q"), Information(("a", "b")), Answer("x")))
    assert render(traj) == "<think>t</think>\n<search>q</search>\n<information>a\nb</information>\n<answer>x</answer>"


def test_recovery_transcript_parses():
    traj = parse(T10_TRANSCRIPT)
    kinds = [type(s).__name__ for s in traj.segments]
    assert kinds == ["Think", "SearchCall", "Information", "Think", "Answer"]
    # the quoted malformed search and notice are think content
    assert "=search>" in traj.segments[0].text and "<answer>" in traj.segments[0].text
    assert traj.queries == ["does the group Paper Lace have other hits?"]
    assert answer_reward(traj.answer, T10_GOLD) == pytest.approx(0.56, abs=0.005)


@pytest.mark.parametrize("text, offset", [
    ("<search>q", 0),
    ("<think>x</think>\n</search>", 17),
    ("stray", 0),
    ("<answer>a <search>q</search></answer>", 10),
    ("<think>é</think> oops", 18),
])
def test_parse_errors_report_byte_offset(text, offset):
    with pytest.raises(ParseError) as exc:
        parse(text)
    assert exc.value.offset == offset


def test_structure_errors():
    with pytest.raises(StructureError):
        parse("<information>x</information>")
    with pytest.raises(StructureError):
        parse("<answer>a</answer>\n<answer>b</answer>")
    with pytest.raises(StructureError):
        parse("<search>  </search>")
    with pytest.raises(StructureError):
        validate(Trajectory((Notice(origin="policy"),)))


def test_text_after_answer_ignored_with_warning(caplog):
    traj = parse("<answer>a</answer> trailing words")
    assert traj.answer == "a"
    assert "after </answer>" in caplog.text


def test_limits_enforced():
    three = "\n".join(f"<search>q{i}</search>\n<information>p</information>" for i in range(3))
    with pytest.raises(LimitError):
        parse(three)
    with pytest.raises(LimitError):
        parse("<search>q</search>\n<information>a\nb\nc\nd</information>")
    assert parse(three, max_searches=None).search_count == 3


def test_trajectory_accessors():
    traj = Trajectory((Think("a b c"), SearchCall(" q "), Information(("p",)), Notice(),
                       Think("d"), Answer(" ans ")))
    assert traj.terminal and traj.answer == "ans"
    assert traj.queries == ["q"] and traj.search_count == 1
    assert traj.reasoning_tokens() == 4
    assert len(traj + Trajectory((Think("x"),))) == 7


def test_loss_mask_weights():
    traj = Trajectory((Think("a b"), SearchCall("q"), Information(("p1 p2", "p3")), Notice(),
                       Answer("", origin=ENVIRONMENT)))
    mask = loss_mask(traj)
    assert len(mask.tokens) == len(mask.weights)
    assert mask.tokens[:4] == ("<think>", "a", "b", "</think>")
    assert mask.weights[:7] == (1,) * 7
    assert all(w == 0 for w in mask.weights[7:])
    assert mask.masked_count == len(mask) - 7


@settings(max_examples=200, deadline=None)
@given(trajectories())
def test_mask_zero_exactly_on_environment_segments(traj):
    mask = loss_mask(traj)
    pos = 0
    for seg in traj.segments:
        n = len(loss_mask(Trajectory((seg,))))
        want = 0 if seg.origin == ENVIRONMENT else 1
        assert set(mask.weights[pos:pos + n]) <= {want}
        pos += n
    assert pos == len(mask)
