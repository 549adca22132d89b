import pytest
from hypothesis import given, settings, strategies as st

from sipsim.domain import DoNothing, Like, Post, Reply, Retweet
from sipsim.errors import (
    Ambiguous,
    DuplicateTag,
    MissingArgument,
    MissingTag,
    MultipleOptionMarkers,
    NoOptionMarker,
    NoRating,
    OutOfRange,
    ParseError,
    TrailingGarbage,
    UnexpectedArgument,
    UnknownFunction,
    UnterminatedString,
)
from sipsim.parser import (
    Dialect,
    parse_action_call,
    parse_action_selection,
    parse_likert,
    parse_micro_reply,
    parse_sip_analysis,
    render_action,
)

from conftest import SIP_TEXT

text = st.text(min_size=1, max_size=40)
actions = st.one_of(
    st.just(DoNothing()),
    st.builds(Post, text),
    st.builds(Reply, text, text, text),
    st.builds(Retweet, text, text, text, text),
    st.builds(Like, text),
)


# --- SIP analysis -----------------------------------------------------------

def test_sip_analysis_five_tags():
    raw = (
        "[Cue] Need context.\n[Interpret] Heated debate.\n[Goal] Build consensus.\n"
        "[Retrieve] Calm reply fits.\n[Evaluate] Yes, constructive."
    )
    a = parse_sip_analysis(raw)
    assert (a.cue, a.interpret, a.goal, a.retrieve, a.evaluate) == (
        "Need context.", "Heated debate.", "Build consensus.", "Calm reply fits.", "Yes, constructive."
    )
    assert a.warnings == ()


def test_sip_analysis_missing_goal():
    raw = "\n".join(line for line in SIP_TEXT.splitlines() if not line.startswith("[Goal]"))
    with pytest.raises(MissingTag) as err:
        parse_sip_analysis(raw)
    assert err.value.tag == "Goal"


def test_sip_analysis_duplicate_tag():
    with pytest.raises(DuplicateTag):
        parse_sip_analysis(SIP_TEXT + "\n[Cue] again")


def test_sip_analysis_tolerates_chatter_and_markup():
    raw = "Sure! Here you go:\n- **[Cue]** feed is busy\n" + "\n".join(SIP_TEXT.splitlines()[1:])
    a = parse_sip_analysis(raw)
    assert a.cue == "feed is busy"
    assert any("untagged" in w for w in a.warnings)


def test_sip_analysis_long_sentence_warns():
    raw = SIP_TEXT.replace("Share my view politely.", " ".join(["word"] * 16))
    assert any("15 words" in w for w in parse_sip_analysis(raw).warnings)


def test_micro_dialect_mapping():
    raw = (
        "[Info] Do I know enough?\n[Interpret] They mock me.\n[Goal] Stay calm.\n"
        "[Plan] Reply briefly.\n[Check] That works.\n"
        '[Action] reply(content="fair point", author="zzz", original_tweet_id="9")'
    )
    a = parse_sip_analysis(raw, Dialect.MICRO)
    assert (a.cue, a.retrieve, a.evaluate) == ("Do I know enough?", "Reply briefly.", "That works.")
    analysis, action = parse_micro_reply(raw)
    assert analysis == a and action == Reply("fair point", "zzz", "9")


@settings(max_examples=50, deadline=None)
@given(st.permutations(SIP_TEXT.splitlines()))
def test_sip_analysis_order_insensitive(lines):
    assert parse_sip_analysis("\n".join(lines)) == parse_sip_analysis(SIP_TEXT)


# --- function calls ---------------------------------------------------------

def test_appendix_calls():
    assert parse_action_call('post(content="Stop this farce!")') == Post("Stop this farce!")
    assert parse_action_call(
        'retweet(content="I agree with you", author="zzz", original_tweet_id="0", original_tweet="kkk")'
    ) == Retweet("I agree with you", "zzz", "0", "kkk")
    assert parse_action_call("do_nothing()") == DoNothing()
    assert parse_action_call('reply(content="yyy", author="zzz", original_tweet_id="0")') == Reply("yyy", "zzz", "0")


def test_embedded_quotes():
    raw = r'reply(content="a \"quoted\" word", author="b", original_tweet_id="7")'
    assert parse_action_call(raw) == Reply('a "quoted" word', "b", "7")


def test_render_canonical():
    assert render_action(DoNothing()) == "do_nothing()"
    assert render_action(Reply("hi", "x", "3")) == 'reply(content="hi", author="x", original_tweet_id="3")'


def test_whitespace_and_newlines_allowed():
    assert parse_action_call(' post ( content = "line1\nline2" ) ') == Post("line1\nline2")


@pytest.mark.parametrize(
    "raw,error",
    [
        ('shout(content="x")', UnknownFunction),
        ("reply(content=\"x\", author=\"y\")", MissingArgument),
        ('post(content="x", mood="y")', UnexpectedArgument),
        ('post(content="x", content="y")', UnexpectedArgument),
        ('post(content="x)', UnterminatedString),
        ('post(content="x") and more', TrailingGarbage),
        ('post(content="")', ParseError),
        ("post(content=x)", ParseError),
        ("", ParseError),
    ],
)
def test_call_errors(raw, error):
    with pytest.raises(error):
        parse_action_call(raw)


@settings(max_examples=1000, deadline=None)
@given(actions)
def test_round_trip(action):
    assert parse_action_call(render_action(action)) == action


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=80))
def test_parsing_is_total(raw):
    for fn in (parse_action_call, parse_action_selection, parse_likert, parse_sip_analysis):
        try:
            fn(raw)
        except ParseError:
            pass


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=60))
def test_parsing_is_total_on_bytes(data):
    raw = data.decode("utf-8", errors="replace")
    try:
        parse_action_selection(raw)
    except ParseError:
        pass


# --- option blocks ----------------------------------------------------------

def test_option_do_nothing():
    sel = parse_action_selection("[OPTION 1] Thought: nothing attracts my attention. Action: do_nothing()")
    assert sel.option_number == 1 and sel.action == DoNothing()
    assert sel.thought == "nothing attracts my attention."
    assert "thought references no stage tag" in sel.warnings


def test_option_reply():
    raw = '[OPTION 4] Thought: polite correction per [Goal]. Action: reply(content="yyy", author="zzz", original_tweet_id="0")'
    sel = parse_action_selection(raw)
    assert sel.option_number == 4 and sel.action == Reply("yyy", "zzz", "0")
    assert sel.warnings == ()


def test_option_markers():
    with pytest.raises(MultipleOptionMarkers):
        parse_action_selection("[OPTION 2] Thought: a. Action: do_nothing()\n[OPTION 4] Thought: b. Action: do_nothing()")
    with pytest.raises(NoOptionMarker):
        parse_action_selection("Thought: a. Action: do_nothing()")
    with pytest.raises(ParseError):
        parse_action_selection("[OPTION 7] Thought: a. Action: do_nothing()")


def test_option_content_mentioning_action():
    raw = '[OPTION 2] Thought: [Goal] be heard → Action: post(content="Action: now!")'
    assert parse_action_selection(raw).action == Post("Action: now!")


def test_option_backticks():
    raw = "[OPTION 3] Thought: [Cue] quiet.\nAction: `do_nothing()`"
    assert parse_action_selection(raw).action == DoNothing()


# --- Likert -----------------------------------------------------------------

# hand-labelled responses: (text, expected rating or error type)
LIKERT_FIXTURE = [
    ("3", 3),
    ("My answer is 5 (Very much)", 5),
    ("definitely, 5 (Very much)", 5),
    ("  2\n", 2),
    ("Rating: 4", 4),
    ("I'd say 1 - not at all.", 1),
    ("5 (Very much) ... 5", 5),
    ("**4**", 4),
    ("Answer: 3/5", Ambiguous),
    ("0", OutOfRange),
    ("6", OutOfRange),
    ("-1", OutOfRange),
    ("maybe", NoRating),
    ("", NoRating),
    ("somewhere between 2 and 3", Ambiguous),
    ("3.5", Ambiguous),
    ("4.", 4),
    ("I pick option 2.", 2),
    ("10", OutOfRange),
    ("five", NoRating),
]


@pytest.mark.parametrize("raw,expected", LIKERT_FIXTURE)
def test_likert_fixture(raw, expected):
    if isinstance(expected, int):
        assert parse_likert(raw) == expected
    else:
        with pytest.raises(expected):
            parse_likert(raw)


def test_likert_fixture_size():
    assert len(LIKERT_FIXTURE) == 20


def test_out_of_range_carries_value():
    with pytest.raises(OutOfRange) as err:
        parse_likert("0")
    assert err.value.value == 0
