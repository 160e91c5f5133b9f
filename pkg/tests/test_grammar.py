import pytest
from hypothesis import given, strategies as st

from hearthmesh.grammar import (Intent, Utterance, Vocabulary, VocabularyError, match_phrases, normalize,
                                parse_utterance)

DOC = {
    "wake_words": ["hey hearth"],
    "actions": {"turn on": "turn-on", "turn off": "turn-off", "start washing": {"action": "start-wash",
                                                                                 "class": "washer"}},
    "device_classes": {"light": "light", "lamp": "light", "washer": "washer"},
    "rooms": {"bedroom": "bedroom", "living room": "living-room"},
}


@pytest.fixture
def vocab():
    return Vocabulary.from_dict("home", DOC)


def test_normalize_folds_case_and_punctuation():
    assert normalize("Hey, Hearth!  Turn-ON the light.") == ("hey", "hearth", "turn", "on", "the", "light")


def test_parse_wake_plus_command(vocab):
    r = parse_utterance(vocab, "Hey hearth, turn on the light.")
    assert r.kind == "intent" and r.woke
    assert r.intent == Intent("turn-on", "light", None)


def test_room_before_class(vocab):
    r = parse_utterance(vocab, "turn off the bedroom light")
    assert (r.intent.action, r.intent.device_class, r.intent.room) == ("turn-off", "light", "bedroom")
    assert not r.woke


def test_action_implies_class(vocab):
    assert parse_utterance(vocab, "start washing").intent.device_class == "washer"


def test_multiword_room_and_filler(vocab):
    r = parse_utterance(vocab, "please turn on the lamp in the living room now")
    assert r.intent.room == "living-room" and r.intent.device_class == "light"


def test_bare_wake_and_unrecognized(vocab):
    assert parse_utterance(vocab, "hey hearth").kind == "wake"
    assert parse_utterance(vocab, "make me a sandwich").kind == "unrecognized"


def test_longest_match_first():
    v = Vocabulary.from_dict("v", {"actions": {"turn": "spin", "turn on": "turn-on"}})
    assert [p for _, p, _ in match_phrases(v, "turn on")] == ["turn on"]


def test_phrase_collision_rejected():
    with pytest.raises(VocabularyError):
        Vocabulary.from_dict("v", {"actions": {"light": "turn-on"}, "device_classes": {"light": "light"}})


def test_unknown_vocabulary_key():
    with pytest.raises(VocabularyError):
        Vocabulary.from_dict("v", {"verbs": {}})


def test_round_trip(vocab):
    assert Vocabulary.from_dict("home", vocab.to_dict()) == vocab
    assert vocab.size == 1 + 3 + 3 + 2
    assert vocab.command_word_count == 3


def test_utterance_validation():
    with pytest.raises(ValueError):
        Utterance("u", "  ...  ")
    with pytest.raises(ValueError):
        Utterance("u", "hi", intensity=0)


@given(st.text(max_size=60))
def test_parse_never_raises_and_is_stable(text):
    v = Vocabulary.from_dict("home", DOC)
    if not normalize(text):
        return
    a, b = parse_utterance(v, text), parse_utterance(v, text)
    assert a == b
    assert a.kind in ("wake", "intent", "unrecognized")


@given(st.lists(st.sampled_from(["uh", "the", "please", "now", "um"]), max_size=4))
def test_filler_words_do_not_change_intent(fillers):
    v = Vocabulary.from_dict("home", DOC)
    base = parse_utterance(v, "turn off the bedroom light").intent
    text = " ".join(["turn off", *fillers, "bedroom", *fillers, "light"])
    assert parse_utterance(v, text).intent == base
