from hypothesis import given, settings
from hypothesis import strategies as st

from econet.events import LexiconTagger, TriggerSpan, base_candidates, default_tagger, tag_triggers
from econet.synthetic import EVENTS
from econet.text import segment, split_documents, split_sentences, tokenize

from conftest import FIXTURES


def read_gold():
    for line in (FIXTURES / "triggers_gold.txt").read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        raw = line.split()
        gold = {i for i, t in enumerate(raw) if t.startswith("[") and t.endswith("]")}
        yield [t.strip("[]") for t in raw], gold


def test_fixture_has_fifty_sentences():
    assert len(list(read_gold())) == 50


def test_precision_on_hand_annotated_fixture():
    tp = fp = 0
    for toks, gold in read_gold():
        pred = {t.position for t in tag_triggers(toks)}
        tp += len(pred & gold)
        fp += len(pred - gold)
    assert tp / (tp + fp) >= 0.8


def test_transfer_example():
    toks = tokenize("Sotheby's has had to transfer the painting, following the sale.")
    surfaces = [t.surface for t in tag_triggers(toks)]
    assert "transfer" in surfaces
    assert "following" not in surfaces


def test_empty_input():
    assert tag_triggers([]) == []


def test_indicators_are_never_triggers():
    toks = ["they", "met", "before", "starting", "with", "the", "start"]
    tagger = LexiconTagger(verbs=["meet", "start", "before"])
    assert [t.position for t in tagger.tag_triggers(toks)] == [1, 6]


def test_inflections():
    t = default_tagger()
    for w in ("resumed", "arrests", "studies", "stopped", "running", "sold", "wrote", "moving"):
        assert t.is_event_word(w), w
    assert "stop" in base_candidates("stopped")
    assert "carry" in base_candidates("carried")
    assert not t.is_event_word("the") and not t.is_event_word(",")


def test_synthetic_events_are_triggers():
    t = default_tagger()
    assert all(t.is_event_word(e) for e in EVENTS)


def test_custom_word_list(tmp_path):
    path = tmp_path / "verbs.txt"
    path.write_text("# mine\nzorp\n", encoding="utf-8")
    tagger = LexiconTagger.from_file(path, include_default_nouns=False)
    assert tagger.tag_triggers(["they", "zorped", "the", "war"]) == [TriggerSpan(1, "zorped")]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["ran", "the", "before", "war", "attack", "x", "Soon", "after",
                                 "walked", ","]), max_size=15))
def test_positions_strictly_increasing_and_valid(toks):
    out = tag_triggers(toks)
    pos = [t.position for t in out]
    assert pos == sorted(set(pos))
    assert all(0 <= p < len(toks) and toks[p] == t.surface for p, t in zip(pos, out))


def test_tokenize_and_segment():
    assert tokenize("It ended, finally.") == ["It", "ended", ",", "finally", "."]
    assert tokenize("Sotheby's well-known sale") == ["Sotheby's", "well-known", "sale"]
    sents = segment('Mr. Smith left. "He ran." Then 3 people came. the end')
    assert sents[0] == ["Mr", ".", "Smith", "left", "."]
    assert sents[1] == ['"', "He", "ran", ".", '"']
    assert sents[2] == ["Then", "3", "people", "came", ".", "the", "end"]
    assert split_sentences([]) == []
    assert split_documents("a b.\n\n\n c d.\n") == ["a b.", "c d."]
