import pytest

from seedstab.data import (
    LEXICON_NAMES,
    LabeledInstance,
    PhraseDictionary,
    extract_name_polarity,
    gen_synthetic_corpus,
    load_lexicons,
    load_tsv,
    match_test_labels,
    normalize_phrase,
    parse_genre_lexicon,
    read_jsonl,
    score_to_label,
    write_jsonl,
)
from seedstab.errors import InputError, ParseError


def test_bundled_lexicons_load():
    lex = load_lexicons()
    assert set(lex) == set(LEXICON_NAMES)
    assert all(lex[name] for name in LEXICON_NAMES)
    assert lex["movie_industries"][0] == "Hollywood"
    assert len(lex["positive_phrases"]) == 10 and len(lex["negative_phrases"]) == 9


def test_genre_lexicon_parsing():
    g = parse_genre_lexicon(["horror:positive:scary", "horror:negative:dull"])
    assert g == {"horror": {1: ["scary"], 0: ["dull"]}}
    with pytest.raises(ParseError):
        parse_genre_lexicon(["horror:meh:scary"])


def test_labeled_instance_validation():
    with pytest.raises(InputError):
        LabeledInstance("a", "", 1)
    with pytest.raises(InputError):
        LabeledInstance("a", "ok", 2)


def test_jsonl_roundtrip(tmp_path):
    items = [LabeledInstance("1", "fine film", 1), LabeledInstance("2", "dull épisode", 0)]
    write_jsonl(tmp_path / "x.jsonl", items)
    assert read_jsonl(tmp_path / "x.jsonl") == items


def test_jsonl_parse_error_has_line(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"id": "1", "text": "a", "label": 1}\n{broken\n')
    with pytest.raises(ParseError) as exc:
        read_jsonl(p)
    assert exc.value.line == 2


def test_tsv_loading(tmp_path):
    p = tmp_path / "train.tsv"
    p.write_text("sentence\tlabel\na good movie \t1\nawful \t0\n")
    items = load_tsv(p)
    assert [(x.id, x.label) for x in items] == [("1", 1), ("2", 0)]


@pytest.mark.parametrize(
    "body, line",
    [("sentence\tlabel\nok\t3\n", 2), ("sentence\tlabel\nok\t1\nno tab here\n", 3), ("text\tlabel\n", 1)],
)
def test_tsv_errors_report_line(tmp_path, body, line):
    p = tmp_path / "bad.tsv"
    p.write_text(body)
    with pytest.raises(ParseError) as exc:
        load_tsv(p)
    assert exc.value.line == line


def test_score_thresholds():
    assert score_to_label(0.61) == 1
    assert score_to_label(0.6) is None
    assert score_to_label(0.41) is None
    assert score_to_label(0.4) == 0


def test_match_test_labels(tmp_path):
    (tmp_path / "dictionary.txt").write_text("A -LRB- great -RRB- film|10\nmeh|11\nbad|12\n")
    (tmp_path / "sentiment_labels.txt").write_text("phrase ids|sentiment values\n10|0.9\n11|0.5\n12|0.1\n")
    d = PhraseDictionary.load(tmp_path / "dictionary.txt", tmp_path / "sentiment_labels.txt")
    assert normalize_phrase("A  -LRB- great -RRB- film") == "a ( great ) film"
    res = match_test_labels([("0", "a ( great ) film"), ("1", "meh"), ("2", "bad"), ("3", "colour")], d)
    assert [(x.id, x.label) for x in res.labeled] == [("0", 1), ("2", 0)]
    assert [x["id"] for x in res.dropped] == ["1"]
    assert [x["id"] for x in res.unmatched] == ["3"]


def test_synthetic_corpus_is_deterministic_and_disjoint():
    a = gen_synthetic_corpus(3, 200, 50, 50)
    b = gen_synthetic_corpus(3, 200, 50, 50)
    assert a.train == b.train and a.test == b.test
    texts = [x.text for x in a.train + a.dev + a.test]
    assert len(set(texts)) == 300
    labels = [x.label for x in a.train]
    assert 0.35 < sum(labels) / len(labels) < 0.65
    assert gen_synthetic_corpus(4, 200, 50, 50).train != a.train


def test_synthetic_corpus_validates_sizes():
    with pytest.raises(InputError):
        gen_synthetic_corpus(0, 0, 1, 1)


def test_name_polarity_extraction():
    train = [
        LabeledInstance("1", "Anna was great", 1),
        LabeledInstance("2", "Anna shines", 1),
        LabeledInstance("3", "Ben was dull", 0),
        LabeledInstance("4", "Ben and Anna", 0),
        LabeledInstance("5", "Cara cara", 0),
        LabeledInstance("6", "Cara again", 0),
        LabeledInstance("7", "Dan once", 1),
    ]
    pos, neg, pol = extract_name_polarity(train, ["Anna", "Ben", "Cara", "Dan"], min_count=2)
    assert pos == [] and neg == ["Ben", "Cara"]
    by_name = {p.name: p for p in pol}
    assert by_name["Anna"].occurrence_count == 3
    assert by_name["Anna"].mean_label == pytest.approx(2 / 3)
    assert by_name["Cara"].occurrence_count == 2  # counted once per instance
    pos, neg, _ = extract_name_polarity(train, ["Anna", "Ben", "Cara", "Dan"], min_count=1, exclusions=["Cara"])
    assert pos == ["Dan"] and neg == ["Ben"]


def test_synthetic_corpus_plants_polarizing_names():
    c = gen_synthetic_corpus(0, 2000, 10, 10)
    pos, neg, _ = extract_name_polarity(c.train, c.lexicons["names"])
    assert pos and neg
    assert set(pos) <= set(c.name_groups["positive"]) | set(c.name_groups["shared"])
