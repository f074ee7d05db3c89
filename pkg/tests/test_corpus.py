import json

import pytest

from mathcurric.corpus import (
    CorpusError,
    MathText,
    extract_formula_spans,
    generate_synthetic_corpus,
    load_corpus,
    normalize_math_text,
    split_sentences,
    write_corpus,
)


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def _record(i, solution="so $ x = 1 $ ."):
    return json.dumps({"id": f"r{i}", "statement": "find x .", "solution": solution})


def test_load_three_records(tmp_path):
    path = _write_lines(tmp_path / "c.jsonl", [_record(i) for i in range(3)])
    corpus = load_corpus(path)
    assert len(corpus) == 3
    assert [mt.id for mt in corpus] == ["r0", "r1", "r2"]
    assert corpus[0].formulas[0].symbols == ("x", "=", "1")


def test_empty_file_is_empty_corpus(tmp_path):
    path = _write_lines(tmp_path / "c.jsonl", [])
    assert len(load_corpus(path)) == 0


def test_missing_solution_names_line(tmp_path):
    bad = json.dumps({"id": "x", "statement": "a"})
    path = _write_lines(tmp_path / "c.jsonl", [_record(0), bad])
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(path)


def test_duplicate_id_rejected(tmp_path):
    path = _write_lines(tmp_path / "c.jsonl", [_record(0), _record(0)])
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(path)


def test_stored_annotations_are_validated(tmp_path):
    rec = json.loads(_record(0))
    rec["sentences"] = [[0, 2]]
    path = _write_lines(tmp_path / "c.jsonl", [json.dumps(rec)])
    with pytest.raises(CorpusError):
        load_corpus(path)


def test_normalize_power_forms():
    assert normalize_math_text("$x**y$") == "$ x ^ { y } $"
    assert normalize_math_text("$x^y$") == "$ x ^ { y } $"


def test_normalize_collapses_whitespace_and_drops_control_chars():
    assert normalize_math_text("a  b") == "a b"
    assert normalize_math_text("a​\tb\n") == "a b"


def test_normalize_splits_operators():
    assert normalize_math_text("so $2x+1=3$ ok") == "so $ 2 x + 1 = 3 $ ok"


def test_normalize_canonical_fixed_point():
    text = "so $ x ^ { 2 } + 1 = 5 $ ."
    assert normalize_math_text(text) == text


def test_normalize_unbalanced_reports_offset():
    with pytest.raises(CorpusError, match="offset 4"):
        normalize_math_text("ab  $x")


def test_split_two_sentences():
    assert split_sentences("A . B .".split()) == [(0, 2), (2, 4)]


def test_split_without_terminator():
    assert split_sentences("a b c".split()) == [(0, 3)]


def test_split_ignores_terminators_in_formulas():
    assert split_sentences("$ x . 5 $ done .".split()) == [(0, 7)]


def test_split_chinese_terminators():
    assert split_sentences("解 得 。 答 ！".split()) == [(0, 3), (3, 5)]


def test_formula_spans():
    (span,) = extract_formula_spans("solve $ x + 1 $ now".split())
    assert (span.start, span.end, span.symbols) == (2, 5, ("x", "+", "1"))
    assert extract_formula_spans("no math here".split()) == []
    a, b = extract_formula_spans("$ a $ and $ b $".split())
    assert (a.symbols, b.symbols) == (("a",), ("b",))


def test_formula_spans_unbalanced():
    with pytest.raises(CorpusError):
        extract_formula_spans("$ a".split())


def test_formula_spans_undelimited_fallback():
    spans = extract_formula_spans("so x + 1 = 2 then".split(), delimited=False)
    assert [(s.start, s.end) for s in spans] == [(1, 6)]


def test_formula_crossing_sentence_rejected():
    with pytest.raises(CorpusError):
        MathText.from_words("x", ["q"], "a . b".split(), sentences=[(0, 2), (2, 3)], formulas=[(1, 3)])


def test_synthetic_deterministic_and_seed_sensitive():
    a = generate_synthetic_corpus(10, 7)
    b = generate_synthetic_corpus(10, 7)
    c = generate_synthetic_corpus(10, 8)
    assert [mt.to_json() for mt in a] == [mt.to_json() for mt in b]
    assert any(x.solution != y.solution for x, y in zip(a, c))


def test_synthetic_records_are_structured():
    for mt in generate_synthetic_corpus(40, 1):
        mt.validate()
        assert len(mt.sentences) >= 2
        assert len(mt.formulas) >= 2


def test_synthetic_round_trip_is_byte_identical(tmp_path):
    corpus = generate_synthetic_corpus(25, 4)
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    write_corpus(corpus, first)
    write_corpus(load_corpus(first), second)
    assert first.read_bytes() == second.read_bytes()
    assert list(load_corpus(first)) == list(corpus)
