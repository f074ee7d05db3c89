import pytest

from mathcurric.corpus import MathText
from mathcurric.tokenizer import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    SPECIALS,
    UNK_ID,
    Vocab,
    build_vocab,
    decode,
    encode,
    join_segments,
    word_spans,
)


def _corpus(*texts):
    return [MathText.from_words(str(i), t.split(), t.split()) for i, t in enumerate(texts)]


def test_vocab_counts_reserved_plus_words():
    vocab = build_vocab(_corpus("a b c"), max_size=100)
    assert len(vocab) == 8
    assert vocab.tokens[:5] == SPECIALS


def test_vocab_frequency_then_lexicographic():
    vocab = build_vocab(_corpus("b a c c"))
    assert vocab.tokens[5:] == ("c", "a", "b")


def test_vocab_cap_and_determinism(corpus):
    assert build_vocab(corpus) == build_vocab(corpus)
    assert len(build_vocab(corpus, max_size=10)) == 10


def test_vocab_rejects_duplicates_and_missing_specials():
    with pytest.raises(ValueError):
        Vocab(SPECIALS + ("a", "a"))
    with pytest.raises(ValueError):
        Vocab(("a",) + SPECIALS)


def test_vocab_file_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    assert path.read_text(encoding="utf-8").splitlines()[1] == "[CLS]"
    assert Vocab.load(path) == vocab


def test_encode_known_words():
    vocab = build_vocab(_corpus("x y z"))
    ts = encode("x y z".split(), vocab)
    assert len(ts.ids) == 3
    assert word_spans(ts) == [(0, 1), (1, 2), (2, 3)]


def test_encode_unknown_word():
    vocab = build_vocab(_corpus("x y"))
    assert encode(["x", "w"], vocab).ids[1] == UNK_ID


def test_encode_math_flags():
    vocab = build_vocab(_corpus("a $ x $ b"))
    assert encode("a $ x $ b".split(), vocab).is_math == (False, False, True, False, False)


def test_round_trip(vocab, corpus):
    for mt in corpus:
        assert decode(encode(mt.solution, vocab), vocab) == list(mt.solution)


def test_decode_pads_and_bounds(vocab):
    assert decode([PAD_ID] * 4, vocab) == []
    with pytest.raises(ValueError):
        decode([len(vocab)], vocab)


def test_join_segments_layout(vocab):
    ts = join_segments(encode(["x"], vocab), encode(["y", "z"], vocab))
    assert ts.ids[0] == CLS_ID and ts.ids[2] == SEP_ID and ts.ids[-1] == SEP_ID
    assert len(ts) == 6
    assert all(e - s == 1 for s, e in ts.word_spans)
