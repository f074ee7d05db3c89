"""Curriculum pre-training of a shared-encoder / dual-decoder transformer on math text."""

from mathcurric.corpus import CorpusFile, FormulaSpan, MathText, load_corpus
from mathcurric.tokenizer import Vocab, TokenSequence, build_vocab

__version__ = "0.1.0"

__all__ = [
    "CorpusFile",
    "FormulaSpan",
    "MathText",
    "TokenSequence",
    "Vocab",
    "build_vocab",
    "load_corpus",
]
