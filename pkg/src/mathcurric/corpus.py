"""Loading, normalizing and annotating mathematical texts.

A record is one problem: a word-segmented statement and solution. Math
regions are delimited by standalone ``$`` words, and the solution is
annotated with sentence ranges and formula spans (half-open word indices).
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field

TERMINATORS = frozenset({"。", "！", "？", ".", "!", "?"})
DELIM = "$"

# Math-region tokenizer. ``**`` must be matched before single ``*``.
_MATH_TOKEN = re.compile(r"\*\*|\\+[A-Za-z]+|\d+(?:\.\d+)?|[A-Za-z]+|\S")
_OPERAND = re.compile(r"\\+[A-Za-z]+|\d+(?:\.\d+)?|[A-Za-z]+|[^\W\d_]+")
# Fallback math-symbol test for corpora without ``$`` delimiters.
_SYMBOL = re.compile(r"\\+[A-Za-z]+|[A-Za-z]|\d+(?:\.\d+)?|[=+\-*/^(){}<>×÷≤≥≠]+")


class CorpusError(ValueError):
    """Malformed corpus record or text."""


@dataclass(frozen=True)
class FormulaSpan:
    start: int
    end: int
    symbols: tuple[str, ...]

    def __post_init__(self):
        if self.end <= self.start:
            raise CorpusError(f"empty formula span [{self.start}, {self.end})")


@dataclass(frozen=True)
class MathText:
    id: str
    statement: tuple[str, ...]
    solution: tuple[str, ...]
    sentences: tuple[tuple[int, int], ...] = ()
    formulas: tuple[FormulaSpan, ...] = ()

    @classmethod
    def from_words(cls, id: str, statement, solution, sentences=None, formulas=None) -> "MathText":
        """Build a record, computing any missing annotation, and validate it."""
        statement = tuple(statement)
        solution = tuple(solution)
        if not statement or not solution:
            raise CorpusError(f"record {id!r}: statement and solution must be non-empty")
        if sentences is None:
            sentences = split_sentences(solution)
        if formulas is None:
            formulas = extract_formula_spans(solution)
        else:
            formulas = [
                f if isinstance(f, FormulaSpan) else FormulaSpan(f[0], f[1], solution[f[0]:f[1]])
                for f in formulas
            ]
        mt = cls(id, statement, solution, tuple(tuple(s) for s in sentences), tuple(formulas))
        mt.validate()
        return mt

    def validate(self) -> None:
        n = len(self.solution)
        pos = 0
        for start, end in self.sentences:
            if start != pos or end <= start:
                raise CorpusError(f"record {self.id!r}: sentence ranges must partition the solution")
            pos = end
        if pos != n:
            raise CorpusError(f"record {self.id!r}: sentence ranges do not cover the solution")
        prev_end = 0
        for f in self.formulas:
            if f.start < prev_end or f.end > n:
                raise CorpusError(f"record {self.id!r}: formula spans must be ordered, disjoint, in range")
            prev_end = f.end
            if not any(s <= f.start and f.end <= e for s, e in self.sentences):
                raise CorpusError(f"record {self.id!r}: formula [{f.start}, {f.end}) crosses a sentence boundary")
            if DELIM in self.solution[f.start:f.end]:
                raise CorpusError(f"record {self.id!r}: formula span contains a delimiter")

    def to_json(self) -> str:
        rec = {
            "id": self.id,
            "statement": " ".join(self.statement),
            "solution": " ".join(self.solution),
            "sentences": [list(s) for s in self.sentences],
            "formulas": [[f.start, f.end] for f in self.formulas],
        }
        return json.dumps(rec, ensure_ascii=False)


@dataclass(frozen=True)
class CorpusFile:
    path: str | None
    records: tuple[MathText, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i) -> MathText:
        return self.records[i]


def load_corpus(path) -> CorpusFile:
    """Read a JSON-Lines corpus. Blank lines are skipped."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: record must be a JSON object")
            for key in ("id", "statement", "solution"):
                if not isinstance(obj.get(key), str):
                    raise CorpusError(f"{path}:{lineno}: missing or non-string field {key!r}")
            if obj["id"] in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            try:
                mt = MathText.from_words(
                    obj["id"],
                    obj["statement"].split(),
                    obj["solution"].split(),
                    sentences=obj.get("sentences"),
                    formulas=obj.get("formulas"),
                )
            except (CorpusError, TypeError, IndexError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            records.append(mt)
    return CorpusFile(str(path), tuple(records))


def write_corpus(corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for mt in corpus:
            fh.write(mt.to_json() + "\n")


def _math_regions(words, strict: bool = True) -> list[tuple[int, int]]:
    """Index ranges strictly between paired ``$`` words.

    Non-strict mode treats a dangling ``$`` as opening a region to the end.
    """
    regions = []
    open_at = None
    for i, w in enumerate(words):
        if w == DELIM:
            if open_at is None:
                open_at = i
            else:
                regions.append((open_at + 1, i))
                open_at = None
    if open_at is not None:
        if strict:
            raise CorpusError(f"unbalanced '$' delimiter at word {open_at}")
        regions.append((open_at + 1, len(words)))
    return regions


def math_mask(words, strict: bool = True) -> list[bool]:
    """Per-word flag: True for words inside a ``$...$`` region (delimiters excluded)."""
    flags = [False] * len(words)
    for start, end in _math_regions(words, strict):
        for i in range(start, end):
            flags[i] = True
    return flags


def split_sentences(solution) -> list[tuple[int, int]]:
    """Partition words into sentences ending at terminators outside math regions."""
    words = list(solution)
    if not words:
        raise CorpusError("cannot split an empty word sequence")
    ranges = []
    start = 0
    in_math = False
    for i, w in enumerate(words):
        if w == DELIM:
            in_math = not in_math
        elif not in_math and w in TERMINATORS:
            ranges.append((start, i + 1))
            start = i + 1
    if start < len(words):
        ranges.append((start, len(words)))
    return ranges


def extract_formula_spans(words, delimited: bool = True) -> list[FormulaSpan]:
    """One span per ``$...$`` region, delimiters excluded; empty regions are skipped.

    With ``delimited=False`` maximal runs of math-looking symbols are used instead,
    for corpora that carry no delimiters.
    """
    words = list(words)
    if delimited:
        regions = _math_regions(words)
    else:
        regions = []
        start = None
        for i, w in enumerate(words + [""]):
            is_sym = bool(w) and w not in TERMINATORS and _SYMBOL.fullmatch(w) is not None
            if is_sym and start is None:
                start = i
            elif not is_sym and start is not None:
                regions.append((start, i))
                start = None
    return [FormulaSpan(s, e, tuple(words[s:e])) for s, e in regions if e > s]


def _normalize_math(body: str) -> list[str]:
    toks = ["^" if t == "**" else t for t in _MATH_TOKEN.findall(body)]
    out = []
    i = 0
    while i < len(toks):
        t = toks[i]
        out.append(t)
        nxt = toks[i + 1] if i + 1 < len(toks) else None
        if t == "^" and nxt is not None and _OPERAND.fullmatch(nxt):
            out.extend(["{", nxt, "}"])
            i += 2
            continue
        i += 1
    return out


def normalize_math_text(raw: str) -> str:
    """Canonicalize extracted math text.

    Whitespace runs collapse to one space, non-printing characters are dropped,
    ``**`` becomes ``^``, bare exponents are braced (``x^y`` -> ``x ^ { y }``) and
    every symbol inside a ``$...$`` region becomes its own token.
    """
    chars = []
    for ch in raw:
        if ch.isspace():
            chars.append(" ")
        elif ch.isprintable():
            chars.append(ch)
    text = "".join(chars)
    # offsets reported against the raw input
    raw_offsets = [i for i, ch in enumerate(raw) if ch.isspace() or ch.isprintable()]
    dollars = [i for i, ch in enumerate(text) if ch == DELIM]
    if len(dollars) % 2:
        raise CorpusError(f"unbalanced '$' delimiter at offset {raw_offsets[dollars[-1]]}")

    pieces = []
    prev = 0
    for a, b in zip(dollars[::2], dollars[1::2]):
        pieces.extend(text[prev:a].split())
        pieces.append(DELIM)
        pieces.extend(_normalize_math(text[a + 1:b]))
        pieces.append(DELIM)
        prev = b + 1
    pieces.extend(text[prev:].split())
    return " ".join(pieces)


# -- synthetic corpus -------------------------------------------------------

_NAMES = ["tom", "lucy", "mike", "anna", "jack", "mary", "li", "wang"]
_ITEMS = ["apples", "pens", "books", "cards", "stamps", "eggs"]


def _linear(rng: random.Random):
    a, x, b = rng.randint(2, 9), rng.randint(1, 12), rng.randint(1, 20)
    c = a * x + b
    statement = f"solve the equation $ {a} x + {b} = {c} $ for x ."
    solution = (
        f"subtract {b} from both sides to get $ {a} x = {c - b} $ . "
        f"divide both sides by {a} to get $ x = {x} $ . "
        f"so the answer is $ {x} $ ."
    )
    return statement, solution


def _purchase(rng: random.Random):
    name, item = rng.choice(_NAMES), rng.choice(_ITEMS)
    a, b = rng.randint(2, 30), rng.randint(2, 30)
    statement = f"{name} has {a} {item} and buys {b} more {item} . how many {item} does {name} have now ?"
    solution = (
        f"the total number of {item} is $ {a} + {b} $ . "
        f"compute $ {a} + {b} = {a + b} $ . "
        f"so the answer is $ {a + b} $ ."
    )
    return statement, solution


def _rectangle(rng: random.Random):
    length, width = rng.randint(2, 15), rng.randint(2, 15)
    statement = f"a rectangle has length {length} and width {width} . find its area ."
    solution = (
        f"the area formula is $ S = l \\times w $ . "
        f"substitute to get $ S = {length} \\times {width} = {length * width} $ . "
        f"so the answer is $ {length * width} $ ."
    )
    return statement, solution


def _power(rng: random.Random):
    a, b = rng.randint(2, 9), rng.randint(1, 30)
    sq = a * a
    statement = f"compute the value of $ {a} ^ {{ 2 }} + {b} $ ."
    solution = (
        f"first square the base : $ {a} ^ {{ 2 }} = {sq} $ . "
        f"then add : $ {sq} + {b} = {sq + b} $ . "
        f"so the answer is $ {sq + b} $ ."
    )
    return statement, solution


def _difference(rng: random.Random):
    name, item = rng.choice(_NAMES), rng.choice(_ITEMS)
    b = rng.randint(2, 20)
    a = b + rng.randint(1, 25)
    statement = f"{name} had {a} {item} and gave away {b} {item} . how many {item} are left ?"
    solution = (
        f"the remaining number is $ {a} - {b} $ . "
        f"compute $ {a} - {b} = {a - b} $ . "
        f"so the answer is $ {a - b} $ ."
    )
    return statement, solution


_TEMPLATES = (_linear, _purchase, _rectangle, _power, _difference)


def generate_synthetic_corpus(count: int, seed: int) -> CorpusFile:
    """Templated arithmetic and linear-equation problems with step-by-step solutions."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(seed)
    records = []
    for i in range(count):
        statement, solution = rng.choice(_TEMPLATES)(rng)
        records.append(MathText.from_words(f"syn-{seed}-{i:05d}", statement.split(), solution.split()))
    return CorpusFile(None, tuple(records))
