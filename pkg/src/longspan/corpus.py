"""Text corpus construction: normalization, paragraph segmentation, vocabularies.

Raw sentence text is normalized, grouped into paragraphs of roughly a
target character count (splitting only at sentence boundaries), and
encoded against a fixed vocabulary in which id 0 is ``<unk>`` and id 1
is the sentence-boundary symbol ``<s>``.  Splitting a paragraph corpus
back into sentences without deduplication preserves the word count
exactly, which keeps sentence-level and paragraph-level training sets
comparable.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

UNK_TOKEN = "<unk>"
BOUNDARY_TOKEN = "<s>"

_SENTENCE_SPLIT_RE = re.compile(r"[.!?;]+")
# Keep letters, digits and in-word apostrophes; everything else separates words.
_NON_WORD_RE = re.compile(r"[^a-z0-9']+")


class CorpusError(ValueError):
    """Invalid corpus data or corpus-operation arguments."""


@dataclass(frozen=True, init=False)
class Sentence:
    """A normalized sentence: tokens plus its character length.

    ``char_len`` counts the characters of the words plus one space
    between consecutive words.
    """

    words: tuple[str, ...]
    char_len: int = field(compare=False)

    def __init__(self, words):
        words = tuple(words)
        if not words:
            raise CorpusError("sentence must contain at least one word")
        if any(w == BOUNDARY_TOKEN for w in words):
            raise CorpusError(f"sentence may not contain {BOUNDARY_TOKEN!r}")
        object.__setattr__(self, "words", words)
        object.__setattr__(
            self, "char_len", sum(len(w) for w in words) + len(words) - 1
        )


@dataclass(frozen=True, init=False)
class Paragraph:
    """Consecutive sentences treated as one unit.

    ``char_len`` is the sum of the sentence lengths plus one separator
    character between consecutive sentences.
    """

    sentences: tuple[Sentence, ...]
    char_len: int = field(compare=False)

    def __init__(self, sentences):
        sentences = tuple(sentences)
        if not sentences:
            raise CorpusError("paragraph must contain at least one sentence")
        object.__setattr__(self, "sentences", sentences)
        object.__setattr__(
            self,
            "char_len",
            sum(s.char_len for s in sentences) + len(sentences) - 1,
        )

    def tokens(self) -> list[str]:
        """Flatten to token strings with a single boundary symbol between sentences."""
        out: list[str] = []
        for i, sent in enumerate(self.sentences):
            if i > 0:
                out.append(BOUNDARY_TOKEN)
            out.extend(sent.words)
        return out


@dataclass
class SegmentedCorpus:
    """A corpus of token sequences at sentence or paragraph level.

    Paragraph items carry interior ``<s>`` separators; sentence items
    contain none.  ``word_count`` counts non-boundary tokens only.
    """

    level: str
    items: list[list[str]]

    def __post_init__(self):
        if self.level not in ("sentence", "paragraph"):
            raise CorpusError(f"unknown corpus level {self.level!r}")

    @property
    def word_count(self) -> int:
        return sum(
            sum(1 for tok in item if tok != BOUNDARY_TOKEN) for item in self.items
        )

    def __len__(self) -> int:
        return len(self.items)


class Vocabulary:
    """Bijective token/id map with reserved ``<unk>`` (0) and ``<s>`` (1).

    Unknown tokens encode to ``unk_id``; decoding rejects ids outside
    the table.
    """

    unk_id = 0
    boundary_id = 1

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:2] != [UNK_TOKEN, BOUNDARY_TOKEN]:
            raise CorpusError(
                f"vocabulary must start with {UNK_TOKEN!r}, {BOUNDARY_TOKEN!r}"
            )
        if len(set(tokens)) != len(tokens):
            raise CorpusError("vocabulary tokens must be distinct")
        self.tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise CorpusError(f"token id {token_id} out of range (vocab size {len(self)})")
        return self.tokens[token_id]


def normalize_text(raw_lines) -> list[Sentence]:
    """Normalize raw text lines into sentences.

    Lowercases, splits into sentences on terminal punctuation, strips
    all punctuation except apostrophes and collapses whitespace.  Empty
    results are dropped, so degenerate input yields an empty list.
    """
    sentences: list[Sentence] = []
    for line in raw_lines:
        for chunk in _SENTENCE_SPLIT_RE.split(line.lower()):
            words = [w.strip("'") for w in _NON_WORD_RE.split(chunk)]
            words = [w for w in words if w]
            if words:
                sentences.append(Sentence(words))
    return sentences


def segment_paragraphs(sentences, target_chars: int = 2000) -> list[Paragraph]:
    """Group consecutive sentences into paragraphs of about ``target_chars``.

    A paragraph closes after sentence ``k`` when its cumulative
    character count is at least as close to the target as it would be
    after also including sentence ``k+1``; sentences are never split.
    The output partitions the input in order.
    """
    sentences = list(sentences)
    if not sentences:
        raise CorpusError("cannot segment an empty sentence list")
    if target_chars < 1:
        raise CorpusError("target_chars must be >= 1")

    paragraphs: list[Paragraph] = []
    current: list[Sentence] = []
    cum = 0
    for i, sent in enumerate(sentences):
        cum += sent.char_len if not current else 1 + sent.char_len
        current.append(sent)
        if i + 1 < len(sentences):
            lookahead = cum + 1 + sentences[i + 1].char_len
            close = abs(cum - target_chars) <= abs(lookahead - target_chars)
        else:
            close = True
        if close:
            paragraphs.append(Paragraph(current))
            current = []
            cum = 0
    return paragraphs


def paragraphs_to_corpus(paragraphs) -> SegmentedCorpus:
    """Flatten paragraphs into a paragraph-level corpus (one item per paragraph)."""
    return SegmentedCorpus("paragraph", [p.tokens() for p in paragraphs])


def paragraphs_to_sentences(paragraphs, dedupe: bool) -> SegmentedCorpus:
    """Split a paragraph corpus at sentence boundaries.

    With ``dedupe=False`` every sentence occurrence is kept, so the
    word count matches the paragraph corpus exactly.  With
    ``dedupe=True`` each distinct sentence is kept once, in first
    occurrence order.
    """
    items: list[list[str]] = []
    seen: set[tuple[str, ...]] = set()
    for para in paragraphs:
        for sent in para.sentences:
            if dedupe:
                key = sent.words
                if key in seen:
                    continue
                seen.add(key)
            items.append(list(sent.words))
    return SegmentedCorpus("sentence", items)


def split_corpus_items(corpus: SegmentedCorpus, dedupe: bool) -> SegmentedCorpus:
    """Like :func:`paragraphs_to_sentences` but over an already-flattened corpus."""
    items: list[list[str]] = []
    seen: set[tuple[str, ...]] = set()
    for item in corpus.items:
        sent: list[str] = []
        for tok in item + [BOUNDARY_TOKEN]:
            if tok == BOUNDARY_TOKEN:
                if sent:
                    key = tuple(sent)
                    if not dedupe or key not in seen:
                        seen.add(key)
                        items.append(sent)
                sent = []
            else:
                sent.append(tok)
    return SegmentedCorpus("sentence", items)


def build_vocab(corpus: SegmentedCorpus, max_size: int) -> Vocabulary:
    """Build a frequency-ranked vocabulary capped at ``max_size`` entries.

    Ids 0 and 1 are reserved for ``<unk>`` and ``<s>``; the remaining
    slots are filled by descending token frequency with lexicographic
    tie-breaking for determinism.
    """
    if max_size < 3:
        raise CorpusError("max_size must be >= 3 (two ids are reserved)")
    counts = Counter(
        tok for item in corpus.items for tok in item if tok != BOUNDARY_TOKEN
    )
    counts.pop(UNK_TOKEN, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = [UNK_TOKEN, BOUNDARY_TOKEN] + [tok for tok, _ in ranked[: max_size - 2]]
    return Vocabulary(tokens)


def encode(vocab: Vocabulary, item) -> list[int]:
    """Encode a sentence, paragraph or token sequence to ids.

    Every encoded sequence starts with the boundary id; sentences
    inside a paragraph are separated by a single boundary id and there
    is no trailing boundary.  Out-of-vocabulary tokens map to
    ``unk_id``.
    """
    if isinstance(item, Sentence):
        tokens = list(item.words)
    elif isinstance(item, Paragraph):
        tokens = item.tokens()
    else:
        tokens = list(item)
    return [vocab.boundary_id] + [vocab.id_of(tok) for tok in tokens]


def decode(vocab: Vocabulary, ids) -> list[str]:
    """Map ids back to token strings, rejecting out-of-range ids."""
    return [vocab.token_of(i) for i in ids]


def length_histogram(corpus: SegmentedCorpus, bin_width: int) -> list[tuple[int, int]]:
    """Histogram of item lengths in (non-boundary) words.

    Returns sorted ``(bin_start, count)`` pairs; counts sum to the
    number of corpus items.
    """
    if bin_width < 1:
        raise CorpusError("bin_width must be >= 1")
    bins: Counter[int] = Counter()
    for item in corpus.items:
        length = sum(1 for tok in item if tok != BOUNDARY_TOKEN)
        bins[(length // bin_width) * bin_width] += 1
    return sorted(bins.items())


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def write_corpus(corpus: SegmentedCorpus, path) -> None:
    """One item per line, space-separated tokens (paragraphs keep interior <s>)."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in corpus.items:
            fh.write(" ".join(item) + "\n")


def read_corpus(path, level: str) -> SegmentedCorpus:
    with open(path, encoding="utf-8") as fh:
        items = [line.split() for line in fh if line.strip()]
    corpus = SegmentedCorpus(level, items)
    if level == "sentence":
        for item in items:
            if BOUNDARY_TOKEN in item:
                raise CorpusError("sentence corpus file contains boundary tokens")
    return corpus


def write_vocab(vocab: Vocabulary, path) -> None:
    """One token per line; the id is the zero-based line number."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def read_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh if line.strip()]
    return Vocabulary(tokens)


def write_histogram(histogram, path) -> None:
    """Tab-separated ``bin_start<TAB>count`` rows, sorted by bin start."""
    with open(path, "w", encoding="utf-8") as fh:
        for bin_start, count in sorted(histogram):
            fh.write(f"{bin_start}\t{count}\n")
