"""Synthetic topic-coherent corpora for desk-scale experiments.

Each paragraph opens with a sentence naming a topic marker; the word
distribution of the following sentences leans heavily onto that topic's
private vocabulary.  A model that carries context across sentence
boundaries can exploit the marker, a sentence-isolated model cannot,
which makes paragraph-versus-sentence comparisons and cue-word
rescoring effects measurable with tiny models.
"""

from __future__ import annotations

import numpy as np

from longspan.corpus import Paragraph, Sentence


class TopicCorpusSpec:
    """Shared layout of the synthetic vocabulary."""

    def __init__(self, n_topics: int = 2, topic_words: int = 10, filler_words: int = 20):
        self.n_topics = n_topics
        self.topic_words = topic_words
        self.filler_words = filler_words

    def marker(self, topic: int) -> str:
        return f"topic{topic}"

    def topic_word(self, topic: int, j: int) -> str:
        return f"t{topic}w{j}"

    def filler(self, j: int) -> str:
        return f"f{j}"

    def confusion_pairs(self):
        """Cross-topic word pairs: acoustically 'confusable' twins whose
        correct member is decided by the paragraph's topic."""
        pairs = []
        for j in range(self.topic_words):
            for a in range(self.n_topics):
                for b in range(self.n_topics):
                    if a != b:
                        pairs.append((self.topic_word(a, j), self.topic_word(b, j)))
        return pairs


def topic_paragraphs(n_paragraphs: int, seed: int, spec: TopicCorpusSpec | None = None,
                     sentences_per_paragraph: int = 4, min_words: int = 5,
                     max_words: int = 8, topic_word_frac: float = 0.65,
                     topic_words_per_sentence: int | None = None):
    """Generate paragraphs whose sentences 2..n follow sentence 1's topic.

    By default each word of a follow-on sentence is a topic word with
    probability ``topic_word_frac``.  With ``topic_words_per_sentence``
    set, exactly that many topic words are planted at random positions
    instead, which leaves individual sentences topically ambiguous
    except for those few words (the cue-word rescoring setup).
    """
    spec = spec or TopicCorpusSpec()
    rng = np.random.default_rng(seed)
    paragraphs = []
    for _ in range(n_paragraphs):
        topic = int(rng.integers(0, spec.n_topics))
        sentences = []
        lead = [spec.marker(topic)] + [
            spec.filler(int(rng.integers(0, spec.filler_words)))
            for _ in range(int(rng.integers(min_words, max_words + 1)) - 1)
        ]
        sentences.append(Sentence(lead))
        for _ in range(sentences_per_paragraph - 1):
            length = int(rng.integers(min_words, max_words + 1))
            words = []
            for _ in range(length):
                if topic_words_per_sentence is None and rng.random() < topic_word_frac:
                    words.append(spec.topic_word(topic, int(rng.integers(0, spec.topic_words))))
                else:
                    words.append(spec.filler(int(rng.integers(0, spec.filler_words))))
            if topic_words_per_sentence is not None:
                positions = rng.choice(
                    length, size=min(topic_words_per_sentence, length), replace=False
                )
                for position in positions:
                    words[position] = spec.topic_word(
                        topic, int(rng.integers(0, spec.topic_words))
                    )
            sentences.append(Sentence(words))
        paragraphs.append(Paragraph(sentences))
    return paragraphs


def echo_paragraphs(n_paragraphs: int, seed: int, n_cues: int = 10,
                    sentences_per_paragraph: int = 6, min_words: int = 8,
                    max_words: int = 18, filler_words: int = 30):
    """Paragraphs of sentences with an intra-sentence recall pattern.

    Each sentence plants a cue word near its start and the cue's fixed
    partner word near its end, with fillers between.  Predicting the
    partner requires recalling the cue across most of the sentence,
    which is the kind of lookup an attention layer learns to do; at
    paragraph scale the attention memory fills with other sentences'
    states, recreating the train/inference span mismatch that restricted
    attention is meant to repair.
    """
    rng = np.random.default_rng(seed)
    paragraphs = []
    for _ in range(n_paragraphs):
        sentences = []
        for _ in range(sentences_per_paragraph):
            length = int(rng.integers(min_words, max_words + 1))
            words = [f"f{rng.integers(0, filler_words)}" for _ in range(length)]
            cue = int(rng.integers(0, n_cues))
            words[int(rng.integers(0, 2))] = f"c{cue}"
            words[length - 1 - int(rng.integers(0, 2))] = f"e{cue}"
            sentences.append(Sentence(words))
        paragraphs.append(Paragraph(sentences))
    return paragraphs


def topic_raw_text(n_paragraphs: int, seed: int, spec: TopicCorpusSpec | None = None,
                   **kwargs) -> list[str]:
    """Raw text lines (one paragraph per line, capitalized, punctuated)
    suitable for feeding through the normalizer."""
    paragraphs = topic_paragraphs(n_paragraphs, seed, spec, **kwargs)
    lines = []
    for para in paragraphs:
        parts = []
        for sent in para.sentences:
            text = " ".join(sent.words)
            parts.append(text[0].upper() + text[1:] + ".")
        lines.append(" ".join(parts))
    return lines
