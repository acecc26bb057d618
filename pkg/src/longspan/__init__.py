"""Paragraph-level language modeling and session-level n-best rescoring.

The package covers the full pipeline: building paragraph corpora from
sentence text, training LSTM / attention-augmented LSTM / Transformer
language models with noise-contrastive estimation, Kneser-Ney n-gram
baselines, perplexity evaluation with restricted attention spans, and
re-ranking n-best speech recognition hypotheses with cross-sentence
context carry-over.
"""

from longspan.corpus import (
    Paragraph,
    SegmentedCorpus,
    Sentence,
    Vocabulary,
    build_vocab,
    normalize_text,
    segment_paragraphs,
)
from longspan.estimators import NeuralLanguageModel
from longspan.ngram import KneserNeyLanguageModel

__all__ = [
    "KneserNeyLanguageModel",
    "NeuralLanguageModel",
    "Paragraph",
    "SegmentedCorpus",
    "Sentence",
    "Vocabulary",
    "build_vocab",
    "normalize_text",
    "segment_paragraphs",
]

__version__ = "0.1.0"
