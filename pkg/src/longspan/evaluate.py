"""Perplexity evaluation: model-by-corpus grids and attention-span sweeps.

State resets at every corpus item, so sentence items are scored in
isolation while paragraph items let context flow across their interior
sentence boundaries.  Predicted positions are all tokens after the
leading boundary symbol; interior boundary tokens count as predicted
events by default (they are ordinary vocabulary words), controllable
via ``count_boundary_tokens``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from longspan.corpus import SegmentedCorpus, encode
from longspan.validation import check_corpus, check_shared_vocab


class EvalError(ValueError):
    """Invalid evaluation request."""


@dataclass
class EvalSpec:
    model: object
    eval_corpus: SegmentedCorpus
    attention_span_override: int | None = None
    count_boundary_tokens: bool = True

    def __post_init__(self):
        if self.attention_span_override is not None:
            if not getattr(self.model, "supports_attention_span", False):
                raise EvalError(
                    "attention_span_override requires an attention architecture"
                )
            if self.attention_span_override < 1:
                raise EvalError("attention_span_override must be >= 1")


def _score_item(spec: EvalSpec, ids):
    if spec.attention_span_override is not None:
        log_probs, _ = spec.model.score_tokens(
            ids, attention_span=spec.attention_span_override
        )
    else:
        log_probs, _ = spec.model.score_tokens(ids)
    return log_probs


def perplexity(spec: EvalSpec, threads: int = 1):
    """Corpus perplexity: exp of the mean negative log probability.

    Returns ``(perplexity, token_count, total_log_prob)``.  Items are
    scored independently from a fresh state, so evaluation order cannot
    matter; with ``threads > 1`` items are scored in parallel and
    reduced in fixed corpus order, keeping totals deterministic.
    """
    check_corpus(spec.eval_corpus)
    vocab = spec.model.vocab_
    boundary = vocab.boundary_id

    def item_stats(item):
        ids = encode(vocab, item)
        if len(ids) < 2:
            return 0.0, 0
        log_probs = _score_item(spec, ids)
        if spec.count_boundary_tokens:
            return float(log_probs.sum()), log_probs.size
        keep = np.asarray(ids[1:]) != boundary
        return float(log_probs[keep].sum()), int(keep.sum())

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(item_stats, spec.eval_corpus.items))
    else:
        stats = [item_stats(item) for item in spec.eval_corpus.items]
    total = sum(part for part, _ in stats)
    count = sum(n for _, n in stats)
    if count == 0:
        raise EvalError("no scoreable tokens in the evaluation corpus")
    return float(np.exp(-total / count)), count, total


def eval_grid(named_models, named_corpora, count_boundary_tokens: bool = True,
              threads: int = 1):
    """Perplexity of every model on every corpus.

    ``named_models`` is a list of (name, model) pairs and
    ``named_corpora`` a list of (name, corpus) pairs; all models must
    share one vocabulary.  Returns rows of
    ``(model, corpus, ppl, tokens)``.
    """
    named_models = list(named_models)
    named_corpora = list(named_corpora)
    check_shared_vocab([model for _, model in named_models])
    rows = []
    for model_name, model in named_models:
        for corpus_name, corpus in named_corpora:
            spec = EvalSpec(
                model=model, eval_corpus=corpus,
                count_boundary_tokens=count_boundary_tokens,
            )
            ppl, tokens, _ = perplexity(spec, threads=threads)
            rows.append((model_name, corpus_name, ppl, tokens))
    return rows


def write_grid(rows, fh) -> None:
    """Tab-separated grid with a header, one row per model/corpus cell."""
    fh.write("model\tcorpus\tppl\ttokens\n")
    for model_name, corpus_name, ppl, tokens in rows:
        fh.write(f"{model_name}\t{corpus_name}\t{ppl:.4f}\t{tokens}\n")


def span_sweep(model, corpus: SegmentedCorpus, spans,
               count_boundary_tokens: bool = True):
    """Perplexity under a range of inference-time attention spans.

    ``None`` entries mean unrestricted; a span at least as long as the
    longest context reproduces the unrestricted value.
    """
    results = []
    for span in spans:
        spec = EvalSpec(
            model=model, eval_corpus=corpus, attention_span_override=span,
            count_boundary_tokens=count_boundary_tokens,
        )
        ppl, _, _ = perplexity(spec)
        results.append((span, ppl))
    return results
