"""Kneser-Ney smoothed n-gram language model (modified, interpolated).

The top order uses raw counts of full-length windows; start-truncated
windows enter the shorter order they actually have.  Every lower order
additionally receives continuation (type) counts from the order above,
and unseen contexts back off with weight one, so predicted
distributions sum to one exactly.  Per-order discounts come from
count-of-count statistics with a fixed fallback when those are
degenerate.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict

import numpy as np
from sklearn.base import BaseEstimator

from longspan.corpus import SegmentedCorpus, Vocabulary, encode
from longspan.serialization import CheckpointError, read_container, write_container
from longspan.validation import check_fitted, check_token_ids

_MAX_EXACT_F32 = 2**24  # counts and ids must stay exactly representable


class NGramError(ValueError):
    """Invalid training data or scoring request."""


def _discounts_from_counts(table: dict, fallback: float) -> tuple[float, float, float]:
    """Modified Kneser-Ney discounts D1, D2, D3+ from count-of-counts."""
    n = Counter()
    for count in table.values():
        if count <= 4:
            n[count] += 1
    if n[1] == 0 or n[1] + 2 * n[2] == 0:
        return (fallback, fallback, fallback)
    y = n[1] / (n[1] + 2 * n[2])
    d1 = 1.0 - 2.0 * y * n[2] / n[1]
    d2 = 2.0 - 3.0 * y * n[3] / n[2] if n[2] > 0 else fallback
    d3 = 3.0 - 4.0 * y * n[4] / n[3] if n[3] > 0 else fallback
    return tuple(d if d > 0 else fallback for d in (d1, d2, d3))


class KneserNeyLanguageModel(BaseEstimator):
    """4-gram (by default) Kneser-Ney language model over encoded corpora.

    Follows the fit/score estimator convention: hyperparameters at
    construction, statistics learned by :meth:`fit`.  Scoring is
    stateful like the neural models, with the state being the trailing
    context ids, so the same evaluation and rescoring code drives both.
    """

    def __init__(self, order: int = 4, fallback_discount: float = 0.75):
        self.order = order
        self.fallback_discount = fallback_discount

    def fit(self, corpus: SegmentedCorpus, vocab: Vocabulary):
        if self.order < 1:
            raise NGramError("order must be >= 1")
        if not corpus.items:
            raise NGramError("cannot train on an empty corpus")
        order = self.order
        counts = [None] + [defaultdict(Counter) for _ in range(order)]
        for item in corpus.items:
            ids = encode(vocab, item)
            for i in range(1, len(ids)):
                ctx_len = min(order - 1, i)
                ctx = tuple(ids[i - ctx_len:i])
                counts[ctx_len + 1][ctx][ids[i]] += 1
        # continuation (type) counts flow down one order at a time
        for level in range(order, 1, -1):
            for ctx, words in counts[level].items():
                shorter = ctx[1:]
                for word in words:
                    counts[level - 1][shorter][word] += 1

        self.vocab_ = vocab
        self.counts_ = [None] + [dict(c) for c in counts[1:]]
        self.discounts_ = [None]
        self.totals_ = [None]
        for level in range(1, order + 1):
            flat = {
                (ctx, w): c
                for ctx, words in self.counts_[level].items()
                for w, c in words.items()
            }
            discounts = _discounts_from_counts(flat, self.fallback_discount)
            self.discounts_.append(discounts)
            totals = {}
            for ctx, words in self.counts_[level].items():
                total = sum(words.values())
                removed = sum(min(self._discount(discounts, c), c) for c in words.values())
                totals[ctx] = (total, removed)
            self.totals_.append(totals)
        return self

    @staticmethod
    def _discount(discounts, count: int) -> float:
        if count >= 3:
            return discounts[2]
        return discounts[count - 1]

    def log_prob(self, context, word_id: int) -> float:
        """Natural-log probability of ``word_id`` after ``context`` ids."""
        check_fitted(self, "counts_")
        check_token_ids([word_id], len(self.vocab_))
        context = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        return math.log(self._prob(len(context) + 1, context, word_id))

    def _prob(self, level: int, ctx, word_id: int) -> float:
        if level == 0:
            return 1.0 / len(self.vocab_)
        stats = self.totals_[level].get(ctx)
        if stats is None:
            return self._prob(level - 1, ctx[1:], word_id)
        total, removed = stats
        count = self.counts_[level][ctx].get(word_id, 0)
        discounted = max(count - self._discount(self.discounts_[level], count), 0.0)
        gamma = removed / total
        return discounted / total + gamma * self._prob(level - 1, ctx[1:], word_id)

    # -- stateful scorer interface shared with the neural models ----------

    def initial_state(self):
        return ()

    def score_tokens(self, token_ids, state=None, normalization: str = "full_softmax"):
        """Log probabilities for token_ids[1:], the first token (together
        with any carried state) being conditioning context only.
        Returns the advanced context state."""
        check_fitted(self, "counts_")
        ids = list(token_ids)
        if len(ids) < 2:
            raise NGramError("scoring needs at least two tokens (context plus target)")
        check_token_ids(ids, len(self.vocab_))
        context = list(state or ()) + ids[:1]
        scores = []
        for token in ids[1:]:
            scores.append(self.log_prob(context, token))
            context.append(token)
        new_state = tuple(context[-(self.order - 1):]) if self.order > 1 else ()
        return np.array(scores, dtype=np.float64), new_state

    def advance_state(self, token_ids, state=None):
        ids = list(state or ()) + list(token_ids)
        return tuple(ids[-(self.order - 1):]) if self.order > 1 else ()

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        check_fitted(self, "counts_")
        fields = {
            "arch": "kn4",
            "order": self.order,
            "fallback_discount": self.fallback_discount,
            "vocab_size": len(self.vocab_),
        }
        arrays = {}
        for level in range(1, self.order + 1):
            rows = sorted(
                (ctx, w, c)
                for ctx, words in self.counts_[level].items()
                for w, c in words.items()
            )
            flat = [list(ctx) + [w, c] for ctx, w, c in rows]
            table = np.array(flat, dtype=np.float64).reshape(len(flat), level + 1)
            if table.size and table.max() >= _MAX_EXACT_F32:
                raise NGramError("counts too large for exact float32 serialization")
            arrays[f"level{level}.table"] = table.astype(np.float32)
            # discounts ride in the field block so they round-trip exactly
            for j, d in enumerate(self.discounts_[level], start=1):
                fields[f"level{level}.d{j}"] = float(d)
        write_container(path, fields, arrays)

    @classmethod
    def load(cls, path, vocab: Vocabulary):
        fields, arrays = read_container(path)
        if fields.get("arch") != "kn4":
            raise CheckpointError("not an n-gram model checkpoint")
        if fields["vocab_size"] != len(vocab):
            raise CheckpointError(
                f"vocabulary size {len(vocab)} does not match checkpoint "
                f"({fields['vocab_size']})"
            )
        model = cls(order=fields["order"], fallback_discount=fields["fallback_discount"])
        model.vocab_ = vocab
        model.counts_ = [None]
        model.discounts_ = [None]
        model.totals_ = [None]
        for level in range(1, model.order + 1):
            table = arrays[f"level{level}.table"].astype(np.int64)
            counts: dict = defaultdict(dict)
            for row in table:
                ctx = tuple(int(x) for x in row[:-2])
                counts[ctx][int(row[-2])] = int(row[-1])
            discounts = tuple(fields[f"level{level}.d{j}"] for j in (1, 2, 3))
            model.counts_.append(dict(counts))
            model.discounts_.append(discounts)
            totals = {}
            for ctx, words in model.counts_[level].items():
                total = sum(words.values())
                removed = sum(
                    min(model._discount(discounts, c), c) for c in words.values()
                )
                totals[ctx] = (total, removed)
            model.totals_.append(totals)
        return model


def train_kn(corpus: SegmentedCorpus, vocab: Vocabulary, order: int = 4) -> KneserNeyLanguageModel:
    return KneserNeyLanguageModel(order=order).fit(corpus, vocab)


def ngram_score(model: KneserNeyLanguageModel, token_ids) -> np.ndarray:
    """Per-token log probabilities for token_ids[1:]."""
    scores, _ = model.score_tokens(token_ids)
    return scores


def ngram_perplexity(model: KneserNeyLanguageModel, corpus: SegmentedCorpus,
                     count_boundary_tokens: bool = True) -> float:
    from longspan.evaluate import EvalSpec, perplexity

    spec = EvalSpec(
        model=model, eval_corpus=corpus, count_boundary_tokens=count_boundary_tokens
    )
    return perplexity(spec)[0]
