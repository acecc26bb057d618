"""Input-validation helpers shared by the estimator surfaces."""

from __future__ import annotations

import numpy as np


class NotFittedError(ValueError):
    """Estimator used before ``fit``."""


def check_fitted(estimator, *attrs) -> None:
    for attr in attrs:
        if not hasattr(estimator, attr):
            raise NotFittedError(
                f"{type(estimator).__name__} is not fitted yet (missing {attr!r}); "
                "call fit() or load a checkpoint first"
            )


def check_token_ids(ids, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"token id out of range for vocabulary size {vocab_size}")
    return ids


def check_corpus(corpus, level: str | None = None, nonempty: bool = True):
    if level is not None and corpus.level != level:
        raise ValueError(f"expected a {level}-level corpus, got {corpus.level!r}")
    if nonempty and not corpus.items:
        raise ValueError("corpus is empty")
    return corpus


def check_shared_vocab(models) -> None:
    vocabs = [getattr(m, "vocab_", None) for m in models]
    if any(v is None for v in vocabs):
        raise NotFittedError("all models must be fitted before evaluation")
    first = vocabs[0].tokens
    for vocab in vocabs[1:]:
        if vocab.tokens != first:
            raise ValueError("models do not share a vocabulary")
