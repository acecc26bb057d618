"""Estimator-style wrapper around the neural language models.

``NeuralLanguageModel`` follows the scikit-learn convention:
hyperparameters live on ``__init__`` (so ``get_params`` / ``clone``
work), :meth:`fit` trains on an encoded corpus, and fitted state hangs
off trailing-underscore attributes.  Scoring is stateful, mirroring the
n-gram estimator, so evaluation and rescoring code can drive either
model family through one interface.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from longspan import models, training
from longspan.corpus import SegmentedCorpus, Vocabulary
from longspan.models import ModelConfig
from longspan.training import TrainConfig
from longspan.validation import check_corpus, check_fitted


class NeuralLanguageModel(BaseEstimator):
    """LSTM / LSTM-with-attention / Transformer language model.

    The ``schedule`` default of ``None`` resolves to warm-up ("noam")
    for the transformer and a constant rate otherwise.
    """

    def __init__(self, arch: str = "lstm", embed_dim: int = 64, hidden_dim: int = 128,
                 num_layers: int = 2, num_heads: int = 2, transformer_ff_dim: int = 256,
                 attention_span: int | None = None, dropout: float = 0.0,
                 loss: str = "nce", nce_noise_samples: int = 64,
                 noise_distribution: str = "unigram", batch_size: int = 8,
                 max_sequence_tokens: int = 256, base_lr: float = 0.5,
                 schedule: str | None = None, warmup_steps: int = 200,
                 grad_clip_norm: float = 1.0, epochs: int = 5, seed: int = 17):
        self.arch = arch
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.transformer_ff_dim = transformer_ff_dim
        self.attention_span = attention_span
        self.dropout = dropout
        self.loss = loss
        self.nce_noise_samples = nce_noise_samples
        self.noise_distribution = noise_distribution
        self.batch_size = batch_size
        self.max_sequence_tokens = max_sequence_tokens
        self.base_lr = base_lr
        self.schedule = schedule
        self.warmup_steps = warmup_steps
        self.grad_clip_norm = grad_clip_norm
        self.epochs = epochs
        self.seed = seed

    # -- configuration -----------------------------------------------------

    def _model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            arch=self.arch,
            vocab_size=vocab_size,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            transformer_ff_dim=self.transformer_ff_dim,
            attention_span=self.attention_span,
            dropout=self.dropout,
        )

    def _train_config(self) -> TrainConfig:
        schedule = self.schedule
        if schedule is None:
            schedule = "noam" if self.arch == "transformer" else "constant"
        return TrainConfig(
            loss=self.loss,
            nce_noise_samples=self.nce_noise_samples,
            noise_distribution=self.noise_distribution,
            batch_size=self.batch_size,
            max_sequence_tokens=self.max_sequence_tokens,
            base_lr=self.base_lr,
            schedule=schedule,
            warmup_steps=self.warmup_steps,
            grad_clip_norm=self.grad_clip_norm,
            epochs=self.epochs,
            seed=self.seed,
        )

    @property
    def supports_attention_span(self) -> bool:
        return self.arch in ("lstma", "transformer")

    # -- training ------------------------------------------------------------

    def fit(self, corpus: SegmentedCorpus, vocab: Vocabulary,
            heldout: SegmentedCorpus | None = None):
        """Train on the corpus; its level decides the model's identity
        (state resets per sentence or per paragraph)."""
        check_corpus(corpus)
        self.config_ = self._model_config(len(vocab))
        self.vocab_ = vocab
        self.level_ = corpus.level
        self.params_, self.report_ = training.train(
            self.config_, self._train_config(), corpus, heldout, vocab
        )
        return self

    # -- stateful scoring ----------------------------------------------------

    def initial_state(self):
        check_fitted(self, "params_")
        return models.fresh_state(self.config_)

    def score_tokens(self, token_ids, state=None, normalization: str = "full_softmax",
                     attention_span=models._UNSET):
        """Log scores for token_ids[1:]; the first token plus any carried
        state is conditioning context."""
        check_fitted(self, "params_")
        return models.score_sequence(
            self.config_, self.params_, token_ids, state=state,
            normalization=normalization, attention_span=attention_span,
        )

    def advance_state(self, token_ids, state=None, attention_span=models._UNSET):
        check_fitted(self, "params_")
        return models.advance_state(
            self.config_, self.params_, token_ids, state=state,
            attention_span=attention_span,
        )

    def logits(self, token_ids, state=None):
        check_fitted(self, "params_")
        features, new_state = models.forward_features(
            self.config_, self.params_, token_ids, state
        )
        values = features.data @ self.params_["embedding"].data.T
        return values.astype(np.float64), new_state

    def perplexity(self, corpus: SegmentedCorpus, count_boundary_tokens: bool = True,
                   attention_span_override: int | None = None) -> float:
        from longspan.evaluate import EvalSpec, perplexity

        check_fitted(self, "params_")
        spec = EvalSpec(
            model=self,
            eval_corpus=corpus,
            attention_span_override=attention_span_override,
            count_boundary_tokens=count_boundary_tokens,
        )
        return perplexity(spec)[0]

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        check_fitted(self, "params_")
        models.save_checkpoint(self.params_, self.config_, path)

    @classmethod
    def load(cls, path, vocab: Vocabulary):
        from longspan.serialization import CheckpointError

        params, config = models.load_checkpoint(path)
        if config.vocab_size != len(vocab):
            raise CheckpointError(
                f"vocabulary size {len(vocab)} does not match checkpoint "
                f"({config.vocab_size})"
            )
        model = cls(
            arch=config.arch,
            embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim,
            num_layers=config.num_layers,
            num_heads=config.num_heads,
            transformer_ff_dim=config.transformer_ff_dim,
            attention_span=config.attention_span,
            dropout=config.dropout,
        )
        model.config_ = config
        model.params_ = params
        model.vocab_ = vocab
        return model
