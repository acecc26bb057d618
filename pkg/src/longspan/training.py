"""Noise-contrastive training with SGD, gradient clipping and warm-up.

NCE turns next-word prediction into binary classification of the true
word against noise samples, with the partition function pinned at one;
trained models come out approximately self-normalized, so raw logits
can stand in for log probabilities during rescoring.  Cross-entropy is
available as a reference loss.  The state is reset at every corpus
item, so a sentence corpus yields a sentence model and a paragraph
corpus a paragraph model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from longspan import autograd as ag
from longspan.autograd import Tape, Tensor
from longspan.corpus import SegmentedCorpus, Vocabulary, encode
from longspan.models import ModelConfig, forward_features, init_params
from longspan.validation import check_corpus

LOSSES = ("nce", "cross_entropy")
SCHEDULES = ("constant", "noam")
NOISE_DISTRIBUTIONS = ("unigram", "uniform")


class TrainError(ValueError):
    """Invalid training configuration or data."""


@dataclass
class TrainConfig:
    loss: str = "nce"
    nce_noise_samples: int = 64
    noise_distribution: str = "unigram"
    batch_size: int = 8
    max_sequence_tokens: int = 256
    base_lr: float = 0.5
    schedule: str = "constant"
    warmup_steps: int = 100
    grad_clip_norm: float = 1.0
    epochs: int = 5
    seed: int = 17

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise TrainError(f"unknown loss {self.loss!r}")
        if self.schedule not in SCHEDULES:
            raise TrainError(f"unknown schedule {self.schedule!r}")
        if self.noise_distribution not in NOISE_DISTRIBUTIONS:
            raise TrainError(f"unknown noise distribution {self.noise_distribution!r}")
        if self.nce_noise_samples < 1:
            raise TrainError("nce_noise_samples must be >= 1")
        if self.schedule == "noam" and self.warmup_steps < 1:
            raise TrainError("warmup_steps must be >= 1 for the noam schedule")
        if self.batch_size < 1 or self.epochs < 1 or self.max_sequence_tokens < 2:
            raise TrainError("batch_size, epochs and max_sequence_tokens are too small")


@dataclass
class EpochStats:
    epoch: int
    step: int
    lr: float
    train_loss: float
    heldout_ppl: float | None
    wall_seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    lr_trace: list[float] = field(default_factory=list)

    def rows(self):
        for stats in self.epochs:
            ppl = "" if stats.heldout_ppl is None else f"{stats.heldout_ppl:.4f}"
            yield (
                f"{stats.epoch}\t{stats.step}\t{stats.lr:.6g}\t"
                f"{stats.train_loss:.6f}\t{ppl}"
            )

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch\tstep\tlr\ttrain_loss\theldout_ppl\n")
            for row in self.rows():
                fh.write(row + "\n")


def lr_at(config: TrainConfig, step: int) -> float:
    """Learning rate at a 1-based step; noam warms up then decays."""
    if step < 1:
        raise TrainError("step must be >= 1")
    if config.schedule == "noam":
        return config.base_lr * min(step**-0.5, step * config.warmup_steps**-1.5)
    return config.base_lr


def nce_loss(target_logits: Tensor, noise_logits: Tensor,
             target_noise_log_probs: np.ndarray,
             noise_noise_log_probs: np.ndarray) -> Tensor:
    """Binary-classification NCE objective, averaged over positions.

    With k noise draws per position, each logit is compared against
    log(k * p_noise(word)); the target should win and every noise word
    should lose.  The partition function is implicitly one.
    """
    if noise_logits.shape[-1] < 1:
        raise TrainError("NCE needs at least one noise sample")
    if not (np.all(np.isfinite(target_noise_log_probs))
            and np.all(np.isfinite(noise_noise_log_probs))):
        raise TrainError("noise distribution assigns zero probability to a drawn word")
    k = noise_logits.shape[-1]
    log_k = np.log(k)
    delta_target = ag.sub(
        target_logits, Tensor(log_k + target_noise_log_probs, dtype=target_logits.dtype)
    )
    delta_noise = ag.sub(
        noise_logits, Tensor(log_k + noise_noise_log_probs, dtype=noise_logits.dtype)
    )
    per_position = ag.add(
        ag.neg(ag.log_sigmoid(delta_target)),
        ag.sum_last(ag.neg(ag.log_sigmoid(ag.neg(delta_noise)))),
    )
    return ag.mean_all(per_position)


def unigram_noise_probs(corpus: SegmentedCorpus, vocab: Vocabulary) -> np.ndarray:
    """Unigram distribution over the vocabulary with a floor count of one."""
    counts = np.ones(len(vocab), dtype=np.float64)
    for item in corpus.items:
        for token_id in encode(vocab, item):
            counts[token_id] += 1
    return counts / counts.sum()


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale gradients so their global norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    total = 0.0
    for tensor in params.values():
        if tensor.grad is not None:
            total += float((tensor.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for tensor in params.values():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * np.float32(factor)
    return norm


def _encode_items(corpus, vocab, max_tokens):
    items = [encode(vocab, item)[:max_tokens] for item in corpus.items]
    return [ids for ids in items if len(ids) >= 2]


def item_loss(model_config: ModelConfig, train_config: TrainConfig, params: dict,
              ids, noise_probs: np.ndarray | None, noise_rng, dropout_rng) -> Tensor:
    """Loss of one corpus item from a fresh state (reset-per-item discipline)."""
    features, _ = forward_features(
        model_config, params, ids, state=None, train=True, rng=dropout_rng
    )
    n_targets = len(ids) - 1
    predictors = ag.slice_axis(features, 0, 0, n_targets)
    targets = np.asarray(ids[1:], dtype=np.int64)
    embedding = params["embedding"]

    if train_config.loss == "cross_entropy":
        logits = ag.matmul(predictors, ag.transpose(embedding))
        log_probs = ag.pick(ag.log_softmax(logits), targets)
        return ag.neg(ag.mean_all(log_probs))

    k = train_config.nce_noise_samples
    target_logits = ag.sum_last(ag.mul(predictors, ag.embedding_gather(embedding, targets)))
    noise_ids = noise_rng.choice(len(noise_probs), size=(n_targets, k), p=noise_probs)
    columns = [
        ag.sum_last(
            ag.mul(predictors, ag.embedding_gather(embedding, noise_ids[:, j])),
            keepdims=True,
        )
        for j in range(k)
    ]
    noise_logits = columns[0] if k == 1 else ag.concat(columns, axis=-1)
    with np.errstate(divide="ignore"):
        log_noise = np.log(noise_probs)
    return nce_loss(
        target_logits, noise_logits, log_noise[targets], log_noise[noise_ids]
    )


def heldout_perplexity(model_config, params, corpus, vocab,
                       max_tokens: int | None = None) -> float:
    """Full-softmax perplexity with a fresh state per item."""
    from longspan.models import score_sequence

    total, count = 0.0, 0
    for ids in _encode_items(corpus, vocab, max_tokens or 10**9):
        log_probs, _ = score_sequence(model_config, params, ids)
        total += float(log_probs.sum())
        count += log_probs.size
    if count == 0:
        raise TrainError("held-out corpus has no scoreable tokens")
    return float(np.exp(-total / count))


def train(model_config: ModelConfig, train_config: TrainConfig,
          train_corpus: SegmentedCorpus, heldout: SegmentedCorpus | None,
          vocab: Vocabulary):
    """SGD over whole corpus items; deterministic given the seed.

    Items are truncated at ``max_sequence_tokens`` and each starts from
    a fresh state.  Gradients are averaged within a minibatch and
    clipped to ``grad_clip_norm`` before the update.
    """
    check_corpus(train_corpus)
    if len(vocab) != model_config.vocab_size:
        raise TrainError(
            f"model vocab_size {model_config.vocab_size} != vocabulary size {len(vocab)}"
        )
    items = _encode_items(train_corpus, vocab, train_config.max_sequence_tokens)
    if not items:
        raise TrainError("training corpus has no scoreable items")

    params = init_params(model_config, train_config.seed)
    noise_probs = None
    if train_config.loss == "nce":
        noise_probs = unigram_noise_probs(train_corpus, vocab)
        if train_config.noise_distribution == "uniform":
            noise_probs = np.full(len(vocab), 1.0 / len(vocab))

    order_rng = np.random.default_rng(train_config.seed)
    noise_rng = np.random.Generator(np.random.Philox(key=train_config.seed))
    dropout_rng = np.random.Generator(np.random.Philox(key=train_config.seed + 1))

    report = TrainReport()
    step = 0
    started = time.perf_counter()
    for epoch in range(1, train_config.epochs + 1):
        order = order_rng.permutation(len(items))
        epoch_loss, epoch_items = 0.0, 0
        lr = train_config.base_lr
        for lo in range(0, len(order), train_config.batch_size):
            batch = order[lo:lo + train_config.batch_size]
            step += 1
            lr = lr_at(train_config, step)
            report.lr_trace.append(lr)
            for tensor in params.values():
                tensor.zero_grad()
            for index in batch:
                with Tape() as tape:
                    loss = item_loss(
                        model_config, train_config, params, items[index],
                        noise_probs, noise_rng, dropout_rng,
                    )
                    tape.backward(ag.scale(loss, 1.0 / len(batch)))
                epoch_loss += loss.item()
                epoch_items += 1
            clip_gradients(params, train_config.grad_clip_norm)
            for tensor in params.values():
                if tensor.grad is not None:
                    tensor.data -= np.float32(lr) * tensor.grad
        ppl = (
            heldout_perplexity(model_config, params, heldout, vocab)
            if heldout is not None
            else None
        )
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                step=step,
                lr=lr,
                train_loss=epoch_loss / max(epoch_items, 1),
                heldout_ppl=ppl,
                wall_seconds=time.perf_counter() - started,
            )
        )
    return params, report
