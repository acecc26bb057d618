"""Session-level n-best re-ranking with cross-sentence context carry-over.

Hypotheses are re-scored by a log-linear combination of acoustic,
first-pass LM, and neural LM scores.  Context flows forward through a
session in one of three modes: none (fresh state per utterance), the
reference transcript of the preceding utterances (a cheating diagnostic
for how much context could help), or the chosen 1-best of the previous
utterance (the deployable strategy).  The module also provides WER
accounting and a fixture generator that fabricates sessions with
controlled acoustic confusions, so context effects are measurable
without an acoustic model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from longspan.corpus import BOUNDARY_TOKEN, SegmentedCorpus, Vocabulary, encode

CONTEXT_MODES = ("sentence", "reference_context", "onebest_carryover")


class RerankError(ValueError):
    """Invalid session data or reranking request."""


@dataclass
class Hypothesis:
    words: tuple[str, ...]
    am_score: float
    fp_lm_score: float

    def __post_init__(self):
        self.words = tuple(self.words)
        if not (np.isfinite(self.am_score) and np.isfinite(self.fp_lm_score)):
            raise RerankError("hypothesis scores must be finite")


@dataclass
class Utterance:
    id: str
    nbest: list[Hypothesis]
    reference: tuple[str, ...]

    def __post_init__(self):
        self.reference = tuple(self.reference)
        if not self.nbest:
            raise RerankError(f"utterance {self.id!r} has an empty n-best list")


@dataclass
class Session:
    id: str
    utterances: list[Utterance]


@dataclass
class RerankWeights:
    w_am: float = 1.0
    w_fp: float = 0.5
    w_nn: float = 0.5
    word_insertion_penalty: float = 0.0


@dataclass
class WerStats:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    reference_words: int = 0

    @property
    def total_errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.reference_words == 0:
            raise RerankError("WER undefined for an empty reference")
        return self.total_errors / self.reference_words

    def __add__(self, other: "WerStats") -> "WerStats":
        return WerStats(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.reference_words + other.reference_words,
        )


@dataclass
class RankedHypothesis:
    hypothesis: Hypothesis
    nn_log_prob: float
    combined: float
    first_pass_rank: int
    end_state: object = field(repr=False, default=None)


def combined_score(hypothesis: Hypothesis, nn_log_prob: float,
                   weights: RerankWeights) -> float:
    return (
        weights.w_am * hypothesis.am_score
        + weights.w_fp * hypothesis.fp_lm_score
        + weights.w_nn * nn_log_prob
        + weights.word_insertion_penalty * len(hypothesis.words)
    )


def _hypothesis_ids(vocab: Vocabulary, words) -> list[int]:
    # encode() prepends the boundary id, giving the <s>-prefixed continuation
    return encode(vocab, list(words))


def rerank_utterance(utterance: Utterance, model, context_state,
                     weights: RerankWeights,
                     normalization: str = "self_normalized") -> list[RankedHypothesis]:
    """Score each hypothesis as an <s>-prefixed continuation of the context.

    Returns hypotheses sorted by combined score (descending), ties broken
    by first-pass rank; each carries its post-scoring model state for
    potential carry-over.
    """
    ranked = []
    for rank, hypothesis in enumerate(utterance.nbest):
        ids = _hypothesis_ids(model.vocab_, hypothesis.words)
        if len(ids) >= 2:
            scores, end_state = model.score_tokens(
                ids, state=context_state, normalization=normalization
            )
            nn_log_prob = float(scores.sum())
        else:
            # deletion-heavy empty hypothesis: nothing to score
            nn_log_prob = 0.0
            end_state = model.advance_state(ids, state=context_state)
        ranked.append(
            RankedHypothesis(
                hypothesis=hypothesis,
                nn_log_prob=nn_log_prob,
                combined=combined_score(hypothesis, nn_log_prob, weights),
                first_pass_rank=rank,
                end_state=end_state,
            )
        )
    ranked.sort(key=lambda r: (-r.combined, r.first_pass_rank))
    return ranked


def rerank_session(session: Session, model, weights: RerankWeights,
                   mode: str = "sentence",
                   normalization: str = "self_normalized") -> list[tuple[str, ...]]:
    """Re-rank every utterance of a session; returns 1-best transcripts.

    ``sentence`` resets state per utterance; ``reference_context``
    advances the state over the reference transcripts of preceding
    utterances; ``onebest_carryover`` carries the state of the chosen
    1-best from the previous utterance.
    """
    if mode not in CONTEXT_MODES:
        raise RerankError(f"unknown context mode {mode!r}")
    transcripts = []
    context_state = None
    for index, utterance in enumerate(session.utterances):
        ranked = rerank_utterance(utterance, model, context_state, weights,
                                  normalization)
        best = ranked[0]
        transcripts.append(best.hypothesis.words)
        if mode == "sentence":
            context_state = None
        elif mode == "onebest_carryover":
            context_state = best.end_state
        else:
            if not utterance.reference and index + 1 < len(session.utterances):
                raise RerankError(
                    f"utterance {utterance.id!r} lacks a reference transcript"
                )
            context_state = model.advance_state(
                _hypothesis_ids(model.vocab_, utterance.reference),
                state=context_state,
            )
    return transcripts


def add_reference(utterance: Utterance, ref_am_score: float,
                  ref_fp_score: float) -> Utterance:
    """Append the reference as a hypothesis (the no-search-error condition).

    If an identical word sequence is already present, keep the better
    acoustic score instead of duplicating it.
    """
    for i, hypothesis in enumerate(utterance.nbest):
        if hypothesis.words == utterance.reference:
            if ref_am_score > hypothesis.am_score:
                nbest = list(utterance.nbest)
                nbest[i] = replace(hypothesis, am_score=ref_am_score)
                return replace(utterance, nbest=nbest)
            return utterance
    nbest = list(utterance.nbest) + [
        Hypothesis(utterance.reference, ref_am_score, ref_fp_score)
    ]
    return replace(utterance, nbest=nbest)


# ---------------------------------------------------------------------------
# Word error rate
# ---------------------------------------------------------------------------

def wer(reference, hypothesis) -> WerStats:
    """Minimal-edit-distance alignment with unit costs.

    Ties prefer substitution over insertion over deletion, making the
    error decomposition deterministic.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            ins = dist[i, j - 1] + 1
            dele = dist[i - 1, j] + 1
            dist[i, j] = min(sub, ins, dele)
    stats = WerStats(reference_words=n)
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                stats.substitutions += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            stats.insertions += 1
            j -= 1
        else:
            stats.deletions += 1
            i -= 1
    return stats


def corpus_wer(pairs) -> float:
    """Pooled WER percentage: total errors over total reference words."""
    total = WerStats()
    for reference, hypothesis in pairs:
        total = total + wer(reference, hypothesis)
    return 100.0 * total.wer


def werr(baseline_wer: float, new_wer: float) -> float:
    """Relative WER reduction in percent."""
    if baseline_wer == 0:
        raise RerankError("WERR undefined for a zero baseline")
    return 100.0 * (baseline_wer - new_wer) / baseline_wer


def oov_filter(sessions, vocab: Vocabulary):
    """Drop utterances whose reference contains out-of-vocabulary words.

    Returns the filtered sessions (empty sessions removed) and the
    number of dropped utterances.
    """
    filtered = []
    removed = 0
    for session in sessions:
        kept = []
        for utterance in session.utterances:
            if all(word in vocab for word in utterance.reference):
                kept.append(utterance)
            else:
                removed += 1
        if kept:
            filtered.append(Session(id=session.id, utterances=kept))
    return filtered, removed


# ---------------------------------------------------------------------------
# Session files (one JSON object per line)
# ---------------------------------------------------------------------------

def write_sessions(sessions, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for session in sessions:
            for utterance in session.utterances:
                record = {
                    "session_id": session.id,
                    "utt_id": utterance.id,
                    "ref": " ".join(utterance.reference),
                    "nbest": [
                        {
                            "words": " ".join(h.words),
                            "am": h.am_score,
                            "fplm": h.fp_lm_score,
                        }
                        for h in utterance.nbest
                    ],
                }
                fh.write(json.dumps(record) + "\n")


def read_sessions(path) -> list[Session]:
    sessions: list[Session] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                utterance = Utterance(
                    id=record["utt_id"],
                    nbest=[
                        Hypothesis(h["words"].split(), h["am"], h["fplm"])
                        for h in record["nbest"]
                    ],
                    reference=record["ref"].split(),
                )
                session_id = record["session_id"]
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise RerankError(f"bad session record on line {line_no}: {exc}") from exc
            if sessions and sessions[-1].id == session_id:
                sessions[-1].utterances.append(utterance)
            else:
                sessions.append(Session(id=session_id, utterances=[utterance]))
    return sessions


# ---------------------------------------------------------------------------
# Fixture generation (stand-in for a first-pass decoder)
# ---------------------------------------------------------------------------

def make_fixture_sessions(paragraph_corpus: SegmentedCorpus, confusion_pairs,
                          am_margin: float = 1.0, nbest_size: int = 4,
                          seed: int = 17, fp_model=None,
                          am_per_word: float = -2.0) -> list[Session]:
    """Fabricate n-best sessions from a paragraph corpus.

    Each sentence becomes an utterance whose 1-best is the reference
    with one confusable word swapped (when possible), acoustically
    favored over the reference by ``am_margin``; remaining slots are
    clearly worse decoys.  The n-best incoming order is descending
    acoustic score, which defines the fixture's first-pass ranking.
    First-pass LM scores come from ``fp_model`` when given, else zero.
    """
    if nbest_size < 2:
        raise RerankError("nbest_size must be >= 2")
    swap = dict(confusion_pairs)
    vocabulary_words = sorted({w for pair in confusion_pairs for w in pair})
    rng = np.random.default_rng(seed)
    sessions = []
    for p_index, item in enumerate(paragraph_corpus.items):
        sentences: list[list[str]] = [[]]
        for token in item:
            if token == BOUNDARY_TOKEN:
                sentences.append([])
            else:
                sentences[-1].append(token)
        utterances = []
        for u_index, reference in enumerate(s for s in sentences if s):
            hypotheses = _fixture_nbest(
                reference, swap, vocabulary_words, am_margin, nbest_size,
                am_per_word, rng, fp_model,
            )
            utterances.append(
                Utterance(
                    id=f"s{p_index:04d}_u{u_index:02d}",
                    nbest=hypotheses,
                    reference=reference,
                )
            )
        if utterances:
            sessions.append(Session(id=f"s{p_index:04d}", utterances=utterances))
    return sessions


def _fixture_fp_score(fp_model, words) -> float:
    if fp_model is None:
        return 0.0
    ids = encode(fp_model.vocab_, list(words))
    if len(ids) < 2:
        return 0.0
    scores, _ = fp_model.score_tokens(ids)
    return float(scores.sum())


def _fixture_nbest(reference, swap, vocabulary_words, am_margin, nbest_size,
                   am_per_word, rng, fp_model):
    base_am = am_per_word * len(reference) + float(rng.normal(0.0, 0.1))
    candidates: list[tuple[list[str], float]] = []
    swappable = [i for i, w in enumerate(reference) if w in swap]
    if swappable:
        position = int(rng.choice(swappable))
        corrupted = list(reference)
        corrupted[position] = swap[corrupted[position]]
        candidates.append((corrupted, base_am + am_margin))
    candidates.append((list(reference), base_am))
    decoy_gap = abs(am_margin) + 1.0
    attempts = 0
    while len(candidates) < nbest_size and attempts < nbest_size * 10:
        attempts += 1
        decoy = list(reference)
        position = int(rng.integers(0, len(decoy)))
        decoy[position] = vocabulary_words[int(rng.integers(0, len(vocabulary_words)))]
        if any(decoy == words for words, _ in candidates):
            continue
        candidates.append(
            (decoy, base_am - decoy_gap * (len(candidates) - 1) - float(rng.uniform(0, 0.5)))
        )
    candidates.sort(key=lambda pair: -pair[1])
    return [
        Hypothesis(words, am, _fixture_fp_score(fp_model, words))
        for words, am in candidates
    ]
