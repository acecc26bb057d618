"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one pass/fail line (run with ``pytest -s`` to see them
inline).  Trained models are shared through session-scoped fixtures so
the whole suite stays inside its runtime budget.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from gradcases import ALL_CASES
from longspan import autograd as ag
from longspan import models
from longspan.corpus import (
    SegmentedCorpus,
    Vocabulary,
    build_vocab,
    encode,
    normalize_text,
    paragraphs_to_corpus,
    paragraphs_to_sentences,
    segment_paragraphs,
)
from longspan.estimators import NeuralLanguageModel
from longspan.ngram import KneserNeyLanguageModel
from longspan.rerank import (
    RerankWeights,
    corpus_wer,
    make_fixture_sessions,
    rerank_session,
    rerank_utterance,
    werr,
    wer,
)
from longspan.synthetic import TopicCorpusSpec, echo_paragraphs, topic_paragraphs

SEEDS = (17, 18, 19)


def report(number, name, ok, detail=""):
    print(f"[criterion {number:2d}] {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {number} ({name}): {detail}"


# ---------------------------------------------------------------------------
# Shared experiment material
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def topic_world():
    spec = TopicCorpusSpec()
    train_paras = topic_paragraphs(150, seed=7, spec=spec)
    eval_paras = topic_paragraphs(40, seed=1000, spec=spec)
    world = {
        "spec": spec,
        "para_train": paragraphs_to_corpus(train_paras),
        "sent_train": paragraphs_to_sentences(train_paras, dedupe=False),
        "para_eval": paragraphs_to_corpus(eval_paras),
    }
    world["vocab"] = build_vocab(world["para_train"], max_size=200)
    return world


def train_estimator(arch, corpus, vocab, seed, **overrides):
    kwargs = dict(
        arch=arch, embed_dim=24, hidden_dim=32, num_layers=1, num_heads=2,
        transformer_ff_dim=48, loss="cross_entropy", epochs=8, base_lr=2.0,
        batch_size=4, seed=seed,
    )
    if arch == "transformer":
        kwargs.update(base_lr=6.0, schedule="noam", warmup_steps=60)
    kwargs.update(overrides)
    return NeuralLanguageModel(**kwargs).fit(corpus, vocab)


@pytest.fixture(scope="session")
def paragraph_advantage_results(topic_world):
    """Perplexities of sent- and para-trained models on paragraph eval data."""
    results = {}
    for arch in models.ARCHITECTURES:
        for seed in SEEDS:
            para_model = train_estimator(
                arch, topic_world["para_train"], topic_world["vocab"], seed
            )
            sent_model = train_estimator(
                arch, topic_world["sent_train"], topic_world["vocab"], seed
            )
            results[(arch, seed)] = (
                para_model.perplexity(topic_world["para_eval"]),
                sent_model.perplexity(topic_world["para_eval"]),
            )
    return results


@pytest.fixture(scope="session")
def nce_world():
    """NCE-trained paragraph LSTM, its KN4 first pass, and fixture sessions."""
    spec = TopicCorpusSpec()
    train_paras = topic_paragraphs(250, seed=7, spec=spec)
    para_train = paragraphs_to_corpus(train_paras)
    sent_train = paragraphs_to_sentences(train_paras, dedupe=False)
    vocab = build_vocab(para_train, max_size=200)
    heldout = paragraphs_to_corpus(topic_paragraphs(30, seed=31, spec=spec))
    nn = NeuralLanguageModel(
        arch="lstm", embed_dim=24, hidden_dim=32, num_layers=1,
        loss="nce", nce_noise_samples=16, epochs=12, base_lr=1.0,
        batch_size=4, seed=17,
    ).fit(para_train, vocab)
    kn = KneserNeyLanguageModel(order=4).fit(sent_train, vocab)
    fixture_paras = topic_paragraphs(
        200, seed=7007, spec=spec,
        topic_words_per_sentence=1, min_words=6, max_words=9,
    )
    sessions = make_fixture_sessions(
        paragraphs_to_corpus(fixture_paras),
        spec.confusion_pairs(),
        am_margin=1.0, nbest_size=4, seed=5, fp_model=kn,
    )
    return {"nn": nn, "kn": kn, "sessions": sessions, "heldout": heldout,
            "vocab": vocab}


def session_wer(sessions, model, weights, mode, normalization="self_normalized"):
    pairs = []
    for session in sessions:
        transcripts = rerank_session(session, model, weights, mode, normalization)
        pairs.extend(
            (utt.reference, words)
            for utt, words in zip(session.utterances, transcripts)
        )
    return corpus_wer(pairs)


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    started = time.perf_counter()
    worst = ("", 0.0)
    for name, builder in ALL_CASES:
        rng = np.random.default_rng(hash(name) % 2**32)
        for _ in range(5):
            f, xs = builder(rng)
            check = ag.grad_check(f, xs, eps=1e-5, tol=1e-4)
            if check.max_rel_err > worst[1]:
                worst = (name, check.max_rel_err)
            assert check.passed, f"{name}: rel err {check.max_rel_err:.2e}"
    elapsed = time.perf_counter() - started
    report(
        1, "gradient correctness", elapsed < 60,
        f"({len(ALL_CASES)} primitives x 5 shapes, worst {worst[0]} "
        f"rel err {worst[1]:.1e}, {elapsed:.1f}s)",
    )


def test_criterion_2_carry_over_equivalence():
    started = time.perf_counter()
    tolerances = {"lstm": 1e-6, "lstma": 1e-6, "transformer": 1e-5}
    worst = 0.0
    for arch in models.ARCHITECTURES:
        config = models.ModelConfig(arch=arch, vocab_size=500)
        params = models.init_params(config, seed=11)
        rng = np.random.default_rng(13)
        for _ in range(20):
            n = int(rng.integers(4, 28))
            tokens = rng.integers(0, 500, size=n).tolist()
            split = int(rng.integers(1, n))
            whole, _ = models.score_sequence(config, params, tokens)
            chunked, _ = models.score_chunks(
                config, params, [tokens[:split], tokens[split:]]
            )
            gap = float(np.abs(chunked - whole).max())
            worst = max(worst, gap / tolerances[arch] * 1e-6)
            assert gap < tolerances[arch], f"{arch}: {gap:.2e} at split {split}/{n}"
    elapsed = time.perf_counter() - started
    report(
        2, "carry-over equivalence", elapsed < 60,
        f"(20 splits x 3 archs, worst scaled gap {worst:.1e}, {elapsed:.1f}s)",
    )


def test_criterion_3_span_saturation():
    started = time.perf_counter()
    worst = 0.0
    for arch in ("lstma", "transformer"):
        config = models.ModelConfig(arch=arch, vocab_size=300)
        params = models.init_params(config, seed=29)
        rng = np.random.default_rng(31)
        for _ in range(10):
            tokens = rng.integers(0, 300, size=int(rng.integers(4, 20))).tolist()
            unrestricted, _ = models.score_sequence(config, params, tokens)
            saturated, _ = models.score_sequence(
                config, params, tokens, attention_span=len(tokens) + 5
            )
            gap = float(np.abs(saturated - unrestricted).max())
            worst = max(worst, gap)
            assert gap < 1e-10, f"{arch}: {gap:.2e}"
    elapsed = time.perf_counter() - started
    report(3, "span saturation", elapsed < 60, f"(worst gap {worst:.1e}, {elapsed:.1f}s)")


def test_criterion_4_paragraph_advantage(paragraph_advantage_results):
    started = time.perf_counter()
    lines = []
    ok = True
    for arch in models.ARCHITECTURES:
        for seed in SEEDS:
            para_ppl, sent_ppl = paragraph_advantage_results[(arch, seed)]
            gain = 100.0 * (1.0 - para_ppl / sent_ppl)
            lines.append(f"{arch}/s{seed} {gain:.0f}%")
            ok &= gain >= 10.0
    report(
        4, "paragraph advantage (>=10% para-eval ppl gain, 3 seeds x 3 archs)",
        ok, "(" + ", ".join(lines) + ")",
    )


def test_criterion_5_restricted_attention_effect():
    started = time.perf_counter()
    train_paras = echo_paragraphs(80, seed=0)
    eval_paras = echo_paragraphs(20, seed=1000)
    sent_train = paragraphs_to_sentences(train_paras, dedupe=False)
    para_eval = paragraphs_to_corpus(eval_paras)
    vocab = build_vocab(paragraphs_to_corpus(train_paras), max_size=100)
    # restrict to half the mean training-sentence length: well below the
    # paragraph scale, within the span the model saw while training
    mean_len = np.mean([len(item) + 1 for item in sent_train.items])
    span = max(2, round(mean_len / 2))
    failures = 0
    lines = []
    for seed in SEEDS:
        model = NeuralLanguageModel(
            arch="lstma", embed_dim=16, hidden_dim=10, num_layers=1, num_heads=2,
            loss="cross_entropy", epochs=12, base_lr=2.0, batch_size=4, seed=seed,
        ).fit(sent_train, vocab)
        unrestricted = model.perplexity(para_eval)
        restricted = model.perplexity(para_eval, attention_span_override=span)
        lines.append(f"s{seed} {unrestricted:.2f}->{restricted:.2f}")
        failures += restricted >= unrestricted
    elapsed = time.perf_counter() - started
    report(
        5, "restricted attention repairs span mismatch",
        failures <= 1 and elapsed < 600,
        f"(span {span}, {', '.join(lines)}, {failures} failures, {elapsed:.0f}s)",
    )


def test_criterion_6_nce_self_normalization(nce_world):
    started = time.perf_counter()
    nn = nce_world["nn"]
    vocab = nce_world["vocab"]
    log_z = []
    for item in nce_world["heldout"].items:
        ids = encode(vocab, item)
        logits, _ = nn.logits(ids)
        peak = logits[:-1].max(axis=-1, keepdims=True)
        log_z.extend(
            (peak[:, 0] + np.log(np.exp(logits[:-1] - peak).sum(axis=-1))).tolist()
        )
    mean_log_z = float(np.mean(np.abs(log_z)))

    weights = RerankWeights()
    agree = total = 0
    for session in nce_world["sessions"]:
        for utterance in session.utterances:
            selved = rerank_utterance(utterance, nn, None, weights, "self_normalized")
            soft = rerank_utterance(utterance, nn, None, weights, "full_softmax")
            agree += selved[0].hypothesis.words == soft[0].hypothesis.words
            total += 1
    agreement = 100.0 * agree / total
    elapsed = time.perf_counter() - started
    report(
        6, "NCE self-normalization",
        mean_log_z < 0.5 and agreement >= 90.0 and elapsed < 600,
        f"(mean |logsumexp| {mean_log_z:.3f} nats, 1-best agreement "
        f"{agreement:.1f}% of {total}, {elapsed:.0f}s)",
    )


def test_criterion_7_kn4_soundness():
    started = time.perf_counter()
    rng = np.random.default_rng(37)
    corpus = SegmentedCorpus(
        "sentence",
        [["w%d" % rng.integers(0, 30) for _ in range(rng.integers(2, 9))]
         for _ in range(80)],
    )
    vocab = build_vocab(corpus, max_size=40)
    model = KneserNeyLanguageModel(order=4).fit(corpus, vocab)
    worst = 0.0
    for _ in range(100):
        ctx_len = int(rng.integers(0, 4))
        context = tuple(int(x) for x in rng.integers(0, len(vocab), size=ctx_len))
        total = sum(model._prob(ctx_len + 1, context, w) for w in range(len(vocab)))
        worst = max(worst, abs(total - 1.0))
        assert abs(total - 1.0) < 1e-9

    a_vocab = Vocabulary(["<unk>", "<s>", "a", "b"])
    tiny = KneserNeyLanguageModel(order=1).fit(
        SegmentedCorpus("sentence", [["a", "a", "b"]]), a_vocab
    )
    gamma = (7.0 / 3.0) / 3.0
    hand = {
        2: 0.0 + gamma / 4.0,            # "a": count 2 fully discounted (D2 = 2)
        3: (1.0 - 1.0 / 3.0) / 3.0 + gamma / 4.0,  # "b": D1 = 1/3
        0: gamma / 4.0,
        1: gamma / 4.0,
    }
    hand_err = max(
        abs(math.exp(tiny.log_prob((), w)) - p) for w, p in hand.items()
    )
    elapsed = time.perf_counter() - started
    report(
        7, "KN4 soundness",
        worst < 1e-9 and hand_err < 1e-9 and elapsed < 60,
        f"(worst normalization gap {worst:.1e}, hand-example err {hand_err:.1e}, "
        f"{elapsed:.1f}s)",
    )


def test_criterion_8_context_mode_ordering(nce_world):
    started = time.perf_counter()
    sessions = nce_world["sessions"]
    assert len(sessions) >= 200
    weights = RerankWeights()
    wers = {
        mode: session_wer(sessions, nce_world["nn"], weights, mode)
        for mode in ("sentence", "onebest_carryover", "reference_context")
    }
    ordering = (
        wers["reference_context"] <= wers["onebest_carryover"] <= wers["sentence"]
    )
    relative_gain = 100.0 * (wers["sentence"] - wers["reference_context"]) / wers["sentence"]
    elapsed = time.perf_counter() - started
    report(
        8, "context-mode WER ordering",
        ordering and relative_gain >= 5.0 and elapsed < 600,
        f"(sentence {wers['sentence']:.2f} >= onebest {wers['onebest_carryover']:.2f} "
        f">= reference {wers['reference_context']:.2f}; reference gain "
        f"{relative_gain:.1f}%, {len(sessions)} sessions, {elapsed:.0f}s)",
    )


def test_criterion_9_first_pass_reproduction(nce_world):
    started = time.perf_counter()
    am_only = RerankWeights(w_am=1.0, w_fp=0.0, w_nn=0.0, word_insertion_penalty=0.0)
    first_pass_pairs = []
    reranked_pairs = []
    exact = True
    for session in nce_world["sessions"]:
        transcripts = rerank_session(session, nce_world["nn"], am_only, "sentence")
        for utterance, words in zip(session.utterances, transcripts):
            exact &= words == utterance.nbest[0].words
            first_pass_pairs.append((utterance.reference, utterance.nbest[0].words))
            reranked_pairs.append((utterance.reference, words))
    baseline = corpus_wer(first_pass_pairs)
    reproduced = corpus_wer(reranked_pairs)
    elapsed = time.perf_counter() - started
    report(
        9, "AM-only weights reproduce first pass",
        exact and reproduced == baseline and elapsed < 60,
        f"(first-pass WER {baseline:.2f} == reranked {reproduced:.2f}, "
        f"1-bests identical: {exact}, {elapsed:.0f}s)",
    )


def test_criterion_10_round_trip_word_counts():
    started = time.perf_counter()
    sample = Path(__file__).resolve().parent.parent / "data" / "sample.txt"
    with open(sample, encoding="utf-8") as fh:
        sentences = normalize_text(fh)
    paragraphs = segment_paragraphs(sentences, target_chars=200)
    para_corpus = paragraphs_to_corpus(paragraphs)
    sent_corpus = paragraphs_to_sentences(paragraphs, dedupe=False)
    sample_ok = (
        para_corpus.word_count == sent_corpus.word_count
        and [s for p in paragraphs for s in p.sentences]
        == list(sentences)
    )

    rng = np.random.default_rng(41)
    random_ok = True
    for _ in range(100):
        paras = topic_paragraphs(int(rng.integers(1, 12)), seed=int(rng.integers(1e9)))
        para = paragraphs_to_corpus(paras)
        sent = paragraphs_to_sentences(paras, dedupe=False)
        random_ok &= para.word_count == sent.word_count
    elapsed = time.perf_counter() - started
    report(
        10, "round-trip word-count identity",
        sample_ok and random_ok and elapsed < 60,
        f"(bundled sample: {para_corpus.word_count} words across "
        f"{len(para_corpus)} paragraphs / {len(sent_corpus)} sentences; "
        f"100 random corpora exact, {elapsed:.1f}s)",
    )


def test_criterion_11_werr_arithmetic():
    started = time.perf_counter()
    value = werr(4.63, 2.91)
    werr_ok = abs(value - 37.1) <= 0.1
    identity = wer(["a", "b", "c"], ["a", "b", "c"])
    substitution = wer(["a", "b", "c"], ["a", "x", "c"])
    deletion = wer(["a", "b"], [])
    unit_ok = (
        identity.total_errors == 0
        and substitution.substitutions == 1
        and substitution.wer == pytest.approx(1 / 3)
        and deletion.deletions == 2
        and deletion.wer == 1.0
    )
    elapsed = time.perf_counter() - started
    report(
        11, "WERR arithmetic",
        werr_ok and unit_ok and elapsed < 1.0,
        f"(werr(4.63, 2.91) = {value:.2f}, unit cases exact, {elapsed:.2f}s)",
    )
