"""Command-line interface exposing the full pipeline.

One executable with subcommands: corpus construction, vocabulary and
histogram emission, neural and n-gram training, perplexity grids and
span sweeps, fixture synthesis, session re-ranking, and WER scoring.
Every option can come from a ``key = value`` config file (``--config``)
with command-line flags taking precedence; unknown keys are rejected
and the fully resolved configuration is logged (and re-emittable via
``--save-config``).  Logs go to stderr (``LONGSPAN_LOG`` sets the
level); data goes to files or stdout.  Seeds default to 17.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from longspan import corpus as corpus_mod
from longspan import evaluate, rerank
from longspan.estimators import NeuralLanguageModel
from longspan.ngram import KneserNeyLanguageModel
from longspan.serialization import CheckpointError, read_container
from longspan.validation import NotFittedError

log = logging.getLogger("longspan")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_VOCAB_MISMATCH = 4
EXIT_DOMAIN = 5


class ConfigError(ValueError):
    """Bad config file contents or unknown keys."""


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _optional_int(text: str):
    return None if str(text).strip().lower() in ("", "none") else int(text)


def _read_config_file(path) -> dict:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config file {path}: {exc}") from exc
    return values


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace,
                  argv: list) -> None:
    """Merge config-file values under explicit command-line options."""
    if not getattr(args, "config", None):
        return
    actions = {
        action.dest: action
        for action in parser._actions
        if action.dest not in ("help", "config", "save_config")
    }
    explicit = set()
    for action in actions.values():
        if any(opt in argv for opt in action.option_strings):
            explicit.add(action.dest)
    for key, raw in _read_config_file(args.config).items():
        if key not in actions:
            raise ConfigError(f"unknown config key {key!r}")
        if key in explicit:
            continue
        action = actions[key]
        convert = action.type or str
        try:
            setattr(args, key, convert(raw))
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def _log_resolved(parser, args) -> None:
    skip = ("help", "config", "save_config", "func", "command")
    resolved = {
        action.dest: getattr(args, action.dest)
        for action in parser._actions
        if action.dest not in skip and hasattr(args, action.dest)
    }
    for key in sorted(resolved):
        log.info("config: %s = %s", key, resolved[key])
    if getattr(args, "save_config", None):
        with open(args.save_config, "w", encoding="utf-8") as fh:
            for key in sorted(resolved):
                value = resolved[key]
                fh.write(f"{key} = {'' if value is None else value}\n")


def _out_stream(path):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def _load_vocab(path) -> corpus_mod.Vocabulary:
    return corpus_mod.read_vocab(path)


def _load_model(path, vocab):
    fields, _ = read_container(path)
    if fields.get("arch") == "kn4":
        return KneserNeyLanguageModel.load(path, vocab)
    return NeuralLanguageModel.load(path, vocab)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_build_corpus(args):
    with open(args.input, encoding="utf-8") as fh:
        sentences = corpus_mod.normalize_text(fh)
    if not sentences:
        raise ConfigError("input produced no sentences after normalization")
    paragraphs = corpus_mod.segment_paragraphs(sentences, args.target_chars)
    para_corpus = corpus_mod.paragraphs_to_corpus(paragraphs)
    sent_corpus = corpus_mod.paragraphs_to_sentences(paragraphs, dedupe=False)
    unique_corpus = corpus_mod.paragraphs_to_sentences(paragraphs, dedupe=True)
    os.makedirs(args.outdir, exist_ok=True)
    corpus_mod.write_corpus(para_corpus, os.path.join(args.outdir, "paragraphs.txt"))
    corpus_mod.write_corpus(sent_corpus, os.path.join(args.outdir, "sentences.txt"))
    corpus_mod.write_corpus(
        unique_corpus, os.path.join(args.outdir, "sentences_unique.txt")
    )
    if sent_corpus.word_count != para_corpus.word_count:
        raise AssertionError("sentence/paragraph word counts diverged")
    log.info(
        "built %d paragraphs / %d sentences (%d unique), %d words",
        len(para_corpus), len(sent_corpus), len(unique_corpus),
        para_corpus.word_count,
    )
    return EXIT_OK


def cmd_build_vocab(args):
    corpus = corpus_mod.read_corpus(args.corpus, level=args.level)
    vocab = corpus_mod.build_vocab(corpus, max_size=args.max_size)
    corpus_mod.write_vocab(vocab, args.output)
    log.info("vocabulary of %d tokens written to %s", len(vocab), args.output)
    return EXIT_OK


def cmd_stats(args):
    corpus = corpus_mod.read_corpus(args.corpus, level=args.level)
    histogram = corpus_mod.length_histogram(corpus, bin_width=args.bin_width)
    stream = _out_stream(args.output)
    try:
        for bin_start, count in histogram:
            stream.write(f"{bin_start}\t{count}\n")
    finally:
        if stream is not sys.stdout:
            stream.close()
    log.info("histogram over %d items (%d bins)", len(corpus), len(histogram))
    return EXIT_OK


def cmd_train(args):
    vocab = _load_vocab(args.vocab)
    train_corpus = corpus_mod.read_corpus(args.train, level=args.level)
    heldout = (
        corpus_mod.read_corpus(args.heldout, level=args.level)
        if args.heldout else None
    )
    model = NeuralLanguageModel(
        arch=args.arch, embed_dim=args.embed_dim, hidden_dim=args.hidden_dim,
        num_layers=args.num_layers, num_heads=args.num_heads,
        transformer_ff_dim=args.transformer_ff_dim,
        attention_span=args.attention_span, dropout=args.dropout,
        loss=args.loss, nce_noise_samples=args.nce_noise_samples,
        noise_distribution=args.noise_distribution, batch_size=args.batch_size,
        max_sequence_tokens=args.max_sequence_tokens, base_lr=args.base_lr,
        schedule=args.schedule, warmup_steps=args.warmup_steps,
        grad_clip_norm=args.grad_clip_norm, epochs=args.epochs, seed=args.seed,
    )
    model.fit(train_corpus, vocab, heldout=heldout)
    model.save(args.output)
    if args.report:
        model.report_.write(args.report)
    final = model.report_.epochs[-1]
    log.info(
        "trained %s-%s for %d epochs, final train loss %.4f%s",
        args.arch, train_corpus.level, final.epoch, final.train_loss,
        "" if final.heldout_ppl is None else f", heldout ppl {final.heldout_ppl:.2f}",
    )
    return EXIT_OK


def cmd_train_ngram(args):
    vocab = _load_vocab(args.vocab)
    train_corpus = corpus_mod.read_corpus(args.train, level=args.level)
    model = KneserNeyLanguageModel(order=args.order).fit(train_corpus, vocab)
    model.save(args.output)
    log.info("trained order-%d model on %d items", args.order, len(train_corpus))
    return EXIT_OK


def _parse_named(pairs, what):
    out = []
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"{what} must look like NAME=PATH, got {pair!r}")
        name, path = pair.split("=", 1)
        out.append((name, path))
    return out


def cmd_eval_ppl(args):
    vocab = _load_vocab(args.vocab)
    models = [
        (name, _load_model(path, vocab))
        for name, path in _parse_named(args.model, "--model")
    ]
    corpora = [
        (name, corpus_mod.read_corpus(path, level="paragraph"))
        for name, path in _parse_named(args.corpus, "--corpus")
    ]
    stream = _out_stream(args.output)
    try:
        if args.spans:
            if len(models) != 1 or len(corpora) != 1:
                raise ConfigError("--spans needs exactly one model and one corpus")
            spans = [_optional_int(s) for s in args.spans.split(",")]
            stream.write("span\tppl\n")
            for span, ppl in evaluate.span_sweep(
                models[0][1], corpora[0][1], spans,
                count_boundary_tokens=args.count_boundary_tokens,
            ):
                stream.write(f"{'none' if span is None else span}\t{ppl:.4f}\n")
        else:
            rows = evaluate.eval_grid(
                models, corpora, count_boundary_tokens=args.count_boundary_tokens,
                threads=args.threads,
            )
            evaluate.write_grid(rows, stream)
    finally:
        if stream is not sys.stdout:
            stream.close()
    return EXIT_OK


def cmd_make_fixtures(args):
    paragraphs = corpus_mod.read_corpus(args.paragraphs, level="paragraph")
    with open(args.confusion_file, encoding="utf-8") as fh:
        pairs = [tuple(line.split()) for line in fh if line.strip()]
    if any(len(p) != 2 for p in pairs):
        raise ConfigError("confusion file lines must hold exactly two words")
    fp_model = None
    if args.fp_model:
        fp_model = _load_model(args.fp_model, _load_vocab(args.vocab))
    sessions = rerank.make_fixture_sessions(
        paragraphs, pairs, am_margin=args.am_margin, nbest_size=args.nbest_size,
        seed=args.seed, fp_model=fp_model,
    )
    rerank.write_sessions(sessions, args.output)
    n_utts = sum(len(s.utterances) for s in sessions)
    log.info("wrote %d sessions (%d utterances) to %s", len(sessions), n_utts, args.output)
    return EXIT_OK


def cmd_rerank(args):
    vocab = _load_vocab(args.vocab)
    model = _load_model(args.model, vocab)
    sessions = rerank.read_sessions(args.sessions)
    weights = rerank.RerankWeights(
        w_am=args.w_am, w_fp=args.w_fp, w_nn=args.w_nn,
        word_insertion_penalty=args.word_insertion_penalty,
    )
    first_pass_pairs = []
    reranked_pairs = []

    def run_session(session):
        return rerank.rerank_session(
            session, model, weights, mode=args.mode,
            normalization=args.normalization,
        )

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            all_transcripts = list(pool.map(run_session, sessions))
    else:
        all_transcripts = [run_session(session) for session in sessions]
    stream = _out_stream(args.output)
    try:
        for session, transcripts in zip(sessions, all_transcripts):
            for utterance, words in zip(session.utterances, transcripts):
                stream.write(f"{utterance.id}\t{' '.join(words)}\n")
                first_pass_pairs.append((utterance.reference, utterance.nbest[0].words))
                reranked_pairs.append((utterance.reference, words))
    finally:
        if stream is not sys.stdout:
            stream.close()
    baseline = rerank.corpus_wer(first_pass_pairs)
    new = rerank.corpus_wer(reranked_pairs)
    reduction = rerank.werr(baseline, new) if baseline > 0 else 0.0
    summary = (
        f"first_pass_wer\t{baseline:.2f}\n"
        f"reranked_wer\t{new:.2f}\n"
        f"werr\t{reduction:.2f}\n"
    )
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(summary)
    log.info("mode=%s WER %.2f -> %.2f (WERR %.2f%%)", args.mode, baseline, new, reduction)
    return EXIT_OK


def cmd_wer(args):
    with open(args.ref, encoding="utf-8") as fh:
        refs = [line.split() for line in fh]
    with open(args.hyp, encoding="utf-8") as fh:
        hyps = [line.split() for line in fh]
    if len(refs) != len(hyps):
        raise ConfigError(
            f"reference has {len(refs)} lines but hypothesis has {len(hyps)}"
        )
    total = rerank.WerStats()
    for ref, hyp in zip(refs, hyps):
        total = total + rerank.wer(ref, hyp)
    stream = _out_stream(args.output)
    try:
        stream.write(
            f"wer\t{100 * total.wer:.2f}\n"
            f"substitutions\t{total.substitutions}\n"
            f"insertions\t{total.insertions}\n"
            f"deletions\t{total.deletions}\n"
            f"reference_words\t{total.reference_words}\n"
        )
    finally:
        if stream is not sys.stdout:
            stream.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def _required_arg(parser, *names, **kwargs):
    """Like add_argument(required=True), but satisfiable via --config."""
    action = parser.add_argument(*names, **kwargs)
    keys = getattr(parser, "_deferred_required", [])
    keys.append(action.dest)
    parser._deferred_required = keys


def _add_common(parser):
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument("--save-config", help="write the resolved settings here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longspan",
        description="Paragraph-level language modeling and n-best rescoring pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", help="normalize raw text and segment paragraphs")
    _required_arg(p, "--input", help="raw UTF-8 text")
    _required_arg(p, "--outdir")
    p.add_argument("--target-chars", type=int, default=2000)
    _add_common(p)
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("build-vocab", help="frequency-ranked vocabulary file")
    _required_arg(p, "--corpus")
    p.add_argument("--level", choices=("sentence", "paragraph"), default="paragraph")
    p.add_argument("--max-size", type=int, default=2000)
    _required_arg(p, "--output")
    _add_common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("stats", help="length histogram (words per item)")
    _required_arg(p, "--corpus")
    p.add_argument("--level", choices=("sentence", "paragraph"), default="paragraph")
    p.add_argument("--bin-width", type=int, default=10)
    p.add_argument("--output")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a neural language model")
    _required_arg(p, "--train")
    _required_arg(p, "--level", choices=("sentence", "paragraph"))
    _required_arg(p, "--vocab")
    p.add_argument("--heldout")
    _required_arg(p, "--output")
    p.add_argument("--report")
    p.add_argument("--arch", choices=("lstm", "lstma", "transformer"), default="lstm")
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--num-heads", type=int, default=2)
    p.add_argument("--transformer-ff-dim", type=int, default=256)
    p.add_argument("--attention-span", type=_optional_int, default=None)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--loss", choices=("nce", "cross_entropy"), default="nce")
    p.add_argument("--nce-noise-samples", type=int, default=64)
    p.add_argument("--noise-distribution", choices=("unigram", "uniform"),
                   default="unigram")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--max-sequence-tokens", type=int, default=256)
    p.add_argument("--base-lr", type=float, default=0.5)
    p.add_argument("--schedule", choices=("constant", "noam"), default=None)
    p.add_argument("--warmup-steps", type=int, default=200)
    p.add_argument("--grad-clip-norm", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=17)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-ngram", help="train the Kneser-Ney baseline")
    _required_arg(p, "--train")
    p.add_argument("--level", choices=("sentence", "paragraph"), default="sentence")
    _required_arg(p, "--vocab")
    p.add_argument("--order", type=int, default=4)
    _required_arg(p, "--output")
    _add_common(p)
    p.set_defaults(func=cmd_train_ngram)

    p = sub.add_parser("eval-ppl", help="perplexity grid or attention-span sweep")
    _required_arg(p, "--vocab")
    _required_arg(p, "--model", action="append", metavar="NAME=PATH")
    _required_arg(p, "--corpus", action="append", metavar="NAME=PATH")
    p.add_argument("--spans", help="comma-separated spans (eg 8,16,none)")
    p.add_argument("--count-boundary-tokens", type=_parse_bool, default=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output")
    _add_common(p)
    p.set_defaults(func=cmd_eval_ppl)

    p = sub.add_parser("make-fixtures", help="synthesize n-best sessions")
    _required_arg(p, "--paragraphs")
    _required_arg(p, "--confusion-file",
                  help="two words per line: original and its confusable twin")
    p.add_argument("--fp-model", help="n-gram checkpoint for first-pass LM scores")
    p.add_argument("--vocab", help="vocabulary for --fp-model")
    p.add_argument("--am-margin", type=float, default=1.0)
    p.add_argument("--nbest-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=17)
    _required_arg(p, "--output")
    _add_common(p)
    p.set_defaults(func=cmd_make_fixtures)

    p = sub.add_parser("rerank", help="re-rank n-best sessions")
    _required_arg(p, "--sessions")
    _required_arg(p, "--model")
    _required_arg(p, "--vocab")
    p.add_argument("--mode", choices=rerank.CONTEXT_MODES, default="sentence")
    p.add_argument("--normalization", choices=("self_normalized", "full_softmax"),
                   default="self_normalized")
    p.add_argument("--w-am", type=float, default=1.0)
    p.add_argument("--w-fp", type=float, default=0.5)
    p.add_argument("--w-nn", type=float, default=0.5)
    p.add_argument("--word-insertion-penalty", type=float, default=0.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output")
    p.add_argument("--summary")
    _add_common(p)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("wer", help="pooled WER between parallel text files")
    _required_arg(p, "--ref")
    _required_arg(p, "--hyp")
    p.add_argument("--output")
    _add_common(p)
    p.set_defaults(func=cmd_wer)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("LONGSPAN_LOG", "INFO").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.INFO),
        format="%(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    sub_parser = next(
        action.choices[args.command]
        for action in parser._actions
        if isinstance(action, argparse._SubParsersAction)
    )
    try:
        _apply_config(sub_parser, args, argv)
        for key in getattr(sub_parser, "_deferred_required", []):
            if getattr(args, key, None) in (None, []):
                raise ConfigError(f"missing required setting {key!r}")
        _log_resolved(sub_parser, args)
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_MISSING_FILE
    except (CheckpointError, NotFittedError) as exc:
        log.error("model mismatch: %s", exc)
        return EXIT_VOCAB_MISMATCH
    except (ValueError, AssertionError) as exc:
        log.error("%s", exc)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
