"""Corpus construction: normalization, segmentation, vocabulary, round trips."""

import numpy as np
import pytest

from longspan.corpus import (
    BOUNDARY_TOKEN,
    CorpusError,
    Paragraph,
    SegmentedCorpus,
    Sentence,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    length_histogram,
    normalize_text,
    paragraphs_to_corpus,
    paragraphs_to_sentences,
    read_corpus,
    read_vocab,
    segment_paragraphs,
    split_corpus_items,
    write_corpus,
    write_histogram,
    write_vocab,
)


def make_sentence_of_len(char_len: int) -> Sentence:
    return Sentence(["x" * char_len])


def random_paragraphs(rng, n_paras=10, max_sents=5, max_words=6):
    paras = []
    for _ in range(n_paras):
        sents = []
        for _ in range(rng.integers(1, max_sents + 1)):
            words = [
                "w%d" % rng.integers(0, 20) for _ in range(rng.integers(1, max_words + 1))
            ]
            sents.append(Sentence(words))
        paras.append(Paragraph(sents))
    return paras


class TestNormalize:
    def test_single_sentence(self):
        out = normalize_text(["Hello, World!"])
        assert [s.words for s in out] == [("hello", "world")]

    def test_empty_input(self):
        assert normalize_text([""]) == []
        assert normalize_text([]) == []
        assert normalize_text(["?!.,;"]) == []

    def test_two_sentences_with_apostrophe(self):
        # Hand trace: lowercase, split on '.', keep the in-word apostrophe.
        out = normalize_text(["It's A test. Second one."])
        assert [list(s.words) for s in out] == [["it's", "a", "test"], ["second", "one"]]

    def test_char_len_counts_single_spaces(self):
        (sent,) = normalize_text(["ab cde"])
        assert sent.char_len == len("ab cde")

    def test_boundary_token_rejected_in_sentence(self):
        with pytest.raises(CorpusError):
            Sentence(["a", BOUNDARY_TOKEN])
        with pytest.raises(CorpusError):
            Sentence([])


class TestSegmentParagraphs:
    def test_nearest_boundary_rule(self):
        # cum after s1 = 1500 (off by 500); after s2 = 2401 (off by 401):
        # include s2, then close. s3 forms its own paragraph.
        sents = [make_sentence_of_len(n) for n in (1500, 900, 600)]
        paras = segment_paragraphs(sents, target_chars=2000)
        assert [len(p.sentences) for p in paras] == [2, 1]
        assert paras[0].sentences == (sents[0], sents[1])

    def test_oversized_sentence_never_split(self):
        paras = segment_paragraphs([make_sentence_of_len(5000)], target_chars=2000)
        assert len(paras) == 1 and len(paras[0].sentences) == 1

    def test_target_one_gives_singletons(self):
        sents = [make_sentence_of_len(n) for n in (3, 10, 7, 2)]
        paras = segment_paragraphs(sents, target_chars=1)
        assert all(len(p.sentences) == 1 for p in paras)

    def test_rejects_bad_target(self):
        with pytest.raises(CorpusError):
            segment_paragraphs([make_sentence_of_len(3)], target_chars=0)

    def test_partition_property(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            sents = [
                Sentence(["w%d" % rng.integers(0, 9)] * rng.integers(1, 5))
                for _ in range(rng.integers(1, 40))
            ]
            target = int(rng.integers(1, 60))
            paras = segment_paragraphs(sents, target_chars=target)
            flat = [s for p in paras for s in p.sentences]
            assert flat == sents


class TestRoundTrip:
    def test_dedupe_removes_duplicates_in_order(self):
        a, b, c = Sentence(["a"]), Sentence(["b"]), Sentence(["c"])
        paras = [Paragraph([a, b]), Paragraph([a, c])]
        corpus = paragraphs_to_sentences(paras, dedupe=True)
        assert corpus.items == [["a"], ["b"], ["c"]]

    def test_no_dedupe_preserves_word_count(self):
        a, b, c = Sentence(["a", "a2"]), Sentence(["b"]), Sentence(["c"])
        paras = [Paragraph([a, b]), Paragraph([a, c])]
        sent_corpus = paragraphs_to_sentences(paras, dedupe=False)
        assert sent_corpus.items == [["a", "a2"], ["b"], ["a", "a2"], ["c"]]
        assert sent_corpus.word_count == paragraphs_to_corpus(paras).word_count

    def test_empty_corpus(self):
        assert paragraphs_to_sentences([], dedupe=True).items == []

    def test_word_count_property_random(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            paras = random_paragraphs(rng)
            para_corpus = paragraphs_to_corpus(paras)
            sent_corpus = paragraphs_to_sentences(paras, dedupe=False)
            assert sent_corpus.word_count == para_corpus.word_count

    def test_dedupe_idempotent(self):
        rng = np.random.default_rng(2)
        paras = random_paragraphs(rng, n_paras=20)
        once = paragraphs_to_sentences(paras, dedupe=True)
        twice = split_corpus_items(once, dedupe=True)
        assert once.items == twice.items

    def test_split_corpus_items_matches_paragraph_split(self):
        rng = np.random.default_rng(3)
        paras = random_paragraphs(rng)
        via_paras = paragraphs_to_sentences(paras, dedupe=False)
        via_items = split_corpus_items(paragraphs_to_corpus(paras), dedupe=False)
        assert via_paras.items == via_items.items


class TestVocabulary:
    def test_frequency_ranked(self):
        corpus = SegmentedCorpus("sentence", [["a", "a", "b"], ["a"]])
        vocab = build_vocab(corpus, max_size=4)
        assert vocab.tokens == ["<unk>", "<s>", "a", "b"]
        assert vocab.id_of("a") == 2 and vocab.id_of("b") == 3

    def test_oov_encodes_to_unk(self):
        corpus = SegmentedCorpus("sentence", [["a", "a", "b"]])
        vocab = build_vocab(corpus, max_size=4)
        assert vocab.id_of("c") == vocab.unk_id == 0

    def test_lexicographic_tie_break(self):
        corpus = SegmentedCorpus("sentence", [["a", "b"], ["b", "a"]])
        vocab = build_vocab(corpus, max_size=3)
        assert "a" in vocab and "b" not in vocab

    def test_rejects_small_max_size(self):
        corpus = SegmentedCorpus("sentence", [["a"]])
        with pytest.raises(CorpusError):
            build_vocab(corpus, max_size=2)

    def test_encode_decode_roundtrip(self):
        corpus = SegmentedCorpus("sentence", [["a", "b", "c"]])
        vocab = build_vocab(corpus, max_size=10)
        ids = encode(vocab, ["a", "b", "c"])
        assert decode(vocab, ids) == [BOUNDARY_TOKEN, "a", "b", "c"]

    def test_encode_ids_always_in_range(self):
        rng = np.random.default_rng(4)
        corpus = SegmentedCorpus(
            "sentence",
            [["w%d" % rng.integers(0, 50) for _ in range(8)] for _ in range(40)],
        )
        vocab = build_vocab(corpus, max_size=10)
        for item in corpus.items:
            assert all(0 <= i < len(vocab) for i in encode(vocab, item))

    def test_paragraph_boundary_placement(self):
        vocab = Vocabulary(["<unk>", "<s>", "a", "b"])
        para = Paragraph([Sentence(["a"]), Sentence(["b"])])
        assert encode(vocab, para) == [1, 2, 1, 3]

    def test_sentence_leading_boundary(self):
        vocab = Vocabulary(["<unk>", "<s>", "a", "b"])
        assert encode(vocab, Sentence(["a", "b"])) == [1, 2, 3]

    def test_decode_rejects_out_of_range(self):
        vocab = Vocabulary(["<unk>", "<s>", "a"])
        with pytest.raises(CorpusError):
            decode(vocab, [len(vocab)])

    def test_reserved_ids(self):
        with pytest.raises(CorpusError):
            Vocabulary(["<s>", "<unk>", "a"])


class TestHistogram:
    def test_basic_binning(self):
        corpus = SegmentedCorpus(
            "sentence", [["w"] * 3, ["w"] * 5, ["w"] * 12]
        )
        assert length_histogram(corpus, bin_width=10) == [(0, 2), (10, 1)]

    def test_empty_corpus(self):
        assert length_histogram(SegmentedCorpus("sentence", []), 5) == []

    def test_width_one(self):
        corpus = SegmentedCorpus("sentence", [["w", "w"], ["w", "w"]])
        assert length_histogram(corpus, bin_width=1) == [(2, 2)]

    def test_rejects_zero_width(self):
        with pytest.raises(CorpusError):
            length_histogram(SegmentedCorpus("sentence", []), 0)

    def test_mass_conservation(self):
        rng = np.random.default_rng(5)
        paras = random_paragraphs(rng, n_paras=30)
        corpus = paragraphs_to_corpus(paras)
        hist = length_histogram(corpus, bin_width=4)
        assert sum(c for _, c in hist) == len(corpus.items)


class TestFiles:
    def test_corpus_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        paras = random_paragraphs(rng)
        corpus = paragraphs_to_corpus(paras)
        path = tmp_path / "paras.txt"
        write_corpus(corpus, path)
        back = read_corpus(path, level="paragraph")
        assert back.items == corpus.items
        assert back.word_count == corpus.word_count

    def test_sentence_file_rejects_boundaries(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("a <s> b\n")
        with pytest.raises(CorpusError):
            read_corpus(path, level="sentence")

    def test_vocab_roundtrip(self, tmp_path):
        vocab = Vocabulary(["<unk>", "<s>", "b", "a"])
        path = tmp_path / "vocab.txt"
        write_vocab(vocab, path)
        back = read_vocab(path)
        assert back.tokens == vocab.tokens

    def test_vocab_file_requires_reserved_lines(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("a\nb\nc\n")
        with pytest.raises(CorpusError):
            read_vocab(path)

    def test_histogram_file(self, tmp_path):
        path = tmp_path / "hist.tsv"
        write_histogram([(10, 1), (0, 2)], path)
        assert path.read_text() == "0\t2\n10\t1\n"
