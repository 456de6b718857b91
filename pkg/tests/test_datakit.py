"""Corpus plumbing: preprocessing, vocabularies, batching, generators."""

import collections

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sdgmlab.datakit import (
    PAD_ID,
    UNK_ID,
    Batch,
    DatasetStats,
    Document,
    Vocab,
    build_vocab,
    documents_to_batch,
    generate_class_corpus,
    generate_twin_corpus,
    ingest_tsv,
    make_batches,
    partition_semi_supervised,
    preprocess,
    write_tsv,
)
from sdgmlab.errors import InputError, ParseError, VocabError


class TestPreprocess:
    def test_punctuation_digits_whitespace(self):
        assert preprocess("Hello,  World 42!") == ["hello", "world", "00"]

    def test_digit_substitution_after_punctuation_removal(self):
        # the comma inside the number disappears first, then each digit maps to 0
        assert preprocess("Fiat 4,000 lire") == ["fiat", "0000", "lire"]

    def test_pure_punctuation_is_empty_signal(self):
        assert preprocess("...") == []
        assert preprocess("  \t ") == []

    def test_unicode_punctuation_removed(self):
        assert preprocess("«March» — report") == ["march", "report"]

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        pieces = ["Abc", "4,000", "...", "x-y", "Z9", "über", "(net)", "7%"]
        for _ in range(50):
            text = " ".join(rng.choice(pieces, size=rng.integers(1, 8)))
            once = preprocess(text)
            assert preprocess(" ".join(once)) == once


class TestVocab:
    def test_single_word_vocab(self):
        v = build_vocab([["same", "same", "same"]], max_size=3)
        assert v.id2word == ["<unk>", "<pad>", "same"]
        assert v.size == 3

    def test_no_unk_when_capacity_suffices(self):
        tokens = ["alpha", "beta", "gamma", "beta"]
        v = build_vocab([tokens], max_size=10)
        assert UNK_ID not in v.encode(tokens)

    def test_round_trip_on_in_vocab_tokens(self):
        rng = np.random.default_rng(3)
        words = [f"t{i}" for i in range(40)]
        weights = 1.0 / np.arange(1, 41)
        weights /= weights.sum()
        corpus = [
            [words[i] for i in rng.choice(40, size=rng.integers(5, 15), p=weights)]
            for _ in range(30)
        ]
        v = build_vocab(corpus)
        for doc in corpus:
            assert v.decode(v.encode(doc)) == doc

    def test_frequency_ties_break_lexicographically(self):
        v = build_vocab([["b", "a", "c", "a", "c", "b"]], max_size=4)
        # all tied at frequency 2; 'a' and 'b' win the two slots
        assert v.id2word[2:] == ["a", "b"]

    def test_oov_encodes_to_unk(self):
        v = build_vocab([["known"]])
        assert v.encode(["known", "mystery"]) == [2, UNK_ID]

    def test_decode_rejects_out_of_range(self):
        v = build_vocab([["word"]])
        with pytest.raises(VocabError):
            v.decode([v.size])

    def test_save_load_round_trip(self, tmp_path):
        v = build_vocab([["zeta", "eta", "eta", "theta", "theta", "theta"]])
        path = str(tmp_path / "vocab.txt")
        v.save(path)
        again = Vocab.load(path)
        assert again.id2word == v.id2word

    def test_duplicate_and_special_words_rejected(self):
        with pytest.raises(InputError):
            Vocab(["dup", "dup"])
        with pytest.raises(InputError):
            Vocab(["<pad>"])


class TestIngestTsv:
    def _write(self, tmp_path, lines):
        path = tmp_path / "corpus.tsv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)

    def test_four_classes_in_declared_order(self, tmp_path):
        path = self._write(tmp_path, [
            "C\ten\tshares rallied today",
            "E\ten\tinflation data due",
            "G\ten\tparliament met again",
            "M\ten\tnew device unveiled",
        ])
        corpus = ingest_tsv(path)
        assert [d.label for d in corpus.documents] == [0, 1, 2, 3]
        assert corpus.language_names == ["en"]
        assert all(d.language == 0 for d in corpus.documents)

    def test_missing_field_names_line(self, tmp_path):
        path = self._write(tmp_path, ["C\ten\tfine text", "E\tonly two fields"])
        with pytest.raises(ParseError, match="line 2"):
            ingest_tsv(path)

    def test_unknown_label_names_line(self, tmp_path):
        path = self._write(tmp_path, ["C\ten\tfine", "Q\ten\twrong label"])
        with pytest.raises(ParseError, match="line 2"):
            ingest_tsv(path)

    def test_thousand_line_fixture_class_counts(self, tmp_path):
        counts = {"C": 270, "E": 234, "G": 252, "M": 244}
        rng = np.random.default_rng(11)
        lines = [f"{name}\ten\tfiller text number {i}" for name, n in counts.items() for i in range(n)]
        rng.shuffle(lines)
        corpus = ingest_tsv(self._write(tmp_path, lines))
        got = collections.Counter(d.label for d in corpus.documents)
        assert got == {0: 270, 1: 234, 2: 252, 3: 244}

    def test_empty_text_lines_dropped_and_reported(self, tmp_path):
        path = self._write(tmp_path, ["C\ten\treal words", "E\ten\t...", "G\ten\tmore words"])
        corpus = ingest_tsv(path)
        assert len(corpus.documents) == 2
        assert corpus.dropped_lines == [2]

    def test_round_trip_through_write_tsv(self, tmp_path):
        gen = generate_class_corpus(k=4, vocab_size=30, topic_words_per_class=3,
                                    n_docs=40, doc_length_range=(4, 8), seed=2)
        docs = gen.splits.train[:10]
        path = str(tmp_path / "out.tsv")
        write_tsv(path, docs, gen.vocab, language_names=["en"])
        back = ingest_tsv(path)
        assert [d.label for d in back.documents] == [d.label for d in docs]
        for orig, new in zip(docs, back.documents):
            assert back.vocabs[0].decode(new.tokens) == gen.vocab.decode(orig.tokens)


class TestBatching:
    def _docs(self, lengths, language=0, start=2):
        return [
            Document(tokens=list(range(start, start + n)), language=language, label=i % 2)
            for i, n in enumerate(lengths)
        ]

    def test_single_batch_when_size_covers_all(self):
        batches = make_batches(self._docs([3, 4, 2]), batch_size=10)
        assert len(batches) == 1
        assert batches[0].size == 3

    def test_no_padding_for_equal_lengths(self):
        batches = make_batches(self._docs([5, 5, 5]), batch_size=3)
        assert batches[0].token_ids.shape == (3, 5)
        assert not np.any(batches[0].token_ids == PAD_ID)

    def test_batches_are_a_permutation_of_the_input(self):
        docs = self._docs([3, 7, 2, 5, 4, 6, 2])
        batches = make_batches(docs, batch_size=3, seed=9)
        seen = []
        for b in batches:
            for i in range(b.size):
                seen.append(tuple(b.token_ids[i, : b.lengths[i]].tolist()))
        assert sorted(seen) == sorted(tuple(d.tokens) for d in docs)

    def test_seed_determinism(self):
        docs = self._docs([3, 7, 2, 5, 4])
        a = make_batches(docs, batch_size=2, seed=4)
        b = make_batches(docs, batch_size=2, seed=4)
        for x, y in zip(a, b):
            assert_array_equal(x.token_ids, y.token_ids)
            assert_array_equal(x.labels, y.labels)

    def test_padding_and_lengths(self):
        batch = documents_to_batch(self._docs([2, 4]))
        assert batch.token_ids.shape == (2, 4)
        assert_array_equal(batch.lengths, [2, 4])
        assert np.all(batch.token_ids[0, 2:] == PAD_ID)

    def test_mixed_language_batch_rejected(self):
        docs = self._docs([3]) + self._docs([3], language=1)
        with pytest.raises(InputError, match="language"):
            documents_to_batch(docs)

    def test_bow_counts_ignore_padding(self):
        docs = [Document(tokens=[2, 3, 2], label=0), Document(tokens=[4, 4, 4, 4, 4], label=1)]
        batch = documents_to_batch(docs)
        counts = batch.bow_counts(vocab_size=6)
        expected = np.zeros((2, 6))
        expected[0, 2], expected[0, 3] = 2, 1
        expected[1, 4] = 5
        assert_allclose(counts, expected)


class TestPartition:
    def _train(self, per_class=20, k=4):
        docs = []
        for c in range(k):
            for i in range(per_class):
                docs.append(Document(tokens=[2 + i], label=c))
        return docs

    def test_disjoint_cover_and_balance(self):
        train = self._train()
        lab, unlab = partition_semi_supervised(train, 8, 4, np.random.default_rng(0))
        assert len(lab) + len(unlab) == len(train)
        assert collections.Counter(d.label for d in lab) == {0: 2, 1: 2, 2: 2, 3: 2}
        assert all(d.label is None for d in unlab)
        # cover: every original token multiset appears exactly once across both parts
        combined = sorted(tuple(d.tokens) + (d.label,) for d in lab) + sorted(
            tuple(d.tokens) + (None,) for d in unlab
        )
        assert len(combined) == len(train)

    def test_indivisible_count_rejected(self):
        with pytest.raises(InputError):
            partition_semi_supervised(self._train(), 10, 4, np.random.default_rng(0))

    def test_insufficient_class_rejected(self):
        with pytest.raises(InputError):
            partition_semi_supervised(self._train(per_class=1), 8, 4, np.random.default_rng(0))

    def test_stats_fields_validated(self):
        with pytest.raises(InputError):
            DatasetStats(-1, 5)


def _nb_accuracy(corpus, train_docs, test_docs):
    from sklearn.naive_bayes import MultinomialNB

    v = corpus.vocab.size

    def matrix(docs):
        x = np.zeros((len(docs), v))
        for i, d in enumerate(docs):
            np.add.at(x[i], d.tokens, 1.0)
        return x

    clf = MultinomialNB()
    clf.fit(matrix(train_docs), [d.label for d in train_docs])
    pred = clf.predict(matrix(test_docs))
    return float(np.mean(pred == np.array([d.label for d in test_docs])))


class TestClassCorpus:
    def test_bitwise_determinism(self):
        a = generate_class_corpus(n_docs=80, vocab_size=50, topic_words_per_class=4, seed=33)
        b = generate_class_corpus(n_docs=80, vocab_size=50, topic_words_per_class=4, seed=33)
        assert [d.tokens for d in a.splits.train] == [d.tokens for d in b.splits.train]
        assert [d.label for d in a.splits.test] == [d.label for d in b.splits.test]
        assert a.topic_words == b.topic_words

    def test_planted_words_disjoint_and_in_range(self):
        c = generate_class_corpus(n_docs=40, seed=1)
        all_planted = [w for ws in c.topic_words.values() for w in ws]
        assert len(all_planted) == len(set(all_planted))
        assert all(2 <= w < c.vocab.size for w in all_planted)

    def test_classes_balanced_and_splits_disjoint(self):
        c = generate_class_corpus(k=4, n_docs=200, vocab_size=60,
                                  topic_words_per_class=5, seed=5)
        for part in (c.splits.train, c.splits.dev, c.splits.test):
            counts = collections.Counter(d.label for d in part)
            assert len(set(counts.values())) == 1
        total = len(c.splits.train) + len(c.splits.dev) + len(c.splits.test)
        assert total == 200

    def test_naive_bayes_oracle_on_defaults(self):
        c = generate_class_corpus(seed=12)
        acc = _nb_accuracy(c, c.splits.train, c.splits.test)
        assert acc >= 0.95

    def test_zero_boost_removes_all_signal(self):
        accs = []
        for seed in range(5):
            c = generate_class_corpus(k=4, vocab_size=80, topic_words_per_class=6,
                                      n_docs=400, topic_boost=0.0, seed=seed)
            accs.append(_nb_accuracy(c, c.splits.train, c.splits.test))
        assert float(np.mean(accs)) <= 0.25 + 0.05

    def test_parameter_validation(self):
        with pytest.raises(InputError):
            generate_class_corpus(k=4, vocab_size=20, topic_words_per_class=5)
        with pytest.raises(InputError):
            generate_class_corpus(doc_length_range=(0, 5))


class TestTwinCorpus:
    def test_identity_bijection_maps_words_to_themselves(self):
        tw = generate_twin_corpus(vocab_size=40, n_docs=60, seed=3, identity_mapping=True)
        assert all(a == b for a, b in tw.gold_words.items())

    def test_token_counts_match(self):
        tw = generate_twin_corpus(vocab_size=40, n_docs=60, seed=3)
        count_a = sum(len(d) for d in tw.corpus_a.train) + sum(len(d) for d in tw.corpus_a.dev)
        count_b = sum(len(d) for d in tw.corpus_b.train) + sum(len(d) for d in tw.corpus_b.dev)
        assert count_a == count_b

    def test_frequency_spectrum_equal_under_bijection(self):
        tw = generate_twin_corpus(vocab_size=50, n_docs=120, seed=8)
        freq_a = collections.Counter(t for d in tw.corpus_a.train + tw.corpus_a.dev for t in d.tokens)
        freq_b = collections.Counter(t for d in tw.corpus_b.train + tw.corpus_b.dev for t in d.tokens)
        mapped = {tw.gold_ids[w]: n for w, n in freq_a.items()}
        assert mapped == dict(freq_b)

    def test_surface_forms_distinct_across_languages(self):
        tw = generate_twin_corpus(vocab_size=30, n_docs=40, seed=2)
        assert not (set(tw.vocab_a.id2word[2:]) & set(tw.vocab_b.id2word[2:]))

    def test_bitwise_determinism(self):
        a = generate_twin_corpus(vocab_size=30, n_docs=40, seed=21)
        b = generate_twin_corpus(vocab_size=30, n_docs=40, seed=21)
        assert [d.tokens for d in a.corpus_a.train] == [d.tokens for d in b.corpus_a.train]
        assert [d.tokens for d in a.corpus_b.dev] == [d.tokens for d in b.corpus_b.dev]
        assert a.gold_ids == b.gold_ids

    def test_gold_lexicon_is_a_bijection(self):
        tw = generate_twin_corpus(vocab_size=30, n_docs=40, seed=4)
        assert len(set(tw.gold_ids.values())) == len(tw.gold_ids) == 30
