"""Corpora: preprocessing, vocabularies, batching, synthetic generators.

The synthetic generators exist so the trends the models are supposed to
show (semi-supervised gains, cross-lingual alignment) can be verified
on a desk in minutes instead of on MLDoc/Europarl in days.  Generators
are pure functions of their seed.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from sdgmlab.errors import InputError, ParseError, VocabError

UNK_ID = 0
PAD_ID = 1
UNK_WORD = "<unk>"
PAD_WORD = "<pad>"

DEFAULT_CLASS_NAMES = ("C", "E", "G", "M")

_DIGITS = set("0123456789")


def preprocess(text: str) -> list[str]:
    """Lowercase, strip punctuation, map ASCII digits to '0', split on whitespace.

    Returns [] for text that reduces to nothing (caller drops the line).
    Punctuation is anything in the Unicode P* categories.
    """
    chars = []
    for ch in text.lower():
        if unicodedata.category(ch).startswith("P"):
            continue
        chars.append("0" if ch in _DIGITS else ch)
    return "".join(chars).split()


class Vocab:
    """Word/id mapping with UNK=0 and PAD=1 reserved."""

    def __init__(self, words: list[str], freqs: dict[str, int] | None = None):
        if len(set(words)) != len(words):
            raise InputError("duplicate words in vocabulary")
        if UNK_WORD in words or PAD_WORD in words:
            raise InputError("special markers cannot be vocabulary words")
        self.id2word = [UNK_WORD, PAD_WORD, *words]
        self.word2id = {w: i for i, w in enumerate(self.id2word)}
        self.freqs = dict(freqs or {})

    @property
    def size(self) -> int:
        return len(self.id2word)

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.word2id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        out = []
        for i in ids:
            if not (0 <= i < self.size):
                raise VocabError(f"id {i} outside vocabulary of size {self.size}")
            out.append(self.id2word[i])
        return out

    def id_of(self, word: str) -> int:
        try:
            return self.word2id[word]
        except KeyError:
            raise VocabError(f"word {word!r} not in vocabulary") from None

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.id2word[2:]:
                fh.write(w + "\n")

    @staticmethod
    def load(path: str) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            words = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return Vocab(words)


def build_vocab(token_lists, max_size: int | None = None) -> Vocab:
    """Most frequent (max_size - 2) types; frequency ties break lexicographically."""
    counts = Counter()
    for tokens in token_lists:
        counts.update(tokens)
    if not counts:
        raise InputError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        if max_size < 2:
            raise InputError("max_size must be at least 2 to hold the special ids")
        ranked = ranked[: max_size - 2]
    return Vocab([w for w, _ in ranked], freqs=dict(ranked))


@dataclass
class Document:
    tokens: list[int]
    language: int = 0
    label: int | None = None
    raw_text: str | None = None

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise InputError("Document must hold at least one token")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class DatasetStats:
    n_labelled: int
    n_unlabelled: int

    def __post_init__(self):
        if self.n_labelled < 0 or self.n_unlabelled < 0:
            raise InputError("document counts cannot be negative")


@dataclass
class SplitSet:
    train: list[Document]
    dev: list[Document]
    test: list[Document] = field(default_factory=list)
    stats: DatasetStats | None = None


@dataclass
class Corpus:
    """Ingested TSV corpus: documents plus the per-language vocabularies."""

    documents: list[Document]
    vocabs: dict[int, Vocab]
    class_names: tuple[str, ...]
    language_names: list[str]
    dropped_lines: list[int] = field(default_factory=list)


def ingest_tsv(
    path: str,
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES,
    max_vocab: int | None = None,
    vocabs: dict[int, Vocab] | None = None,
) -> Corpus:
    """Read label<TAB>language<TAB>text lines into preprocessed Documents.

    Label ids follow the declared class-name order; a "-" label means
    the row is unlabelled.  Language ids follow first appearance.  Lines
    whose text preprocesses to nothing are dropped (and reported in
    Corpus.dropped_lines).
    """
    label_of = {name: i for i, name in enumerate(class_names)}
    language_ids: dict[str, int] = {}
    raw: list[tuple[int, int, list[str], str]] = []
    dropped: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                dropped.append(lineno)
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
            label_name, lang_name, text = fields
            # "-" marks an unlabelled row, matching what write_tsv emits.
            if label_name != "-" and label_name not in label_of:
                raise ParseError(f"line {lineno}: unknown label {label_name!r} (expected one of {class_names})")
            tokens = preprocess(text)
            if not tokens:
                dropped.append(lineno)
                continue
            lang_id = language_ids.setdefault(lang_name, len(language_ids))
            raw.append((label_of.get(label_name), lang_id, tokens, text))
    if not raw:
        raise ParseError(f"{path}: no usable documents")

    if vocabs is None:
        vocabs = {}
        for lang_id in set(r[1] for r in raw):
            vocabs[lang_id] = build_vocab((r[2] for r in raw if r[1] == lang_id), max_vocab)
    documents = [
        Document(tokens=vocabs[lang].encode(tokens), language=lang, label=label, raw_text=text)
        for label, lang, tokens, text in raw
    ]
    names = [None] * len(language_ids)
    for name, i in language_ids.items():
        names[i] = name
    return Corpus(documents, vocabs, class_names, names, dropped)


@dataclass
class Batch:
    """Right-padded batch of same-language documents."""

    token_ids: np.ndarray  # (n, width) int64
    lengths: np.ndarray  # (n,) int64
    labels: np.ndarray  # (n,) int64, -1 where unlabelled
    language: int = 0

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    def bow_counts(self, vocab_size: int) -> np.ndarray:
        counts = np.zeros((self.size, vocab_size))
        for i in range(self.size):
            np.add.at(counts[i], self.token_ids[i, : self.lengths[i]], 1.0)
        return counts


def documents_to_batch(docs: list[Document], pad_id: int = PAD_ID) -> Batch:
    if not docs:
        raise InputError("cannot batch zero documents")
    languages = {d.language for d in docs}
    if len(languages) > 1:
        raise InputError(f"mixed languages in one batch: {sorted(languages)}")
    width = max(len(d) for d in docs)
    ids = np.full((len(docs), width), pad_id, dtype=np.int64)
    lengths = np.zeros(len(docs), dtype=np.int64)
    labels = np.full(len(docs), -1, dtype=np.int64)
    for i, d in enumerate(docs):
        ids[i, : len(d)] = d.tokens
        lengths[i] = len(d)
        if d.label is not None:
            labels[i] = d.label
    return Batch(ids, lengths, labels, language=docs[0].language)


def make_batches(
    documents: list[Document],
    batch_size: int,
    pad_id: int = PAD_ID,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[Batch]:
    """Deterministically shuffled (seed or caller rng), right-padded batches."""
    if batch_size < 1:
        raise InputError("batch_size must be at least 1")
    if rng is None and seed is not None:
        rng = np.random.default_rng(seed)
    order = np.arange(len(documents))
    if rng is not None:
        rng.shuffle(order)
    docs = [documents[i] for i in order]
    return [documents_to_batch(docs[i : i + batch_size], pad_id) for i in range(0, len(docs), batch_size)]


def truncate_documents(docs: list[Document], max_len: int) -> list[Document]:
    if max_len < 1:
        raise InputError("max_len must be positive")
    return [replace(d, tokens=d.tokens[:max_len]) if len(d) > max_len else d for d in docs]


def median_length(docs: list[Document]) -> int:
    if not docs:
        raise InputError("no documents")
    return int(np.median([len(d) for d in docs]))


def partition_semi_supervised(
    train: list[Document], n_labelled: int, k: int, rng: np.random.Generator
) -> tuple[list[Document], list[Document]]:
    """Class-balanced labelled subset (n/K per class); the rest loses its labels."""
    if n_labelled % k != 0:
        raise InputError(f"labelled size {n_labelled} not divisible by {k} classes")
    per_class = n_labelled // k
    by_class: dict[int, list[int]] = {c: [] for c in range(k)}
    for i, d in enumerate(train):
        if d.label is None or not (0 <= d.label < k):
            raise InputError("partition needs fully labelled training documents")
        by_class[d.label].append(i)
    chosen: set[int] = set()
    for c in range(k):
        idx = np.array(by_class[c])
        if idx.size < per_class:
            raise InputError(f"class {c} has only {idx.size} documents, need {per_class}")
        rng.shuffle(idx)
        chosen.update(idx[:per_class].tolist())
    labelled = [train[i] for i in sorted(chosen)]
    unlabelled = [replace(train[i], label=None) for i in range(len(train)) if i not in chosen]
    return labelled, unlabelled


# ---------------------------------------------------------------------------
# synthetic generators


def _zipf_weights(n: int, s: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks**-s
    return w / w.sum()


def _surface(prefix: str, i: int) -> str:
    # digit-free so generated words survive preprocess() on TSV round-trips
    letters = ""
    for _ in range(3):
        letters = chr(ord("a") + i % 26) + letters
        i //= 26
    return prefix + letters


@dataclass
class SyntheticCorpus:
    splits: SplitSet
    vocab: Vocab
    topic_words: dict[int, list[int]]  # class id -> planted token ids


def generate_class_corpus(
    k: int = 4,
    vocab_size: int = 200,
    topic_words_per_class: int = 12,
    doc_length_range: tuple[int, int] = (20, 40),
    n_docs: int = 2000,
    seed: int = 0,
    topic_boost: float = 10.0,
    zipf_s: float = 1.1,
    splits: tuple[float, float, float] = (0.5, 0.25, 0.25),
) -> SyntheticCorpus:
    """Labelled corpus with per-class planted topic words over a Zipf background.

    `vocab_size` counts content words (specials excluded).  A planted word
    is (1 + topic_boost) times more likely than its background weight in
    its own class; topic_boost 0 therefore removes all class signal.
    """
    if topic_words_per_class * k >= vocab_size:
        raise InputError("planted words must not exhaust the vocabulary")
    if k < 2 or n_docs < k:
        raise InputError("need at least 2 classes and one document per class")
    lo, hi = doc_length_range
    if not (1 <= lo <= hi):
        raise InputError(f"bad doc_length_range {doc_length_range}")
    if abs(sum(splits) - 1.0) > 1e-9:
        raise InputError("splits must sum to 1")

    rng = np.random.default_rng(seed)
    words = [_surface("w", i) for i in range(vocab_size)]
    vocab = Vocab(words)
    background = _zipf_weights(vocab_size, zipf_s)

    # plant disjoint topic sets outside the very head of the Zipf curve,
    # where a boost actually separates the classes
    head = min(10, vocab_size // 10)
    candidates = rng.permutation(np.arange(head, vocab_size))
    topic_words: dict[int, list[int]] = {}
    emission = np.tile(background, (k, 1))
    for c in range(k):
        chosen = np.sort(candidates[c * topic_words_per_class : (c + 1) * topic_words_per_class])
        topic_words[c] = [int(w) + 2 for w in chosen]
        emission[c, chosen] *= 1.0 + topic_boost
    emission /= emission.sum(axis=1, keepdims=True)

    per_class = n_docs // k
    docs: list[Document] = []
    for c in range(k):
        for _ in range(per_class):
            length = int(rng.integers(lo, hi + 1))
            ids = rng.choice(vocab_size, size=length, p=emission[c]) + 2
            docs.append(Document(tokens=ids.tolist(), language=0, label=c))

    # per-class proportional split keeps every split class-balanced
    train: list[Document] = []
    dev: list[Document] = []
    test: list[Document] = []
    n_train = int(round(splits[0] * per_class))
    n_dev = int(round(splits[1] * per_class))
    for c in range(k):
        block = docs[c * per_class : (c + 1) * per_class]
        order = rng.permutation(per_class)
        block = [block[i] for i in order]
        train.extend(block[:n_train])
        dev.extend(block[n_train : n_train + n_dev])
        test.extend(block[n_train + n_dev :])
    for part in (train, dev, test):
        order = rng.permutation(len(part))
        part[:] = [part[i] for i in order]
    return SyntheticCorpus(SplitSet(train, dev, test), vocab, topic_words)


@dataclass
class TwinCorpus:
    """Two non-parallel corpora over permuted vocabularies plus the gold lexicon."""

    corpus_a: SplitSet
    corpus_b: SplitSet
    vocab_a: Vocab
    vocab_b: Vocab
    gold_ids: dict[int, int]  # token id in A -> token id in B
    gold_words: dict[str, str]


def generate_twin_corpus(
    vocab_size: int = 300,
    n_docs: int = 5000,
    n_topics: int = 8,
    doc_length_range: tuple[int, int] = (12, 30),
    seed: int = 0,
    zipf_s: float = 1.05,
    affinity_sigma: float = 1.2,
    dev_fraction: float = 0.1,
    identity_mapping: bool = False,
) -> TwinCorpus:
    """Language A from a unigram topic model; language B is A re-emitted
    through a fixed vocabulary bijection, then both shuffled independently.

    Per-(word, topic) log-normal affinities and a skewed topic prior give
    each word a distinctive co-occurrence signature; a flat symmetric topic
    model admits encoder solutions that scramble same-frequency words, which
    would make the lexicon unresolvable by any learner.
    """
    lo, hi = doc_length_range
    if not (1 <= lo <= hi):
        raise InputError(f"bad doc_length_range {doc_length_range}")
    if not (0.0 < dev_fraction < 0.5):
        raise InputError("dev_fraction must lie in (0, 0.5)")
    rng = np.random.default_rng(seed)

    background = _zipf_weights(vocab_size, zipf_s)
    affinity = np.exp(affinity_sigma * rng.standard_normal((n_topics, vocab_size)))
    emission = background[None, :] * affinity
    emission /= emission.sum(axis=1, keepdims=True)
    topic_prior = _zipf_weights(n_topics, 0.7)

    lengths = rng.integers(lo, hi + 1, size=n_docs)
    topics = rng.choice(n_topics, size=n_docs, p=topic_prior)
    docs_a: list[Document] = []
    for i in range(n_docs):
        ids = rng.choice(vocab_size, size=int(lengths[i]), p=emission[topics[i]]) + 2
        docs_a.append(Document(tokens=ids.tolist(), language=0))

    if identity_mapping:
        perm = np.arange(vocab_size)
    else:
        perm = rng.permutation(vocab_size)
    words_a = [_surface("w", i) for i in range(vocab_size)]
    words_b = (
        words_a
        if identity_mapping
        else [_surface("v", j) for j in range(vocab_size)]
    )
    vocab_a = Vocab(words_a)
    vocab_b = Vocab(list(words_b))
    docs_b = [
        Document(tokens=[int(perm[t - 2]) + 2 for t in d.tokens], language=1) for d in docs_a
    ]

    gold_ids = {i + 2: int(perm[i]) + 2 for i in range(vocab_size)}
    gold_words = {words_a[i]: words_b[int(perm[i])] for i in range(vocab_size)}

    order_a = rng.permutation(n_docs)
    order_b = rng.permutation(n_docs)
    docs_a = [docs_a[i] for i in order_a]
    docs_b = [docs_b[i] for i in order_b]
    n_dev = int(round(dev_fraction * n_docs))

    def split(docs: list[Document]) -> SplitSet:
        return SplitSet(train=docs[n_dev:], dev=docs[:n_dev], test=[])

    return TwinCorpus(split(docs_a), split(docs_b), vocab_a, vocab_b, gold_ids, gold_words)


def write_tsv(path: str, docs: list[Document], vocab: Vocab,
              class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES,
              language_names: list[str] | None = None) -> None:
    """Inverse of ingest_tsv for generated corpora; unlabelled rows get label '-'."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            label = class_names[d.label] if d.label is not None else "-"
            lang = language_names[d.language] if language_names else f"L{d.language}"
            text = " ".join(vocab.decode(d.tokens))
            fh.write(f"{label}\t{lang}\t{text}\n")
