"""Experiment orchestration: config files, metrics, self-training, runners.

Everything the command-line surface does lives here as plain functions so
tests can drive experiments without spawning processes.  Artifact layout
per run: an output directory (SDGM_LAB_OUT environment variable wins over
the configured one) holding per-seed subdirectories with metrics.csv, a
checkpoint directory, and report.txt.
"""

from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field

import numpy as np

from sdgmlab import tensor as T
from sdgmlab.checkpoint import load_config, restore_model, save_model
from sdgmlab.datakit import (
    DEFAULT_CLASS_NAMES,
    Document,
    SplitSet,
    Vocab,
    generate_class_corpus,
    generate_twin_corpus,
    ingest_tsv,
    make_batches,
    partition_semi_supervised,
    write_tsv,
)
from sdgmlab.errors import ConfigError, InputError, ParseError
from sdgmlab.metrics import EarlyStopper, MetricsTrace, format_cell
from sdgmlab.pretrain import (
    ADVERSARY_MODES,
    CrossLingualVae,
    PretrainConfig,
    nearest_neighbors,
    pretrain,
)
from sdgmlab.sdgm import (
    MODEL_KINDS,
    DECODER_KINDS,
    TRAINING_MODES,
    SdgmConfig,
    SdgmModel,
    conditional_generate,
    train_classifier,
    train_sdgm,
)
from sdgmlab.tensor import Tensor, grad_check

DATASET_KINDS = ("class", "twin")
EVAL_SPLITS = ("train", "dev", "test")


# ---------------------------------------------------------------------------
# Experiment configuration: flat `key = value` text, '#' comments.

@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob a subcommand can read, one flat namespace.

    Defaults are the desk-scale ones (epochs 200, patience 20, batch 16,
    learning rate 5e-4); paper-scale budgets are settable but slow.
    """

    # paths
    corpus: str = ""
    checkpoint: str = ""
    out_dir: str = "out"
    # data
    dataset_kind: str = "class"
    class_count: int = 4
    vocab_size: int = 200
    n_docs: int = 2000
    labels: int = 32
    eval_split: str = "test"
    # model architecture
    model_kind: str = "m1m2"
    decoder_kind: str = "bow"
    training_mode: str = "end_to_end"
    z1_dim: int = 16
    z2_dim: int = 16
    embed_dim: int = 32
    enc_hidden: int = 32
    enc_layers: int = 2
    cond_hidden: int = 64
    clf_hidden: tuple[int, ...] = (64,)
    gru_embed: int = 32
    gru_hidden: int = 32
    disc_hidden: tuple[int, ...] = (32,)
    # objective
    beta: float = 0.2
    alpha_mode: str = "scaled"
    classifier_loss: str = "log"
    kl_weight: float = 1.0
    use_kl: bool = True
    batch_norm: bool = False
    embed_dropout: float = 0.0
    encoder_dropout: float = 0.0
    # optimization
    learning_rate: float = 5e-4
    batch_size: int = 16
    epochs: int = 200
    patience: int = 20
    phase1_epochs: int = 30
    seeds: tuple[int, ...] = (0,)
    # cross-lingual pretraining
    pretrain_kl_weight: float = 0.1
    adversary_weight: float = 1.0
    adversary: str = "confusion"
    validate_every: int = 50
    # self-training
    threshold: float = 0.9
    max_rounds: int = 10
    # generation and neighbor queries
    gen_class: int = -1
    gen_count: int = 5
    top_k: int = 20
    max_len: int = 30
    query_word: str = ""
    query_language: int = 0
    target_language: int = 1
    neighbors: int = 10

    def __post_init__(self):
        memberships = [
            ("dataset_kind", self.dataset_kind, DATASET_KINDS),
            ("eval_split", self.eval_split, EVAL_SPLITS),
            ("model_kind", self.model_kind, MODEL_KINDS),
            ("decoder_kind", self.decoder_kind, DECODER_KINDS),
            ("training_mode", self.training_mode, TRAINING_MODES),
            ("adversary", self.adversary, ADVERSARY_MODES),
        ]
        for name, value, allowed in memberships:
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        positives = [
            ("class_count", self.class_count, 2),
            ("vocab_size", self.vocab_size, 10),
            ("n_docs", self.n_docs, 4),
            ("batch_size", self.batch_size, 1),
            ("patience", self.patience, 1),
            ("validate_every", self.validate_every, 1),
            ("max_rounds", self.max_rounds, 1),
            ("gen_count", self.gen_count, 1),
            ("top_k", self.top_k, 1),
            ("max_len", self.max_len, 1),
            ("neighbors", self.neighbors, 1),
        ]
        for name, value, floor in positives:
            if value < floor:
                raise ConfigError(f"{name} must be at least {floor}, got {value}")
        if self.labels < 0:
            raise ConfigError(f"labels cannot be negative, got {self.labels}")
        if self.epochs < 0 or self.phase1_epochs < 0:
            raise ConfigError("epoch budgets cannot be negative")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 < self.threshold <= 1.0):
            raise ConfigError(f"threshold must lie in (0, 1], got {self.threshold}")
        if not self.seeds:
            raise ConfigError("seeds must name at least one seed")


_FIELD_TYPES = typing.get_type_hints(ExperimentConfig)


def _convert(key: str, raw: str, where: str):
    typ = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "false"):
                return raw.lower() == "true"
            raise ValueError("expected true or false")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        # the remaining fields are tuple[int, ...]
        if raw == "":
            return ()
        return tuple(int(part) for part in raw.split(","))
    except ValueError as e:
        raise ParseError(f"{where}: bad value for {key}: {e}") from None


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(config: ExperimentConfig) -> str:
    """Serialize every field as one `key = value` line, declaration order."""
    lines = [f"{f.name} = {_render(getattr(config, f.name))}"
             for f in dataclasses.fields(config)]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse flat `key = value` lines; '#' starts a comment, blanks skipped.

    Unknown and repeated keys are rejected; malformed lines and bad values
    report their line number.
    """
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source} line {lineno}: expected key = value")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source} line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source} line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, f"{source} line {lineno}")
    return ExperimentConfig(**values)


def read_config_file(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=path)


def apply_overrides(config: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Apply CLI `key=value` overrides on top of a parsed config."""
    converted = {}
    for key, raw in overrides.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        converted[key] = _convert(key, raw, f"override {key}")
    return dataclasses.replace(config, **converted)


def resolve_out_dir(config: ExperimentConfig) -> str:
    return os.environ.get("SDGM_LAB_OUT") or config.out_dir


# ---------------------------------------------------------------------------
# Evaluation.

@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # [true, predicted]
    n_documents: int


def evaluate_accuracy(model: SdgmModel, documents: list[Document],
                      batch_size: int = 64) -> EvalResult:
    """Deterministic accuracy and confusion matrix over labelled documents.

    Predictions come from the classifier at the z1 posterior mean, so two
    evaluations of the same model agree bitwise.
    """
    if not documents:
        raise InputError("no documents to evaluate")
    k = model.config.class_count
    confusion = np.zeros((k, k), dtype=np.int64)
    from sdgmlab.sdgm import predict  # local import keeps module top light
    for batch in make_batches(documents, batch_size):
        ys = batch.labels  # -1 marks an unlabelled document
        if ys.min() < 0:
            raise InputError("evaluation needs fully labelled documents")
        if ys.max() >= k:
            raise InputError(f"label outside [0, {k})")
        preds = predict(model, batch)
        for t, p in zip(ys, preds):
            confusion[t, p] += 1
    accuracy = float(np.trace(confusion)) / len(documents)
    return EvalResult(accuracy, confusion, len(documents))


def format_confusion(confusion: np.ndarray, class_names) -> str:
    width = max(6, max(len(str(n)) for n in class_names) + 1)
    head = " " * width + "".join(f"{n:>{width}}" for n in class_names)
    lines = [head]
    for i, name in enumerate(class_names):
        cells = "".join(f"{int(c):>{width}}" for c in confusion[i])
        lines.append(f"{name:>{width}}{cells}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Early stopping as a pure decision over a recorded trace.

@dataclass
class StopDecision:
    stop_epoch: int | None  # validation key where patience ran out; None if never
    best_epoch: int | None
    best_value: float | None


def early_stopping(trace, patience: int, metric: str = "accuracy",
                   split: str = "dev", mode: str = "max") -> StopDecision:
    """Replay a validation series through the patience rule.

    `trace` may be a MetricsTrace (the series is `metric` on `split`), a
    sequence of (epoch, value) pairs, or bare values keyed 1, 2, 3, ...
    The decision mirrors what the training loops do online: stop at the
    first validation with `patience` consecutive non-improvements behind it.
    """
    if isinstance(trace, MetricsTrace):
        series = trace.series(split, metric)
    else:
        series = [pair if isinstance(pair, tuple) else (i + 1, pair)
                  for i, pair in enumerate(trace)]
    stopper = EarlyStopper(patience, mode=mode)
    for epoch, value in series:
        stopper.update(value, epoch)
        if stopper.should_stop:
            return StopDecision(int(epoch), stopper.best_epoch, stopper.best_value)
    return StopDecision(None, stopper.best_epoch, stopper.best_value)


def emit_metrics_csv(trace: MetricsTrace, path: str) -> None:
    """Write the trace as delimited text; empty traces yield a header-only file."""
    trace.write_csv(path)


# ---------------------------------------------------------------------------
# Self-training.

@dataclass
class SelfTrainRound:
    round_index: int
    pool_labelled: int   # human labels in the pool this round trained on
    pool_pseudo: int     # pseudo labels in that pool
    added: int           # pseudo labels this round tentatively added
    dev_accuracy: float
    accepted: bool


@dataclass
class SelfTrainReport:
    rounds: list[SelfTrainRound]
    final_dev_accuracy: float

    def accepted_accuracies(self) -> list[float]:
        return [r.dev_accuracy for r in self.rounds if r.accepted]


def _predict_with_confidence(model: SdgmModel, docs: list[Document],
                             batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    preds: list[np.ndarray] = []
    confs: list[np.ndarray] = []
    for batch in make_batches(docs, batch_size):
        probs = model.classify_from(model.encode(batch, training=False)).probs_array()
        preds.append(np.argmax(probs, axis=1))
        confs.append(np.max(probs, axis=1))
    return np.concatenate(preds), np.concatenate(confs)


def self_train(model: SdgmModel, labelled: list[Document],
               unlabelled: list[Document], dev: list[Document],
               config: ExperimentConfig) -> tuple[SdgmModel, SelfTrainReport]:
    """Iterative pseudo-labelling, accepted only on strict dev improvement.

    Round 0 trains the supervised classifier on the human labels.  Each
    later round predicts the remaining unlabelled pool with the best model
    so far, adds every prediction whose confidence is at least `threshold`
    as a pseudo-label, retrains from the same initial parameters on the
    grown pool, and keeps the round only if dev accuracy strictly improves;
    otherwise the additions are reverted and the loop stops.  Any label
    already present on an unlabelled document is ignored.

    Parameters restart from the model's initial state every round; the
    model's rng streams advance across rounds, so rounds are fresh runs,
    not bit-identical replays.
    """
    if not labelled:
        raise InputError("self-training needs a labelled seed pool")
    init_state = model.snapshot()
    rounds: list[SelfTrainRound] = []

    result = train_classifier(model, labelled, dev, epochs=config.epochs,
                              batch_size=config.batch_size, lr=config.learning_rate,
                              patience=config.patience)
    best_accuracy = result.best_dev_accuracy
    best_state = model.snapshot()
    rounds.append(SelfTrainRound(0, len(labelled), 0, 0, best_accuracy, True))

    remaining = list(unlabelled)
    pseudo: list[Document] = []
    for round_index in range(1, config.max_rounds + 1):
        if not remaining:
            break
        preds, confs = _predict_with_confidence(model, remaining)
        take = confs >= config.threshold
        if not take.any():
            break
        additions = [
            Document(tokens=doc.tokens, language=doc.language, label=int(preds[i]))
            for i, doc in enumerate(remaining) if take[i]
        ]
        model.restore(init_state)
        result = train_classifier(model, labelled + pseudo + additions, dev,
                                  epochs=config.epochs, batch_size=config.batch_size,
                                  lr=config.learning_rate, patience=config.patience)
        accuracy = result.best_dev_accuracy
        accepted = accuracy > best_accuracy
        rounds.append(SelfTrainRound(round_index, len(labelled),
                                     len(pseudo) + len(additions),
                                     len(additions), accuracy, accepted))
        if not accepted:
            model.restore(best_state)
            break
        pseudo.extend(additions)
        remaining = [doc for i, doc in enumerate(remaining) if not take[i]]
        best_accuracy = accuracy
        best_state = model.snapshot()

    model.restore(best_state)
    return model, SelfTrainReport(rounds, best_accuracy)


# ---------------------------------------------------------------------------
# Corpus directories (what gen-data writes and the runners read).

CLASS_FILES = ("train.tsv", "dev.tsv", "vocab.txt")
TWIN_FILES = ("train.tsv", "dev.tsv", "vocab_L0.txt", "vocab_L1.txt")


def class_names_for(k: int) -> tuple[str, ...]:
    if k == len(DEFAULT_CLASS_NAMES):
        return DEFAULT_CLASS_NAMES
    return tuple(f"c{i}" for i in range(k))


def _require_files(directory: str, names) -> None:
    for name in names:
        if not os.path.exists(os.path.join(directory, name)):
            raise InputError(f"corpus directory {directory} is missing {name}")


def load_class_corpus(directory: str) -> tuple[SplitSet, Vocab, tuple[str, ...]]:
    """Read a gen-data style corpus directory back into splits."""
    _require_files(directory, CLASS_FILES)
    vocab = Vocab.load(os.path.join(directory, "vocab.txt"))
    meta_path = os.path.join(directory, "corpus.json")
    names = DEFAULT_CLASS_NAMES
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            names = tuple(json.load(fh)["class_names"])

    def read(split: str) -> list[Document]:
        path = os.path.join(directory, f"{split}.tsv")
        if not os.path.exists(path):
            return []
        return ingest_tsv(path, class_names=names, vocabs={0: vocab}).documents

    return SplitSet(read("train"), read("dev"), read("test")), vocab, names


def load_twin_corpus(directory: str) -> tuple[list[SplitSet], list[Vocab]]:
    """Read a two-language corpus directory into per-language splits.

    Language 0 rows must precede language 1 rows in each file (gen-data
    writes them that way) so stored vocabularies line up with the ids
    ingest assigns by first appearance.
    """
    _require_files(directory, TWIN_FILES)
    vocabs = [Vocab.load(os.path.join(directory, f"vocab_L{i}.txt")) for i in (0, 1)]
    per_language: dict[int, dict[str, list[Document]]] = {0: {}, 1: {}}
    for split in ("train", "dev"):
        corpus = ingest_tsv(os.path.join(directory, f"{split}.tsv"),
                            vocabs={0: vocabs[0], 1: vocabs[1]})
        if corpus.language_names != ["L0", "L1"]:
            raise InputError(
                f"{split}.tsv languages must appear in order L0, L1, "
                f"got {corpus.language_names}")
        for lang in (0, 1):
            per_language[lang][split] = [d for d in corpus.documents if d.language == lang]
    splits = [SplitSet(per_language[lang]["train"], per_language[lang]["dev"], [])
              for lang in (0, 1)]
    return splits, vocabs


def _write_twin_tsv(path: str, docs_a: list[Document], docs_b: list[Document],
                    vocab_a: Vocab, vocab_b: Vocab) -> None:
    # language 0 block first; load_twin_corpus depends on that order.
    with open(path, "w", encoding="utf-8") as fh:
        for docs, vocab, lang in ((docs_a, vocab_a, "L0"), (docs_b, vocab_b, "L1")):
            for d in docs:
                fh.write(f"-\t{lang}\t{' '.join(vocab.decode(d.tokens))}\n")


# ---------------------------------------------------------------------------
# Model plumbing between configs and checkpoints.

def build_sdgm_config(exp: ExperimentConfig, vocab_size: int, seed: int) -> SdgmConfig:
    return SdgmConfig(
        vocab_size=vocab_size, class_count=exp.class_count,
        model_kind=exp.model_kind, decoder_kind=exp.decoder_kind,
        training_mode=exp.training_mode, z1_dim=exp.z1_dim, z2_dim=exp.z2_dim,
        embed_dim=exp.embed_dim, enc_hidden=exp.enc_hidden,
        enc_layers=exp.enc_layers, cond_hidden=exp.cond_hidden,
        clf_hidden=exp.clf_hidden, gru_embed=exp.gru_embed,
        gru_hidden=exp.gru_hidden, beta=exp.beta, alpha_mode=exp.alpha_mode,
        classifier_loss=exp.classifier_loss, kl_weight=exp.kl_weight,
        use_kl=exp.use_kl, batch_norm=exp.batch_norm,
        embed_dropout=exp.embed_dropout, encoder_dropout=exp.encoder_dropout,
        seed=seed)


def sdgm_config_echo(cfg: SdgmConfig) -> dict:
    echo = dataclasses.asdict(cfg)
    echo["clf_hidden"] = list(cfg.clf_hidden)
    return {"kind": "sdgm", **echo}


def sdgm_model_from_checkpoint(path: str) -> SdgmModel:
    echo = load_config(path)
    if echo is None or echo.get("kind") != "sdgm":
        raise InputError(f"{path} does not hold a classifier-model checkpoint")
    echo = {k: v for k, v in echo.items() if k != "kind"}
    echo["clf_hidden"] = tuple(echo["clf_hidden"])
    model = SdgmModel(SdgmConfig(**echo))
    restore_model(path, model)
    return model


def xvae_config_echo(model: CrossLingualVae, exp: ExperimentConfig, seed: int) -> dict:
    return {
        "kind": "xvae",
        "z_dim": model.z_dim,
        "enc_hidden": exp.enc_hidden,
        "enc_layers": exp.enc_layers,
        "disc_hidden": list(exp.disc_hidden),
        "embed_dropout": exp.embed_dropout,
        "encoder_dropout": exp.encoder_dropout,
        "vocab_sizes": [v.size for v in model.vocabs],
        "seed": seed,
    }


def xvae_model_from_checkpoint(path: str, vocabs: list[Vocab]) -> CrossLingualVae:
    echo = load_config(path)
    if echo is None or echo.get("kind") != "xvae":
        raise InputError(f"{path} does not hold a pretraining-model checkpoint")
    if [v.size for v in vocabs] != echo["vocab_sizes"]:
        raise InputError(
            f"vocabulary sizes {[v.size for v in vocabs]} do not match the "
            f"checkpoint's {echo['vocab_sizes']}")
    model = CrossLingualVae(
        vocabs, z_dim=echo["z_dim"], enc_hidden=echo["enc_hidden"],
        enc_layers=echo["enc_layers"], disc_hidden=tuple(echo["disc_hidden"]),
        embed_dropout=echo["embed_dropout"],
        encoder_dropout=echo["encoder_dropout"], seed=echo["seed"])
    restore_model(path, model)
    return model


# ---------------------------------------------------------------------------
# Runners: one per CLI subcommand, returning (report text, artifact paths).

def _require(exp: ExperimentConfig, field_name: str, flag: str) -> str:
    value = getattr(exp, field_name)
    if not value:
        raise InputError(f"missing {flag} (config key {field_name})")
    return value


def _seed_dir(out: str, seed: int) -> str:
    path = os.path.join(out, f"seed{seed}")
    os.makedirs(path, exist_ok=True)
    return path


def _write_report(directory: str, lines: list[str]) -> str:
    path = os.path.join(directory, "report.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _write_summary_csv(out: str, header: list[str], rows: list[list]) -> str:
    path = os.path.join(out, "summary.csv")
    lines = [",".join(header)]
    lines += [",".join(format_cell(c) for c in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def run_gen_data(exp: ExperimentConfig) -> tuple[str, dict[str, str]]:
    """Write a synthetic corpus directory (the --corpus input of the trainers)."""
    out = resolve_out_dir(exp)
    os.makedirs(out, exist_ok=True)
    seed = exp.seeds[0]
    artifacts: dict[str, str] = {}
    if exp.dataset_kind == "class":
        sc = generate_class_corpus(k=exp.class_count, vocab_size=exp.vocab_size,
                                   n_docs=exp.n_docs, seed=seed)
        names = class_names_for(exp.class_count)
        for split in ("train", "dev", "test"):
            path = os.path.join(out, f"{split}.tsv")
            write_tsv(path, getattr(sc.splits, split), sc.vocab, class_names=names)
            artifacts[f"{split}.tsv"] = path
        sc.vocab.save(os.path.join(out, "vocab.txt"))
        artifacts["vocab.txt"] = os.path.join(out, "vocab.txt")
        meta = {
            "kind": "class", "class_names": list(names), "seed": seed,
            "vocab_size": sc.vocab.size,
            "topic_words": {names[c]: sc.vocab.decode(ids)
                            for c, ids in sorted(sc.topic_words.items())},
        }
        counts = {s: len(getattr(sc.splits, s)) for s in ("train", "dev", "test")}
    else:
        tc = generate_twin_corpus(vocab_size=exp.vocab_size, n_docs=exp.n_docs,
                                  seed=seed)
        for split in ("train", "dev"):
            path = os.path.join(out, f"{split}.tsv")
            _write_twin_tsv(path, getattr(tc.corpus_a, split),
                            getattr(tc.corpus_b, split), tc.vocab_a, tc.vocab_b)
            artifacts[f"{split}.tsv"] = path
        for i, vocab in enumerate((tc.vocab_a, tc.vocab_b)):
            path = os.path.join(out, f"vocab_L{i}.txt")
            vocab.save(path)
            artifacts[f"vocab_L{i}.txt"] = path
        lex_path = os.path.join(out, "lexicon.tsv")
        with open(lex_path, "w", encoding="utf-8") as fh:
            for a, b in tc.gold_words.items():
                fh.write(f"{a}\t{b}\n")
        artifacts["lexicon.tsv"] = lex_path
        meta = {"kind": "twin", "seed": seed, "vocab_size": exp.vocab_size,
                "n_docs": exp.n_docs}
        counts = {"train": len(tc.corpus_a.train) + len(tc.corpus_b.train),
                  "dev": len(tc.corpus_a.dev) + len(tc.corpus_b.dev)}
    meta_path = os.path.join(out, "corpus.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts["corpus.json"] = meta_path
    lines = [f"generated {exp.dataset_kind} corpus in {out}"]
    lines += [f"  {split}: {n} documents" for split, n in counts.items()]
    return "\n".join(lines), artifacts


def _run_classifier_experiment(exp: ExperimentConfig, semi: bool) -> tuple[str, dict[str, str]]:
    corpus_dir = _require(exp, "corpus", "--corpus")
    out = resolve_out_dir(exp)
    splits, vocab, names = load_class_corpus(corpus_dir)
    report: list[str] = []
    summary_rows: list[list] = []
    artifacts: dict[str, str] = {}
    for seed in exp.seeds:
        rng = np.random.default_rng(seed)
        labelled, unlabelled = partition_semi_supervised(
            splits.train, exp.labels, exp.class_count, rng)
        model = SdgmModel(build_sdgm_config(exp, vocab.size, seed))
        if semi:
            result = train_sdgm(model, labelled, unlabelled, splits.dev,
                                epochs=exp.epochs, batch_size=exp.batch_size,
                                lr=exp.learning_rate, patience=exp.patience,
                                phase1_epochs=exp.phase1_epochs)
        else:
            result = train_classifier(model, labelled, splits.dev,
                                      epochs=exp.epochs, batch_size=exp.batch_size,
                                      lr=exp.learning_rate, patience=exp.patience)
        seed_dir = _seed_dir(out, seed)
        metrics_path = os.path.join(seed_dir, "metrics.csv")
        emit_metrics_csv(result.trace, metrics_path)
        ckpt = os.path.join(seed_dir, "checkpoint")
        save_model(ckpt, model, config=sdgm_config_echo(model.config))
        test_accuracy = None
        if splits.test:
            test_accuracy = evaluate_accuracy(model, splits.test).accuracy
        report.append(f"seed {seed}: dev_accuracy={format_cell(result.best_dev_accuracy)}"
                      + (f" test_accuracy={format_cell(test_accuracy)}"
                         if test_accuracy is not None else "")
                      + f" best_epoch={result.best_epoch} epochs_run={result.epochs_run}")
        summary_rows.append([seed, result.best_dev_accuracy, test_accuracy])
        artifacts[f"seed{seed}/metrics.csv"] = metrics_path
        artifacts[f"seed{seed}/checkpoint"] = ckpt
    if len(exp.seeds) > 1:
        devs = [r[1] for r in summary_rows]
        tests = [r[2] for r in summary_rows if r[2] is not None]
        report.append(f"mean dev_accuracy={format_cell(float(np.mean(devs)))}")
        if tests:
            report.append(f"mean test_accuracy={format_cell(float(np.mean(tests)))}")
        artifacts["summary.csv"] = _write_summary_csv(
            out, ["seed", "dev_accuracy", "test_accuracy"], summary_rows)
    mode = "semi-supervised" if semi else "supervised"
    header = [f"{mode} {exp.model_kind}/{exp.decoder_kind} on {corpus_dir} "
              f"({exp.labels} labels, classes {','.join(names)})"]
    artifacts["report.txt"] = _write_report(out, header + report)
    return "\n".join(header + report), artifacts


def run_train_semi(exp: ExperimentConfig) -> tuple[str, dict[str, str]]:
    return _run_classifier_experiment(exp, semi=True)


def run_train_sup(exp: ExperimentConfig) -> tuple[str, dict[str, str]]:
    return _run_classifier_experiment(exp, semi=False)


def run_pretrain(exp: ExperimentConfig) -> tuple[str, dict[str, str]]:
    corpus_dir = _require(exp, "corpus", "--corpus")
    out = resolve_out_dir(exp)
    splits, vocabs = load_twin_corpus(corpus_dir)
    report: list[str] = []
    artifacts: dict[str, str] = {}
    for seed in exp.seeds:
        model = CrossLingualVae(vocabs, z_dim=exp.z1_dim, enc_hidden=exp.enc_hidden,
                                enc_layers=exp.enc_layers, disc_hidden=exp.disc_hidden,
                                embed_dropout=exp.embed_dropout,
                                encoder_dropout=exp.encoder_dropout, seed=seed)
        config = PretrainConfig(kl_weight=exp.pretrain_kl_weight,
                                adversary_weight=exp.adversary_weight,
                                adversary=exp.adversary,
                                learning_rate=exp.learning_rate,
                                batch_size=exp.batch_size, max_epochs=exp.epochs,
                                patience=exp.patience,
                                validate_every=exp.validate_every, seed=seed)
        result = pretrain(model, splits, config)
        seed_dir = _seed_dir(out, seed)
        metrics_path = os.path.join(seed_dir, "metrics.csv")
        emit_metrics_csv(result.trace, metrics_path)
        ckpt = os.path.join(seed_dir, "checkpoint")
        save_model(ckpt, model, config=xvae_config_echo(model, exp, seed))
        # the last validation row may sit on either language's iteration
        disc_acc = next((r["disc_dev_acc"] for r in reversed(result.trace.rows)
                         if "disc_dev_acc" in r), None)
        report.append(f"seed {seed}: best_dev_nll={format_cell(result.best_dev_nll)}"
                      f" best_iteration={result.best_iteration}"
                      f" iterations_run={result.iterations_run}"
                      f" disc_dev_acc={format_cell(disc_acc)}")
        artifacts[f"seed{seed}/metrics.csv"] = metrics_path
        artifacts[f"seed{seed}/checkpoint"] = ckpt
    header = [f"cross-lingual pretraining on {corpus_dir} "
              f"(adversary={exp.adversary}, weight={exp.adversary_weight})"]
    artifacts["report.txt"] = _write_report(out, header + report)
    return "\n".join(header + report), artifacts


def run_eval(exp: ExperimentConfig) -> tuple[str, dict[str, str]]:
    ckpt = _require(exp, "checkpoint", "--checkpoint")
    corpus_dir = _require(exp, "corpus", "--corpus")
    out = resolve_out_dir(exp)
    os.makedirs(out, exist_ok=True)
    splits, _, names = load_class_corpus(corpus_dir)
    docs = getattr(splits, exp.eval_split)
    model = sdgm_model_from_checkpoint(ckpt)
    result = evaluate_accuracy(model, docs)
    lines = [
        f"checkpoint {ckpt} on {corpus_dir}:{exp.eval_split}",
        f"accuracy = {format_cell(result.accuracy)} over {result.n_documents} documents",
        "confusion (rows true, columns predicted):",
        format_confusion(result.confusion, names),
    ]
    artifacts = {"report.txt": _write_report(out, lines)}
    return "\n".join(lines), artifacts


def run_self_train(exp: ExperimentConfig) -> tuple[str, dict[str, str]]:
    corpus_dir = _require(exp, "corpus", "--corpus")
    out = resolve_out_dir(exp)
    splits, vocab, names = load_class_corpus(corpus_dir)
    report: list[str] = []
    artifacts: dict[str, str] = {}
    for seed in exp.seeds:
        rng = np.random.default_rng(seed)
        labelled, unlabelled = partition_semi_supervised(
            splits.train, exp.labels, exp.class_count, rng)
        model = SdgmModel(build_sdgm_config(exp, vocab.size, seed))
        model, st_report = self_train(model, labelled, unlabelled, splits.dev, exp)
        seed_dir = _seed_dir(out, seed)
        rounds_path = os.path.join(seed_dir, "rounds.csv")
        with open(rounds_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("round,pool_labelled,pool_pseudo,added,dev_accuracy,accepted\n")
            for r in st_report.rounds:
                fh.write(",".join(format_cell(v) for v in
                                  (r.round_index, r.pool_labelled, r.pool_pseudo,
                                   r.added, r.dev_accuracy, r.accepted)) + "\n")
        ckpt = os.path.join(seed_dir, "checkpoint")
        save_model(ckpt, model, config=sdgm_config_echo(model.config))
        test_note = ""
        if splits.test:
            test_note = f" test_accuracy={format_cell(evaluate_accuracy(model, splits.test).accuracy)}"
        report.append(f"seed {seed}: rounds={len(st_report.rounds)} "
                      f"final_dev_accuracy={format_cell(st_report.final_dev_accuracy)}{test_note}")
        artifacts[f"seed{seed}/rounds.csv"] = rounds_path
        artifacts[f"seed{seed}/checkpoint"] = ckpt
    header = [f"self-training on {corpus_dir} ({exp.labels} labels, "
              f"threshold {exp.threshold}, classes {','.join(names)})"]
    artifacts["report.txt"] = _write_report(out, header + report)
    return "\n".join(header + report), artifacts


def run_generate(exp: ExperimentConfig) -> tuple[str, dict[str, str]]:
    ckpt = _require(exp, "checkpoint", "--checkpoint")
    corpus_dir = _require(exp, "corpus", "--corpus")
    out = resolve_out_dir(exp)
    os.makedirs(out, exist_ok=True)
    _, vocab, names = load_class_corpus(corpus_dir)
    model = sdgm_model_from_checkpoint(ckpt)
    if vocab.size != model.config.vocab_size:
        raise InputError(f"corpus vocabulary ({vocab.size}) does not match "
                         f"the checkpoint ({model.config.vocab_size})")
    rng = np.random.default_rng(exp.seeds[0])
    classes = (range(model.config.class_count)
               if exp.gen_class < 0 else [exp.gen_class])
    lines = []
    for y in classes:
        for _ in range(exp.gen_count):
            ids = conditional_generate(model, y, rng=rng, top_k=exp.top_k,
                                       max_len=exp.max_len)
            lines.append(f"{names[y]}\t{' '.join(vocab.decode(ids))}")
    path = os.path.join(out, "samples.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return "\n".join(lines), {"samples.txt": path}


def run_nn(exp: ExperimentConfig) -> tuple[str, dict[str, str]]:
    ckpt = _require(exp, "checkpoint", "--checkpoint")
    corpus_dir = _require(exp, "corpus", "--corpus")
    word = _require(exp, "query_word", "--word")
    out = resolve_out_dir(exp)
    os.makedirs(out, exist_ok=True)
    _, vocabs = load_twin_corpus(corpus_dir)
    model = xvae_model_from_checkpoint(ckpt, vocabs)
    pairs = nearest_neighbors(model, word, exp.query_language,
                              exp.target_language, k=exp.neighbors)
    lines = [f"{word} (L{exp.query_language} -> L{exp.target_language}):"]
    lines += [f"  {w}\t{format_cell(c)}" for w, c in pairs]
    artifacts = {"report.txt": _write_report(out, lines)}
    return "\n".join(lines), artifacts


# ---------------------------------------------------------------------------
# Gradient checking across the op families (the `gradcheck` subcommand).

@dataclass
class GradcheckSummary:
    families: list[tuple[str, float]] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((err for _, err in self.families), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol

    def format_text(self, tol: float = 1e-4) -> str:
        width = max(len(name) for name, _ in self.families)
        lines = [f"{name:<{width}}  worst_rel_err {err:.3e}"
                 for name, err in self.families]
        verdict = "PASS" if self.passed(tol) else "FAIL"
        lines.append(f"overall worst {self.max_rel_error:.3e} ({verdict} at {tol:g})")
        return "\n".join(lines)


def gradcheck_report(seed: int = 0) -> GradcheckSummary:
    """Finite-difference every differentiable op family on small tensors.

    grad_reverse is excluded by design (its backward is deliberately not the
    derivative of its forward), and dropout is excluded because its mask is
    redrawn per call; both are covered by dedicated unit tests instead.
    """
    rng = np.random.default_rng(seed)

    def mk(*shape, away_from=None) -> Tensor:
        data = rng.standard_normal(shape)
        if away_from is not None:
            # push values off a kink so central differences stay two-sided
            data = data + np.where(data >= away_from, 0.5, -0.5)
        return Tensor(data, requires_grad=True)

    summary = GradcheckSummary()

    def family(name: str, params: dict[str, Tensor], fn) -> None:
        report = grad_check(fn, params)
        summary.families.append((name, report.max_rel_error))

    a, b = mk(3, 4), mk(3, 4)
    family("arithmetic", {"a": a, "b": b}, lambda: T.reduce_sum(
        T.mul(T.add(a, b), T.sub(T.shift(T.scale(T.neg(a), 0.7), 1.3), b))))

    m, n = mk(2, 3), mk(2, 3)
    family("matmul_transpose", {"m": m, "n": n}, lambda: T.reduce_sum(
        T.matmul(m, T.transpose(n))))

    c, d = mk(1, 3), mk(2, 3)
    family("shape_ops", {"c": c, "d": d}, lambda: T.reduce_sum(
        T.slice_axis(T.concat([T.broadcast(c, (2, 3)), T.reshape(d, (2, 3))],
                              axis=0), 0, 1, 4)))

    e, f = mk(3, 3, away_from=0.0), mk(3, 3, away_from=0.0)
    family("activations", {"e": e, "f": f}, lambda: T.reduce_sum(
        T.add(T.sigmoid(T.tanh(e)), T.leaky_relu(T.relu(f), 0.1))))

    g, p = mk(3, 3), mk(3, 3)
    family("exp_log_softplus", {"g": g, "p": p}, lambda: T.reduce_sum(
        T.add(T.log(T.shift(T.exp(T.scale(g, 0.3)), 1.0)), T.softplus(p))))

    s = mk(4, 5)
    family("softmax_family", {"s": s}, lambda: T.reduce_sum(
        T.mul(T.softmax(s, axis=-1), T.log_softmax(s, axis=-1))))

    r = mk(4, 5)
    family("reductions", {"r": r}, lambda: T.reduce_sum(
        T.mul(T.broadcast(T.reduce_mean(r, axis=0, keepdims=True), (4, 5)), r)))

    table = mk(6, 3)
    ids = np.array([0, 2, 2, 5, 1])  # repeated id exercises accumulation
    family("embedding_lookup", {"table": table}, lambda: T.reduce_sum(
        T.tanh(T.embedding_lookup(table, ids))))

    return summary
