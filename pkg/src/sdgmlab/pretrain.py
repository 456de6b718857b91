"""Cross-lingual VAE pretraining without parallel text.

One BiLSTM encoder is shared between two languages; only the embedding
matrix is language-specific, and each language reconstructs through a
bag-of-words decoder tied to its own embeddings.  A language
discriminator reads the encoder state h and the encoder is trained to
defeat it, so the shared space cannot cheaply encode which language a
document came from.  The trained encoder is the artifact: it exports
directly as the first-layer posterior of the semi-supervised models.
"""

from __future__ import annotations

import copy
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

import sdgmlab.tensor as T
from sdgmlab.datakit import Batch, SplitSet, Vocab, make_batches
from sdgmlab.errors import ConfigError, InputError, TrainingDiverged
from sdgmlab.metrics import EarlyStopper, MetricsTrace
from sdgmlab.networks import (
    BowDecoder,
    LanguageDiscriminator,
    SequenceEncoder,
    set_trainable,
)
from sdgmlab.rng import RngHub
from sdgmlab.sdgm import vae_elbo
from sdgmlab.tensor import Adam, Tape, Tensor, backward

ADVERSARY_MODES = ("confusion", "reversal")

TRACE_COLUMNS = ["recon", "kl", "disc_loss", "adv_loss", "dev_nll", "disc_dev_acc"]


@dataclass
class PretrainConfig:
    """Training knobs for the two-language pretraining loop.

    kl_weight deliberately small: full weight collapses the posterior on
    short documents.  adversary_weight scales the term that pushes the
    encoder toward language-indistinguishable states; "confusion" drives
    discriminator outputs to 0.5, "reversal" feeds the true-label loss
    through a gradient-reversing op instead.
    """

    kl_weight: float = 0.1
    adversary_weight: float = 1.0
    adversary: str = "confusion"
    learning_rate: float = 5e-4
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 20
    validate_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.kl_weight < 0:
            raise ConfigError(f"kl_weight must be >= 0, got {self.kl_weight}")
        if self.adversary_weight < 0:
            raise ConfigError(f"adversary_weight must be >= 0, got {self.adversary_weight}")
        if self.adversary not in ADVERSARY_MODES:
            raise ConfigError(f"adversary must be one of {ADVERSARY_MODES}, got {self.adversary!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.validate_every < 1:
            raise ConfigError("validate_every must be at least 1")


class CrossLingualVae:
    """Shared encoder, per-language tied BOW decoders, language adversary.

    The decoder projection is the language's embedding matrix transposed,
    so the latent width must equal the embedding width; the constructor
    therefore takes a single z_dim serving as both.

    Both embedding matrices start scaled down by embed_init_scale.  Two
    full-scale random vocabularies are trivially separable, and once each
    language has grown its own geometry the adversary cannot marry them;
    near zero the geometries emerge inside the shared recurrent dynamics
    and the adversary only has to keep them together.
    """

    def __init__(
        self,
        vocabs: Sequence[Vocab],
        z_dim: int = 16,
        enc_hidden: int = 16,
        enc_layers: int = 2,
        disc_hidden: Sequence[int] = (32,),
        embed_dropout: float = 0.0,
        encoder_dropout: float = 0.0,
        embed_init_scale: float = 0.05,
        seed: int = 0,
    ):
        if len(vocabs) != 2:
            raise ConfigError(f"pretraining pairs exactly two languages, got {len(vocabs)}")
        if z_dim < 1 or enc_hidden < 1 or enc_layers < 1:
            raise ConfigError("z_dim, enc_hidden and enc_layers must be positive")
        if embed_init_scale <= 0:
            raise ConfigError("embed_init_scale must be positive")
        self.vocabs = list(vocabs)
        self.z_dim = z_dim
        self.rng = RngHub(seed)
        init = self.rng.stream("xvae/init")
        self.encoder = SequenceEncoder(
            [v.size for v in self.vocabs],
            embed_dim=z_dim,
            hidden=enc_hidden,
            n_layers=enc_layers,
            z_dim=z_dim,
            rng=init,
            embed_dropout=embed_dropout,
            encoder_dropout=encoder_dropout,
        )
        for emb in self.encoder.embeddings:
            emb.weight.data *= embed_init_scale
        self.decoders = [
            BowDecoder(z_dim, v.size, init, tied_embedding=self.encoder.embeddings[i],
                       prefix=f"decoder{i}")
            for i, v in enumerate(self.vocabs)
        ]
        self.discriminator = LanguageDiscriminator(self.encoder.h_dim, list(disc_hidden), init)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(self.encoder.named_parameters())
        for dec in self.decoders:
            out.extend(dec.named_parameters())
        out.extend(self.discriminator.named_parameters())
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def restore(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            p.data[...] = state[name]


@dataclass
class PretrainOptimizers:
    """One Adam per update group.

    The shared group steps every iteration; each language group steps only
    on its own iterations, so per-group step counts (and hence Adam's bias
    correction) track how often that group actually received gradients.
    """

    shared: Adam
    per_language: list[Adam]
    discriminator: Adam


def make_optimizers(model: CrossLingualVae, config: PretrainConfig) -> PretrainOptimizers:
    lr = config.learning_rate
    shared = [p for _, p in model.encoder.bilstm.named_parameters()]
    shared += [model.encoder.mu_head.weight, model.encoder.mu_head.bias,
               model.encoder.log_var_head.weight, model.encoder.log_var_head.bias]
    per_language = []
    for i, dec in enumerate(model.decoders):
        group = [model.encoder.embeddings[i].weight]
        group += [p for _, p in dec.named_parameters()]  # tied: bias only
        per_language.append(Adam(group, lr=lr))
    disc = Adam([p for _, p in model.discriminator.named_parameters()], lr=lr)
    return PretrainOptimizers(shared=Adam(shared, lr=lr), per_language=per_language,
                              discriminator=disc)


@dataclass
class StepTerms:
    """Per-document means of the four losses from one update."""

    recon: float
    kl: float
    disc_loss: float
    adv_loss: float


def _mean_of(value: Tensor, n: int) -> Tensor:
    return T.scale(T.reduce_sum(value), 1.0 / n)


def _bce_with_logits(s: Tensor, target: int) -> Tensor:
    # softplus(s) - t*s == -[t log sigma(s) + (1-t) log(1-sigma(s))], t in {0,1}
    per = T.softplus(s)
    if target == 1:
        per = T.sub(per, s)
    return per


def _confusion_term(s: Tensor) -> Tensor:
    # cross-entropy against the uniform 0.5 target; minimum ln 2 at s = 0
    return T.sub(T.softplus(s), T.scale(s, 0.5))


def pretrain_step(
    model: CrossLingualVae,
    batch: Batch,
    language: int,
    config: PretrainConfig,
    opts: PretrainOptimizers,
    noise: np.ndarray | None = None,
    noise_rng: np.random.Generator | None = None,
    dropout_rng: np.random.Generator | None = None,
    training: bool = True,
) -> StepTerms:
    """One alternating-adversary update on a single-language batch.

    First graph: minimize -ELBO plus adversary_weight times the encoder's
    anti-discriminator term (discriminator frozen), stepping the shared
    encoder group and the batch language's embedding/decoder group.
    Second graph: binary cross-entropy on the detached pre-update h,
    stepping the discriminator alone.  With adversary_weight 0 the first
    graph is exactly the plain VAE bound.
    """
    if not (0 <= language < len(model.decoders)):
        raise InputError(f"unknown language id {language}")
    if batch.language != language:
        raise InputError(f"batch is language {batch.language}, step asked for {language}")
    if noise is None:
        if noise_rng is None:
            raise InputError("pretrain_step needs noise or a noise_rng")
        noise = noise_rng.standard_normal((batch.size, model.z_dim))

    lam = config.adversary_weight
    adv_value: float | None = None
    set_trainable(model.discriminator, False)
    try:
        with Tape():
            enc = model.encoder.encode(batch.token_ids, batch.lengths, language,
                                       training, dropout_rng)
            bound = vae_elbo(model.encoder, model.decoders[language], batch,
                             kl_weight=config.kl_weight, noise=noise,
                             training=training, dropout_rng=dropout_rng, enc=enc)
            loss = T.scale(T.reduce_sum(bound.total), -1.0 / batch.size)
            if lam > 0:
                if config.adversary == "confusion":
                    s = model.discriminator.logits(enc.h, training)
                    adv = _mean_of(_confusion_term(s), batch.size)
                else:
                    s = model.discriminator.logits(T.grad_reverse(enc.h), training)
                    adv = _mean_of(_bce_with_logits(s, language), batch.size)
                adv_value = float(adv.data)
                loss = T.add(loss, T.scale(adv, lam))
        recon_value = float(np.mean(bound.reconstruction.data))
        kl_value = float(np.mean(bound.kl_z1.data))
        if not all(math.isfinite(v) for v in (float(loss.data), recon_value, kl_value)):
            raise TrainingDiverged(
                f"non-finite pretraining loss: recon={recon_value} kl={kl_value} adv={adv_value}")
        backward(loss)
    finally:
        set_trainable(model.discriminator, True)
    opts.shared.step()
    opts.per_language[language].step()

    # adversary term is reported even when it does not train the encoder
    if adv_value is None:
        s0 = model.discriminator.logits(Tensor(enc.h.data), training=False)
        term = _confusion_term(s0) if config.adversary == "confusion" else _bce_with_logits(s0, language)
        adv_value = float(np.mean(term.data))

    with Tape():
        s2 = model.discriminator.logits(Tensor(enc.h.data), training)
        disc_loss = _mean_of(_bce_with_logits(s2, language), batch.size)
    disc_value = float(disc_loss.data)
    if not math.isfinite(disc_value):
        raise TrainingDiverged(f"non-finite discriminator loss: disc={disc_value}")
    backward(disc_loss)
    opts.discriminator.step()

    return StepTerms(
        recon=recon_value,
        kl=kl_value,
        disc_loss=disc_value,
        adv_loss=adv_value,
    )


@dataclass
class PretrainResult:
    trace: MetricsTrace
    best_iteration: int | None
    best_dev_nll: float | None
    iterations_run: int


def dev_negative_elbo(model: CrossLingualVae, corpora: Sequence[SplitSet],
                      config: PretrainConfig) -> float:
    """Mean over both dev sets of -(recon - kl_weight*KL), noise-free.

    Evaluated at the posterior mean so validation is deterministic.
    """
    totals, n = 0.0, 0
    for language, splits in enumerate(corpora):
        for batch in make_batches(splits.dev, config.batch_size):
            bound = vae_elbo(model.encoder, model.decoders[language], batch,
                             kl_weight=config.kl_weight,
                             noise=np.zeros((batch.size, model.z_dim)))
            totals += float(np.sum(bound.total.data))
            n += batch.size
    if n == 0:
        raise InputError("no dev documents to validate on")
    return -totals / n


def discriminator_accuracy(model: CrossLingualVae, corpora: Sequence[SplitSet],
                           config: PretrainConfig) -> float:
    """Held-out accuracy of the language adversary (threshold 0.5)."""
    correct, n = 0, 0
    for language, splits in enumerate(corpora):
        for batch in make_batches(splits.dev, config.batch_size):
            enc = model.encoder.encode(batch.token_ids, batch.lengths, language)
            pred = (model.discriminator.prob_b(enc.h) > 0.5).astype(int)
            correct += int(np.sum(pred == language))
            n += batch.size
    return correct / n


def pretrain(model: CrossLingualVae, corpora: Sequence[SplitSet],
             config: PretrainConfig) -> PretrainResult:
    """Alternate single-language batches until dev negative ELBO stalls.

    Language i takes iterations i, i+2, i+4, ...; each language reshuffles
    its own training pool independently whenever it runs out.  Validation
    every validate_every iterations scores both dev sets and drives early
    stopping (min mode, strict improvement); the best snapshot is restored
    before returning.
    """
    if len(corpora) != 2:
        raise InputError(f"expected two corpora, got {len(corpora)}")
    for i, splits in enumerate(corpora):
        if not splits.train or not splits.dev:
            raise InputError(f"corpus {i} needs non-empty train and dev splits")
        bad = {d.language for d in splits.train + splits.dev} - {i}
        if bad:
            raise InputError(f"corpus {i} contains language tags {sorted(bad)}")

    hub = RngHub(config.seed)
    noise_rng = hub.stream("pretrain/noise")
    dropout_rng = hub.stream("pretrain/dropout")
    opts = make_optimizers(model, config)
    trace = MetricsTrace(TRACE_COLUMNS, key_col="iteration", group_col="language")

    per_epoch = sum(math.ceil(len(s.train) / config.batch_size) for s in corpora)
    total_iterations = config.max_epochs * per_epoch
    queues: list[list[Batch]] = [[], []]
    refills = [0, 0]

    def next_batch(language: int) -> Batch:
        if not queues[language]:
            queues[language] = make_batches(
                corpora[language].train, config.batch_size,
                rng=hub.child(f"pretrain/shuffle{language}", refills[language]))
            refills[language] += 1
        return queues[language].pop(0)

    stopper = EarlyStopper(config.patience, mode="min")
    best_state: dict[str, np.ndarray] | None = None
    iterations_run = 0

    for it in range(1, total_iterations + 1):
        language = (it - 1) % 2
        try:
            terms = pretrain_step(model, next_batch(language), language, config, opts,
                                  noise_rng=noise_rng, dropout_rng=dropout_rng)
        except TrainingDiverged as e:
            raise TrainingDiverged(f"iteration {it}: {e}") from None
        iterations_run = it
        row = dict(recon=terms.recon, kl=terms.kl,
                   disc_loss=terms.disc_loss, adv_loss=terms.adv_loss)
        if it % config.validate_every == 0:
            nll = dev_negative_elbo(model, corpora, config)
            row["dev_nll"] = nll
            row["disc_dev_acc"] = discriminator_accuracy(model, corpora, config)
            if stopper.update(nll, it):
                best_state = model.snapshot()
        trace.add(it, language, **row)
        if stopper.should_stop:
            break

    if best_state is not None:
        model.restore(best_state)
    return PretrainResult(trace=trace, best_iteration=stopper.best_epoch,
                          best_dev_nll=stopper.best_value, iterations_run=iterations_run)


def export_encoder(model: CrossLingualVae) -> SequenceEncoder:
    """Independent copy of the trained encoder, parameters bit-identical.

    The copy drops into the semi-supervised models as q(z1|x): fine-tune it
    end-to-end, or freeze it under layer-wise training.
    """
    return copy.deepcopy(model.encoder)


def nearest_neighbors(
    model: CrossLingualVae,
    word: str,
    query_language: int,
    target_language: int,
    k: int = 10,
    include_special: bool = False,
) -> list[tuple[str, float]]:
    """Top-k target-language words by cosine over embedding rows.

    Ties break toward the lower word id.  UNK/PAD rows are excluded unless
    include_special is set; they are positions, not words.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    for lang in (query_language, target_language):
        if not (0 <= lang < len(model.vocabs)):
            raise InputError(f"unknown language id {lang}")
    qid = model.vocabs[query_language].id_of(word)
    query = model.encoder.embeddings[query_language].weight.data[qid]
    matrix = model.encoder.embeddings[target_language].weight.data
    start = 0 if include_special else 2
    ids = np.arange(start, matrix.shape[0])
    rows = matrix[start:]
    denom = np.maximum(np.linalg.norm(rows, axis=1) * np.linalg.norm(query), 1e-12)
    sims = rows @ query / denom
    order = np.lexsort((ids, -sims))[:k]
    vocab = model.vocabs[target_language]
    return [(vocab.id2word[int(ids[j])], float(sims[j])) for j in order]
