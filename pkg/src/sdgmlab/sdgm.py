"""Semi-supervised stacked generative models for document classification.

Two closely related factorizations share one skeleton:

  m1m2: q(y|mu1), q(z2|z1,y), p(z1|z2,y), p(x|z1)
  aux:  q(y|mu1,h), q(z2|z1,h,y), p(z1|z2,y), p(x|z1,z2,y)

with q(z1|x) amortized by a BiLSTM encoder, z sampled once per bound, and
all Gaussian KL terms in closed form.  The classifier always reads the
posterior mean of z1 (plus the encoder state h in the aux variant), so
prediction is deterministic and identical between training and eval.

Objective (maximized): J = sum_i L(x_i, y_i) + alpha * sum_i J_cls(x_i, y_i)
                           + sum_j U(x_j).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

import sdgmlab.tensor as T
from sdgmlab.datakit import Batch, DatasetStats, Document, documents_to_batch, make_batches
from sdgmlab.distributions import (
    Categorical,
    LatentSample,
    categorical_entropy,
    kl_gaussian_gaussian,
    kl_to_standard_normal,
    reparameterize,
)
from sdgmlab.errors import ConfigError, InputError, StateError, TrainingDiverged
from sdgmlab.metrics import EarlyStopper, MetricsTrace
from sdgmlab.networks import (
    BowDecoder,
    CondGaussianNet,
    EncoderOutput,
    GruDecoder,
    MlpClassifier,
    SequenceEncoder,
    one_hot,
    parameters_of,
    set_trainable,
)
from sdgmlab.rng import RngHub
from sdgmlab.tensor import Adam, Tape, Tensor, backward

MODEL_KINDS = ("m1m2", "aux")
DECODER_KINDS = ("bow", "gru")
TRAINING_MODES = ("end_to_end", "layer_wise")
ALPHA_MODES = ("scaled", "fixed")
CLASSIFIER_LOSSES = ("log", "prob")


def log_uniform_prior(k: int) -> float:
    """log p(y) under the fixed uniform label prior."""
    if k < 1:
        raise InputError("need at least one class")
    return -math.log(k)


def alpha_weight(beta: float, stats: DatasetStats, mode: str = "scaled") -> float:
    """Classification-loss weight: beta * (N_l + N_u) / N_l, or plain beta."""
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    if mode == "fixed":
        return float(beta)
    if mode != "scaled":
        raise ConfigError(f"alpha mode must be one of {ALPHA_MODES}, got {mode!r}")
    if stats.n_labelled < 1:
        raise InputError("scaled alpha needs at least one labelled document")
    return beta * (stats.n_labelled + stats.n_unlabelled) / stats.n_labelled


@dataclass
class ElboBreakdown:
    """Per-document bound terms, all shape (batch,).

    total = reconstruction - kl_z2 - kl_z1 + class_term, built in-graph so
    the identity holds for values and gradients alike.  KL fields already
    carry any kl_weight scaling.
    """

    reconstruction: Tensor
    kl_z2: Tensor
    kl_z1: Tensor
    class_term: Tensor
    total: Tensor

    @classmethod
    def build(cls, reconstruction: Tensor, kl_z2: Tensor, kl_z1: Tensor,
              class_term: Tensor) -> "ElboBreakdown":
        total = T.add(T.sub(T.sub(reconstruction, kl_z2), kl_z1), class_term)
        return cls(reconstruction, kl_z2, kl_z1, class_term, total)

    def objective(self, use_kl: bool = True) -> Tensor:
        """The trained bound; with use_kl=False the Gaussian KLs are dropped."""
        if use_kl:
            return self.total
        return T.add(self.reconstruction, self.class_term)

    def means(self) -> dict[str, float]:
        return {
            "reconstruction": float(self.reconstruction.data.mean()),
            "kl_z2": float(self.kl_z2.data.mean()),
            "kl_z1": float(self.kl_z1.data.mean()),
            "class_term": float(self.class_term.data.mean()),
            "total": float(self.total.data.mean()),
        }


@dataclass
class SdgmConfig:
    vocab_size: int
    class_count: int = 4
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
    beta: float = 0.2
    alpha_mode: str = "scaled"
    classifier_loss: str = "log"
    kl_weight: float = 1.0
    use_kl: bool = True
    share_z2_noise_across_y: bool = True
    batch_norm: bool = False
    embed_dropout: float = 0.0
    encoder_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.decoder_kind not in DECODER_KINDS:
            raise ConfigError(f"decoder_kind must be one of {DECODER_KINDS}, got {self.decoder_kind!r}")
        if self.training_mode not in TRAINING_MODES:
            raise ConfigError(f"training_mode must be one of {TRAINING_MODES}, got {self.training_mode!r}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"alpha_mode must be one of {ALPHA_MODES}, got {self.alpha_mode!r}")
        if self.classifier_loss not in CLASSIFIER_LOSSES:
            raise ConfigError(f"classifier_loss must be one of {CLASSIFIER_LOSSES}")
        if self.training_mode == "layer_wise" and self.model_kind == "aux":
            raise ConfigError(
                "layer-wise training needs a decoder that sees z1 alone; "
                "the aux factorization reconstructs from (z1, z2, y)"
            )
        if self.class_count < 2:
            raise ConfigError("class_count must be at least 2")
        for name in ("vocab_size", "z1_dim", "z2_dim", "embed_dim", "enc_hidden",
                     "enc_layers", "cond_hidden", "gru_embed", "gru_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight cannot be negative")
        for name in ("embed_dropout", "encoder_dropout"):
            if not (0.0 <= getattr(self, name) < 1.0):
                raise ConfigError(f"{name} must lie in [0, 1)")


class SdgmModel:
    """The full stack: encoder, classifier, z2 posterior, z1 prior, decoder.

    Pass a pre-trained SequenceEncoder to transfer it; its z_dim must match
    config.z1_dim, and batches select its embedding by their language id.
    """

    def __init__(self, config: SdgmConfig, encoder: SequenceEncoder | None = None):
        self.config = config
        hub = RngHub(config.seed)
        self.noise_rng = hub.stream("sdgm/noise")
        self.dropout_rng = hub.stream("sdgm/dropout")
        self.shuffle_rng = hub.stream("sdgm/shuffle")
        # a transferred encoder already had its unsupervised fit; layer-wise
        # training must leave its parameters bit-identical
        self.encoder_transferred = encoder is not None
        if encoder is None:
            encoder = SequenceEncoder(
                [config.vocab_size],
                config.embed_dim,
                config.enc_hidden,
                config.enc_layers,
                config.z1_dim,
                hub.stream("sdgm/encoder"),
                embed_dropout=config.embed_dropout,
                encoder_dropout=config.encoder_dropout,
            )
        elif encoder.z_dim != config.z1_dim:
            raise ConfigError(f"encoder z_dim {encoder.z_dim} != configured z1_dim {config.z1_dim}")
        self.encoder = encoder
        k = config.class_count
        aux = config.model_kind == "aux"
        clf_in = config.z1_dim + (encoder.h_dim if aux else 0)
        post_in = config.z1_dim + (encoder.h_dim if aux else 0) + k
        self.classifier = MlpClassifier(clf_in, list(config.clf_hidden), k, hub.stream("sdgm/classifier"))
        self.z2_posterior = CondGaussianNet(post_in, config.cond_hidden, config.z2_dim,
                                            hub.stream("sdgm/z2_posterior"),
                                            batch_norm=config.batch_norm, prefix="z2_posterior")
        self.z1_prior = CondGaussianNet(config.z2_dim + k, config.cond_hidden, config.z1_dim,
                                        hub.stream("sdgm/z1_prior"),
                                        batch_norm=config.batch_norm, prefix="z1_prior")
        dec_cond = config.z1_dim + (config.z2_dim + k if aux else 0)
        if config.decoder_kind == "bow":
            self.decoder = BowDecoder(dec_cond, config.vocab_size, hub.stream("sdgm/decoder"),
                                      prefix="decoder")
        else:
            self.decoder = GruDecoder(config.vocab_size, config.gru_embed, config.gru_hidden,
                                      dec_cond, hub.stream("sdgm/decoder"), prefix="decoder")

    # -- wiring -------------------------------------------------------------

    def modules(self) -> dict[str, object]:
        return {
            "encoder": self.encoder,
            "classifier": self.classifier,
            "z2_posterior": self.z2_posterior,
            "z1_prior": self.z1_prior,
            "decoder": self.decoder,
        }

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for module in self.modules().values():
            out.extend(module.named_parameters())
        names = [n for n, _ in out]
        if len(set(names)) != len(names):
            raise StateError("duplicate parameter names across modules")
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def snapshot(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, arr in self._buffers():
            state[name] = arr.copy()
        return state

    def restore(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            p.data[...] = state[name]
        for prefix, net in (("z2_posterior", self.z2_posterior), ("z1_prior", self.z1_prior)):
            if net.norm is not None:
                net.norm.running_mean = state[f"{prefix}.bn.running_mean"].copy()
                net.norm.running_var = state[f"{prefix}.bn.running_var"].copy()

    def _buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, net in (("z2_posterior", self.z2_posterior), ("z1_prior", self.z1_prior)):
            if net.norm is not None:
                out.append((f"{prefix}.bn.running_mean", net.norm.running_mean))
                out.append((f"{prefix}.bn.running_var", net.norm.running_var))
        return out

    # -- inference pieces ----------------------------------------------------

    def encode(self, batch: Batch, training: bool = False) -> EncoderOutput:
        return self.encoder.encode(batch.token_ids, batch.lengths, batch.language,
                                   training, self.dropout_rng)

    def classify_from(self, enc: EncoderOutput, z1_value: Tensor | None = None,
                      training: bool = False) -> Categorical:
        """q(y|z1[,h]); z1 is the supplied sample, or the posterior mean (eval)."""
        z1_value = enc.q_z1.mean if z1_value is None else z1_value
        if self.config.model_kind == "aux":
            x = T.concat([z1_value, enc.h], axis=1)
        else:
            x = z1_value
        return self.classifier.classify(x, training)

    def draw_noise(self, batch_size: int, per_y: bool = False) -> tuple[np.ndarray, np.ndarray]:
        eps1 = self.noise_rng.standard_normal((batch_size, self.config.z1_dim))
        if per_y:
            eps2 = self.noise_rng.standard_normal(
                (self.config.class_count, batch_size, self.config.z2_dim))
        else:
            eps2 = self.noise_rng.standard_normal((batch_size, self.config.z2_dim))
        return eps1, eps2

    def _posterior_parts(self, z1_value: Tensor, enc: EncoderOutput, y_hot: Tensor) -> list[Tensor]:
        if self.config.model_kind == "aux":
            return [z1_value, enc.h, y_hot]
        return [z1_value, y_hot]

    def _reconstruction(self, z1_value: Tensor, z2_value: Tensor | None,
                        y_hot: Tensor | None, batch: Batch, training: bool) -> Tensor:
        if self.config.model_kind == "aux":
            parts = [z1_value, z2_value, y_hot]
        else:
            parts = [z1_value]
        if self.config.decoder_kind == "bow":
            cond = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
            return self.decoder.log_likelihood(cond, batch.bow_counts(self.config.vocab_size))
        return self.decoder.log_likelihood(parts, batch.token_ids, batch.lengths,
                                           training, self.dropout_rng)


def _weight_kl(kl: Tensor, kl_weight: float) -> Tensor:
    return kl if kl_weight == 1.0 else T.scale(kl, kl_weight)


def _stack_terms(
    model: SdgmModel,
    enc: EncoderOutput,
    z1: LatentSample,
    batch: Batch,
    ys: np.ndarray,
    eps2: np.ndarray,
    training: bool,
    recon_override: Tensor | None = None,
) -> ElboBreakdown:
    cfg = model.config
    y_hot = Tensor(one_hot(ys, cfg.class_count))
    q_z2 = model.z2_posterior(model._posterior_parts(z1.value, enc, y_hot), training)
    z2 = reparameterize(q_z2, eps2)
    p_z1 = model.z1_prior([z2.value, y_hot], training)
    kl_z2 = _weight_kl(kl_to_standard_normal(q_z2), cfg.kl_weight)
    kl_z1 = _weight_kl(kl_gaussian_gaussian(enc.q_z1, p_z1), cfg.kl_weight)
    if recon_override is not None:
        recon = recon_override
    else:
        recon = model._reconstruction(z1.value, z2.value, y_hot, batch, training)
    class_term = Tensor(np.full(batch.size, log_uniform_prior(cfg.class_count)))
    return ElboBreakdown.build(recon, kl_z2, kl_z1, class_term)


def _validate_labels(ys: np.ndarray, k: int) -> np.ndarray:
    ys = np.asarray(ys)
    if ys.ndim != 1:
        raise InputError(f"labels must be a flat vector, got shape {ys.shape}")
    if np.any(ys < 0) or np.any(ys >= k):
        raise InputError(f"labels must lie in [0, {k}); found values outside")
    return ys


def labelled_elbo(
    model: SdgmModel,
    batch: Batch,
    ys: np.ndarray | None = None,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
    training: bool = False,
) -> ElboBreakdown:
    """Single-sample bound L(x, y) for documents with observed labels."""
    ys = _validate_labels(batch.labels if ys is None else ys, model.config.class_count)
    if ys.shape[0] != batch.size:
        raise InputError("one label per document required")
    enc = model.encode(batch, training)
    eps1, eps2 = model.draw_noise(batch.size) if noise is None else noise
    z1 = reparameterize(enc.q_z1, eps1)
    return _stack_terms(model, enc, z1, batch, ys, eps2, training)


def unlabelled_elbo(
    model: SdgmModel,
    batch: Batch,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
    training: bool = False,
    force_q_y: np.ndarray | None = None,
) -> ElboBreakdown:
    """U(x) = sum_y q(y|x) L(x, y) + H(q), with y enumerated exactly.

    The z1 noise is always shared across the enumeration; z2 noise is
    shared too unless the config asks for per-class draws (then `noise`
    must carry eps2 of shape (K, batch, z2_dim)).  `force_q_y` substitutes
    fixed mixing probabilities for the classifier's output; gradients then
    skip the classifier entirely.
    """
    cfg = model.config
    k = cfg.class_count
    b = batch.size
    enc = model.encode(batch, training)
    if noise is None:
        eps1, eps2 = model.draw_noise(b, per_y=not cfg.share_z2_noise_across_y)
    else:
        eps1, eps2 = noise
    shared_eps2 = eps2.ndim == 2
    if not shared_eps2 and eps2.shape[0] != k:
        raise InputError(f"per-class noise must have leading dim {k}")
    z1 = reparameterize(enc.q_z1, eps1)

    if force_q_y is not None:
        force_q_y = np.asarray(force_q_y, dtype=np.float64)
        if force_q_y.shape != (b, k):
            raise InputError(f"force_q_y must be ({b}, {k}), got {force_q_y.shape}")
        if np.any(force_q_y < 0) or np.max(np.abs(force_q_y.sum(axis=1) - 1.0)) > 1e-9:
            raise InputError("force_q_y rows must be distributions")
        probs = Tensor(force_q_y)
        entropy = Tensor(-np.sum(np.where(force_q_y > 0, force_q_y * np.log(np.where(force_q_y > 0, force_q_y, 1.0)), 0.0), axis=1))
    else:
        q_y = model.classify_from(enc, z1.value, training)
        probs = q_y.probs()
        entropy = categorical_entropy(q_y)

    recon_once = None
    if cfg.model_kind == "m1m2":
        # p(x|z1) does not depend on the enumerated label: decode once
        recon_once = model._reconstruction(z1.value, None, None, batch, training)
    per_y = [
        _stack_terms(model, enc, z1, batch, np.full(b, c),
                     eps2 if shared_eps2 else eps2[c], training,
                     recon_override=recon_once)
        for c in range(k)
    ]

    def mix(fields: list[Tensor]) -> Tensor:
        acc = None
        for c in range(k):
            w_c = T.reshape(T.slice_axis(probs, 1, c, c + 1), (b,))
            term = T.mul(w_c, fields[c])
            acc = term if acc is None else T.add(acc, term)
        return acc

    return ElboBreakdown.build(
        mix([bd.reconstruction for bd in per_y]),
        mix([bd.kl_z2 for bd in per_y]),
        mix([bd.kl_z1 for bd in per_y]),
        T.add(mix([bd.class_term for bd in per_y]), entropy),
    )


def _label_pick(values: Tensor, ys: np.ndarray) -> Tensor:
    hot = Tensor(one_hot(ys, values.shape[1]))
    return T.reduce_sum(T.mul(values, hot), axis=1)


def classification_sum(q_y: Categorical, ys: np.ndarray, loss_kind: str) -> Tensor:
    """J_cls summed over the batch: log q(y|x) by default, raw q(y|x) as the variant."""
    if loss_kind == "log":
        picked = _label_pick(q_y.log_probs(), ys)
    elif loss_kind == "prob":
        picked = _label_pick(q_y.probs(), ys)
    else:
        raise ConfigError(f"classifier_loss must be one of {CLASSIFIER_LOSSES}")
    return T.reduce_sum(picked)


def classification_loss(model: SdgmModel, batch: Batch, ys: np.ndarray | None = None,
                        noise: np.ndarray | None = None, training: bool = False) -> Tensor:
    """Per-document J_cls over one z1 sample, shape (batch,)."""
    ys = _validate_labels(batch.labels if ys is None else ys, model.config.class_count)
    enc = model.encode(batch, training)
    eps1 = model.noise_rng.standard_normal((batch.size, model.config.z1_dim)) if noise is None else noise
    z1 = reparameterize(enc.q_z1, eps1)
    q_y = model.classify_from(enc, z1.value, training)
    if model.config.classifier_loss == "log":
        return _label_pick(q_y.log_probs(), ys)
    return _label_pick(q_y.probs(), ys)


def joint_objective(
    model: SdgmModel,
    labelled_batch: Batch | None,
    unlabelled_batch: Batch | None,
    stats: DatasetStats,
    training: bool = False,
    noise_l: tuple[np.ndarray, np.ndarray] | None = None,
    noise_u: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Batch objective J (a scalar to maximize) plus a float report of its parts.

    The labelled pass encodes each document once and reuses that encoding
    for both the bound and the classification term.
    """
    if labelled_batch is None and unlabelled_batch is None:
        raise InputError("joint objective needs at least one batch")
    cfg = model.config
    alpha = alpha_weight(cfg.beta, stats, cfg.alpha_mode)
    pieces: list[Tensor] = []
    report: dict[str, float] = {"alpha": alpha}

    if labelled_batch is not None:
        ys = _validate_labels(labelled_batch.labels, cfg.class_count)
        enc = model.encode(labelled_batch, training)
        eps1, eps2 = model.draw_noise(labelled_batch.size) if noise_l is None else noise_l
        z1 = reparameterize(enc.q_z1, eps1)
        bd = _stack_terms(model, enc, z1, labelled_batch, ys, eps2, training)
        l_sum = T.reduce_sum(bd.objective(cfg.use_kl))
        # J_cls reuses the bound's z1 sample: one encode, one draw per document
        cls_sum = classification_sum(model.classify_from(enc, z1.value, training), ys,
                                     cfg.classifier_loss)
        pieces.append(l_sum)
        pieces.append(T.scale(cls_sum, alpha))
        report["labelled_sum"] = l_sum.item()
        report["class_sum"] = cls_sum.item()
        report.update({f"labelled_{k}": v for k, v in bd.means().items()})

    if unlabelled_batch is not None:
        ubd = unlabelled_elbo(model, unlabelled_batch, noise_u, training)
        u_sum = T.reduce_sum(ubd.objective(cfg.use_kl))
        pieces.append(u_sum)
        report["unlabelled_sum"] = u_sum.item()

    objective = pieces[0]
    for extra in pieces[1:]:
        objective = T.add(objective, extra)
    report["objective"] = objective.item()
    return objective, report


# ---------------------------------------------------------------------------
# plain VAE bound (phase-1 of layer-wise training; also the pretraining core)


def vae_elbo(
    encoder: SequenceEncoder,
    decoder,
    batch: Batch,
    kl_weight: float = 1.0,
    noise: np.ndarray | None = None,
    training: bool = False,
    noise_rng: np.random.Generator | None = None,
    dropout_rng: np.random.Generator | None = None,
    enc: EncoderOutput | None = None,
) -> ElboBreakdown:
    """Unconditional bound log p(x) >= recon - kl_weight * KL(q(z1|x) || N(0,I)).

    kl_z2 and class_term are identically zero here; the breakdown shape is
    shared with the stacked bounds so traces and tests can treat them alike.
    Pass `enc` to reuse an encoding whose h is also consumed elsewhere in
    the same graph (adversarial pretraining does).
    """
    if enc is None:
        enc = encoder.encode(batch.token_ids, batch.lengths, batch.language, training, dropout_rng)
    if noise is None:
        if noise_rng is None:
            raise InputError("vae_elbo needs noise or a noise_rng")
        noise = noise_rng.standard_normal((batch.size, encoder.z_dim))
    z = reparameterize(enc.q_z1, noise)
    if isinstance(decoder, BowDecoder):
        recon = decoder.log_likelihood(z.value, batch.bow_counts(decoder.vocab_size))
    else:
        recon = decoder.log_likelihood([z.value], batch.token_ids, batch.lengths,
                                       training, dropout_rng)
    kl = _weight_kl(kl_to_standard_normal(enc.q_z1), kl_weight)
    zero = Tensor(np.zeros(batch.size))
    return ElboBreakdown.build(recon, zero, kl, zero)


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    trace: MetricsTrace
    best_epoch: int | None
    best_dev_accuracy: float | None
    epochs_run: int


def _encoder_params(model: SdgmModel, docs: list[Document]) -> list[Tensor]:
    """Encoder parameters the given documents can actually reach.

    Embeddings of languages absent from `docs` never see a lookup, so they
    would end an optimizer step with no gradient; they are left out.
    """
    languages = {d.language for d in docs}
    enc = model.encoder
    params = [p for lang in sorted(languages) for _, p in enc.embeddings[lang].named_parameters()]
    return params + parameters_of(enc.bilstm) + parameters_of(enc.mu_head) + parameters_of(enc.log_var_head)


def _dev_accuracy(model: SdgmModel, docs: list[Document], batch_size: int = 64) -> float:
    if not docs:
        raise InputError("no validation documents")
    correct = 0
    for batch in make_batches(docs, batch_size):
        ys = _validate_labels(batch.labels, model.config.class_count)
        correct += int(np.sum(predict(model, batch) == ys))
    return correct / len(docs)


def predict(model: SdgmModel, batch: Batch) -> np.ndarray:
    """Deterministic labels from q(y | posterior mean); ties take the lowest class id."""
    probs = model.classify_from(model.encode(batch, training=False)).probs_array()
    return np.argmax(probs, axis=1)


def _check_finite(value: float, epoch: int, context: str) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite objective at epoch {epoch} ({context})")


def _train_vae_phase(model: SdgmModel, docs: list[Document], epochs: int,
                     batch_size: int, lr: float, trace: MetricsTrace,
                     train_encoder: bool = True) -> None:
    params = parameters_of(model.decoder)
    if train_encoder:
        params = _encoder_params(model, docs) + params
    opt = Adam(params, lr=lr)
    cfg = model.config
    for epoch in range(1, epochs + 1):
        total = 0.0
        count = 0
        for batch in make_batches(docs, batch_size, rng=model.shuffle_rng):
            with Tape():
                bd = vae_elbo(model.encoder, model.decoder, batch, cfg.kl_weight,
                              training=True, noise_rng=model.noise_rng,
                              dropout_rng=model.dropout_rng)
                loss = T.scale(T.reduce_sum(bd.objective(cfg.use_kl)), -1.0 / batch.size)
            _check_finite(loss.item(), epoch, "vae phase")
            backward(loss)
            opt.step()
            total += -loss.item() * batch.size
            count += batch.size
        trace.add(epoch, "vae_train", objective=total / count)


def train_sdgm(
    model: SdgmModel,
    labelled: list[Document],
    unlabelled: list[Document],
    dev: list[Document],
    epochs: int,
    batch_size: int = 16,
    lr: float = 5e-4,
    patience: int = 20,
    phase1_epochs: int = 30,
    trace: MetricsTrace | None = None,
) -> TrainResult:
    """Maximize J with Adam; early-stop on dev accuracy and restore the best state.

    Layer-wise mode first fits the plain VAE (encoder + decoder) on every
    training document, then freezes those modules and fits only the
    classifier and the z2/z1 conditionals.  A transferred encoder skips the
    encoder half of that first phase: its parameters stay bit-identical.
    """
    if not labelled:
        raise InputError("training needs labelled documents (use train_classifier for none)")
    cfg = model.config
    if trace is None:
        trace = MetricsTrace(["objective", "accuracy"])
    stats = DatasetStats(len(labelled), len(unlabelled))
    all_docs = labelled + unlabelled

    frozen: list[object] = []
    if cfg.training_mode == "layer_wise":
        # a transferred encoder counts as the finished first layer: phase 1
        # then only fits the decoder, keeping the encoder bit-identical
        _train_vae_phase(model, all_docs, phase1_epochs, batch_size, lr, trace,
                         train_encoder=not model.encoder_transferred)
        frozen = [model.encoder, model.decoder]
        for module in frozen:
            set_trainable(module, False)
        params = (parameters_of(model.classifier) + parameters_of(model.z2_posterior)
                  + parameters_of(model.z1_prior))
    else:
        params = (_encoder_params(model, all_docs)
                  + parameters_of(model.classifier) + parameters_of(model.z2_posterior)
                  + parameters_of(model.z1_prior) + parameters_of(model.decoder))

    opt = Adam(params, lr=lr)
    stopper = EarlyStopper(patience, mode="max")
    best_state = model.snapshot()
    epochs_run = 0
    try:
        for epoch in range(1, epochs + 1):
            epochs_run = epoch
            lb = make_batches(labelled, batch_size, rng=model.shuffle_rng)
            ub = make_batches(unlabelled, batch_size, rng=model.shuffle_rng) if unlabelled else []
            steps = max(len(lb), len(ub))
            obj_total = 0.0
            doc_total = 0
            for s in range(steps):
                bl = lb[s % len(lb)]
                bu = ub[s % len(ub)] if ub else None
                denom = bl.size + (bu.size if bu is not None else 0)
                with Tape():
                    objective, report = joint_objective(model, bl, bu, stats, training=True)
                    loss = T.scale(objective, -1.0 / denom)
                _check_finite(loss.item(), epoch, f"terms {report}")
                backward(loss)
                opt.step()
                obj_total += report["objective"]
                doc_total += denom
            acc = _dev_accuracy(model, dev)
            trace.add(epoch, "train", objective=obj_total / doc_total)
            trace.add(epoch, "dev", accuracy=acc)
            if stopper.update(acc, epoch):
                best_state = model.snapshot()
            if stopper.should_stop:
                break
    finally:
        for module in frozen:
            set_trainable(module, True)
    model.restore(best_state)
    return TrainResult(trace, stopper.best_epoch, stopper.best_value, epochs_run)


def train_classifier(
    model: SdgmModel,
    labelled: list[Document],
    dev: list[Document],
    epochs: int,
    batch_size: int = 16,
    lr: float = 5e-4,
    patience: int = 20,
    trace: MetricsTrace | None = None,
) -> TrainResult:
    """Supervised-only baseline: maximize mean J_cls through encoder + classifier."""
    if not labelled:
        raise InputError("no labelled documents")
    if trace is None:
        trace = MetricsTrace(["objective", "accuracy"])
    params = _encoder_params(model, labelled) + parameters_of(model.classifier)
    opt = Adam(params, lr=lr)
    stopper = EarlyStopper(patience, mode="max")
    best_state = model.snapshot()
    epochs_run = 0
    for epoch in range(1, epochs + 1):
        epochs_run = epoch
        total = 0.0
        count = 0
        for batch in make_batches(labelled, batch_size, rng=model.shuffle_rng):
            with Tape():
                per_doc = classification_loss(model, batch, training=True)
                loss = T.scale(T.reduce_sum(per_doc), -1.0 / batch.size)
            _check_finite(loss.item(), epoch, "supervised")
            backward(loss)
            opt.step()
            total += -loss.item() * batch.size
            count += batch.size
        acc = _dev_accuracy(model, dev)
        trace.add(epoch, "train", objective=total / count)
        trace.add(epoch, "dev", accuracy=acc)
        if stopper.update(acc, epoch):
            best_state = model.snapshot()
        if stopper.should_stop:
            break
    model.restore(best_state)
    return TrainResult(trace, stopper.best_epoch, stopper.best_value, epochs_run)


# ---------------------------------------------------------------------------
# generation


def conditional_generate(
    model: SdgmModel,
    y: int,
    z2_source: str = "prior",
    document: Document | None = None,
    rng: np.random.Generator | None = None,
    top_k: int = 20,
    max_len: int = 30,
) -> list[int]:
    """Decode one synthetic document for class y.

    z2 comes from the standard normal prior, or from the posterior means of
    a seed document (its own label inferred by the classifier).  z1 is then
    sampled from p(z1|z2, y).  BOW decoding returns the top_k most probable
    vocabulary words as token ids, UNK/PAD excluded, ties to the lower id;
    GRU decoding is greedy.
    """
    cfg = model.config
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.data)):
            raise StateError(f"parameter {name} holds non-finite values")
    if not (0 <= y < cfg.class_count):
        raise InputError(f"class id {y} outside [0, {cfg.class_count})")
    if rng is None:
        rng = model.noise_rng

    if z2_source == "prior":
        z2 = rng.standard_normal((1, cfg.z2_dim))
    elif z2_source == "document":
        if document is None:
            raise InputError("document-sourced z2 needs a document")
        batch = documents_to_batch([document])
        enc = model.encode(batch, training=False)
        y_hat = int(predict(model, batch)[0])
        parts = model._posterior_parts(enc.q_z1.mean, enc, Tensor(one_hot(np.array([y_hat]), cfg.class_count)))
        z2 = model.z2_posterior(parts, training=False).mean.data
    else:
        raise InputError(f"z2_source must be 'prior' or 'document', got {z2_source!r}")

    y_hot = one_hot(np.array([y]), cfg.class_count)
    p_z1 = model.z1_prior([Tensor(z2), Tensor(y_hot)], training=False)
    z1 = p_z1.mean.data + np.exp(0.5 * p_z1.log_var.data) * rng.standard_normal((1, cfg.z1_dim))

    if cfg.model_kind == "aux":
        parts = [Tensor(z1), Tensor(z2), Tensor(y_hot)]
    else:
        parts = [Tensor(z1)]
    if cfg.decoder_kind == "bow":
        cond = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        logits = model.decoder.logits(cond).data[0]
        # UNK/PAD are positions, not words; rankings hold vocabulary words only
        ids = np.arange(2, logits.size)
        order = np.lexsort((ids, -logits[2:]))
        return [int(ids[j]) for j in order[:top_k]]
    return model.decoder.greedy_decode(parts, max_len)
