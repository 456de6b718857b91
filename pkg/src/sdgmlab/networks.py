"""Parametric building blocks: embeddings, MLPs, BiLSTM encoder, decoders.

Everything here is a plain container of Tensors plus a pure forward
function; training mutations happen through the optimizer only.  All
modules expose named_parameters() with hierarchical dotted names, which
the checkpoint format relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sdgmlab import tensor as T
from sdgmlab.distributions import Categorical, DiagGaussian
from sdgmlab.errors import InputError, VocabError
from sdgmlab.tensor import Tensor


def one_hot(ids, k: int) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim == 0:
        ids = ids[None]
    if np.any(ids < 0) or np.any(ids >= k):
        raise InputError(f"class id outside [0, {k})")
    out = np.zeros((ids.size, k))
    out[np.arange(ids.size), ids] = 1.0
    return out


def validate_one_hot(y: np.ndarray, k: int) -> None:
    y = np.asarray(y)
    if y.shape[-1] != k:
        raise InputError(f"one-hot width {y.shape[-1]} != K={k}")
    ok = np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)
    if not ok:
        raise InputError("y is not a one-hot vector")


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return x
    if not (0.0 <= rate < 1.0):
        raise InputError(f"dropout rate must lie in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, Tensor(mask))


class Embedding:
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, prefix: str = "embedding"):
        if vocab_size < 1 or dim < 1:
            raise InputError("embedding needs positive vocab size and dim")
        self.vocab_size = vocab_size
        self.dim = dim
        self.prefix = prefix
        self.weight = Tensor(0.1 * rng.standard_normal((vocab_size, dim)), requires_grad=True)

    def lookup(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabError(f"token id outside vocabulary of size {self.vocab_size}")
        return T.embedding_lookup(self.weight, ids)

    def named_parameters(self):
        return [(f"{self.prefix}.weight", self.weight)]


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, prefix: str = "linear"):
        bound = 1.0 / math.sqrt(in_dim)
        self.prefix = prefix
        self.weight = Tensor(rng.uniform(-bound, bound, (in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, (out_dim,)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        return T.add(out, T.broadcast(self.bias, out.shape))

    def named_parameters(self):
        return [(f"{self.prefix}.weight", self.weight), (f"{self.prefix}.bias", self.bias)]


class BatchNorm:
    """1-d batch normalization with running statistics (momentum 0.1)."""

    def __init__(self, dim: int, prefix: str = "bn", momentum: float = 0.1, eps: float = 1e-5):
        self.prefix = prefix
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            b = x.shape[0]
            mu = T.reduce_mean(x, axis=0)
            centered = T.sub(x, T.broadcast(mu, x.shape))
            var = T.reduce_mean(T.mul(centered, centered), axis=0)
            unbias = b / max(b - 1, 1)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.data
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var.data * unbias
            rstd = T.exp(T.scale(T.log(T.shift(var, self.eps)), -0.5))
            xhat = T.mul(centered, T.broadcast(rstd, x.shape))
        else:
            rstd = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = T.mul(T.sub(x, T.broadcast(Tensor(self.running_mean), x.shape)),
                         T.broadcast(Tensor(rstd), x.shape))
        out = T.mul(xhat, T.broadcast(self.gamma, x.shape))
        return T.add(out, T.broadcast(self.beta, x.shape))

    def named_parameters(self):
        return [(f"{self.prefix}.gamma", self.gamma), (f"{self.prefix}.beta", self.beta)]


_ACTIVATIONS = {
    "relu": T.relu,
    "leakyrelu": T.leaky_relu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
}


@dataclass
class MlpSpec:
    """Layer plan: sizes [in, h1, ..., out]; one activation/norm per hidden layer."""

    layer_sizes: list[int]
    activations: list[str]
    normalization: list[str] | None = None

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise InputError("MlpSpec needs at least input and output sizes")
        hidden = len(self.layer_sizes) - 2
        if len(self.activations) != hidden:
            raise InputError(f"need {hidden} activations, got {len(self.activations)}")
        if self.normalization is None:
            self.normalization = ["none"] * hidden
        if len(self.normalization) != hidden:
            raise InputError(f"need {hidden} normalization entries, got {len(self.normalization)}")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise InputError(f"unknown activation '{a}'")
        for n in self.normalization:
            if n not in ("none", "batch_norm"):
                raise InputError(f"unknown normalization '{n}'")


class Mlp:
    def __init__(self, spec: MlpSpec, rng: np.random.Generator, prefix: str = "mlp"):
        self.spec = spec
        self.prefix = prefix
        sizes = spec.layer_sizes
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, prefix=f"{prefix}.layer{i}") for i in range(len(sizes) - 1)
        ]
        self.norms: list[BatchNorm | None] = []
        for i, n in enumerate(spec.normalization):
            self.norms.append(BatchNorm(sizes[i + 1], prefix=f"{prefix}.bn{i}") if n == "batch_norm" else None)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        n_hidden = len(self.spec.activations)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < n_hidden:
                if self.norms[i] is not None:
                    x = self.norms[i](x, training)
                x = _ACTIVATIONS[self.spec.activations[i]](x)
        return x

    def named_parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.named_parameters())
        for bn in self.norms:
            if bn is not None:
                out.extend(bn.named_parameters())
        return out


class LstmLayer:
    """Single-direction LSTM over one layer; gate order i, f, g, o."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, prefix: str = "lstm"):
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.prefix = prefix
        self.wx = Tensor(rng.uniform(-bound, bound, (in_dim, 4 * hidden)), requires_grad=True)
        self.wh = Tensor(rng.uniform(-bound, bound, (hidden, 4 * hidden)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, (4 * hidden,)), requires_grad=True)

    def step(self, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hd = self.hidden
        gates = T.add(T.add(T.matmul(x_t, self.wx), T.matmul(h, self.wh)),
                      T.broadcast(self.bias, (x_t.shape[0], 4 * hd)))
        i = T.sigmoid(T.slice_axis(gates, 1, 0, hd))
        f = T.sigmoid(T.slice_axis(gates, 1, hd, 2 * hd))
        g = T.tanh(T.slice_axis(gates, 1, 2 * hd, 3 * hd))
        o = T.sigmoid(T.slice_axis(gates, 1, 3 * hd, 4 * hd))
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new

    def run(self, xs: list[Tensor], masks: list[np.ndarray | None], reverse: bool) -> list[Tensor]:
        """Hidden state per position; padded steps carry the previous state.

        masks[t] is an (n, hidden) float 0/1 array, or None meaning all-ones.
        With zero initial state and right-padding, carried states make the
        final forward state equal the state at position length-1, and give
        the backward direction a clean zero start inside the padding.
        """
        n = xs[0].shape[0]
        h = Tensor(np.zeros((n, self.hidden)))
        c = Tensor(np.zeros((n, self.hidden)))
        order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
        out: list[Tensor | None] = [None] * len(xs)
        for t in order:
            h_new, c_new = self.step(xs[t], h, c)
            m = masks[t]
            if m is None:
                h, c = h_new, c_new
            else:
                keep = Tensor(1.0 - m)
                mt = Tensor(m)
                h = T.add(T.mul(h_new, mt), T.mul(h, keep))
                c = T.add(T.mul(c_new, mt), T.mul(c, keep))
            out[t] = h
        return out  # type: ignore[return-value]

    def named_parameters(self):
        return [(f"{self.prefix}.wx", self.wx), (f"{self.prefix}.wh", self.wh), (f"{self.prefix}.bias", self.bias)]


class BiLstm:
    """Stacked bidirectional LSTM; layer l+1 consumes [fwd_l ; bwd_l] per position."""

    def __init__(self, in_dim: int, hidden: int, n_layers: int, rng: np.random.Generator, prefix: str = "bilstm"):
        self.hidden = hidden
        self.n_layers = n_layers
        self.layers = []
        for l in range(n_layers):
            d = in_dim if l == 0 else 2 * hidden
            fwd = LstmLayer(d, hidden, rng, prefix=f"{prefix}.l{l}.fwd")
            bwd = LstmLayer(d, hidden, rng, prefix=f"{prefix}.l{l}.bwd")
            self.layers.append((fwd, bwd))

    @staticmethod
    def step_masks(lengths: np.ndarray, width: int, hidden: int) -> list[np.ndarray | None]:
        masks: list[np.ndarray | None] = []
        for t in range(width):
            live = (lengths > t).astype(np.float64)
            masks.append(None if live.all() else np.repeat(live[:, None], hidden, axis=1))
        return masks

    def run(self, xs: list[Tensor], lengths: np.ndarray) -> tuple[Tensor, list[Tensor]]:
        """Returns (final h = [fwd_last ; bwd_first] of top layer, per-position states)."""
        width = len(xs)
        masks = self.step_masks(lengths, width, self.hidden)
        seq = xs
        fwd_states: list[Tensor] = []
        bwd_states: list[Tensor] = []
        for fwd, bwd in self.layers:
            fwd_states = fwd.run(seq, masks, reverse=False)
            bwd_states = bwd.run(seq, masks, reverse=True)
            seq = [T.concat([f, b], axis=1) for f, b in zip(fwd_states, bwd_states)]
        h = T.concat([fwd_states[-1], bwd_states[0]], axis=1)
        return h, seq

    def named_parameters(self):
        out = []
        for fwd, bwd in self.layers:
            out.extend(fwd.named_parameters())
            out.extend(bwd.named_parameters())
        return out


@dataclass
class EncoderOutput:
    h: Tensor
    q_z1: DiagGaussian


class SequenceEncoder:
    """Per-language embeddings -> shared BiLSTM -> Gaussian heads for q(z1|x).

    The BiLSTM and heads are language-agnostic by construction; language
    selects only the embedding matrix.
    """

    def __init__(
        self,
        vocab_sizes: list[int],
        embed_dim: int,
        hidden: int,
        n_layers: int,
        z_dim: int,
        rng: np.random.Generator,
        embed_dropout: float = 0.0,
        encoder_dropout: float = 0.0,
    ):
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.z_dim = z_dim
        self.embed_dropout = embed_dropout
        self.encoder_dropout = encoder_dropout
        self.embeddings = [
            Embedding(v, embed_dim, rng, prefix=f"encoder.embed{i}") for i, v in enumerate(vocab_sizes)
        ]
        self.bilstm = BiLstm(embed_dim, hidden, n_layers, rng, prefix="encoder.bilstm")
        self.mu_head = Linear(2 * hidden, z_dim, rng, prefix="encoder.mu")
        self.log_var_head = Linear(2 * hidden, z_dim, rng, prefix="encoder.log_var")

    @property
    def h_dim(self) -> int:
        return 2 * self.hidden

    def encode(
        self,
        token_ids: np.ndarray,
        lengths: np.ndarray,
        language: int = 0,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EncoderOutput:
        token_ids = np.asarray(token_ids)
        if token_ids.ndim != 2:
            raise InputError(f"token_ids must be (batch, width), got shape {token_ids.shape}")
        lengths = np.asarray(lengths)
        if np.any(lengths < 1):
            raise InputError("zero-length document in batch")
        if np.any(lengths > token_ids.shape[1]):
            raise InputError("length exceeds padded width")
        if not (0 <= language < len(self.embeddings)):
            raise InputError(f"unknown language id {language}")
        emb = self.embeddings[language]
        if training and self.embed_dropout > 0 and rng is None:
            raise InputError("training-mode encode with dropout needs an rng")
        xs = []
        for t in range(token_ids.shape[1]):
            x_t = emb.lookup(token_ids[:, t])
            x_t = dropout(x_t, self.embed_dropout, rng, training)
            xs.append(x_t)
        h, _ = self.bilstm.run(xs, lengths)
        h = dropout(h, self.encoder_dropout, rng, training)
        return EncoderOutput(h=h, q_z1=DiagGaussian(self.mu_head(h), self.log_var_head(h)))

    def named_parameters(self):
        out = []
        for e in self.embeddings:
            out.extend(e.named_parameters())
        out.extend(self.bilstm.named_parameters())
        out.extend(self.mu_head.named_parameters())
        out.extend(self.log_var_head.named_parameters())
        return out


class BowDecoder:
    """Order-agnostic decoder: one logit vector scores every token independently.

    Either owns an untied (cond_dim, V) projection, or ties the projection
    to an Embedding's matrix transposed (then cond_dim must equal embed_dim).
    """

    def __init__(
        self,
        cond_dim: int,
        vocab_size: int,
        rng: np.random.Generator,
        tied_embedding: Embedding | None = None,
        prefix: str = "bow",
    ):
        self.vocab_size = vocab_size
        self.cond_dim = cond_dim
        self.prefix = prefix
        self.tied = tied_embedding
        if tied_embedding is not None:
            if tied_embedding.dim != cond_dim:
                raise InputError(
                    f"tied decoder needs cond_dim == embed_dim, got {cond_dim} vs {tied_embedding.dim}"
                )
            if tied_embedding.vocab_size != vocab_size:
                raise InputError("tied decoder vocab mismatch")
            self.weight = None
        else:
            bound = 1.0 / math.sqrt(cond_dim)
            self.weight = Tensor(rng.uniform(-bound, bound, (cond_dim, vocab_size)), requires_grad=True)
        self.bias = Tensor(np.zeros(vocab_size), requires_grad=True)

    def logits(self, cond: Tensor) -> Tensor:
        w = T.transpose(self.tied.weight) if self.tied is not None else self.weight
        out = T.matmul(cond, w)
        return T.add(out, T.broadcast(self.bias, out.shape))

    def log_likelihood(self, cond: Tensor, counts: np.ndarray) -> Tensor:
        """Per-document sum over the token multiset of log softmax(logits)."""
        counts = np.asarray(counts, dtype=np.float64)
        if counts.shape != (cond.shape[0], self.vocab_size):
            raise InputError(f"counts shape {counts.shape} != (batch, vocab)")
        if np.any(counts.sum(axis=1) < 1):
            raise InputError("empty token multiset")
        lsm = T.log_softmax(self.logits(cond), axis=1)
        return T.reduce_sum(T.mul(lsm, Tensor(counts)), axis=1)

    def named_parameters(self):
        own = [] if self.weight is None else [(f"{self.prefix}.weight", self.weight)]
        return own + [(f"{self.prefix}.bias", self.bias)]


class GruDecoder:
    """Teacher-forced GRU with the conditioning latents appended at every step.

    The embedding table carries one extra internal row used as the
    begin-of-sequence input; it is never a target.
    """

    def __init__(
        self,
        vocab_size: int,
        embed_dim: int,
        hidden: int,
        cond_dim: int,
        rng: np.random.Generator,
        dropout_rate: float = 0.0,
        prefix: str = "gru",
    ):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.cond_dim = cond_dim
        self.dropout_rate = dropout_rate
        self.prefix = prefix
        self.bos_id = vocab_size
        self.embedding = Embedding(vocab_size + 1, embed_dim, rng, prefix=f"{prefix}.embed")
        in_dim = embed_dim + cond_dim
        bound = 1.0 / math.sqrt(hidden)
        self.wx = Tensor(rng.uniform(-bound, bound, (in_dim, 3 * hidden)), requires_grad=True)
        self.wh = Tensor(rng.uniform(-bound, bound, (hidden, 3 * hidden)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, (3 * hidden,)), requires_grad=True)
        self.out = Linear(hidden, vocab_size, rng, prefix=f"{prefix}.out")

    def step(self, x_t: Tensor, h: Tensor) -> Tensor:
        hd = self.hidden
        gx = T.add(T.matmul(x_t, self.wx), T.broadcast(self.bias, (x_t.shape[0], 3 * hd)))
        gh = T.matmul(h, self.wh)
        r = T.sigmoid(T.add(T.slice_axis(gx, 1, 0, hd), T.slice_axis(gh, 1, 0, hd)))
        u = T.sigmoid(T.add(T.slice_axis(gx, 1, hd, 2 * hd), T.slice_axis(gh, 1, hd, 2 * hd)))
        n = T.tanh(T.add(T.slice_axis(gx, 1, 2 * hd, 3 * hd), T.mul(r, T.slice_axis(gh, 1, 2 * hd, 3 * hd))))
        one_minus_u = T.shift(T.neg(u), 1.0)
        return T.add(T.mul(one_minus_u, n), T.mul(u, h))

    def _input_at(self, prev_ids: np.ndarray, conds: list[Tensor],
                  training: bool, rng: np.random.Generator | None) -> Tensor:
        emb = self.embedding.lookup(prev_ids)
        emb = dropout(emb, self.dropout_rate, rng, training)
        return T.concat([emb] + conds, axis=1) if conds else emb

    def log_likelihood(
        self,
        conds: list[Tensor],
        tokens: np.ndarray,
        lengths: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        tokens = np.asarray(tokens)
        lengths = np.asarray(lengths)
        if tokens.ndim != 2:
            raise InputError(f"tokens must be (batch, width), got {tokens.shape}")
        if np.any(lengths < 1):
            raise InputError("empty sequence")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise VocabError(f"token id outside vocabulary of size {self.vocab_size}")
        b, width = tokens.shape
        cond_width = sum(c.shape[1] for c in conds)
        if cond_width != self.cond_dim:
            raise InputError(f"conditioning width {cond_width} != configured {self.cond_dim}")
        h = Tensor(np.zeros((b, self.hidden)))
        total = Tensor(np.zeros(b))
        for t in range(width):
            prev = np.full(b, self.bos_id) if t == 0 else tokens[:, t - 1]
            x_t = self._input_at(prev, conds, training, rng)
            h = self.step(x_t, h)
            lsm = T.log_softmax(self.out(h), axis=1)
            hot = np.zeros((b, self.vocab_size))
            live = lengths > t
            hot[live, tokens[live, t]] = 1.0
            total = T.add(total, T.reduce_sum(T.mul(lsm, Tensor(hot)), axis=1))
        return total

    def greedy_decode(self, conds: list[Tensor], max_len: int) -> list[int]:
        """Argmax decoding for a single document (batch of one); ties take the lowest id."""
        h = Tensor(np.zeros((1, self.hidden)))
        prev = np.array([self.bos_id])
        out_ids: list[int] = []
        for _ in range(max_len):
            x_t = self._input_at(prev, conds, training=False, rng=None)
            h = self.step(x_t, h)
            logits = self.out(h).data[0]
            nxt = int(np.argmax(logits))
            out_ids.append(nxt)
            prev = np.array([nxt])
        return out_ids

    def named_parameters(self):
        return (
            self.embedding.named_parameters()
            + [(f"{self.prefix}.wx", self.wx), (f"{self.prefix}.wh", self.wh), (f"{self.prefix}.bias", self.bias)]
            + self.out.named_parameters()
        )


class MlpClassifier:
    """q(y|.) as an MLP over its input representation."""

    def __init__(self, in_dim: int, hidden_sizes: list[int], k: int, rng: np.random.Generator,
                 activation: str = "leakyrelu", prefix: str = "classifier"):
        spec = MlpSpec(
            layer_sizes=[in_dim, *hidden_sizes, k],
            activations=[activation] * len(hidden_sizes),
        )
        self.k = k
        self.mlp = Mlp(spec, rng, prefix=prefix)

    def classify(self, x: Tensor, training: bool = False) -> Categorical:
        return Categorical(self.mlp(x, training))

    def named_parameters(self):
        return self.mlp.named_parameters()


class CondGaussianNet:
    """Diagonal Gaussian head over concatenated conditioning inputs.

    One hidden relu layer (optionally batch-normed) and two affine heads;
    zero parameters give exactly N(0, I).
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator,
                 batch_norm: bool = False, prefix: str = "cond"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.body = Linear(in_dim, hidden, rng, prefix=f"{prefix}.body")
        self.norm = BatchNorm(hidden, prefix=f"{prefix}.bn") if batch_norm else None
        self.mu_head = Linear(hidden, out_dim, rng, prefix=f"{prefix}.mu")
        self.log_var_head = Linear(hidden, out_dim, rng, prefix=f"{prefix}.log_var")

    def __call__(self, parts: list[Tensor], training: bool = False) -> DiagGaussian:
        x = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        if x.shape[1] != self.in_dim:
            raise T.ShapeError(f"conditioning width {x.shape[1]} != configured {self.in_dim}")
        hid = self.body(x)
        if self.norm is not None:
            hid = self.norm(hid, training)
        hid = T.relu(hid)
        return DiagGaussian(self.mu_head(hid), self.log_var_head(hid))

    def named_parameters(self):
        out = self.body.named_parameters()
        if self.norm is not None:
            out.extend(self.norm.named_parameters())
        out.extend(self.mu_head.named_parameters())
        out.extend(self.log_var_head.named_parameters())
        return out


class LanguageDiscriminator:
    """Adversary predicting P(language = B) from the encoder state h."""

    def __init__(self, in_dim: int, hidden_sizes: list[int], rng: np.random.Generator,
                 activation: str = "leakyrelu", prefix: str = "discriminator"):
        spec = MlpSpec(
            layer_sizes=[in_dim, *hidden_sizes, 1],
            activations=[activation] * len(hidden_sizes),
        )
        self.mlp = Mlp(spec, rng, prefix=prefix)

    def logits(self, h: Tensor, training: bool = False) -> Tensor:
        return self.mlp(h, training)

    def prob_b(self, h: Tensor) -> np.ndarray:
        return T.sigmoid(self.logits(h)).data[:, 0]

    def named_parameters(self):
        return self.mlp.named_parameters()


def zero_parameters(module) -> None:
    """Overwrite every parameter with zeros (closed-form test fixtures)."""
    for _, p in module.named_parameters():
        p.data[...] = 0.0


def set_trainable(module, flag: bool) -> None:
    for _, p in module.named_parameters():
        p.requires_grad = flag


def parameters_of(module) -> list[Tensor]:
    return [p for _, p in module.named_parameters()]
