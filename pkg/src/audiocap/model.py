"""The caption network.

Encoder: three bidirectional GRU layers with tanh candidate activations and
a residual connection feeding layer 3 with the sum of the first two layers'
outputs.  A single shared dense layer scores every encoder row against the
decoder's previous first-layer state; softmax over the scores yields
attention weights whose weighted row sum is the context vector.  The
decoder is a two-layer GRU driven purely by context vectors (no
predicted-word feedback), topped by a dense softmax classifier over words.
Captions are read off greedily, one argmax word per step, cut at the first
end token.

Parameters are immutable during inference, so concurrent caption
predictions over different inputs are safe; training is single-writer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numgraph as ng
from .numgraph import DimensionError, Tensor

__all__ = [
    "ModelConfig",
    "GruLayerParams",
    "ModelParams",
    "DropoutMasks",
    "gru_cell",
    "gru_scan",
    "bigru_layer",
    "encode",
    "attend",
    "decode",
    "predict_caption",
    "init_params",
    "zeros_params",
    "count_params",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; defaults give the full-size captioning network."""

    n_feats: int = 64
    encoder_hidden: tuple[int, int, int] = (64, 64, 128)
    decoder_hidden: tuple[int, int] = (128, 256)
    vocab_size: int = 633
    caption_steps: int = 11
    seq_len: int = 1289

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(s) for s in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(s) for s in self.decoder_hidden))
        if len(self.encoder_hidden) != 3 or len(self.decoder_hidden) != 2:
            raise ValueError("encoder takes three hidden sizes and the decoder two")
        sizes = (self.n_feats, *self.encoder_hidden, *self.decoder_hidden,
                 self.vocab_size, self.caption_steps, self.seq_len)
        if any(int(s) < 1 for s in sizes):
            raise ValueError("all config sizes must be >= 1")
        if self.encoder_hidden[0] != self.encoder_hidden[1]:
            raise ValueError("the residual connection needs encoder layers 1 and 2 to match")

    @property
    def encoder_width(self) -> int:
        """Width of encoder output rows (both directions concatenated)."""
        return 2 * self.encoder_hidden[2]

    @property
    def attention_in(self) -> int:
        """Input width of the shared attention scorer: encoder row + decoder state."""
        return self.encoder_width + self.decoder_hidden[0]


_GATES = ("update", "reset", "cand")


@dataclass
class GruLayerParams:
    """One GRU direction: per-gate input weights (n_in x n_hid), square
    recurrent weights, and bias vectors."""

    w_update: Tensor
    w_reset: Tensor
    w_cand: Tensor
    u_update: Tensor
    u_reset: Tensor
    u_cand: Tensor
    b_update: Tensor
    b_reset: Tensor
    b_cand: Tensor

    @property
    def n_in(self) -> int:
        return self.w_update.shape[0]

    @property
    def n_hid(self) -> int:
        return self.w_update.shape[1]

    @classmethod
    def zeros(cls, n_in: int, n_hid: int) -> "GruLayerParams":
        def t(*shape):
            return Tensor(np.zeros(shape))

        return cls(
            w_update=t(n_in, n_hid), w_reset=t(n_in, n_hid), w_cand=t(n_in, n_hid),
            u_update=t(n_hid, n_hid), u_reset=t(n_hid, n_hid), u_cand=t(n_hid, n_hid),
            b_update=t(n_hid), b_reset=t(n_hid), b_cand=t(n_hid),
        )

    def named_tensors(self, prefix: str):
        for kind in ("w", "u", "b"):
            for gate in _GATES:
                yield f"{prefix}.{kind}_{gate}", getattr(self, f"{kind}_{gate}")


@dataclass
class ModelParams:
    """Every trainable tensor of the network plus its architecture config."""

    config: ModelConfig
    encoder: list[tuple[GruLayerParams, GruLayerParams]]  # (forward, backward) per layer
    attention_w: Tensor  # (encoder_width + decoder_hidden[0], 1)
    attention_b: Tensor  # (1,)
    decoder: list[GruLayerParams]
    classifier_w: Tensor  # (decoder_hidden[1], vocab_size)
    classifier_b: Tensor  # (vocab_size,)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """All tensors in a fixed traversal order (checkpoint/optimizer order)."""
        out: list[tuple[str, Tensor]] = []
        for i, (fwd, bwd) in enumerate(self.encoder, start=1):
            out.extend(fwd.named_tensors(f"enc{i}.fwd"))
            out.extend(bwd.named_tensors(f"enc{i}.bwd"))
        out.append(("attention.w", self.attention_w))
        out.append(("attention.b", self.attention_b))
        for i, layer in enumerate(self.decoder, start=1):
            out.extend(layer.named_tensors(f"dec{i}"))
        out.append(("classifier.w", self.classifier_w))
        out.append(("classifier.b", self.classifier_b))
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def state_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_values(self, values) -> None:
        for name, tensor in self.named_tensors():
            value = np.asarray(values[name], dtype=np.float64)
            if value.shape != tensor.data.shape:
                raise DimensionError(
                    f"{name}: stored shape {value.shape}, expected {tensor.data.shape}"
                )
            tensor.data = np.array(value, dtype=np.float64, order="C")

    def copy(self) -> "ModelParams":
        twin = zeros_params(self.config)
        twin.load_state_values(self.state_values())
        return twin


@dataclass
class DropoutMasks:
    """Pre-drawn inverted-dropout multipliers for one record's forward pass.

    ``encoder[l]`` holds an ((input, recurrent), (input, recurrent)) pair for
    the forward and backward directions of layer l; ``decoder[l]`` holds a
    per-step input mask matrix (caption_steps x n_in) and one recurrent row.
    Any entry may be None (that connection undropped).
    """

    encoder: list
    decoder: list


_NO_DROP = ((None, None), (None, None))


def gru_cell(x, h_prev, params: GruLayerParams, rec_mask=None) -> Tensor:
    """One GRU step.

    z = sigmoid(x W_z + h U_z + b_z), r = sigmoid(x W_r + h U_r + b_r),
    candidate = tanh(x W_h + (r * h) U_h + b_h),
    h_next = z * h_prev + (1 - z) * candidate.

    ``rec_mask`` is dropout on the recurrent connection: it scales the
    previous state where it feeds the gates, leaving the carried state in
    the final mix untouched.
    """
    x = ng.as_tensor(x)
    h_prev = ng.as_tensor(h_prev)
    h_gate = ng.mul(h_prev, rec_mask) if rec_mask is not None else h_prev
    z = ng.sigmoid(ng.add(ng.add(ng.matmul(x, params.w_update),
                                 ng.matmul(h_gate, params.u_update)), params.b_update))
    r = ng.sigmoid(ng.add(ng.add(ng.matmul(x, params.w_reset),
                                 ng.matmul(h_gate, params.u_reset)), params.b_reset))
    candidate = ng.tanh(ng.add(ng.add(ng.matmul(x, params.w_cand),
                                      ng.matmul(ng.mul(r, h_gate), params.u_cand)), params.b_cand))
    return ng.add(ng.mul(z, h_prev), ng.mul(ng.sub(1.0, z), candidate))


def gru_scan(X, params: GruLayerParams, reverse: bool = False,
             input_mask=None, rec_mask=None) -> list[Tensor]:
    """Hidden state after each row of X (T x n_in), zero initial state.

    The returned list is indexed by row position regardless of scan
    direction, so ``states[t]`` is always the state at row t.
    """
    X = ng.as_tensor(X)
    if X.data.ndim != 2 or X.shape[1] != params.n_in:
        raise DimensionError(f"scan input {X.shape} does not fit layer input size {params.n_in}")
    if input_mask is not None:
        X = ng.mul(X, input_mask)
    steps = X.shape[0]
    h = ng.as_tensor(np.zeros((1, params.n_hid)))
    states: list[Tensor] = [h] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        h = gru_cell(ng.slice_rows(X, t, t + 1), h, params, rec_mask=rec_mask)
        states[t] = h
    return states


def bigru_layer(X, fwd: GruLayerParams, bwd: GruLayerParams,
                fwd_dropout=(None, None), bwd_dropout=(None, None)) -> Tensor:
    """Bidirectional GRU layer: row t is [forward state at t ; backward state at t]."""
    if fwd.n_hid != bwd.n_hid:
        raise DimensionError("forward and backward directions must have the same width")
    forward = gru_scan(X, fwd, reverse=False, input_mask=fwd_dropout[0], rec_mask=fwd_dropout[1])
    backward = gru_scan(X, bwd, reverse=True, input_mask=bwd_dropout[0], rec_mask=bwd_dropout[1])
    rows = [ng.concat([f, b], axis=1) for f, b in zip(forward, backward)]
    return ng.concat(rows, axis=0)


def encode(X, params: ModelParams, dropout: DropoutMasks | None = None) -> Tensor:
    """Encoder output H (T x encoder_width).

    Layer 3 consumes the elementwise sum of layer 2's and layer 1's outputs
    (the residual connection); both are 2 * encoder_hidden[0] wide.
    """
    masks = dropout.encoder if dropout is not None else [_NO_DROP] * 3
    h1 = bigru_layer(X, *params.encoder[0], fwd_dropout=masks[0][0], bwd_dropout=masks[0][1])
    h2 = bigru_layer(h1, *params.encoder[1], fwd_dropout=masks[1][0], bwd_dropout=masks[1][1])
    return bigru_layer(ng.add(h2, h1), *params.encoder[2],
                       fwd_dropout=masks[2][0], bwd_dropout=masks[2][1])


def attend(H, h_dec_prev, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Context vector and attention weights for one decode step.

    One dense layer, shared across positions and steps, scores every encoder
    row against the previous decoder state;
    dense([h_t ; h_dec_prev]) = h_t @ w_enc + h_dec_prev @ w_dec + b, so the
    scores come out of two matrix products.  Softmax over the scores gives
    the weights; the context is the weighted sum of encoder rows.

    Returns (context (1 x width), weights (1 x T)).
    """
    H = ng.as_tensor(H)
    h_dec_prev = ng.as_tensor(h_dec_prev)
    width = H.shape[1]
    total_in = params.attention_w.shape[0]
    if width + h_dec_prev.shape[1] != total_in:
        raise DimensionError(
            f"attention scorer expects {total_in} inputs, got {width} + {h_dec_prev.shape[1]}"
        )
    w_enc = ng.slice_rows(params.attention_w, 0, width)
    w_dec = ng.slice_rows(params.attention_w, width, total_in)
    scores = ng.add(ng.add(ng.matmul(H, w_enc), ng.matmul(h_dec_prev, w_dec)),
                    params.attention_b)
    weights = ng.softmax(ng.transpose(scores))
    context = ng.matmul(weights, H)
    return context, weights


def decode(H, params: ModelParams, steps: int | None = None,
           dropout: DropoutMasks | None = None, return_attention: bool = False):
    """Word distributions Y (steps x vocab_size) decoded from encoder rows H.

    Per step: attend over H with the previous first-layer decoder state
    (zeros at step 1), run both decoder GRUs on the context alone, and
    classify.  Every row of Y is a probability distribution.  With
    ``return_attention`` the per-step attention weight rows come back too.
    """
    config = params.config
    n_steps = config.caption_steps if steps is None else int(steps)
    d1, d2 = config.decoder_hidden
    h1 = ng.as_tensor(np.zeros((1, d1)))
    h2 = ng.as_tensor(np.zeros((1, d2)))
    masks = dropout.decoder if dropout is not None else [(None, None), (None, None)]
    rows: list[Tensor] = []
    attention: list[Tensor] = []
    for i in range(n_steps):
        context, weights = attend(H, h1, params)
        x1 = context if masks[0][0] is None else ng.mul(context, masks[0][0][i : i + 1])
        h1 = gru_cell(x1, h1, params.decoder[0], rec_mask=masks[0][1])
        x2 = h1 if masks[1][0] is None else ng.mul(h1, masks[1][0][i : i + 1])
        h2 = gru_cell(x2, h2, params.decoder[1], rec_mask=masks[1][1])
        logits = ng.add(ng.matmul(h2, params.classifier_w), params.classifier_b)
        rows.append(ng.softmax(logits))
        attention.append(weights)
    Y = ng.concat(rows, axis=0)
    return (Y, attention) if return_attention else Y


def predict_caption(features, params: ModelParams, vocab) -> list[str]:
    """Greedy caption: the argmax word of each step, cut at the first end token."""
    X = ng.as_tensor(np.asarray(features, dtype=np.float64))
    Y = decode(encode(X, params), params)
    words: list[str] = []
    for row in Y.data:
        index = int(np.argmax(row))
        if index == vocab.eos_index:
            break
        words.append(vocab.word(index))
    return words


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization for a given seed.

    Input and dense weights are Glorot uniform, +-sqrt(6 / (fan_in + fan_out));
    recurrent matrices are orthogonal (QR of a standard normal square with the
    sign of R's diagonal folded in); biases start at zero.
    """
    rng = np.random.default_rng(seed)

    def glorot(n_in: int, n_out: int) -> Tensor:
        limit = np.sqrt(6.0 / (n_in + n_out))
        return Tensor(rng.uniform(-limit, limit, size=(n_in, n_out)))

    def orthogonal(n: int) -> Tensor:
        q, r = np.linalg.qr(rng.standard_normal((n, n)))
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        return Tensor(q * signs)

    def gru(n_in: int, n_hid: int) -> GruLayerParams:
        return GruLayerParams(
            w_update=glorot(n_in, n_hid), w_reset=glorot(n_in, n_hid), w_cand=glorot(n_in, n_hid),
            u_update=orthogonal(n_hid), u_reset=orthogonal(n_hid), u_cand=orthogonal(n_hid),
            b_update=Tensor(np.zeros(n_hid)), b_reset=Tensor(np.zeros(n_hid)),
            b_cand=Tensor(np.zeros(n_hid)),
        )

    e1, e2, e3 = config.encoder_hidden
    d1, d2 = config.decoder_hidden
    encoder = [
        (gru(config.n_feats, e1), gru(config.n_feats, e1)),
        (gru(2 * e1, e2), gru(2 * e1, e2)),
        (gru(2 * e2, e3), gru(2 * e2, e3)),
    ]
    attention_w = glorot(config.attention_in, 1)
    decoder = [gru(config.encoder_width, d1), gru(d1, d2)]
    classifier_w = glorot(d2, config.vocab_size)
    return ModelParams(
        config=config,
        encoder=encoder,
        attention_w=attention_w,
        attention_b=Tensor(np.zeros(1)),
        decoder=decoder,
        classifier_w=classifier_w,
        classifier_b=Tensor(np.zeros(config.vocab_size)),
    )


def zeros_params(config: ModelConfig) -> ModelParams:
    """All-zero parameters with the right shapes (checkpoint loading target)."""
    e1, e2, e3 = config.encoder_hidden
    d1, d2 = config.decoder_hidden
    return ModelParams(
        config=config,
        encoder=[
            (GruLayerParams.zeros(config.n_feats, e1), GruLayerParams.zeros(config.n_feats, e1)),
            (GruLayerParams.zeros(2 * e1, e2), GruLayerParams.zeros(2 * e1, e2)),
            (GruLayerParams.zeros(2 * e2, e3), GruLayerParams.zeros(2 * e2, e3)),
        ],
        attention_w=Tensor(np.zeros((config.attention_in, 1))),
        attention_b=Tensor(np.zeros(1)),
        decoder=[GruLayerParams.zeros(config.encoder_width, d1), GruLayerParams.zeros(d1, d2)],
        classifier_w=Tensor(np.zeros((config.decoder_hidden[1], config.vocab_size))),
        classifier_b=Tensor(np.zeros(config.vocab_size)),
    )


def count_params(config: ModelConfig) -> int:
    """Trainable scalar count under this implementation's conventions: three
    input matrices, three recurrent matrices, and three bias vectors per GRU
    direction; dense layers carry one bias per output."""

    def gru(n_in: int, n_hid: int) -> int:
        return 3 * (n_in * n_hid + n_hid * n_hid + n_hid)

    def dense(n_in: int, n_out: int) -> int:
        return n_in * n_out + n_out

    e1, e2, e3 = config.encoder_hidden
    d1, d2 = config.decoder_hidden
    total = 2 * gru(config.n_feats, e1) + 2 * gru(2 * e1, e2) + 2 * gru(2 * e2, e3)
    total += dense(config.attention_in, 1)
    total += gru(config.encoder_width, d1) + gru(d1, d2)
    total += dense(d2, config.vocab_size)
    return total
