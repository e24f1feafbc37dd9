"""Mini-batch Adam training of the caption network.

Loss is categorical cross-entropy averaged over the caption steps (padding
steps included) and over the records of a batch.  Inverted dropout masks
the GRU input connections entry-wise and the recurrent connections with one
row mask per sequence.  Per-record gradients within a batch are independent
and accumulate into the shared parameter tensors; the averaged update and
the loss-history append are the serial section.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from . import numgraph as ng
from .model import DropoutMasks, ModelConfig, ModelParams
from .numgraph import NumericError, Tensor

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingExample",
    "EpochStats",
    "TrainResult",
    "cross_entropy_loss",
    "adam_step",
    "apply_dropout",
    "dropout_mask",
    "make_dropout_masks",
    "caption_loss",
    "train_step",
    "evaluate_loss",
    "train",
    "write_history_csv",
]


@dataclass
class TrainConfig:
    """Knobs of the optimization loop."""

    batch_size: int = 64
    input_dropout: float = 0.5
    recurrent_dropout: float = 0.25
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.input_dropout < 1.0 and 0.0 <= self.recurrent_dropout < 1.0):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class AdamState:
    """Adam moments per parameter, with the optimizer's default settings."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainingExample:
    """One encoded record: a feature matrix and its caption word indices."""

    features: np.ndarray
    targets: np.ndarray


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    """Outcome of a training run: best-validation weights plus the history."""

    params: ModelParams
    history: list[EpochStats]
    best_epoch: int
    best_val_loss: float


def cross_entropy_loss(probabilities, targets) -> Tensor:
    """Mean over caption steps of -ln p(target word); padded steps count too."""
    y = ng.as_tensor(probabilities)
    targets = np.asarray(targets, dtype=np.intp)
    picked = ng.take_per_row(y, targets)
    return ng.mul(ng.sum(ng.log(picked)), -1.0 / targets.size)


def adam_step(named_params, grads, state: AdamState) -> None:
    """One Adam update, in place.

    tau += 1; m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
    theta -= lr * (m / (1-b1^tau)) / (sqrt(v / (1-b2^tau)) + eps).
    """
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, param in named_params:
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        param.data -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)


def dropout_mask(shape, rate: float, rng, mode: str = "input"):
    """Inverted-dropout multiplier mask, or None when the rate is zero.

    Input mode drops every entry independently; recurrent mode draws one
    row along the last axis and repeats it across all leading positions,
    so a sequence sees the same recurrent mask at every timestep.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return None
    shape = tuple(shape)
    if mode == "input":
        keep = rng.random(shape) >= rate
    elif mode == "recurrent":
        keep = np.broadcast_to(rng.random(shape[-1:]) >= rate, shape)
    else:
        raise ValueError(f"unknown dropout mode {mode!r}")
    return keep / (1.0 - rate)


def apply_dropout(values, rate: float, rng, mode: str = "input"):
    """Apply inverted dropout: survivors scale by 1/(1-rate), so the
    expected value equals the input.  Training-time only; inference code
    simply never calls this."""
    if isinstance(values, Tensor):
        mask = dropout_mask(values.shape, rate, rng, mode)
        return values if mask is None else ng.mul(values, mask)
    arr = np.asarray(values, dtype=np.float64)
    mask = dropout_mask(arr.shape, rate, rng, mode)
    return arr if mask is None else arr * mask


def make_dropout_masks(config: ModelConfig, input_rate: float, recurrent_rate: float,
                       rng) -> DropoutMasks | None:
    """Draw every mask for one record's forward pass.

    Order: encoder layers 1..3 with (input, recurrent) per direction,
    forward before backward; then each decoder layer's per-step input rows
    and its recurrent row.  Directions get independent input masks.
    """
    if input_rate == 0.0 and recurrent_rate == 0.0:
        return None
    e1, e2, e3 = config.encoder_hidden
    t = config.seq_len
    encoder = []
    for n_in, n_hid in ((config.n_feats, e1), (2 * e1, e2), (2 * e2, e3)):
        directions = []
        for _ in range(2):
            directions.append((
                dropout_mask((t, n_in), input_rate, rng, mode="input"),
                dropout_mask((1, n_hid), recurrent_rate, rng, mode="recurrent"),
            ))
        encoder.append(tuple(directions))
    steps = config.caption_steps
    d1, d2 = config.decoder_hidden
    decoder = []
    for n_in, n_hid in ((config.encoder_width, d1), (d1, d2)):
        decoder.append((
            dropout_mask((steps, n_in), input_rate, rng, mode="input"),
            dropout_mask((1, n_hid), recurrent_rate, rng, mode="recurrent"),
        ))
    return DropoutMasks(encoder=encoder, decoder=decoder)


def caption_loss(features, targets, params: ModelParams,
                 dropout: DropoutMasks | None = None) -> Tensor:
    """Cross-entropy of one record under the current parameters."""
    encoded = model.encode(ng.as_tensor(features), params, dropout=dropout)
    y = model.decode(encoded, params, dropout=dropout)
    return cross_entropy_loss(y, targets)


def train_step(batch, params: ModelParams, state: AdamState, config: TrainConfig, rng) -> float:
    """One optimizer update from one mini-batch; returns the batch loss.

    Gradients accumulate record by record and are averaged before the Adam
    update, so a step equals forward + backward per record + adam_step.
    """
    named = params.named_tensors()
    for _, tensor in named:
        tensor.grad = None
    total = 0.0
    for record in batch:
        masks = make_dropout_masks(params.config, config.input_dropout,
                                   config.recurrent_dropout, rng)
        with ng.Tape() as tape:
            loss = caption_loss(record.features, record.targets, params, dropout=masks)
        tape.backward(loss)
        total += float(loss.data)
    batch_size = len(batch)
    grads = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad) / batch_size
        for name, t in named
    }
    adam_step(named, grads, state)
    return total / batch_size


def evaluate_loss(records, params: ModelParams) -> float:
    """Mean loss over records, dropout off, nothing recorded."""
    records = list(records)
    if not records:
        raise ValueError("cannot evaluate on an empty record list")
    losses = [float(caption_loss(r.features, r.targets, params).data) for r in records]
    return float(np.mean(losses))


def train(train_records, val_records, config: TrainConfig, model_config: ModelConfig,
          adam: AdamState | None = None) -> TrainResult:
    """Mini-batch gradient descent with per-epoch validation and early stop.

    Batches of ``config.batch_size`` (the last partial batch is kept);
    training stops when validation loss has not improved for ``patience``
    epochs, and the weights from the best validation epoch are returned.
    Validation falls back to the training records when ``val_records`` is
    empty.  Deterministic for a given ``config.seed``.
    """
    train_records = list(train_records)
    if not train_records:
        raise ValueError("empty training dataset")
    val_records = list(val_records) if val_records else train_records

    params = model.init_params(model_config, seed=config.seed)
    state = adam if adam is not None else AdamState()
    rng = np.random.default_rng(config.seed)

    history: list[EpochStats] = []
    best_values = params.state_values()
    best_val = math.inf
    best_epoch = 0
    stale = 0
    n = len(train_records)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            batch = [train_records[i] for i in order[start : start + config.batch_size]]
            loss = train_step(batch, params, state, config, rng)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))
        val_loss = evaluate_loss(val_records, params)
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_values = params.state_values()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    best_params = model.zeros_params(model_config)
    best_params.load_state_values(best_values)
    return TrainResult(params=best_params, history=history,
                       best_epoch=best_epoch, best_val_loss=best_val)


def write_history_csv(history, path) -> None:
    """Loss history as CSV with columns epoch, train_loss, val_loss."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss)])
