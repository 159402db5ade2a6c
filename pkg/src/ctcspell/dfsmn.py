"""DFSMN acoustic model with a CTC output head.

A component projects its input through a ReLU hidden layer to a low-rank
representation, then adds FIR-style memory taps over neighboring frames and
a skip connection from the previous component's memory. Stacked components
feed fully-connected ReLU layers, a linear layer, and a softmax over the
vocabulary plus blank. Taps that would reach past either sequence edge
contribute zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .ctc import PosteriorMatrix, Vocab, ctc_loss_node, min_frames
from .errors import ShapeError, ValidationError
from .rng import Rng


@dataclass(frozen=True)
class DfsmnLayerConfig:
    hidden_dim: int
    proj_dim: int
    look_back: int
    look_ahead: int
    stride_back: int = 1
    stride_ahead: int = 1

    def __post_init__(self):
        if self.hidden_dim < 1 or self.proj_dim < 1:
            raise ValidationError("layer dims must be positive")
        if self.look_back < 0 or self.look_ahead < 0:
            raise ValidationError("memory orders must be nonnegative")
        if self.stride_back < 1 or self.stride_ahead < 1:
            raise ValidationError("strides must be positive")


@dataclass(frozen=True)
class DfsmnConfig:
    input_dim: int
    layers: tuple[DfsmnLayerConfig, ...]
    relu_dims: tuple[int, int] = (128, 128)

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("need at least one memory component")
        proj = {c.proj_dim for c in self.layers}
        if len(proj) != 1:
            raise ValidationError("skip connections need equal projection dims")


def default_config(input_dim: int) -> DfsmnConfig:
    """Desk-scale default: 4 components, hidden 128, projection 64,
    two memory taps each way with stride 1."""
    layer = DfsmnLayerConfig(hidden_dim=128, proj_dim=64, look_back=2, look_ahead=2)
    return DfsmnConfig(input_dim=input_dim, layers=(layer,) * 4)


class DfsmnModel:
    """Configuration, vocabulary, and named parameter tensors."""

    def __init__(self, config: DfsmnConfig, vocab: Vocab, params: dict[str, Tensor]):
        self.config = config
        self.vocab = vocab
        self.params = params

    @property
    def n_labels(self) -> int:
        return self.vocab.n_labels


def init_model(config: DfsmnConfig, vocab: Vocab, rng: Rng) -> DfsmnModel:
    params: dict[str, Tensor] = {}

    def dense(name: str, fan_in: int, fan_out: int, gain: float):
        params[f"{name}.w"] = Tensor(rng.normals((fan_in, fan_out)) * gain, name=f"{name}.w")
        params[f"{name}.b"] = Tensor(np.zeros(fan_out), name=f"{name}.b")

    d_in = config.input_dim
    for i, layer in enumerate(config.layers):
        dense(f"comp{i}.hidden", d_in, layer.hidden_dim, np.sqrt(2.0 / d_in))
        dense(f"comp{i}.proj", layer.hidden_dim, layer.proj_dim, np.sqrt(1.0 / layer.hidden_dim))
        params[f"comp{i}.mem.back"] = Tensor(
            np.zeros((layer.look_back + 1, layer.proj_dim)), name=f"comp{i}.mem.back")
        params[f"comp{i}.mem.ahead"] = Tensor(
            np.zeros((layer.look_ahead, layer.proj_dim)), name=f"comp{i}.mem.ahead")
        d_in = layer.proj_dim
    for k, width in enumerate(config.relu_dims):
        dense(f"fc{k}", d_in, width, np.sqrt(2.0 / d_in))
        d_in = width
    dense("out", d_in, vocab.n_labels, np.sqrt(1.0 / d_in))
    return DfsmnModel(config, vocab, params)


def dfsmn_layer_forward(p: Tensor, prev_mem: Tensor | None, cfg: DfsmnLayerConfig,
                        back: Tensor, ahead: Tensor, tape: Tape | None = None) -> Tensor:
    """Memory block only: skip input plus p plus tapped elementwise products.

    back must hold look_back+1 coefficient rows (the current frame is tap
    zero); ahead holds look_ahead rows for strictly-future frames.
    """
    if back.shape != (cfg.look_back + 1, cfg.proj_dim):
        raise ShapeError(f"back taps {back.shape} != {(cfg.look_back + 1, cfg.proj_dim)}")
    if ahead.shape != (cfg.look_ahead, cfg.proj_dim):
        raise ShapeError(f"ahead taps {ahead.shape} != {(cfg.look_ahead, cfg.proj_dim)}")
    return ad.fir_memory(p, back, ahead, prev=prev_mem,
                         stride_back=cfg.stride_back, stride_ahead=cfg.stride_ahead,
                         tape=tape)


def _forward_probs(model: DfsmnModel, features: np.ndarray,
                   tape: Tape | None = None) -> Tensor:
    if features.ndim != 2 or features.shape[1] != model.config.input_dim:
        raise ShapeError(
            f"features must be (T, {model.config.input_dim}), got {features.shape}")
    if features.shape[0] < 1:
        raise ShapeError("need at least one frame")
    p = model.params
    x = Tensor(features)
    mem: Tensor | None = None
    for i, layer in enumerate(model.config.layers):
        h = ad.relu(ad.row_add(ad.matmul(x, p[f"comp{i}.hidden.w"], tape),
                               p[f"comp{i}.hidden.b"], tape), tape)
        proj = ad.row_add(ad.matmul(h, p[f"comp{i}.proj.w"], tape),
                          p[f"comp{i}.proj.b"], tape)
        mem = dfsmn_layer_forward(proj, mem, layer,
                                  p[f"comp{i}.mem.back"], p[f"comp{i}.mem.ahead"], tape)
        x = mem
    for k in range(len(model.config.relu_dims)):
        x = ad.relu(ad.row_add(ad.matmul(x, p[f"fc{k}.w"], tape), p[f"fc{k}.b"], tape), tape)
    logits = ad.row_add(ad.matmul(x, p["out.w"], tape), p["out.b"], tape)
    return ad.softmax(logits, axis=-1, tape=tape)


def am_forward(model: DfsmnModel, features: np.ndarray) -> PosteriorMatrix:
    """Posterior distribution over tokens-plus-blank for every frame."""
    probs = _forward_probs(model, np.asarray(features, dtype=np.float64))
    return PosteriorMatrix(probs.data, model.vocab)


class AmExample(NamedTuple):
    features: np.ndarray
    targets: tuple[str, ...]


@dataclass
class AmTrainResult:
    epoch_losses: list[float]
    skipped: list[int] = field(default_factory=list)


def train_am(model: DfsmnModel, corpus: Sequence[AmExample], epochs: int,
             lr_schedule: float | Callable[[int], float], seed: int,
             batch_size: int = 8, clip_norm: float = 5.0,
             log: Callable[[str], None] | None = None) -> AmTrainResult:
    """Mini-batch SGD on the CTC loss with global gradient-norm clipping.

    Utterances whose reference cannot fit the frame count are reported in
    the result and skipped. The per-epoch loss is the mean per-utterance
    negative log-likelihood.
    """
    if not corpus:
        raise ValidationError("empty training corpus")
    lr_of = lr_schedule if callable(lr_schedule) else (lambda _e: float(lr_schedule))
    vocab = model.vocab
    usable: list[tuple[np.ndarray, tuple[int, ...]]] = []
    skipped: list[int] = []
    for idx, ex in enumerate(corpus):
        ids = vocab.ids_of(ex.targets)
        if ex.features.shape[0] < min_frames(ids):
            skipped.append(idx)
            continue
        usable.append((np.asarray(ex.features, dtype=np.float64), ids))
    if log and skipped:
        log(f"skipped {len(skipped)} infeasible utterances")
    if not usable:
        raise ValidationError("no feasible utterances in the corpus")

    rng = Rng(seed).derive("train-am")
    order = list(range(len(usable)))
    names = list(model.params)
    result = AmTrainResult(epoch_losses=[], skipped=skipped)
    for epoch in range(epochs):
        rng.shuffle(order)
        lr = lr_of(epoch)
        total = 0.0
        for lo in range(0, len(order), batch_size):
            batch = order[lo:lo + batch_size]
            grads = {n: None for n in names}
            for j in batch:
                feats, ids = usable[j]
                tape = Tape()
                probs = _forward_probs(model, feats, tape)
                loss = ctc_loss_node(probs, ids, vocab.blank_id, tape)
                if not np.isfinite(loss.data):
                    raise ValidationError(f"non-finite CTC loss on utterance {j}")
                total += loss.item()
                g = ad.backward(tape, loss)
                for n in names:
                    gn = g.get(model.params[n])
                    if gn is None:
                        continue
                    grads[n] = gn if grads[n] is None else grads[n] + gn
            scale = 1.0 / len(batch)
            sq = sum(float((g * g).sum()) for g in grads.values() if g is not None)
            norm = np.sqrt(sq) * scale
            if norm > clip_norm:
                scale *= clip_norm / norm
            for n in names:
                if grads[n] is not None:
                    model.params[n] = Tensor(model.params[n].data - lr * scale * grads[n],
                                             name=n)
        mean_loss = total / len(order)
        result.epoch_losses.append(mean_loss)
        if log:
            log(f"epoch {epoch + 1}/{epochs}: mean CTC loss {mean_loss:.4f} (lr {lr:.4g})")
    return result
