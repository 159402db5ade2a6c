"""Dense float64 tensors with a reverse-mode tape.

Everything is 64-bit: precision is never a confound when comparing against
enumeration or finite-difference oracles. A Tensor wraps a numpy array and
is immutable by convention; operations build fresh tensors and, when given
a Tape, record a backward closure. backward() replays the tape once in
reverse and accumulates gradients additively, so a tensor consumed by k
operations receives the sum of k contributions.

Composite model ops that would otherwise bloat the tape (multi-head
attention, the FIR memory block) are single records with hand-written
backward rules; every rule here is covered by finite-difference checks in
the test suite.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import NumericsError, ShapeError
from .rng import Rng

_F64 = np.float64


class Tensor:
    """Row-major float64 array; product(shape) always equals data.size."""

    __slots__ = ("data", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data, dtype=_F64)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = self.name or "tensor"
        return f"<{label} shape={self.shape}>"


def tensor(data, name: str | None = None) -> Tensor:
    return Tensor(data, name)


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []
        self._output_ids: set[int] = set()

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward_fn: Callable) -> None:
        self._records.append((inputs, output, backward_fn))
        self._output_ids.add(id(output))

    def __len__(self) -> int:
        return len(self._records)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """d(loss)/d(t) for every tensor t reachable backward from `loss`.

    The map is keyed by tensor identity; leaf parameters the loss does not
    depend on are simply absent.
    """
    if loss.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._output_ids:
        raise NumericsError("loss tensor was not produced on this tape")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones((), dtype=_F64)}
    for inputs, output, backward_fn in reversed(tape._records):
        gout = grads.get(output)
        if gout is None:
            continue
        for tens, gin in zip(inputs, backward_fn(gout)):
            if gin is None:
                continue
            acc = grads.get(tens)
            grads[tens] = gin if acc is None else acc + gin
    return grads


def _emit(tape: Tape | None, inputs: tuple[Tensor, ...], out: Tensor, backward_fn: Callable) -> Tensor:
    if tape is not None:
        tape.record(inputs, out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return _emit(tape, (a, b), out, lambda g: (g, g))


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    return _emit(tape, (a, b), out, lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data * c)
    return _emit(tape, (a,), out, lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects rank-2 tensors")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    return _emit(tape, (a, b), out, lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a rank-2 tensor")
    out = Tensor(a.data.T.copy())
    return _emit(tape, (a,), out, lambda g: (g.T,))


def relu(a: Tensor, tape: Tape | None = None) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _emit(tape, (a,), out, lambda g: (g * mask,))


def row_add(a: Tensor, v: Tensor, tape: Tape | None = None) -> Tensor:
    """Add a length-d vector to every row of a (T, d) matrix."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"row_add shapes: {a.shape} + {v.shape}")
    out = Tensor(a.data + v.data[None, :])
    return _emit(tape, (a, v), out, lambda g: (g, g.sum(axis=0)))


def sum_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data.sum())
    return _emit(tape, (a,), out, lambda g: (np.full(a.shape, float(g)),))


def mean_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())
    return _emit(tape, (a,), out, lambda g: (np.full(a.shape, float(g) / n),))


def softmax(a: Tensor, axis: int = -1, tape: Tape | None = None) -> Tensor:
    """Max-subtracted softmax along `axis`; rows sum to 1 within 1e-12."""
    ax = axis if axis >= 0 else a.data.ndim + axis
    if not 0 <= ax < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _emit(tape, (a,), out, bwd)


def logsumexp(x: np.ndarray, axis: int | None = None, keepdims: bool = False) -> np.ndarray:
    """Stable log-sum-exp on plain arrays; tolerates -inf entries."""
    x = np.asarray(x, dtype=_F64)
    m = np.max(x, axis=axis, keepdims=True) if x.size else np.asarray(-np.inf)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m
    return out if keepdims or axis is None and out.ndim == 0 else np.squeeze(out, axis=axis)


# ---------------------------------------------------------------------------
# model-level primitives
# ---------------------------------------------------------------------------

def embedding(table: Tensor, ids, tape: Tape | None = None) -> Tensor:
    """Gather rows of `table`; backward scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2:
        raise ShapeError("embedding table must be rank 2")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("embedding id out of range")
    out = Tensor(table.data[idx])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _emit(tape, (table,), out, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5,
               tape: Tape | None = None) -> Tensor:
    """Per-row normalization over the last axis, then affine."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm shapes: x={x.shape} gain={gain.shape} bias={bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data[None, :] + bias.data[None, :])

    def bwd(g):
        gxhat = g * gain.data[None, :]
        gx = inv * (gxhat
                    - gxhat.mean(axis=1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit(tape, (x, gain, bias), out, bwd)


def cross_entropy(logits: Tensor, targets, tape: Tape | None = None,
                  mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of one-hot targets under softmax(logits).

    `mask` weights positions (e.g. zero for padding); the mean is over the
    total mask weight.
    """
    tgt = np.asarray(targets, dtype=np.intp)
    if logits.data.ndim != 2 or tgt.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy shapes: logits={logits.shape} targets={tgt.shape}")
    m = np.ones(tgt.shape, dtype=_F64) if mask is None else np.asarray(mask, dtype=_F64)
    denom = m.sum()
    if denom <= 0:
        raise ShapeError("cross_entropy mask selects nothing")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(tgt.shape[0])
    out = Tensor(-(m * logp[rows, tgt]).sum() / denom)

    def bwd(g):
        grad = np.exp(logp)
        grad[rows, tgt] -= 1.0
        grad *= (m / denom)[:, None] * float(g)
        return (grad,)

    return _emit(tape, (logits,), out, bwd)


def dropout(x: Tensor, rate: float, rng: Rng, tape: Tape | None = None) -> Tensor:
    """Inverted dropout with a mask drawn from `rng`; rate 0 is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    keep = rng.uniforms(x.data.size).reshape(x.shape) >= rate
    m = keep / (1.0 - rate)
    out = Tensor(x.data * m)
    return _emit(tape, (x,), out, lambda g: (g * m,))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                         mask: np.ndarray | None = None,
                         tape: Tape | None = None) -> Tensor:
    """Scaled dot-product attention over heads split from the last axis.

    q is (Tq, h*dk), k is (Tk, h*dk), v is (Tk, h*dv); the result is
    (Tq, h*dv) with heads re-concatenated. `mask` is an additive (Tq, Tk)
    constant (use large negative entries to forbid positions).
    """
    tq, dq = q.shape
    tk, dk_all = k.shape
    tkv, dv_all = v.shape
    if dq != dk_all or tk != tkv:
        raise ShapeError(f"attention shapes: q={q.shape} k={k.shape} v={v.shape}")
    if dq % n_heads or dv_all % n_heads:
        raise ShapeError(f"head count {n_heads} does not divide dims {dq}/{dv_all}")
    dk = dq // n_heads
    dv = dv_all // n_heads
    inv = 1.0 / np.sqrt(dk)

    qh = q.data.reshape(tq, n_heads, dk).transpose(1, 0, 2)
    kh = k.data.reshape(tk, n_heads, dk).transpose(1, 0, 2)
    vh = v.data.reshape(tk, n_heads, dv).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) * inv
    if mask is not None:
        scores = scores + mask[None, :, :]
    scores -= scores.max(axis=2, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=2, keepdims=True)
    oh = attn @ vh
    out = Tensor(oh.transpose(1, 0, 2).reshape(tq, n_heads * dv))

    def bwd(g):
        gh = g.reshape(tq, n_heads, dv).transpose(1, 0, 2)
        g_attn = gh @ vh.transpose(0, 2, 1)
        g_v = attn.transpose(0, 2, 1) @ gh
        g_scores = attn * (g_attn - (g_attn * attn).sum(axis=2, keepdims=True))
        g_q = g_scores @ kh * inv
        g_k = g_scores.transpose(0, 2, 1) @ qh * inv
        return (g_q.transpose(1, 0, 2).reshape(tq, dq),
                g_k.transpose(1, 0, 2).reshape(tk, dk_all),
                g_v.transpose(1, 0, 2).reshape(tk, dv_all))

    return _emit(tape, (q, k, v), out, bwd)


def fir_memory(p: Tensor, back: Tensor, ahead: Tensor,
               prev: Tensor | None = None,
               stride_back: int = 1, stride_ahead: int = 1,
               tape: Tape | None = None) -> Tensor:
    """FIR-style memory over frames: skip input plus tapped, scaled copies.

    out[t] = prev[t] + p[t] + sum_i back[i] * p[t - i*stride_back]
                            + sum_j ahead[j] * p[t + (j+1)*stride_ahead]

    back has one row per look-back tap including the current frame (i = 0);
    ahead has one row per strictly-future tap. Taps past either sequence
    edge contribute zero.
    """
    if p.data.ndim != 2:
        raise ShapeError("fir_memory expects p of rank 2")
    t_len, dim = p.shape
    if back.data.ndim != 2 or back.shape[1] != dim or back.shape[0] < 1:
        raise ShapeError(f"back taps must be (n>=1, {dim}), got {back.shape}")
    if ahead.data.ndim != 2 or (ahead.shape[0] > 0 and ahead.shape[1] != dim):
        raise ShapeError(f"ahead taps must be (n, {dim}), got {ahead.shape}")
    if prev is not None and prev.shape != p.shape:
        raise ShapeError(f"prev memory shape {prev.shape} != {p.shape}")
    if stride_back < 1 or stride_ahead < 1:
        raise ShapeError("strides must be >= 1")

    out_data = p.data.copy() if prev is None else p.data + prev.data
    for i in range(back.shape[0]):
        off = i * stride_back
        if off >= t_len:
            break
        out_data[off:] += back.data[i] * p.data[:t_len - off]
    for j in range(ahead.shape[0]):
        off = (j + 1) * stride_ahead
        if off >= t_len:
            break
        out_data[:t_len - off] += ahead.data[j] * p.data[off:]
    out = Tensor(out_data)

    def bwd(g):
        gp = g.copy()
        gback = np.zeros_like(back.data)
        gahead = np.zeros_like(ahead.data)
        for i in range(back.shape[0]):
            off = i * stride_back
            if off >= t_len:
                break
            gp[:t_len - off] += back.data[i] * g[off:]
            gback[i] = (g[off:] * p.data[:t_len - off]).sum(axis=0)
        for j in range(ahead.shape[0]):
            off = (j + 1) * stride_ahead
            if off >= t_len:
                break
            gp[off:] += ahead.data[j] * g[:t_len - off]
            gahead[j] = (g[:t_len - off] * p.data[off:]).sum(axis=0)
        gprev = None if prev is None else g
        if prev is None:
            return gp, gback, gahead
        return gp, gback, gahead, gprev

    inputs = (p, back, ahead) if prev is None else (p, back, ahead, prev)
    return _emit(tape, inputs, out, bwd)


def check_all_finite(tensors: Iterable[Tensor], context: str = "") -> None:
    for t in tensors:
        if not np.isfinite(t.data).all():
            raise NumericsError(f"non-finite values in {t.name or 'tensor'} {context}".strip())
