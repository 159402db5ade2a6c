"""CTC label math and greedy-side decoding.

Covers the collapse map (merge repeats, then drop blanks), the exact
log-space loss with its gradient, a brute-force path-enumeration oracle for
small instances, per-frame greedy search, and threshold-based retention of
second-best tokens for training-data expansion.

Conventions: posterior columns 0..V-1 are the vocabulary tokens in order and
column V is the blank, so an argmax tie on a uniform row resolves to the
first token, never the blank. Paths are tuples of column indices.
"""
from __future__ import annotations

import heapq
import itertools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, _emit, logsumexp
from .errors import FeasibilityError, FormatError, ShapeError, ValidationError

BLANK_MARKER = "<b>"

_NEG_INF = -np.inf


class Vocab:
    """Ordered token set plus the blank label appended at the end."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens must be unique")
        if BLANK_MARKER in tokens:
            raise ValidationError(f"{BLANK_MARKER} is reserved for the blank label")
        self.tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}

    @property
    def blank_id(self) -> int:
        return len(self.tokens)

    @property
    def n_labels(self) -> int:
        """Tokens plus blank."""
        return len(self.tokens) + 1

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ValidationError(f"token {token!r} not in vocabulary") from None

    def ids_of(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.id_of(t) for t in tokens)

    def tokens_of(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in ids)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and other.tokens == self.tokens

    def __hash__(self):
        return hash(self.tokens)


def save_vocab(path, vocab: Vocab) -> None:
    lines = list(vocab.tokens) + [BLANK_MARKER]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path) -> Vocab:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
    if BLANK_MARKER not in lines:
        raise FormatError(f"{path}: missing blank marker line {BLANK_MARKER!r}")
    if lines.index(BLANK_MARKER) != len(lines) - 1:
        raise FormatError(f"{path}: blank marker must be the last line")
    return Vocab(lines[:-1])


class PosteriorMatrix:
    """Per-frame distributions over tokens-plus-blank."""

    def __init__(self, probs: np.ndarray, vocab: Vocab):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != vocab.n_labels:
            raise ShapeError(f"posteriors must be (T, {vocab.n_labels}), got {probs.shape}")
        if probs.size:
            if probs.min() < -1e-12 or probs.max() > 1 + 1e-9:
                raise ValidationError("posterior entries outside [0, 1]")
            if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-9:
                raise ValidationError("posterior rows must sum to 1 within 1e-9")
        self.probs = probs
        self.vocab = vocab

    @property
    def n_frames(self) -> int:
        return self.probs.shape[0]


POSTERIOR_MAGIC = b"PSTM1"


def save_posteriors(path, post: PosteriorMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(POSTERIOR_MAGIC)
        fh.write(struct.pack("<ii", post.n_frames, post.vocab.n_labels))
        fh.write(np.ascontiguousarray(post.probs, dtype="<f8").tobytes())


def load_posteriors(path, vocab: Vocab) -> PosteriorMatrix:
    blob = Path(path).read_bytes()
    if blob[:5] != POSTERIOR_MAGIC:
        raise FormatError(f"{path}: bad posterior magic {blob[:5]!r}")
    t_len, width = struct.unpack("<ii", blob[5:13])
    if width != vocab.n_labels:
        raise FormatError(f"{path}: width {width} != vocab {vocab.n_labels}")
    data = np.frombuffer(blob[13:], dtype="<f8")
    if data.size != t_len * width:
        raise FormatError(f"{path}: payload size mismatch")
    return PosteriorMatrix(data.reshape(t_len, width).astype(np.float64), vocab)


# ---------------------------------------------------------------------------
# collapse map and feasibility
# ---------------------------------------------------------------------------

def collapse(path: Sequence[int], blank_id: int) -> tuple[int, ...]:
    """Merge consecutive repeats, then remove blanks."""
    out = []
    prev = None
    for label in path:
        if label != prev:
            if label != blank_id:
                out.append(label)
            prev = label
    return tuple(out)


def min_frames(target_ids: Sequence[int]) -> int:
    """Fewest frames any path collapsing to the target can occupy."""
    dups = sum(1 for a, b in zip(target_ids, target_ids[1:]) if a == b)
    return len(target_ids) + dups


# ---------------------------------------------------------------------------
# exact loss via the forward-backward recursion in log space
# ---------------------------------------------------------------------------

def _extended_targets(target_ids: Sequence[int], blank_id: int) -> np.ndarray:
    ext = np.full(2 * len(target_ids) + 1, blank_id, dtype=np.intp)
    ext[1::2] = target_ids
    return ext


def _log_alpha(logp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    t_len = logp.shape[0]
    s_len = ext.shape[0]
    alpha = np.full((t_len, s_len), _NEG_INF)
    alpha[0, 0] = logp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = logp[0, ext[1]]
    skip_ok = np.zeros(s_len, dtype=bool)
    skip_ok[2:] = ext[2:] != ext[:-2]  # blank rows have ext equal two back
    for t in range(1, t_len):
        stay = alpha[t - 1]
        step = np.concatenate(([_NEG_INF], alpha[t - 1, :-1]))
        skip = np.concatenate(([_NEG_INF, _NEG_INF], alpha[t - 1, :-2]))
        skip = np.where(skip_ok, skip, _NEG_INF)
        merged = np.logaddexp(np.logaddexp(stay, step), skip)
        alpha[t] = merged + logp[t, ext]
    return alpha


def _log_beta(logp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    t_len = logp.shape[0]
    s_len = ext.shape[0]
    beta = np.full((t_len, s_len), _NEG_INF)
    beta[-1, -1] = logp[-1, ext[-1]]
    if s_len > 1:
        beta[-1, -2] = logp[-1, ext[-2]]
    skip_ok = np.zeros(s_len, dtype=bool)
    skip_ok[:-2] = ext[:-2] != ext[2:]
    for t in range(t_len - 2, -1, -1):
        stay = beta[t + 1]
        step = np.concatenate((beta[t + 1, 1:], [_NEG_INF]))
        skip = np.concatenate((beta[t + 1, 2:], [_NEG_INF, _NEG_INF]))
        skip = np.where(skip_ok, skip, _NEG_INF)
        merged = np.logaddexp(np.logaddexp(stay, step), skip)
        beta[t] = merged + logp[t, ext]
    return beta


def _check_feasible(t_len: int, target_ids: Sequence[int], n_labels: int) -> None:
    for tid in target_ids:
        if not 0 <= tid < n_labels - 1:
            raise ValidationError(f"target id {tid} outside the token range")
    need = min_frames(target_ids)
    if t_len < need:
        raise FeasibilityError(
            f"target needs at least {need} frames, posterior has {t_len}")


def ctc_loss_and_grad(probs: np.ndarray, target_ids: Sequence[int],
                      blank_id: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and its gradient w.r.t. the posteriors."""
    probs = np.asarray(probs, dtype=np.float64)
    t_len, n_labels = probs.shape
    _check_feasible(t_len, target_ids, n_labels)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    ext = _extended_targets(target_ids, blank_id)
    alpha = _log_alpha(logp, ext)
    beta = _log_beta(logp, ext)
    tail = alpha[-1, -1] if len(ext) == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    log_total = float(tail)
    # d(-logP)/dp[t,k] = -exp(logsumexp_{s: ext[s]=k}(alpha+beta) - logP - 2*logp[t,k])
    grad = np.zeros_like(probs)
    ab = alpha + beta
    for label in np.unique(ext):
        cols = ext == label
        occ = logsumexp(ab[:, cols], axis=1)
        grad[:, label] = -np.exp(occ - log_total - 2.0 * logp[:, label])
    return -log_total, grad


def ctc_loss(post: PosteriorMatrix, target: Sequence[str]) -> float:
    """-log sum over all paths collapsing to `target`."""
    ids = post.vocab.ids_of(target)
    loss, _ = ctc_loss_and_grad(post.probs, ids, post.vocab.blank_id)
    return loss


def ctc_loss_node(probs: Tensor, target_ids: Sequence[int], blank_id: int,
                  tape: Tape | None = None) -> Tensor:
    """Loss as a tape node so models can train through their softmax."""
    loss, grad = ctc_loss_and_grad(probs.data, target_ids, blank_id)
    out = Tensor(loss)
    return _emit(tape, (probs,), out, lambda g: (grad * float(g),))


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def enumerate_paths(post: PosteriorMatrix, target: Sequence[str],
                    max_frames: int = 8, max_tokens: int = 4) -> float:
    """Exact total probability of `target` by summing every path.

    Combinatorially guarded; only feasible for tiny instances.
    """
    if post.n_frames > max_frames or len(post.vocab) > max_tokens:
        raise ValidationError(
            f"instance too large to enumerate (T={post.n_frames}, |vocab|={len(post.vocab)})")
    target_ids = post.vocab.ids_of(target)
    blank = post.vocab.blank_id
    total = 0.0
    labels = range(post.vocab.n_labels)
    for path in itertools.product(labels, repeat=post.n_frames):
        if collapse(path, blank) == target_ids:
            prob = 1.0
            for t, label in enumerate(path):
                prob *= post.probs[t, label]
            total += prob
    return total


# ---------------------------------------------------------------------------
# greedy search and threshold expansion
# ---------------------------------------------------------------------------

def greedy_search(post: PosteriorMatrix) -> tuple[tuple[int, ...], tuple[str, ...]]:
    """Per-frame argmax path and its collapsed token sequence.

    Ties resolve to the lowest column index, which places tokens ahead of
    the blank.
    """
    path = tuple(int(i) for i in np.argmax(post.probs, axis=1))
    return path, post.vocab.tokens_of(collapse(path, post.vocab.blank_id))


@dataclass(frozen=True)
class ThresholdConfig:
    """Retention rule for the per-frame second-best token."""
    upper_th: float
    lower_th: float

    def __post_init__(self):
        if not (0.0 < self.upper_th <= 1.0 and 0.0 < self.lower_th <= 1.0):
            raise ValidationError("thresholds must lie in (0, 1]")
        if self.lower_th > self.upper_th:
            raise ValidationError("lower_th must not exceed upper_th")


def threshold_expand(post: PosteriorMatrix, cfg: ThresholdConfig,
                     max_paths: int = 16) -> list[tuple[str, ...]]:
    """Distinct collapsed hypotheses from per-frame top-1/top-2 retention.

    A frame keeps its second-best token only when
    lower_th < p1 < upper_th and p2 > lower_th. Hypotheses are ordered by
    descending probability of their best retained path and truncated to
    `max_paths`; the greedy hypothesis is always first. The blank competes
    like any other label.
    """
    if max_paths < 1:
        raise ValidationError("max_paths must be >= 1")
    probs = post.probs
    order = np.argsort(-probs, axis=1, kind="stable")
    top1 = order[:, 0]
    top2 = order[:, 1]
    p1 = probs[np.arange(post.n_frames), top1]
    p2 = probs[np.arange(post.n_frames), top2]
    keep_second = (cfg.lower_th < p1) & (p1 < cfg.upper_th) & (p2 > cfg.lower_th)

    choice_frames = np.nonzero(keep_second)[0]
    base_path = top1.copy()
    with np.errstate(divide="ignore"):
        # extra cost of flipping a choice frame to its second token
        flip_cost = np.log(p1[choice_frames]) - np.log(p2[choice_frames])

    blank = post.vocab.blank_id
    results: list[tuple[str, ...]] = []
    seen: set[tuple[int, ...]] = set()
    # best-first walk over subsets of flipped choice frames; flipping only
    # ever lowers path probability, so parents pop before children
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    pops = 0
    pop_cap = max(4096, 64 * max_paths)
    while heap and len(results) < max_paths and pops < pop_cap:
        cost, flipped = heapq.heappop(heap)
        pops += 1
        path = base_path.copy()
        for j in flipped:
            path[choice_frames[j]] = top2[choice_frames[j]]
        seq = collapse(path, blank)
        if seq not in seen:
            seen.add(seq)
            results.append(post.vocab.tokens_of(seq))
        start = flipped[-1] + 1 if flipped else 0
        for j in range(start, len(choice_frames)):
            heapq.heappush(heap, (cost + flip_cost[j], flipped + (j,)))
    return results
