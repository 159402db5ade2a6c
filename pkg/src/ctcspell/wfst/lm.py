"""Backoff n-gram grammar acceptors.

Counts come in as a plain {ngram tuple: count} mapping over word strings,
with "<s>" allowed only as left-padding context and "</s>" as the predicted
end event. The built acceptor has one state per history with surviving
continuations, word arcs weighted by absolutely-discounted conditional
probabilities, an epsilon backoff arc carrying the discounted mass, and
sentence-end probability on the final weights. At every history state the
direct arc masses, the final mass, and the backoff mass sum to exactly 1.

Unseen events are scored through the backoff chain without renormalizing
against the seen set, the usual decoding-graph approximation; a seen word
therefore also has a (more expensive) backoff route, and shortest-path
scoring picks the direct arc on any reasonably peaked model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..errors import ValidationError
from . import semiring
from .fst import EPS, Fst

import math

BOS = "<s>"
EOS = "</s>"


def ngram_counts(sentences: Iterable[Sequence[str]], order: int) -> dict[tuple[str, ...], int]:
    """Counts for every order 1..order over BOS-padded, EOS-terminated text."""
    if order < 1:
        raise ValidationError("order must be >= 1")
    counts: dict[tuple[str, ...], int] = {}
    for sent in sentences:
        padded = [BOS] * (order - 1) + list(sent) + [EOS]
        for pos in range(order - 1, len(padded)):
            for k in range(1, order + 1):
                if pos - k + 1 < 0:
                    break
                gram = tuple(padded[pos - k + 1:pos + 1])
                counts[gram] = counts.get(gram, 0) + 1
    return counts


def prune_counts(counts: dict[tuple[str, ...], int], min_count: int,
                 min_order: int = 2) -> dict[tuple[str, ...], int]:
    """Drop rare n-grams of order >= min_order; lower orders always survive."""
    return {g: c for g, c in counts.items()
            if len(g) < min_order or c >= min_count}


@dataclass
class GrammarFst:
    """Backoff acceptor plus its word symbol table (label id per word)."""
    fst: Fst
    symbols: dict[str, int]
    order: int
    discount: float
    state_histories: dict[tuple[str, ...], int] = field(default_factory=dict)


def build_grammar_fst(counts: dict[tuple[str, ...], int], order: int = 3,
                      discount: float = 0.5,
                      symbols: dict[str, int] | None = None) -> GrammarFst:
    """Backoff n-gram acceptor from raw counts.

    `symbols` can pin word label ids (so the grammar composes with an
    existing lexicon); otherwise words get ids 1.. in sorted order. The
    unigram state is never discounted, so with a closed vocabulary its
    distribution is exact maximum likelihood.
    """
    if not counts:
        raise ValidationError("empty n-gram counts")
    if order not in (1, 2, 3):
        raise ValidationError("order must be 1, 2, or 3")
    if not 0.0 <= discount < 1.0:
        raise ValidationError("discount must lie in [0, 1)")
    counts = {g: c for g, c in counts.items() if len(g) <= order}
    words = sorted({g[-1] for g in counts} - {BOS, EOS})
    if not words:
        raise ValidationError("counts contain no predictable words")
    if symbols is None:
        symbols = {w: i + 1 for i, w in enumerate(words)}
    else:
        missing = [w for w in words if w not in symbols]
        if missing:
            raise ValidationError(f"symbol table missing words: {missing[:5]}")

    # continuation totals and type counts per history
    totals: dict[tuple[str, ...], int] = {}
    types: dict[tuple[str, ...], int] = {}
    by_history: dict[tuple[str, ...], list[tuple[str, int]]] = {}
    for gram, c in sorted(counts.items()):
        hist, w = gram[:-1], gram[-1]
        if w == BOS:
            continue
        totals[hist] = totals.get(hist, 0) + c
        types[hist] = types.get(hist, 0) + 1
        by_history.setdefault(hist, []).append((w, c))

    fst = Fst()
    histories = sorted(by_history, key=lambda h: (len(h), h))
    state_of = {h: fst.add_state() for h in histories}
    if () not in state_of:
        raise ValidationError("counts must include unigrams")

    def backoff_state(hist: tuple[str, ...]) -> tuple[str, ...]:
        h = hist[1:]
        while h not in state_of:
            h = h[1:]
        return h

    def next_state(hist: tuple[str, ...], word: str) -> tuple[str, ...]:
        h = (hist + (word,))[-(order - 1):] if order > 1 else ()
        while h not in state_of:
            h = h[1:]
        return h

    for hist in histories:
        q = state_of[hist]
        total = totals[hist]
        d = 0.0 if hist == () else discount
        for w, c in by_history[hist]:
            prob = (c - d) / total
            if w == EOS:
                fst.set_final(q, -math.log(prob))
            else:
                fst.add_arc(q, symbols[w], symbols[w], -math.log(prob),
                            state_of[next_state(hist, w)])
        if hist != () and d > 0.0:
            bow = d * types[hist] / total
            fst.add_arc(q, EPS, EPS, -math.log(bow), state_of[backoff_state(hist)])

    if not any(g[-1] == EOS for g in counts):
        # no end-of-sentence events: treat every history as accepting so the
        # machine still defines a language over word strings
        for q in state_of.values():
            fst.set_final(q, semiring.ONE)

    start_hist = (BOS,) * (order - 1)
    while start_hist not in state_of:
        start_hist = start_hist[1:]
    fst.start = state_of[start_hist]
    return GrammarFst(fst=fst, symbols=dict(symbols), order=order, discount=discount,
                      state_histories=dict(state_of))
