"""Builders for the decoding-graph factors and their composition.

The token machine turns frame-level CTC label sequences into single unit
emissions (blank runs absorbed, repeats merged). The lexicon maps unit
sequences to words, with auxiliary input symbols inserted so homophone and
prefix pronunciations stay determinizable; the auxiliary symbols are
stripped again after optimization. The full graph follows
compose(token, minimize(determinize(compose(lexicon, grammar)))).

Label conventions: CTC posterior column c maps to input label c+1 (so the
blank column V gets label V+1); unit and word ids live in their own tables.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..ctc import Vocab
from ..errors import ValidationError
from . import semiring
from .fst import EPS, Fst, compose, determinize, minimize, trim
from .lm import GrammarFst


def ctc_label(column: int) -> int:
    """FST input label for a posterior column."""
    return column + 1


@dataclass
class TokenFst:
    """CTC-label-to-unit transducer plus its label conventions."""
    fst: Fst
    vocab: Vocab
    blank_label: int

    @property
    def n_units(self) -> int:
        return len(self.vocab)


def build_token_fst(vocab: Vocab) -> TokenFst:
    """Accepts blank* u+ blank* per unit u, emitting u exactly once.

    One state per unit tracks the label just consumed: repeats loop without
    output, a blank returns to the hub, and a direct unit change emits the
    new unit. Composing any frame path with this machine reproduces the
    collapse map.
    """
    fst = Fst()
    hub = fst.add_state()
    fst.set_final(hub, semiring.ONE)
    blank = ctc_label(vocab.blank_id)
    fst.add_arc(hub, blank, EPS, semiring.ONE, hub)
    unit_states = {}
    for col in range(len(vocab)):
        u = ctc_label(col)
        s = fst.add_state()
        unit_states[u] = s
        fst.set_final(s, semiring.ONE)
        fst.add_arc(hub, u, u, semiring.ONE, s)
        fst.add_arc(s, u, EPS, semiring.ONE, s)
        fst.add_arc(s, blank, EPS, semiring.ONE, hub)
    for u, s in unit_states.items():
        for v, t in unit_states.items():
            if u != v:
                fst.add_arc(s, v, v, semiring.ONE, t)
    return TokenFst(fst=fst, vocab=vocab, blank_label=blank)


@dataclass
class LexiconFst:
    """Unit-sequence-to-word transducer with auxiliary disambiguation ids."""
    fst: Fst
    word_ids: dict[str, int]
    unit_ids: dict[str, int]
    aux_ids: list[int]


def build_lexicon_fst(pronunciations: dict[str, tuple[str, ...]],
                      unit_ids: dict[str, int] | None = None,
                      word_ids: dict[str, int] | None = None,
                      disambig: bool = True) -> LexiconFst:
    """Closure over single-word pronunciations, each emitting its word on
    the first unit arc.

    With disambig=True, words whose pronunciations collide (homophones) or
    prefix another pronunciation get a trailing auxiliary input symbol, so
    the machine composed with a grammar stays determinizable.
    """
    if not pronunciations:
        raise ValidationError("empty lexicon")
    for word, pron in pronunciations.items():
        if len(pron) == 0:
            raise ValidationError(f"word {word!r} has an empty pronunciation")
    words = sorted(pronunciations)
    if word_ids is None:
        word_ids = {w: i + 1 for i, w in enumerate(words)}
    if unit_ids is None:
        units = sorted({u for pron in pronunciations.values() for u in pron})
        unit_ids = {u: i + 1 for i, u in enumerate(units)}
    for word, pron in pronunciations.items():
        for u in pron:
            if u not in unit_ids:
                raise ValidationError(f"unit {u!r} of word {word!r} missing from unit table")
        if word not in word_ids:
            raise ValidationError(f"word {word!r} missing from word table")

    n_aux = 0
    aux_of: dict[str, int] = {}
    if disambig:
        pron_groups: dict[tuple[str, ...], list[str]] = {}
        for w in words:
            pron_groups.setdefault(tuple(pronunciations[w]), []).append(w)
        prons = set(pron_groups)
        is_prefix = {p: any(q != p and q[:len(p)] == p for q in prons) for p in prons}
        for pron, members in sorted(pron_groups.items()):
            if len(members) > 1 or is_prefix[pron]:
                for k, w in enumerate(members, start=1):
                    aux_of[w] = k
                    n_aux = max(n_aux, k)
    first_aux = max(unit_ids.values()) + 1
    aux_ids = [first_aux + k for k in range(n_aux)]

    fst = Fst()
    root = fst.add_state()
    fst.set_final(root, semiring.ONE)
    for w in words:
        pron = tuple(pronunciations[w])
        labels = [unit_ids[u] for u in pron]
        if w in aux_of:
            labels.append(first_aux + aux_of[w] - 1)
        cur = root
        for i, lab in enumerate(labels):
            dst = root if i == len(labels) - 1 else fst.add_state()
            fst.add_arc(cur, lab, word_ids[w] if i == 0 else EPS, semiring.ONE, dst)
            cur = dst
    return LexiconFst(fst=fst, word_ids=dict(word_ids), unit_ids=dict(unit_ids),
                      aux_ids=aux_ids)


def strip_input_labels(fst: Fst, labels: set[int]) -> Fst:
    """Replace the given input labels with epsilon (used to drop aux ids)."""
    out = Fst()
    out.add_states(fst.n_states)
    out.start = fst.start
    for src, arc in fst.all_arcs():
        il = EPS if arc.ilabel in labels else arc.ilabel
        out.add_arc(src, il, arc.olabel, arc.weight, arc.dst)
    for q, w in fst.finals.items():
        out.set_final(q, w)
    return out


@dataclass
class DecodingGraph:
    """Composed search graph: CTC labels in, word ids out."""
    fst: Fst
    vocab: Vocab
    word_ids: dict[str, int]

    def word_of(self, label: int) -> str:
        if not hasattr(self, "_inv"):
            self._inv = {i: w for w, i in self.word_ids.items()}
        return self._inv[label]


def build_decoding_graph(token: TokenFst, lexicon: LexiconFst,
                         grammar: GrammarFst,
                         det_cap_factor: int = 100) -> DecodingGraph:
    """compose(T, min(det(compose(L, G)))), auxiliary symbols stripped
    after optimization."""
    shared = set(lexicon.word_ids.items()) & set(grammar.symbols.items())
    if not shared:
        raise ValidationError("lexicon and grammar share no word symbols")
    lg = compose(lexicon.fst, grammar.fst)
    lg = determinize(lg, state_cap_factor=det_cap_factor)
    lg = minimize(lg)
    lg = trim(strip_input_labels(lg, set(lexicon.aux_ids)))
    graph = trim(compose(token.fst, lg))
    return DecodingGraph(fst=graph, vocab=token.vocab, word_ids=dict(lexicon.word_ids))
