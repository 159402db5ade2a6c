"""Weighted finite-state transducers over the tropical semiring.

States are dense integers, label id 0 is epsilon on both tapes, and final
states carry a weight. The algorithms here are the classical constructions:
epsilon-filter composition, subset determinization with residual output
strings, weight pushing plus partition-refinement minimization, and
Dijkstra shortest path (all weights are nonnegative).
"""
from __future__ import annotations

import heapq
from pathlib import Path
from typing import Iterable, NamedTuple

from ..errors import DeterminizeError, FormatError, FstError
from . import semiring

EPS = 0


class Arc(NamedTuple):
    ilabel: int
    olabel: int
    weight: float
    dst: int


class Fst:
    def __init__(self):
        self._arcs: list[list[Arc]] = []
        self.start: int = -1
        self.finals: dict[int, float] = {}

    # -- construction -------------------------------------------------------

    def add_state(self) -> int:
        self._arcs.append([])
        if self.start < 0:
            self.start = len(self._arcs) - 1
        return len(self._arcs) - 1

    def add_states(self, n: int) -> None:
        for _ in range(n):
            self.add_state()

    def add_arc(self, src: int, ilabel: int, olabel: int, weight: float, dst: int) -> None:
        if not (0 <= src < len(self._arcs) and 0 <= dst < len(self._arcs)):
            raise FstError(f"arc references missing state: {src} -> {dst}")
        self._arcs[src].append(Arc(ilabel, olabel, float(weight), dst))

    def set_final(self, state: int, weight: float = semiring.ONE) -> None:
        if not 0 <= state < len(self._arcs):
            raise FstError(f"final weight on missing state {state}")
        self.finals[state] = float(weight)

    # -- inspection ---------------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self._arcs)

    @property
    def n_arcs(self) -> int:
        return sum(len(a) for a in self._arcs)

    def arcs(self, state: int) -> list[Arc]:
        return self._arcs[state]

    def all_arcs(self) -> Iterable[tuple[int, Arc]]:
        for src, arcs in enumerate(self._arcs):
            for arc in arcs:
                yield src, arc

    def final_weight(self, state: int) -> float:
        return self.finals.get(state, semiring.ZERO)

    def is_empty(self) -> bool:
        return self.n_states == 0 or not self.finals

    def input_labels(self) -> set[int]:
        return {arc.ilabel for _, arc in self.all_arcs() if arc.ilabel != EPS}

    def output_labels(self) -> set[int]:
        return {arc.olabel for _, arc in self.all_arcs() if arc.olabel != EPS}


def linear_fst(labels: Iterable[tuple[int, int]] | Iterable[int],
               weight: float = semiring.ONE) -> Fst:
    """Chain machine accepting exactly one label sequence.

    Elements may be (ilabel, olabel) pairs or bare acceptor labels.
    """
    fst = Fst()
    cur = fst.add_state()
    for lab in labels:
        il, ol = lab if isinstance(lab, tuple) else (lab, lab)
        nxt = fst.add_state()
        fst.add_arc(cur, il, ol, semiring.ONE, nxt)
        cur = nxt
    fst.set_final(cur, weight)
    return fst


# ---------------------------------------------------------------------------
# connection / trimming
# ---------------------------------------------------------------------------

def trim(fst: Fst) -> Fst:
    """Keep states both accessible from the start and coaccessible to a final."""
    if fst.n_states == 0 or fst.start < 0:
        return Fst()
    forward = {fst.start}
    stack = [fst.start]
    while stack:
        q = stack.pop()
        for arc in fst.arcs(q):
            if arc.dst not in forward:
                forward.add(arc.dst)
                stack.append(arc.dst)
    rev: dict[int, list[int]] = {}
    for src, arc in fst.all_arcs():
        rev.setdefault(arc.dst, []).append(src)
    backward = set(fst.finals)
    stack = list(fst.finals)
    while stack:
        q = stack.pop()
        for src in rev.get(q, ()):
            if src not in backward:
                backward.add(src)
                stack.append(src)
    keep = forward & backward
    if fst.start not in keep:
        empty = Fst()
        empty.add_state()
        return empty
    remap = {}
    out = Fst()
    for q in range(fst.n_states):  # preserve state order
        if q in keep:
            remap[q] = out.add_state()
    out.start = remap[fst.start]
    for q in remap:
        for arc in fst.arcs(q):
            if arc.dst in remap:
                out.add_arc(remap[q], arc.ilabel, arc.olabel, arc.weight, remap[arc.dst])
    for q, w in fst.finals.items():
        if q in remap:
            out.set_final(remap[q], w)
    return out


# ---------------------------------------------------------------------------
# composition with the standard epsilon filter
# ---------------------------------------------------------------------------

def compose(a: Fst, b: Fst) -> Fst:
    """Compose a's output tape with b's input tape.

    Epsilon moves go through the three-state filter, so each pair of
    epsilon runs contributes one canonical interleaving instead of a
    combinatorial family of redundant paths.
    """
    if a.n_states == 0 or b.n_states == 0 or a.start < 0 or b.start < 0:
        out = Fst()
        out.add_state()
        return out
    b_by_il: list[dict[int, list[Arc]]] = []
    for q in range(b.n_states):
        table: dict[int, list[Arc]] = {}
        for arc in b.arcs(q):
            table.setdefault(arc.ilabel, []).append(arc)
        b_by_il.append(table)

    out = Fst()
    key0 = (a.start, b.start, 0)
    ids = {key0: out.add_state()}
    queue = [key0]
    while queue:
        key = queue.pop()
        qa, qb, flt = key
        src = ids[key]
        wa, wb = a.final_weight(qa), b.final_weight(qb)
        if wa != semiring.ZERO and wb != semiring.ZERO:
            out.set_final(src, semiring.times(wa, wb))

        def visit(dst_key, il, ol, w):
            if dst_key not in ids:
                ids[dst_key] = out.add_state()
                queue.append(dst_key)
            out.add_arc(src, il, ol, w, ids[dst_key])

        for arc_a in a.arcs(qa):
            if arc_a.olabel != EPS:
                for arc_b in b_by_il[qb].get(arc_a.olabel, ()):
                    visit((arc_a.dst, arc_b.dst, 0), arc_a.ilabel, arc_b.olabel,
                          semiring.times(arc_a.weight, arc_b.weight))
            else:
                if flt == 0:  # both sides move on epsilon
                    for arc_b in b_by_il[qb].get(EPS, ()):
                        visit((arc_a.dst, arc_b.dst, 0), arc_a.ilabel, arc_b.olabel,
                              semiring.times(arc_a.weight, arc_b.weight))
                if flt in (0, 1):  # a moves alone
                    visit((arc_a.dst, qb, 1), arc_a.ilabel, EPS, arc_a.weight)
        if flt in (0, 2):  # b moves alone
            for arc_b in b_by_il[qb].get(EPS, ()):
                visit((qa, arc_b.dst, 2), EPS, arc_b.olabel, arc_b.weight)
    return trim(out)


# ---------------------------------------------------------------------------
# determinization
# ---------------------------------------------------------------------------

_RESIDUAL_CAP = 64


def _lcp(strings: list[tuple[int, ...]]) -> tuple[int, ...]:
    first = min(strings, key=len)
    for i in range(len(first)):
        sym = first[i]
        if any(s[i] != sym for s in strings):
            return first[:i]
    return first


def determinize(fst: Fst, state_cap_factor: int = 100) -> Fst:
    """Weighted subset determinization with residual output strings.

    Each subset element is (state, leftover weight, leftover output); common
    weight and the longest common output prefix are pushed onto the arc that
    reaches the subset. Output strings longer than one label are factored
    into chains of epsilon-input arcs. Nondeterminizable inputs (identical
    input strings with diverging outputs, e.g. a lexicon with unresolved
    homophones) grow their residuals or subsets without bound and hit the
    guard, which raises DeterminizeError instead of hanging.
    """
    src = trim(fst)
    if src.is_empty():
        return src
    cap = state_cap_factor * max(1, src.n_states)
    subset_cap = max(1000, 20 * src.n_states)

    def closure(elems: dict[tuple[int, tuple[int, ...]], float]):
        """Expand epsilon-input arcs, folding weights and output labels."""
        heap = [(w, q, ostr) for (q, ostr), w in elems.items()]
        heapq.heapify(heap)
        best = dict(elems)
        while heap:
            w, q, ostr = heapq.heappop(heap)
            if best.get((q, ostr), semiring.ZERO) < w:
                continue
            for arc in src.arcs(q):
                if arc.ilabel != EPS:
                    continue
                nw = semiring.times(w, arc.weight)
                nostr = ostr + (arc.olabel,) if arc.olabel != EPS else ostr
                if len(nostr) > _RESIDUAL_CAP:
                    raise DeterminizeError("residual output grew without bound; "
                                           "input is not determinizable")
                key = (arc.dst, nostr)
                if nw < best.get(key, semiring.ZERO) - 1e-15:
                    best[key] = nw
                    heapq.heappush(heap, (nw, arc.dst, nostr))
        return best

    def normalize(elems: dict[tuple[int, tuple[int, ...]], float]):
        w_common = min(elems.values())
        ostr_common = _lcp([ostr for (_, ostr) in elems])
        cut = len(ostr_common)
        subset = tuple(sorted(
            (q, round(w - w_common, 12), ostr[cut:]) for (q, ostr), w in elems.items()))
        return w_common, ostr_common, subset

    out = Fst()

    def emit_chain(from_state: int, ilabel: int, weight: float,
                   ostr: tuple[int, ...], final_dst: int | None,
                   final_weight: float | None) -> None:
        """Arc carrying `ilabel` and the first output label, then epsilon
        arcs for the rest; lands on final_dst or a fresh final state."""
        labels = list(ostr) or [EPS]
        cur = from_state
        for i, ol in enumerate(labels):
            last = i == len(labels) - 1
            if last and final_dst is not None:
                nxt = final_dst
            else:
                nxt = out.add_state()
            out.add_arc(cur, ilabel if i == 0 else EPS, ol,
                        weight if i == 0 else semiring.ONE, nxt)
            cur = nxt
        if final_dst is None:
            out.set_final(cur, final_weight if final_weight is not None else semiring.ONE)

    start_elems = closure({(src.start, ()): semiring.ONE})
    w0, ostr0, subset0 = normalize(start_elems)
    if w0 != semiring.ONE or ostr0:
        # fold any start-side residue into an initial epsilon chain
        root = out.add_state()
        ids: dict[tuple, int] = {}
        entry = out.add_state()
        ids[subset0] = entry
        emit_start = True
    else:
        root = out.add_state()
        ids = {subset0: root}
        entry = root
        emit_start = False
    if emit_start:
        labels = list(ostr0) or [EPS]
        cur = root
        for i, ol in enumerate(labels):
            nxt = entry if i == len(labels) - 1 else out.add_state()
            out.add_arc(cur, EPS, ol, w0 if i == 0 else semiring.ONE, nxt)
            cur = nxt

    queue = [subset0]
    while queue:
        subset = queue.pop()
        state = ids[subset]
        # finals: spill leftover output through epsilon chains
        final_spills: dict[tuple[int, ...], float] = {}
        for q, w, ostr in subset:
            fw = src.final_weight(q)
            if fw == semiring.ZERO:
                continue
            total = semiring.times(w, fw)
            if total < final_spills.get(ostr, semiring.ZERO):
                final_spills[ostr] = total
        for ostr, w in sorted(final_spills.items()):
            if not ostr:
                prev = out.final_weight(state)
                out.set_final(state, semiring.plus(prev, w))
            else:
                emit_chain(state, EPS, w, ostr, None, semiring.ONE)

        by_label: dict[int, dict[tuple[int, tuple[int, ...]], float]] = {}
        for q, w, ostr in subset:
            for arc in src.arcs(q):
                if arc.ilabel == EPS:
                    continue
                nw = semiring.times(w, arc.weight)
                nostr = ostr + (arc.olabel,) if arc.olabel != EPS else ostr
                if len(nostr) > _RESIDUAL_CAP:
                    raise DeterminizeError("residual output grew without bound; "
                                           "input is not determinizable")
                bucket = by_label.setdefault(arc.ilabel, {})
                key = (arc.dst, nostr)
                if nw < bucket.get(key, semiring.ZERO):
                    bucket[key] = nw
        for ilabel in sorted(by_label):
            closed = closure(by_label[ilabel])
            if len(closed) > subset_cap:
                raise DeterminizeError(
                    f"subset grew past {subset_cap} elements; "
                    "input is likely not determinizable")
            w_common, ostr_common, nsubset = normalize(closed)
            if nsubset not in ids:
                ids[nsubset] = out.add_state()
                if len(ids) > cap:
                    raise DeterminizeError(
                        f"determinization exceeded {cap} states; "
                        "input is likely not determinizable")
                queue.append(nsubset)
            if len(ostr_common) <= 1:
                out.add_arc(state, ilabel, ostr_common[0] if ostr_common else EPS,
                            w_common, ids[nsubset])
            else:
                emit_chain(state, ilabel, w_common, ostr_common, ids[nsubset], None)
    return trim(out)


# ---------------------------------------------------------------------------
# shortest distances, weight pushing, minimization
# ---------------------------------------------------------------------------

def shortest_distance_to_final(fst: Fst) -> list[float]:
    """d[q] = min over paths q->final of (arc weights + final weight)."""
    rev: dict[int, list[tuple[float, int]]] = {}
    for src, arc in fst.all_arcs():
        rev.setdefault(arc.dst, []).append((arc.weight, src))
    dist = [semiring.ZERO] * fst.n_states
    heap = []
    for q, w in fst.finals.items():
        dist[q] = w
        heapq.heappush(heap, (w, q))
    while heap:
        d, q = heapq.heappop(heap)
        if d > dist[q]:
            continue
        for w, src in rev.get(q, ()):
            nd = d + w
            if nd < dist[src]:
                dist[src] = nd
                heapq.heappush(heap, (nd, src))
    return dist


def push_weights(fst: Fst) -> Fst:
    """Reweight toward the start so every state's best completion costs 0.

    Language weights are preserved exactly: the start potential is folded
    back into the final weights.
    """
    f = trim(fst)
    if f.is_empty():
        return f
    dist = shortest_distance_to_final(f)
    out = Fst()
    out.add_states(f.n_states)
    out.start = f.start
    d0 = dist[f.start]
    for src, arc in f.all_arcs():
        out.add_arc(src, arc.ilabel, arc.olabel,
                    arc.weight + dist[arc.dst] - dist[src], arc.dst)
    for q, w in f.finals.items():
        out.set_final(q, w - dist[q] + d0)
    return out


def minimize(fst: Fst) -> Fst:
    """Push weights, then merge states with identical arc signatures.

    Signature refinement is a bisimulation quotient, so the weighted
    language is preserved for any input; on deterministic input the result
    is the canonical minimal machine.
    """
    f = push_weights(fst)
    if f.is_empty():
        return f
    n = f.n_states
    cls = [0] * n
    fin_keys = {}
    for q in range(n):
        key = round(f.final_weight(q), 12) if q in f.finals else None
        fin_keys.setdefault(key, len(fin_keys))
        cls[q] = fin_keys[key]
    while True:
        sigs: dict[tuple, int] = {}
        new_cls = [0] * n
        for q in range(n):
            sig = (cls[q], tuple(sorted(
                (a.ilabel, a.olabel, round(a.weight, 12), cls[a.dst]) for a in f.arcs(q))))
            if sig not in sigs:
                sigs[sig] = len(sigs)
            new_cls[q] = sigs[sig]
        if new_cls == cls:
            break
        cls = new_cls
    out = Fst()
    rep: dict[int, int] = {}
    order = sorted(range(n), key=lambda q: (q != f.start, q))  # start's class first
    for q in order:
        if cls[q] not in rep:
            rep[cls[q]] = out.add_state()
    out.start = rep[cls[f.start]]
    emitted = set()
    for q in range(n):
        if cls[q] in emitted:
            continue
        emitted.add(cls[q])
        for arc in f.arcs(q):
            out.add_arc(rep[cls[q]], arc.ilabel, arc.olabel, arc.weight, rep[cls[arc.dst]])
        if q in f.finals:
            out.set_final(rep[cls[q]], f.final_weight(q))
    return trim(out)


def shortest_path(fst: Fst) -> tuple[float, list[Arc]] | None:
    """Lowest-weight accepting path, or None when the language is empty."""
    if fst.n_states == 0 or fst.start < 0:
        return None
    dist = [semiring.ZERO] * fst.n_states
    parent: list[tuple[int, Arc] | None] = [None] * fst.n_states
    dist[fst.start] = semiring.ONE
    heap = [(semiring.ONE, fst.start)]
    while heap:
        d, q = heapq.heappop(heap)
        if d > dist[q]:
            continue
        for arc in fst.arcs(q):
            nd = d + arc.weight
            if nd < dist[arc.dst]:
                dist[arc.dst] = nd
                parent[arc.dst] = (q, arc)
                heapq.heappush(heap, (nd, arc.dst))
    best_q, best_w = -1, semiring.ZERO
    for q, fw in fst.finals.items():
        total = semiring.times(dist[q], fw)
        if total < best_w:
            best_q, best_w = q, total
    if best_q < 0:
        return None
    arcs: list[Arc] = []
    q = best_q
    while parent[q] is not None:
        src, arc = parent[q]
        arcs.append(arc)
        q = src
    arcs.reverse()
    return best_w, arcs


def transduce(fst: Fst, ilabels: list[int]) -> tuple[float, list[int]] | None:
    """Best weight and output labels for one input string, or None."""
    lin = linear_fst(list(zip(ilabels, ilabels)))
    best = shortest_path(compose(lin, fst))
    if best is None:
        return None
    weight, arcs = best
    return weight, [a.olabel for a in arcs if a.olabel != EPS]


# ---------------------------------------------------------------------------
# text serialization (AT&T style, tab separated)
# ---------------------------------------------------------------------------

def _fmt_weight(w: float) -> str:
    return repr(w)


def write_fst_text(fst: Fst, path) -> None:
    """Arcs as `src dst ilabel olabel weight`, finals as `state weight`.

    The first line's first field is the start state.
    """
    lines: list[str] = []
    arc_lines: dict[int, list[str]] = {}
    for src, arc in fst.all_arcs():
        arc_lines.setdefault(src, []).append(
            f"{src}\t{arc.dst}\t{arc.ilabel}\t{arc.olabel}\t{_fmt_weight(arc.weight)}")
    state_order = [fst.start] + [q for q in range(fst.n_states) if q != fst.start]
    if fst.start not in arc_lines and fst.start in fst.finals:
        lines.append(f"{fst.start}\t{_fmt_weight(fst.finals[fst.start])}")
    for q in state_order:
        lines.extend(arc_lines.get(q, ()))
    for q in state_order:
        if q in fst.finals and not (q == fst.start and not arc_lines.get(fst.start)):
            lines.append(f"{q}\t{_fmt_weight(fst.finals[q])}")
    if not lines:  # stateful but empty language: keep the start state readable
        lines.append(f"{fst.start}\t{_fmt_weight(semiring.ZERO)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_fst_text(path) -> Fst:
    fst = Fst()
    start = None
    max_state = -1
    arcs = []
    finals = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if start is None:
            start = int(fields[0])
        if len(fields) == 5:
            src, dst, il, ol = (int(x) for x in fields[:4])
            arcs.append((src, il, ol, float(fields[4]), dst))
            max_state = max(max_state, src, dst)
        elif len(fields) == 2:
            finals.append((int(fields[0]), float(fields[1])))
            max_state = max(max_state, int(fields[0]))
        else:
            raise FormatError(f"{path}: bad FST line {raw!r}")
    if start is None:
        raise FormatError(f"{path}: empty FST file")
    fst.add_states(max_state + 1)
    fst.start = start
    for src, il, ol, w, dst in arcs:
        fst.add_arc(src, il, ol, w, dst)
    for q, w in finals:
        fst.set_final(q, w)
    return fst


def write_symbols(path, table: dict[str, int]) -> None:
    lines = [f"{sym}\t{idx}" for sym, idx in sorted(table.items(), key=lambda kv: kv[1])]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_symbols(path) -> dict[str, int]:
    table: dict[str, int] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        sym, idx = raw.split("\t")
        table[sym] = int(idx)
    return table
