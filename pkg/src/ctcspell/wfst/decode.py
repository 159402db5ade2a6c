"""Frame-synchronous Viterbi beam search over a decoding graph.

Each frame consumes one CTC label arc (acoustic cost folded in), followed
by an epsilon closure at fixed time. Survivors become lattice nodes keyed
by (frame, graph state); arcs between survivors within a margin of the best
incoming cost are kept, so the lattice holds near-best alternatives for
N-best extraction while staying small. Nodes are numbered in settlement
order, which is topological by construction.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..ctc import PosteriorMatrix
from ..errors import DecodeError, FormatError, ValidationError
from . import semiring
from .fst import EPS
from .graphs import DecodingGraph, ctc_label


class LatticeArc(NamedTuple):
    src: int
    dst: int
    ilabel: int
    olabel: int
    weight: float
    t_start: int
    t_end: int


@dataclass
class Lattice:
    """Acyclic hypothesis graph; arcs carry the frame span they consumed."""
    n_states: int
    start: int
    finals: dict[int, float]
    arcs: list[LatticeArc]
    n_frames: int
    _by_src: list[list[LatticeArc]] | None = field(default=None, repr=False)

    def arcs_from(self, state: int) -> list[LatticeArc]:
        if self._by_src is None:
            table: list[list[LatticeArc]] = [[] for _ in range(self.n_states)]
            for arc in self.arcs:
                table[arc.src].append(arc)
            self._by_src = table
        return self._by_src[state]

    def is_acyclic(self) -> bool:
        # node ids are assigned in settlement order, so every arc must
        # point forward
        return all(arc.src < arc.dst for arc in self.arcs)

    def best_path(self) -> tuple[float, list[LatticeArc]]:
        dist = np.full(self.n_states, semiring.ZERO)
        parent: list[LatticeArc | None] = [None] * self.n_states
        dist[self.start] = semiring.ONE
        for arc in sorted(self.arcs, key=lambda a: a.src):
            nd = dist[arc.src] + arc.weight
            if nd < dist[arc.dst]:
                dist[arc.dst] = nd
                parent[arc.dst] = arc
        best_q, best_w = -1, semiring.ZERO
        for q, fw in self.finals.items():
            total = dist[q] + fw
            if total < best_w:
                best_q, best_w = q, total
        if best_q < 0:
            raise DecodeError("lattice has no accepting path")
        path: list[LatticeArc] = []
        q = best_q
        while parent[q] is not None:
            arc = parent[q]
            path.append(arc)
            q = arc.src
        path.reverse()
        return best_w, path

    def best_transcript(self) -> tuple[tuple[int, ...], float]:
        weight, path = self.best_path()
        return tuple(a.olabel for a in path if a.olabel != EPS), weight


def _graph_tables(graph: DecodingGraph):
    """Cached per-state arc arrays: (ilabels, weights, olabels, dsts) plus
    epsilon arc lists."""
    cached = getattr(graph, "_decode_tables", None)
    if cached is not None:
        return cached
    fst = graph.fst
    noneps = []
    eps = []
    for q in range(fst.n_states):
        il, w, ol, dst = [], [], [], []
        eq = []
        for arc in fst.arcs(q):
            if arc.ilabel == EPS:
                eq.append((arc.weight, arc.dst, arc.olabel))
            else:
                il.append(arc.ilabel)
                w.append(arc.weight)
                ol.append(arc.olabel)
                dst.append(arc.dst)
        noneps.append((np.asarray(il, dtype=np.intp), np.asarray(w, dtype=np.float64),
                       np.asarray(ol, dtype=np.intp), np.asarray(dst, dtype=np.intp)))
        eps.append(eq)
    tables = (noneps, eps)
    graph._decode_tables = tables
    return tables


def beam_search_decode(post: PosteriorMatrix, graph: DecodingGraph,
                       beam_width: int | None = None,
                       acoustic_scale: float = 1.0,
                       lattice_margin: float = 10.0) -> Lattice:
    """Viterbi beam search combining scaled acoustic costs with graph
    weights.

    beam_width is the maximum number of surviving graph states per frame
    (None keeps everything, i.e. exact Viterbi); lattice_margin bounds how
    far above the best incoming cost an arc may be and still enter the
    lattice. Raises DecodeError when no hypothesis reaches a final state.
    """
    if beam_width is not None and beam_width < 1:
        raise ValidationError("beam_width must be >= 1")
    if post.vocab != graph.vocab:
        raise ValidationError("posterior vocabulary does not match the graph")
    fst = graph.fst
    noneps, eps_arcs = _graph_tables(graph)
    t_len = post.n_frames
    # acoustic cost per (frame, input label); label l is posterior column l-1
    with np.errstate(divide="ignore"):
        ac = acoustic_scale * -np.log(np.clip(post.probs, 1e-300, None))

    node_ids: dict[tuple[int, int], int] = {}
    node_order: list[tuple[int, int]] = []
    lat_arcs: list[LatticeArc] = []

    def node(t: int, state: int) -> int:
        key = (t, state)
        if key not in node_ids:
            node_ids[key] = len(node_order)
            node_order.append(key)
        return node_ids[key]

    def eps_close(t: int, costs: dict[int, float]) -> dict[int, float]:
        """Settle epsilon moves at fixed time; tight arcs enter the lattice."""
        heap = [(c, q) for q, c in costs.items()]
        heapq.heapify(heap)
        settled = dict(costs)
        while heap:
            c, q = heapq.heappop(heap)
            if c > settled.get(q, semiring.ZERO):
                continue
            for w, dst, ol in eps_arcs[q]:
                nc = c + w
                if nc < settled.get(dst, semiring.ZERO) - 1e-15:
                    settled[dst] = nc
                    heapq.heappush(heap, (nc, dst))
        for q, c in sorted(settled.items()):
            for w, dst, ol in eps_arcs[q]:
                if dst in settled and c + w <= settled[dst] + 1e-12:
                    lat_arcs.append(LatticeArc(node(t, q), node(t, dst), EPS, ol, w, t, t))
        return settled

    active = eps_close(0, {fst.start: semiring.ONE})
    node(0, fst.start)
    for q in sorted(active):
        node(0, q)

    for t in range(t_len):
        states = sorted(active)
        if not states:
            raise DecodeError(f"beam emptied at frame {t}; increase beam_width")
        gathered = []
        for q in states:
            il, w, ol, dst = noneps[q]
            if il.size == 0:
                continue
            cand = active[q] + w + ac[t, il - 1]
            gathered.append((q, il, ol, dst, w, cand))
        if not gathered:
            raise DecodeError(f"no arc leaves the beam at frame {t}")
        best_in: dict[int, float] = {}
        for _, _, _, dst, _, cand in gathered:
            for d, c in zip(dst, cand):
                if c < best_in.get(d, semiring.ZERO):
                    best_in[int(d)] = float(c)
        survivors = best_in
        if beam_width is not None and len(survivors) > beam_width:
            kept = heapq.nsmallest(beam_width, survivors.items(), key=lambda kv: (kv[1], kv[0]))
            survivors = dict(kept)
        settled = eps_close(t + 1, survivors)
        if beam_width is not None and len(settled) > beam_width:
            kept = heapq.nsmallest(beam_width, settled.items(), key=lambda kv: (kv[1], kv[0]))
            settled = dict(kept)
        for q, il, ol, dst, w, cand in gathered:
            for i in range(il.shape[0]):
                d = int(dst[i])
                lim = settled.get(d)
                if lim is not None and cand[i] <= lim + lattice_margin:
                    lat_arcs.append(LatticeArc(node(t, q), node(t + 1, d),
                                               int(il[i]), int(ol[i]),
                                               float(w[i] + ac[t, il[i] - 1]), t, t + 1))
        active = settled

    finals = {}
    for q, c in active.items():
        fw = fst.final_weight(q)
        if fw != semiring.ZERO:
            finals[node(t_len, q)] = fw
    if not finals:
        raise DecodeError("no hypothesis reached a final state; increase beam_width")

    return _trim_lattice(len(node_order), node_ids.get((0, fst.start), 0),
                         finals, lat_arcs, t_len)


def _trim_lattice(n_nodes: int, start: int, finals: dict[int, float],
                  arcs: list[LatticeArc], n_frames: int) -> Lattice:
    fwd = {start}
    by_src: dict[int, list[LatticeArc]] = {}
    by_dst: dict[int, list[LatticeArc]] = {}
    for a in arcs:
        by_src.setdefault(a.src, []).append(a)
        by_dst.setdefault(a.dst, []).append(a)
    stack = [start]
    while stack:
        q = stack.pop()
        for a in by_src.get(q, ()):
            if a.dst not in fwd:
                fwd.add(a.dst)
                stack.append(a.dst)
    bwd = {q for q in finals if q in fwd}
    stack = list(bwd)
    while stack:
        q = stack.pop()
        for a in by_dst.get(q, ()):
            if a.src in fwd and a.src not in bwd:
                bwd.add(a.src)
                stack.append(a.src)
    keep = sorted(fwd & bwd)
    remap = {q: i for i, q in enumerate(keep)}
    kept_arcs = [LatticeArc(remap[a.src], remap[a.dst], a.ilabel, a.olabel,
                            a.weight, a.t_start, a.t_end)
                 for a in arcs if a.src in remap and a.dst in remap]
    kept_finals = {remap[q]: w for q, w in finals.items() if q in remap}
    if start not in remap:
        raise DecodeError("lattice start unreachable after trimming")
    return Lattice(n_states=len(keep), start=remap[start], finals=kept_finals,
                   arcs=kept_arcs, n_frames=n_frames)


def nbest(lattice: Lattice, n: int, max_pops: int = 500_000) -> list[tuple[tuple[int, ...], float]]:
    """The n lowest-weight transcripts distinct after epsilon removal.

    Weights come back nondecreasing; fewer than n entries are returned when
    the lattice holds fewer distinct transcripts.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not lattice.is_acyclic():
        raise ValidationError("nbest needs an acyclic lattice")
    # exact cost-to-go per node, in reverse topological (= reverse id) order
    togo = np.full(lattice.n_states, semiring.ZERO)
    for q, w in lattice.finals.items():
        togo[q] = w
    for q in range(lattice.n_states - 1, -1, -1):
        for arc in lattice.arcs_from(q):
            cand = arc.weight + togo[arc.dst]
            if cand < togo[q]:
                togo[q] = cand
    if togo[lattice.start] == semiring.ZERO:
        return []

    results: list[tuple[tuple[int, ...], float]] = []
    seen: set[tuple[int, ...]] = set()
    # A* over partial paths with the exact cost-to-go as heuristic, so pops
    # of the virtual goal (node -1) come out in true nondecreasing cost.
    # Parents chain through `trail` to rebuild transcripts lazily.
    trail: list[tuple[int, int | None]] = []  # (olabel, parent index)
    counter = 0
    heap = [(float(togo[lattice.start]), counter, lattice.start, 0.0, None)]
    pops = 0
    while heap and len(results) < n and pops < max_pops:
        f, _, q, g, parent = heapq.heappop(heap)
        pops += 1
        if q == -1:
            labels = []
            p = parent
            while p is not None:
                ol, p = trail[p]
                if ol != EPS:
                    labels.append(ol)
            transcript = tuple(reversed(labels))
            if transcript not in seen:
                seen.add(transcript)
                results.append((transcript, g))
            continue
        fw = lattice.finals.get(q)
        if fw is not None:
            counter += 1
            heapq.heappush(heap, (g + fw, counter, -1, g + fw, parent))
        for arc in lattice.arcs_from(q):
            ng = g + arc.weight
            nf = ng + togo[arc.dst]
            if nf == semiring.ZERO:
                continue
            trail.append((arc.olabel, parent))
            counter += 1
            heapq.heappush(heap, (nf, counter, arc.dst, ng, len(trail) - 1))
    return results


# ---------------------------------------------------------------------------
# serialization: the FST text format plus a frame-span column
# ---------------------------------------------------------------------------

def write_lattice_text(lattice: Lattice, path) -> None:
    lines = []
    start_arcs = [a for a in lattice.arcs if a.src == lattice.start]
    rest = [a for a in lattice.arcs if a.src != lattice.start]
    if not start_arcs:
        w = lattice.finals.get(lattice.start, semiring.ZERO)
        lines.append(f"{lattice.start}\t{w!r}")
    for a in start_arcs + rest:
        lines.append(f"{a.src}\t{a.dst}\t{a.ilabel}\t{a.olabel}\t{a.weight!r}\t{a.t_start}:{a.t_end}")
    for q in sorted(lattice.finals):
        if not (q == lattice.start and not start_arcs):
            lines.append(f"{q}\t{lattice.finals[q]!r}")
    header = f"#frames\t{lattice.n_frames}"
    Path(path).write_text("\n".join([header] + lines) + "\n", encoding="utf-8")


def read_lattice_text(path) -> Lattice:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#frames\t"):
        raise FormatError(f"{path}: missing lattice frame header")
    n_frames = int(lines[0].split("\t")[1])
    start = None
    max_state = -1
    arcs: list[LatticeArc] = []
    finals: dict[int, float] = {}
    for raw in lines[1:]:
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if start is None:
            start = int(fields[0])
        if len(fields) == 6:
            t0, t1 = fields[5].split(":")
            arcs.append(LatticeArc(int(fields[0]), int(fields[1]), int(fields[2]),
                                   int(fields[3]), float(fields[4]), int(t0), int(t1)))
            max_state = max(max_state, arcs[-1].src, arcs[-1].dst)
        elif len(fields) == 2:
            finals[int(fields[0])] = float(fields[1])
            max_state = max(max_state, int(fields[0]))
        else:
            raise FormatError(f"{path}: bad lattice line {raw!r}")
    if start is None:
        raise FormatError(f"{path}: empty lattice file")
    return Lattice(n_states=max_state + 1, start=start, finals=finals,
                   arcs=arcs, n_frames=n_frames)
