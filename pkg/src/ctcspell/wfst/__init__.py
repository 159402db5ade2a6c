"""Weighted finite-state machinery: tropical semiring, core FST algorithms,
grammar/lexicon/token builders, and frame-synchronous beam decoding."""

from . import semiring
from .decode import Lattice, LatticeArc, beam_search_decode, nbest, read_lattice_text, write_lattice_text
from .fst import (EPS, Arc, Fst, compose, determinize, linear_fst, minimize, push_weights,
                  read_fst_text, read_symbols, shortest_distance_to_final, shortest_path,
                  transduce, trim, write_fst_text, write_symbols)
from .graphs import (DecodingGraph, LexiconFst, TokenFst, build_decoding_graph,
                     build_lexicon_fst, build_token_fst, ctc_label, strip_input_labels)
from .lm import BOS, EOS, GrammarFst, build_grammar_fst, ngram_counts, prune_counts

__all__ = [
    "semiring", "EPS", "Arc", "Fst", "compose", "determinize", "minimize", "push_weights",
    "linear_fst", "trim", "shortest_path", "shortest_distance_to_final", "transduce",
    "read_fst_text", "write_fst_text", "read_symbols", "write_symbols",
    "Lattice", "LatticeArc", "beam_search_decode", "nbest",
    "read_lattice_text", "write_lattice_text",
    "DecodingGraph", "LexiconFst", "TokenFst", "build_decoding_graph",
    "build_lexicon_fst", "build_token_fst", "ctc_label", "strip_input_labels",
    "BOS", "EOS", "GrammarFst", "build_grammar_fst", "ngram_counts", "prune_counts",
]
