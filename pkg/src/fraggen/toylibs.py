"""Bundled toy fragment grammars.

``tiny_library`` is a hand-authored five-fragment world used to pin down
grow/mutate enumeration exactly.  ``leafy_library`` is corpus-derived (the
same way a real fragment database is built from a compound corpus): a short
label-0 backbone whose substituent slots hold small leaf chains of labels
1/2; swapping those chains is the action space.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .fragment_env import (
    Fragment,
    FragmentLibrary,
    context_key,
    library_from_corpus,
    single_node_graph,
    with_layout,
)
from .graphs import AttributedGraph

TINY_VALENCE = {0: 4.0, 1: 1.0, 2: 2.0}
LEAFY_VALENCE = {0: 4.0, 1: 2.0, 2: 2.0}


def _chain(labels) -> tuple:
    edges = tuple((i, i + 1) for i in range(len(labels) - 1))
    attrs = np.ones((len(edges), 1))
    return with_layout(labels, edges, attrs)


def tiny_library() -> FragmentLibrary:
    """Five fragments attachable around a lone label-0 seed, context radius 3."""
    radius = 3
    seed = single_node_graph(0)
    seed_key = context_key(seed, 0, radius)
    # context left behind when a substituent is cut off a 0-0 pair
    pair = _chain((0, 0))
    pair_key = context_key(pair, 0, radius)
    frags = [
        Fragment(graph=_chain((1,)), attachment_points=(0,), context_keys=(seed_key,)),
        Fragment(graph=_chain((2,)), attachment_points=(0,), context_keys=(seed_key,)),
        Fragment(graph=_chain((2, 2)), attachment_points=(0,), context_keys=(seed_key,)),
        Fragment(graph=_chain((2,)), attachment_points=(0,), context_keys=(pair_key,)),
        Fragment(graph=_chain((2, 1)), attachment_points=(0,), context_keys=(pair_key,)),
    ]
    return FragmentLibrary(radius=radius, valence=TINY_VALENCE, fragments=frags)


def slot_count(backbone_len: int, b: int) -> int:
    bonds = 1 if backbone_len == 1 else (1 if b in (0, backbone_len - 1) else 2)
    return int(LEAFY_VALENCE[0]) - bonds


def build_molecule(backbone_len: int, slot_chains) -> AttributedGraph:
    """Backbone of label-0 atoms with a leaf chain per substituent slot.

    ``slot_chains``: one label tuple per slot, ordered by backbone atom then
    slot position; empty tuples leave the slot open.
    """
    labels = [0] * backbone_len
    edges = [(b, b + 1) for b in range(backbone_len - 1)]
    it = iter(slot_chains)
    for b in range(backbone_len):
        for _ in range(slot_count(backbone_len, b)):
            chain = tuple(next(it))
            prev = b
            for lab in chain:
                labels.append(lab)
                v = len(labels) - 1
                edges.append((min(prev, v), max(prev, v)))
                prev = v
    attrs = np.ones((len(edges), 1))
    return with_layout(labels, sorted(edges), attrs)


DEFAULT_VARIANTS = ((1,), (2,), (2, 2))


@lru_cache(maxsize=8)
def leafy_library(backbone_len: int = 2,
                  variants: tuple = DEFAULT_VARIANTS,
                  radius: int = 1,
                  corpus_size: int = 60,
                  corpus_seed: int = 20210917,
                  max_fragment_size: int = 3) -> FragmentLibrary:
    """Corpus-derived leaf-swap grammar over a fixed backbone."""
    rng = np.random.default_rng(corpus_seed)
    n_slots = sum(slot_count(backbone_len, b) for b in range(backbone_len))
    corpus = []
    for v in variants:  # uniform molecules guarantee every pure context
        corpus.append(build_molecule(backbone_len, [v] * n_slots))
    for _ in range(corpus_size):
        picks = [variants[int(rng.integers(len(variants)))] for _ in range(n_slots)]
        corpus.append(build_molecule(backbone_len, picks))
    return library_from_corpus(corpus, radius=radius, valence=LEAFY_VALENCE,
                               max_fragment_size=max_fragment_size)


def leafy_start(backbone_len: int = 2, chain=(1,)) -> AttributedGraph:
    n_slots = sum(slot_count(backbone_len, b) for b in range(backbone_len))
    return build_molecule(backbone_len, [tuple(chain)] * n_slots)


def label_count(g: AttributedGraph, label: int) -> float:
    return float(sum(1 for lab in g.labels if lab == label))
