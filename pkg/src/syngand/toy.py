"""Random small valid molecules for desk-scale benchmarks."""
from __future__ import annotations

import numpy as np

from .molgraph import (ATOM_INDEX, ATOMS, DOUBLE, MAX_VALENCE, SINGLE, MolecularGraph,
                       relaxed_validity)

TOY_ELEMENTS = ("C", "N", "O")
TOY_WEIGHTS = (0.7, 0.15, 0.15)


def random_molecule(rng, n: int, ring_prob: float = 0.3, double_prob: float = 0.15) -> MolecularGraph:
    """Random tree over C/N/O with occasional double bonds and one optional ring bond."""
    while True:
        g = _attempt(rng, n, ring_prob, double_prob)
        if g is not None:
            return g


def _attempt(rng, n, ring_prob, double_prob):
    syms = [TOY_ELEMENTS[i] for i in rng.choice(len(TOY_ELEMENTS), size=n, p=TOY_WEIGHTS)]
    syms[0] = "C"
    edges = np.zeros((n, n), dtype=np.int64)
    free = np.array([MAX_VALENCE[s] for s in syms])
    for k in range(1, n):
        parents = [j for j in range(k) if free[j] >= 1]
        if not parents:
            return None
        j = parents[rng.integers(len(parents))]
        order = SINGLE
        if free[j] >= 2 and free[k] >= 2 and rng.random() < double_prob:
            order = DOUBLE
        edges[j, k] = edges[k, j] = order
        free[j] -= order
        free[k] -= order
    if n >= 3 and rng.random() < ring_prob:
        cand = [(i, j) for i in range(n) for j in range(i + 1, n)
                if edges[i, j] == 0 and free[i] >= 1 and free[j] >= 1]
        if cand:
            i, j = cand[rng.integers(len(cand))]
            edges[i, j] = edges[j, i] = SINGLE
    g = MolecularGraph(np.array([ATOM_INDEX[s] for s in syms]), edges)
    assert relaxed_validity(g), [ATOMS[x] for x in g.nodes]
    return g


def toy_graphs(count: int, rng, min_nodes: int = 3, max_nodes: int = 9):
    sizes = rng.integers(min_nodes, max_nodes + 1, size=count)
    return [random_molecule(rng, int(n)) for n in sizes]


def toy_properties(graphs):
    """Raw toy targets: channel 0 is the node count, channel 1 is never observed."""
    values = np.zeros((len(graphs), 2))
    values[:, 0] = [g.n for g in graphs]
    mask = np.zeros((len(graphs), 2), dtype=bool)
    mask[:, 0] = True
    return values, mask
