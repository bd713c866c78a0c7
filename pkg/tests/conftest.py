import numpy as np
import pytest

from fraggen.graphs import AttributedGraph
from fraggen.toylibs import leafy_library, leafy_start, tiny_library


def random_tree(rng, n, n_labels=3, edge_dim=2, coords_scale=2.0):
    edges = []
    for v in range(1, n):
        edges.append((int(rng.integers(0, v)), v))
    return AttributedGraph(
        labels=tuple(int(x) for x in rng.integers(0, n_labels, n)),
        coords=rng.normal(size=(n, 3)) * coords_scale,
        edges=tuple(sorted(edges)),
        edge_attrs=np.abs(rng.normal(size=(n - 1, edge_dim))) + 0.5,
    )


def random_graph(rng, n, n_labels=3, edge_dim=2, extra_edges=2):
    g = random_tree(rng, n, n_labels, edge_dim)
    edges = set(g.edges)
    for _ in range(extra_edges):
        a, b = rng.integers(0, n, 2)
        if a != b:
            edges.add((min(int(a), int(b)), max(int(a), int(b))))
    edges = tuple(sorted(edges))
    return AttributedGraph(
        labels=g.labels,
        coords=g.coords,
        edges=edges,
        edge_attrs=np.abs(rng.normal(size=(len(edges), edge_dim))) + 0.5,
    )


@pytest.fixture(scope="session")
def tiny_lib():
    return tiny_library()


@pytest.fixture(scope="session")
def leafy():
    return leafy_library()


@pytest.fixture(scope="session")
def leafy_start_graph():
    return leafy_start()
