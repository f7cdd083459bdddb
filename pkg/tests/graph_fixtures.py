import numpy as np

from cgnn.graph import Graph, PropagationOperator, build_sym_norm


def random_graph(n: int, p: float, rng: np.random.Generator) -> Graph:
    edges = []
    for u in range(n):
        hits = np.flatnonzero(rng.random(n - u - 1) < p)
        edges.extend((u, int(u + 1 + k)) for k in hits)
    return Graph(num_nodes=n, edges=edges)


def random_operator(n, rng, alpha=0.95, gamma=0.5, p=0.25) -> PropagationOperator:
    g = random_graph(n, p, rng)
    return PropagationOperator(base=build_sym_norm(g), alpha=np.full(n, alpha), gamma=gamma)


def scalar_operator(target: float) -> PropagationOperator:
    """Single-node operator materializing to [target] with in-range alpha/gamma.

    alpha*gamma = target with alpha=0.8 fixed; the caller reads the exact
    materialized scalar back from the operator.
    """
    g = Graph(1, [])
    alpha = 0.8
    return PropagationOperator(
        base=build_sym_norm(g), alpha=np.array([alpha]), gamma=target / alpha
    )
