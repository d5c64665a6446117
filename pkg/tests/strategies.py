"""Shared hypothesis strategies: random DAGs with a single source and sink."""

from hypothesis import strategies as st

from mcn_codesign.network import RadioGraph, Scheduling


@st.composite
def dags(draw, min_nodes=2, max_nodes=12, density=3):
    n = draw(st.integers(min_nodes, max_nodes))
    names = [f"n{i}" for i in range(n)]
    edges = set()
    for j in range(1, n):
        for i in range(j):
            if draw(st.integers(0, 9)) < density:
                edges.add((i, j))
    for v in range(1, n - 1):
        if not any(b == v for _, b in edges):
            edges.add((0, v))
        if not any(a == v for a, _ in edges):
            edges.add((v, n - 1))
    if not any(b == n - 1 for _, b in edges):
        edges.add((0, n - 1))
    return RadioGraph(tuple(names), tuple((names[a], names[b]) for a, b in edges), names[0], names[-1])


@st.composite
def scheduled_dags(draw, max_nodes=10, max_period=3):
    g = draw(dags(max_nodes=max_nodes))
    period = draw(st.integers(1, max_period))
    assign = {e: draw(st.integers(1, period)) for e in g.edges}
    return g, Scheduling.from_assignment(assign, 0.01, period)


def nonzero(lo=0.05, hi=20.0, signed=True):
    mag = st.floats(lo, hi, allow_nan=False)
    if not signed:
        return mag
    return st.tuples(mag, st.booleans()).map(lambda t: t[0] if t[1] else -t[0])
