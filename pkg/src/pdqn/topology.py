"""Network generation, Metropolis mixing weights and the neighbor exchange.

Every inter-node communication in the simulator goes through
:func:`neighbor_exchange`, which is also where communication is counted.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import (
    DimensionMismatchError,
    DisconnectedGraphError,
    InfeasibleDensityError,
    InvalidArgumentError,
)

GRAPH_KINDS = ("line", "complete", "random")

# slack on the density lower bound so that d = 2/n typed as a decimal passes
_DENSITY_SLACK = 1e-9


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    kind: str = "random"

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError("graph needs at least one node")
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise InvalidArgumentError(f"bad edge ({i}, {j}) for n={self.n}")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def density(self) -> float:
        if self.n == 1:
            return 1.0
        return 2.0 * self.num_edges / (self.n * (self.n - 1))

    def neighbors(self) -> list[list[int]]:
        """Adjacency lists, excluding the node itself, sorted ascending."""
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        for a in adj:
            a.sort()
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def is_connected(self) -> bool:
        adj = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            k = queue.popleft()
            for j in adj[k]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.n


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


def _random_tree(n: int, rng: np.random.Generator) -> set[tuple[int, int]]:
    # Decoding a uniform Pruefer sequence gives a uniform labeled spanning tree.
    if n == 1:
        return set()
    if n == 2:
        return {(0, 1)}
    seq = rng.integers(0, n, size=n - 2).tolist()
    degree = [1] * n
    for k in seq:
        degree[k] += 1
    edges = set()
    for k in seq:
        leaf = min(i for i in range(n) if degree[i] == 1)
        edges.add(_edge(leaf, k))
        degree[leaf] -= 1
        degree[k] -= 1
    u, w = [i for i in range(n) if degree[i] == 1]
    edges.add(_edge(u, w))
    return edges


def edge_count_for_density(n: int, density: float) -> int:
    """Nearest-integer edge count for ``density``, rounding halves up."""
    return int(math.floor(density * n * (n - 1) / 2 + 0.5))


def generate_graph(n: int, kind: str = "random", density: float = 1.0, seed: int = 0) -> Graph:
    """Build a connected graph.

    ``kind="random"`` draws a uniform spanning tree and then adds uniformly
    chosen extra edges until ``round(density * n(n-1)/2)`` edges exist.
    ``density`` and ``seed`` are ignored for the line and complete graphs.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if kind == "line":
        edges = {(i, i + 1) for i in range(n - 1)}
    elif kind == "complete":
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    elif kind == "random":
        if n == 1:
            return Graph(1, frozenset(), "random")
        min_density = 2.0 / n
        if density < min_density - _DENSITY_SLACK or density > 1.0 + _DENSITY_SLACK:
            raise InfeasibleDensityError(
                f"density {density} outside [{min_density:.4g}, 1] for n={n}"
            )
        target = min(max(edge_count_for_density(n, density), n - 1), n * (n - 1) // 2)
        rng = np.random.default_rng(seed)
        edges = _random_tree(n, rng)
        rest = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in edges]
        extra = target - len(edges)
        if extra > 0:
            pick = rng.choice(len(rest), size=extra, replace=False)
            edges |= {rest[k] for k in sorted(pick)}
    else:
        raise InvalidArgumentError(f"unknown graph kind {kind!r}; expected one of {GRAPH_KINDS}")
    g = Graph(n, frozenset(edges), kind)
    assert g.is_connected()
    return g


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Symmetric doubly stochastic weights on a connected graph.

    ``rho`` and ``sigma`` are the largest and second-smallest eigenvalues of
    ``I - w``; ``kappa_g = rho / sigma``. For a single node all three are
    degenerate (``rho = sigma = 0``, ``kappa_g = 1``).
    """

    w: np.ndarray
    graph: Graph
    rho: float
    sigma: float
    kappa_g: float
    # per node: indices of the closed neighborhood and the matching weights
    nbr_index: tuple[np.ndarray, ...] = field(repr=False)
    nbr_weight: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def d_tilde(self) -> np.ndarray:
        """``1 / (1 - W_ii)`` per node; 0 for an isolated node (its u is always 0)."""
        diag = np.diag(self.w)
        out = np.zeros_like(diag)
        mask = diag < 1.0
        out[mask] = 1.0 / (1.0 - diag[mask])
        return out

    def laplacian(self) -> np.ndarray:
        """``I - W`` (dense, n x n)."""
        return np.eye(self.n) - self.w


def _spectrum(w: np.ndarray) -> tuple[float, float, float]:
    n = w.shape[0]
    if n == 1:
        return 0.0, 0.0, 1.0
    eig = np.linalg.eigvalsh(np.eye(n) - w)
    rho, sigma = float(eig[-1]), float(eig[1])
    if sigma <= 1e-12:
        raise DisconnectedGraphError(f"second-smallest eigenvalue of I-W is {sigma:.3e}")
    return rho, sigma, rho / sigma


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis constant edge weights: ``1/(max(deg i, deg j) + 1)`` per edge."""
    if not g.is_connected():
        raise DisconnectedGraphError("Metropolis weights need a connected graph")
    n = g.n
    deg = g.degrees()
    w = np.zeros((n, n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (max(deg[i], deg[j]) + 1)
    for i in range(n):
        w[i, i] = 1.0 - (w[i].sum() - w[i, i])
    rho, sigma, kappa_g = _spectrum(w)
    adj = g.neighbors()
    index = tuple(np.array(sorted(adj[i] + [i]), dtype=int) for i in range(n))
    weight = tuple(w[i, index[i]].copy() for i in range(n))
    return MixingMatrix(w, g, rho, sigma, kappa_g, index, weight)


def spectral_stats(m: MixingMatrix) -> tuple[float, float, float]:
    """Return ``(rho, sigma, kappa_g)`` recomputed from the weights."""
    if m.n == 1:
        raise DisconnectedGraphError("spectral gap undefined for a single node")
    return _spectrum(m.w)


@dataclass
class RoundCounter:
    """Cumulative communication tally.

    One round moves one value per edge; ``*_entries`` accumulate
    ``|E| * dimension`` per round.
    """

    vector_rounds: int = 0
    scalar_rounds: int = 0
    vector_entries: int = 0
    scalar_entries: int = 0

    @property
    def rounds(self) -> int:
        return self.vector_rounds + self.scalar_rounds

    def snapshot(self) -> tuple[int, int, int, int]:
        return (self.vector_rounds, self.scalar_rounds, self.vector_entries, self.scalar_entries)


def neighbor_exchange(values, m: MixingMatrix, counter: RoundCounter | None) -> np.ndarray:
    """One synchronous round: node ``i`` receives ``sum_j W_ij v_j`` over its closed neighborhood.

    ``values`` is an ``(n, q)`` array (or a length-n sequence of q-vectors, or a
    length-n vector of scalars). Node ``i`` only ever reads the rows of its
    neighbors. With ``counter=None`` nothing is tallied.
    """
    arr, flat = _as_node_rows(values, m.n)
    q = arr.shape[1]
    out = np.empty_like(arr)
    for i in range(m.n):
        out[i] = m.nbr_weight[i] @ arr[m.nbr_index[i]]
    if counter is not None:
        entries = m.graph.num_edges * q
        if q > 1:
            counter.vector_rounds += 1
            counter.vector_entries += entries
        else:
            counter.scalar_rounds += 1
            counter.scalar_entries += entries
    return out[:, 0] if flat else out


def _as_node_rows(values, n: int) -> tuple[np.ndarray, bool]:
    if isinstance(values, np.ndarray):
        arr = values.astype(float, copy=False)
        flat = arr.ndim == 1
    else:
        rows = [np.asarray(v, dtype=float) for v in values]
        shapes = {r.shape for r in rows}
        if len(shapes) > 1:
            raise DimensionMismatchError(f"per-node vectors have differing shapes {sorted(shapes)}")
        flat = shapes == {()}
        arr = np.array(rows, dtype=float) if rows else np.empty((0,))
    if flat:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != n or arr.shape[1] < 1:
        raise DimensionMismatchError(f"expected one row per node ({n}), got shape {arr.shape}")
    return arr, flat


def write_edge_list(g: Graph, fh: TextIO) -> None:
    fh.write(f"n {g.n}\n")
    for i, j in sorted(g.edges):
        fh.write(f"{i} {j}\n")


def read_edge_list(fh: TextIO | Iterable[str]) -> Graph:
    lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("n "):
        raise InvalidArgumentError("edge list must start with 'n <count>'")
    n = int(lines[0].split()[1])
    edges = set()
    for ln in lines[1:]:
        i, j = (int(t) for t in ln.split())
        if i == j:
            raise InvalidArgumentError(f"self-loop on node {i}")
        edges.add(_edge(i, j))
    kind = "random"
    if edges == {(i, i + 1) for i in range(n - 1)}:
        kind = "line"
    elif len(edges) == n * (n - 1) // 2:
        kind = "complete"
    return Graph(n, frozenset(edges), kind)
