"""
Directed weight-balanced communication graphs.

Conventions: ``adjacency[i, j] > 0`` iff agent ``i`` receives from agent ``j``
(edge ``(j, i)``). The in-degree of ``i`` is the row sum, the out-degree the
column sum, and the Laplacian is ``diag(in-degree) - adjacency``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

BALANCE_TOL = 1e-12


class GraphError(ValueError):
    """Raised for malformed graphs or graphs violating connectivity/balance."""


@dataclass(frozen=True)
class NetworkGraph:
    """Weighted digraph over ``n_agents`` nodes.

    Construction checks the structural invariants (square, finite,
    nonnegative, zero diagonal). Balance and strong connectivity are
    checked separately so that invalid topologies can still be reported on.
    """

    adjacency: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise GraphError(f"adjacency must be a nonempty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise GraphError("adjacency has non-finite entries")
        if np.any(a < 0):
            raise GraphError("adjacency has negative weights")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency must have a zero diagonal (no self-loops)")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @property
    def in_degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def out_degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=0)

    def neighbors(self, i: int) -> list[int]:
        """In-neighbors of ``i``: the agents it receives messages from."""
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def validate(self) -> None:
        """Raise :class:`GraphError` unless the graph is balanced and strongly connected."""
        balanced, imbalance = check_weight_balanced(self)
        if not balanced:
            raise GraphError(f"graph is not weight-balanced (max |d_in - d_out| = {imbalance:.3e})")
        if not check_strongly_connected(self):
            raise GraphError("graph is not strongly connected")

    @classmethod
    def from_edges(cls, n: int, edges) -> "NetworkGraph":
        """Build from ``(j, i, w)`` triples, each meaning ``j -> i`` with weight ``w``."""
        a = np.zeros((n, n))
        for j, i, w in edges:
            j, i = int(j), int(i)
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({j}, {i}) out of range for n={n}")
            a[i, j] = float(w)
        return cls(a)

    def edges(self) -> list[tuple[int, int, float]]:
        rows, cols = np.nonzero(self.adjacency)
        return [(int(j), int(i), float(self.adjacency[i, j])) for i, j in zip(rows, cols)]


@dataclass(frozen=True)
class LaplacianPair:
    laplacian_small: np.ndarray
    laplacian_big: np.ndarray
    block_dim: int


@dataclass(frozen=True)
class ConsensusBasis:
    """Orthonormal basis ``R`` of the disagreement subspace (orthogonal to ``1_N (x) I_d``)."""

    r_matrix: np.ndarray
    n_agents: int
    block_dim: int
    ones: np.ndarray = field(repr=False)

    @property
    def transform(self) -> np.ndarray:
        """The square change of variables ``T = [R, 1/N]^T``."""
        return np.vstack([self.r_matrix.T, self.ones.T / self.n_agents])


def build_laplacian(graph: NetworkGraph, block_dim: int = 1) -> LaplacianPair:
    """
    Laplacian of ``graph`` and its Kronecker lift.

    Parameters
    ----------
    graph : NetworkGraph
        Communication graph.
    block_dim : int
        Dimension ``d`` of each agent's consensus variable.

    Returns
    -------
    LaplacianPair
        ``D_in - A`` and ``(D_in - A) kron I_d``.
    """
    if not isinstance(graph, NetworkGraph):
        graph = NetworkGraph(graph)
    if block_dim < 1:
        raise GraphError("block_dim must be positive")
    small = np.diag(graph.in_degree) - graph.adjacency
    big = np.kron(small, np.eye(block_dim))
    return LaplacianPair(small, big, block_dim)


def check_weight_balanced(graph: NetworkGraph) -> tuple[bool, float]:
    """Return ``(balanced, max_i |d_in_i - d_out_i|)``."""
    d_in, d_out = graph.in_degree, graph.out_degree
    imbalance = float(np.max(np.abs(d_in - d_out)))
    scale = 1.0 + float(max(d_in.max(), d_out.max()))
    return imbalance <= BALANCE_TOL * scale, imbalance


def check_strongly_connected(graph: NetworkGraph) -> bool:
    if graph.n_agents == 1:
        return True
    n_comp, _ = connected_components(graph.adjacency > 0, directed=True, connection="strong")
    return n_comp == 1


def metropolis_weights(mask: np.ndarray) -> np.ndarray:
    """Symmetric weights ``1 / (1 + max(deg_i, deg_j))`` on the edges of an undirected ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    deg = mask.sum(axis=1)
    w = 1.0 / (1.0 + np.maximum.outer(deg, deg))
    return np.where(mask, w, 0.0)


def generate_er_balanced(n_agents: int, edge_prob: float, seed: int, max_retries: int = 100) -> NetworkGraph:
    """
    Draw a connected Erdos-Renyi graph with symmetric Metropolis weights.

    Each unordered pair is kept with probability ``edge_prob``; draws that are
    not connected are discarded, up to ``max_retries`` attempts.
    """
    if n_agents < 2:
        raise GraphError("need at least 2 agents")
    if not 0.0 < edge_prob <= 1.0:
        raise GraphError(f"edge_prob must be in (0, 1], got {edge_prob}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        upper = np.triu(rng.random((n_agents, n_agents)) < edge_prob, k=1)
        mask = upper | upper.T
        graph = NetworkGraph(metropolis_weights(mask))
        if check_strongly_connected(graph):
            return graph
    raise GraphError(
        f"no connected ER draw in {max_retries} attempts (N={n_agents}, p={edge_prob}); increase edge_prob"
    )


def build_consensus_basis(n_agents: int, block_dim: int = 1) -> ConsensusBasis:
    """
    Deterministic orthonormal complement of the agreement direction.

    Uses the Householder reflector sending ``1_N / sqrt(N)`` to ``e_1``; its
    remaining columns span the disagreement subspace. The result is lifted by
    ``kron(., I_d)``.
    """
    if n_agents < 2:
        raise GraphError("consensus basis needs at least 2 agents")
    n = n_agents
    v = np.full(n, 1.0 / np.sqrt(n))
    v[0] -= 1.0
    house = np.eye(n) - 2.0 * np.outer(v, v) / (v @ v)
    r_small = house[:, 1:]
    eye_d = np.eye(block_dim)
    r = np.kron(r_small, eye_d)
    ones = np.kron(np.ones((n, 1)), eye_d)
    return ConsensusBasis(r, n, block_dim, ones)


def disagreement_matrix(graph: NetworkGraph, block_dim: int = 1, basis: ConsensusBasis | None = None) -> np.ndarray:
    """``R^T L R``: the consensus dynamics restricted to the disagreement subspace."""
    basis = basis or build_consensus_basis(graph.n_agents, block_dim)
    lap = build_laplacian(graph, block_dim).laplacian_big
    return basis.r_matrix.T @ lap @ basis.r_matrix


def hurwitz_margin(graph: NetworkGraph, block_dim: int = 1) -> float:
    """Smallest real part among the eigenvalues of ``R^T L R`` (positive iff ``-R^T L R`` is Hurwitz)."""
    return float(np.min(np.linalg.eigvals(disagreement_matrix(graph, block_dim)).real))


# I/O ----------------------------------------------------------------------

def read_adjacency_csv(path) -> NetworkGraph:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    return NetworkGraph(np.array(rows))


def write_adjacency_csv(graph: NetworkGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in graph.adjacency:
            writer.writerow([repr(float(v)) for v in row])


def read_graph_json(path) -> NetworkGraph:
    data = json.loads(Path(path).read_text())
    return NetworkGraph.from_edges(int(data["n"]), data["edges"])


def write_graph_json(graph: NetworkGraph, path) -> None:
    payload = {"n": graph.n_agents, "edges": [list(e) for e in graph.edges()]}
    Path(path).write_text(json.dumps(payload, indent=2))


def load_graph(path) -> NetworkGraph:
    """Read a graph from ``.csv`` (adjacency) or ``.json`` (edge list)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        return read_graph_json(path)
    if suffix == ".csv":
        return read_adjacency_csv(path)
    raise GraphError(f"unsupported graph file {path.name!r}: use .csv or .json")
