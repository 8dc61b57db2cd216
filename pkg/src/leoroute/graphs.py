"""Graph data model: adjacency, convolution normalization, structural features.

Adjacency matrices are plain float64 numpy arrays with {0, 1} entries; the
helpers here validate them, build the symmetric degree-normalized operator
used by the convolution layers, and assemble the per-node input features.
"""
from dataclasses import dataclass

import numpy as np

from .constellation import TopologySnapshot

__all__ = [
    "NodeFeatures",
    "F_LOW",
    "F_HIGH",
    "check_adjacency",
    "adjacency",
    "normalize",
    "proximity_code",
    "build_features",
]

F_LOW = 2
F_HIGH = 4


@dataclass(frozen=True)
class NodeFeatures:
    """Model inputs for one (snapshot, destination) pair.

    low_order columns: destination indicator, degree / max degree.
    high_order: the low_order columns with two destination-relative structure
    scalars spliced on: the proximity code (1 for one-hop neighbors of the
    destination, 0.5 for two-hop, 0 otherwise) and the node's count of
    two-step paths to the destination normalized by the maximum degree.
    """

    destination: int
    low_order: np.ndarray
    high_order: np.ndarray

    @property
    def n(self) -> int:
        return self.low_order.shape[0]


def check_adjacency(adj: np.ndarray) -> np.ndarray:
    """Validate an adjacency matrix: square, symmetric, binary, zero diagonal."""
    adj = np.asarray(adj, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    if not np.all((adj == 0) | (adj == 1)):
        raise ValueError("adjacency entries must be 0 or 1")
    return adj


def adjacency(snap: TopologySnapshot) -> np.ndarray:
    """Binary adjacency of a topology snapshot."""
    n = snap.node_count
    adj = np.zeros((n, n))
    for i, j in snap.links:
        adj[i, j] = 1.0
        adj[j, i] = 1.0
    return adj


def normalize(adj: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization with self-loops.

    Returns D^(-1/2) (A + I) D^(-1/2) where D is the degree diagonal of A + I;
    an isolated node keeps degree 1 from its self-loop.
    """
    adj = check_adjacency(adj)
    a_tilde = adj + np.eye(adj.shape[0])
    inv_sqrt_deg = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * np.outer(inv_sqrt_deg, inv_sqrt_deg)


def _hop_counts_from(adj: np.ndarray, dest: int) -> np.ndarray:
    """BFS hop counts from dest; -1 marks unreachable nodes."""
    n = adj.shape[0]
    hops = np.full(n, -1, dtype=int)
    hops[dest] = 0
    frontier = [dest]
    depth = 0
    while frontier:
        depth += 1
        nxt = []
        for u in frontier:
            for v in np.nonzero(adj[u])[0]:
                if hops[v] < 0:
                    hops[v] = depth
                    nxt.append(int(v))
        frontier = nxt
    return hops


def proximity_code(adj: np.ndarray, dest: int) -> np.ndarray:
    """Destination-proximity encoding: 1 at one-hop neighbors of dest, 0.5 at
    two-hop neighbors, 0 elsewhere (including dest itself)."""
    adj = check_adjacency(adj)
    if not 0 <= dest < adj.shape[0]:
        raise ValueError(f"destination {dest} out of range for n={adj.shape[0]}")
    hops = _hop_counts_from(adj, dest)
    code = np.zeros(adj.shape[0])
    code[hops == 1] = 1.0
    code[hops == 2] = 0.5
    return code


def build_features(adj: np.ndarray, dest: int) -> NodeFeatures:
    """Assemble low- and high-order node features for one destination.

    The high-order rows are the low-order rows with the structural pair
    spliced on; all four columns lie in [0, 1] and are independent of the
    node count, so model weights transfer across constellation scales.
    """
    adj = check_adjacency(adj)
    n = adj.shape[0]
    if not 0 <= dest < n:
        raise ValueError(f"destination {dest} out of range for n={n}")
    degrees = adj.sum(axis=1)
    max_degree = max(degrees.max(), 1.0)
    indicator = np.zeros(n)
    indicator[dest] = 1.0
    low = np.column_stack([indicator, degrees / max_degree])

    code = proximity_code(adj, dest)
    # two-step path multiplicity toward the destination: |N(i) ∩ N(dest)|
    two_paths = adj @ adj[:, dest]
    two_paths[dest] = 0.0
    high = np.column_stack([low, code, two_paths / max_degree])
    return NodeFeatures(destination=dest, low_order=low, high_order=high)
