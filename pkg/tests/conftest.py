import numpy as np
import pytest

from leoroute import constellation as cst


def ring_adjacency(n):
    adj = np.zeros((n, n))
    for i in range(n):
        adj[i, (i + 1) % n] = 1.0
        adj[(i + 1) % n, i] = 1.0
    return adj


def path_adjacency(n):
    adj = np.zeros((n, n))
    for i in range(n - 1):
        adj[i, i + 1] = 1.0
        adj[i + 1, i] = 1.0
    return adj


def random_adjacency(rng, n, p=0.3):
    adj = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                adj[i, j] = adj[j, i] = 1.0
    return adj


def random_connected_adjacency(rng, n, extra_p=0.2):
    """Random spanning tree plus extra random edges."""
    adj = np.zeros((n, n))
    order = rng.permutation(n)
    for k in range(1, n):
        j = order[k]
        i = order[int(rng.integers(k))]
        adj[i, j] = adj[j, i] = 1.0
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i, j] == 0 and rng.random() < extra_p:
                adj[i, j] = adj[j, i] = 1.0
    return adj


def dyadic_delays(rng, adj):
    """Link delays that are exact binary fractions, so float sums are exact."""
    delays = {}
    for i in range(adj.shape[0]):
        for j in range(i + 1, adj.shape[0]):
            if adj[i, j]:
                delays[(i, j)] = float(rng.integers(1, 512)) / 1024.0
    return delays


def fig_1b_adjacency():
    """Five-node example: source 0 with neighbors 1, 2, 3; only 2 adjoins the
    destination 4; 1 and 3 reach it in two hops (via 2)."""
    adj = np.zeros((5, 5))
    for i, j in [(0, 1), (0, 2), (0, 3), (2, 4), (1, 2), (3, 2)]:
        adj[i, j] = adj[j, i] = 1.0
    return adj


def small_constellation(planes=3, sats=4, comm_range=6000.0):
    return cst.ConstellationConfig(
        num_planes=planes,
        sats_per_plane=sats,
        altitude_km=1050.0,
        inclination_deg=53.0,
        phase_factor=1 if planes > 1 else 0,
        comm_range_km=comm_range,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)
