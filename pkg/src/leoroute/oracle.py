"""Exact shortest-path computations and labeled-dataset construction.

Provides the BFS hop-count labeler, a deterministic Dijkstra, a brute-force
path enumerator used as the reference oracle, and the dataset builder that
pairs snapshots with sampled destinations.
"""
import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import constellation as cst
from . import graphs
from .util import substream

__all__ = [
    "UNREACHABLE",
    "HOPS",
    "DELAY",
    "DistanceField",
    "TrainingSample",
    "Dataset",
    "DatasetFormatError",
    "hop_distances",
    "dijkstra",
    "brute_force_shortest",
    "build_dataset",
    "save_dataset",
    "load_dataset",
]

UNREACHABLE = math.inf
HOPS = "hops"
DELAY = "delay"

DATASET_FORMAT = "leoroute.dataset"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be decoded."""


@dataclass(frozen=True)
class DistanceField:
    """Per-node hop counts to one destination, exact or model-predicted.

    Exact fields use math.inf for unreachable nodes; predicted fields hold
    whatever the model emitted.
    """

    destination: int
    values: np.ndarray
    source: str  # "exact" or "predicted"

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def reachable(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass(frozen=True)
class TrainingSample:
    """One (snapshot, destination) instance: inputs, labels and loss mask."""

    ahat: np.ndarray
    features: graphs.NodeFeatures
    labels: np.ndarray
    mask: np.ndarray

    @property
    def n(self) -> int:
        return self.labels.shape[0]


@dataclass
class Dataset:
    samples: list
    train_indices: list
    val_indices: list
    provenance: dict = field(default_factory=dict)


def _neighbor_lists(adj: np.ndarray) -> list:
    return [np.nonzero(adj[u])[0].tolist() for u in range(adj.shape[0])]


def hop_distances(adj: np.ndarray, dest: int) -> DistanceField:
    """Exact BFS hop counts from every node to dest."""
    adj = graphs.check_adjacency(adj)
    n = adj.shape[0]
    if not 0 <= dest < n:
        raise ValueError(f"destination {dest} out of range for n={n}")
    values = np.full(n, UNREACHABLE)
    values[dest] = 0.0
    frontier = [dest]
    depth = 0.0
    while frontier:
        depth += 1.0
        nxt = []
        for u in frontier:
            for v in np.nonzero(adj[u])[0]:
                if not np.isfinite(values[v]):
                    values[v] = depth
                    nxt.append(int(v))
        frontier = nxt
    return DistanceField(destination=dest, values=values, source="exact")


def _edge_cost(metric, delays, i, j):
    d = delays.get((min(i, j), max(i, j)), 0.0) if delays else 0.0
    if metric == HOPS:
        return 1, d
    return d, 1


def _optimal_costs(neighbors, delays, dest, n, metric):
    """Dijkstra from dest with additive lexicographic (primary, secondary) costs."""
    best = [None] * n
    zero = (0, 0.0) if metric == HOPS else (0.0, 0)
    best[dest] = zero
    done = [False] * n
    heap = [(zero[0], zero[1], dest)]
    while heap:
        c1, c2, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in neighbors[u]:
            w1, w2 = _edge_cost(metric, delays, u, v)
            cand = (c1 + w1, c2 + w2)
            if best[v] is None or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, (cand[0], cand[1], v))
    return best


def dijkstra(adj: np.ndarray, link_delays, s: int, d: int, metric: str = HOPS):
    """Deterministic minimum-metric simple path from s to d, or None.

    Optimal paths are tie-broken by cumulative delay (for the hop metric) and
    then by lexicographically smallest node sequence, matching
    brute_force_shortest exactly; link_delays maps sorted (i, j) pairs to
    seconds and may be None.
    """
    adj = graphs.check_adjacency(adj)
    n = adj.shape[0]
    if not (0 <= s < n and 0 <= d < n):
        raise ValueError(f"s={s}, d={d} out of range for n={n}")
    if metric not in (HOPS, DELAY):
        raise ValueError(f"metric must be {HOPS!r} or {DELAY!r}, got {metric!r}")
    if s == d:
        return [s]
    neighbors = _neighbor_lists(adj)
    best = _optimal_costs(neighbors, link_delays, d, n, metric)
    if best[s] is None:
        return None
    # walk the cost field greedily, taking the smallest node id that stays optimal
    path = [s]
    u = s
    while u != d:
        chosen = None
        for v in neighbors[u]:
            w1, w2 = _edge_cost(metric, link_delays, u, v)
            if best[v] is not None and (best[v][0] + w1, best[v][1] + w2) == best[u]:
                chosen = v
                break  # neighbors are sorted ascending
        if chosen is None:  # float round-off trap; cannot occur for hop metric
            return None
        path.append(chosen)
        u = chosen
    return path


def brute_force_shortest(adj: np.ndarray, s: int, d: int, max_hops: int, link_delays=None):
    """Exhaustive minimum-hop path search over all simple paths up to max_hops.

    Ties are broken by minimum cumulative delay, then by lexicographically
    smallest node sequence. Exponential; intended as a reference oracle on
    small graphs.
    """
    adj = graphs.check_adjacency(adj)
    n = adj.shape[0]
    if not (0 <= s < n and 0 <= d < n):
        raise ValueError(f"s={s}, d={d} out of range for n={n}")
    if s == d:
        return [s]
    neighbors = _neighbor_lists(adj)
    best = None

    def key(path, delay):
        return (len(path) - 1, delay, tuple(path))

    def visit(path, on_path, delay):
        nonlocal best
        u = path[-1]
        if u == d:
            k = key(path, delay)
            if best is None or k < best[0]:
                best = (k, list(path))
            return
        if len(path) - 1 >= max_hops:
            return
        for v in neighbors[u]:
            if v in on_path:
                continue
            w = link_delays.get((min(u, v), max(u, v)), 0.0) if link_delays else 0.0
            path.append(v)
            on_path.add(v)
            visit(path, on_path, delay + w)
            on_path.discard(v)
            path.pop()

    visit([s], {s}, 0.0)
    return best[1] if best else None


def build_dataset(
    config: cst.ConstellationConfig,
    snapshot_times,
    destinations_per_snapshot: int = 16,
    seed: int = 0,
    isl_policy: str = "grid",
    val_fraction: float = 0.1,
) -> Dataset:
    """Labeled samples for every (snapshot, sampled destination) pair.

    Labels are exact BFS hop counts; unreachable nodes get mask 0 and label 0
    so they never contribute to the loss. The train/validation split is by
    whole snapshot so no topology leaks across the split. Fully deterministic
    under the seed.
    """
    snapshot_times = list(snapshot_times)
    if not snapshot_times:
        raise ValueError("at least one snapshot time is required")
    samples = []
    origins = []
    sample_snapshots = []
    skipped = 0
    used_snapshot_ids = []
    for k, t in enumerate(snapshot_times):
        states = cst.propagate(None, config, t)
        snap = cst.snapshot(states, config, t, isl_policy)
        if not snap.links:
            skipped += 1
            continue
        adj = graphs.adjacency(snap)
        ahat = graphs.normalize(adj)
        rng = substream(seed, f"dataset:destinations:{k}")
        count = min(destinations_per_snapshot, snap.node_count)
        dests = rng.choice(snap.node_count, size=count, replace=False)
        for dest in sorted(int(x) for x in dests):
            fld = hop_distances(adj, dest)
            mask = fld.reachable().astype(float)
            labels = np.where(np.isfinite(fld.values), fld.values, 0.0)
            samples.append(
                TrainingSample(
                    ahat=ahat,
                    features=graphs.build_features(adj, dest),
                    labels=labels,
                    mask=mask,
                )
            )
            origins.append((k, dest))
            sample_snapshots.append(k)
        used_snapshot_ids.append(k)

    order = substream(seed, "dataset:split").permutation(len(used_snapshot_ids))
    n_val = int(round(val_fraction * len(used_snapshot_ids)))
    val_snapshots = {used_snapshot_ids[i] for i in order[:n_val]}
    train_indices = [i for i, k in enumerate(sample_snapshots) if k not in val_snapshots]
    val_indices = [i for i, k in enumerate(sample_snapshots) if k in val_snapshots]

    provenance = {
        "constellation": {
            "num_planes": config.num_planes,
            "sats_per_plane": config.sats_per_plane,
            "altitude_km": config.altitude_km,
            "inclination_deg": config.inclination_deg,
            "phase_factor": config.phase_factor,
            "comm_range_km": config.comm_range_km,
            "eccentricity": config.eccentricity,
            "earth_radius_km": config.earth_radius_km,
            "mu_km3_s2": config.mu_km3_s2,
            "epoch_s": config.epoch_s,
        },
        "snapshot_times": [float(t) for t in snapshot_times],
        "destinations_per_snapshot": destinations_per_snapshot,
        "seed": seed,
        "isl_policy": isl_policy,
        "val_fraction": val_fraction,
        "skipped_snapshots": skipped,
        "origins": [[k, dest] for k, dest in origins],
    }
    return Dataset(
        samples=samples,
        train_indices=train_indices,
        val_indices=val_indices,
        provenance=provenance,
    )


# --- persistence ------------------------------------------------------------
# Layout: one JSON header line terminated by '\n', then for each sample in
# order the dense arrays ahat (n*n), low (n*F_LOW), high (n*F_HIGH), labels
# (n) and mask (n), all float64 little-endian row-major.


def _write_array(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh, shape):
    count = int(np.prod(shape))
    raw = fh.read(count * 8)
    if len(raw) != count * 8:
        raise DatasetFormatError("truncated file: expected more array data")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_dataset(ds: Dataset, path) -> None:
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "f_low": graphs.F_LOW,
        "f_high": graphs.F_HIGH,
        "sample_count": len(ds.samples),
        "ns": [s.n for s in ds.samples],
        "destinations": [s.features.destination for s in ds.samples],
        "train_indices": list(ds.train_indices),
        "val_indices": list(ds.val_indices),
        "provenance": ds.provenance,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for s in ds.samples:
            _write_array(fh, s.ahat)
            _write_array(fh, s.features.low_order)
            _write_array(fh, s.features.high_order)
            _write_array(fh, s.labels)
            _write_array(fh, s.mask)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DatasetFormatError(f"bad dataset header: {exc}") from exc
        if header.get("format") != DATASET_FORMAT:
            raise DatasetFormatError(f"not a dataset file: format={header.get('format')!r}")
        if header.get("version") != DATASET_VERSION:
            raise DatasetFormatError(
                f"unsupported dataset version: expected {DATASET_VERSION}, "
                f"found {header.get('version')}"
            )
        samples = []
        for n, dest in zip(header["ns"], header["destinations"]):
            ahat = _read_array(fh, (n, n))
            low = _read_array(fh, (n, header["f_low"]))
            high = _read_array(fh, (n, header["f_high"]))
            labels = _read_array(fh, (n,))
            mask = _read_array(fh, (n,))
            samples.append(
                TrainingSample(
                    ahat=ahat,
                    features=graphs.NodeFeatures(
                        destination=int(dest), low_order=low, high_order=high
                    ),
                    labels=labels,
                    mask=mask,
                )
            )
    return Dataset(
        samples=samples,
        train_indices=list(header["train_indices"]),
        val_indices=list(header["val_indices"]),
        provenance=header.get("provenance", {}),
    )
