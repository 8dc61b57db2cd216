"""Routing algorithms over a snapshot with link interruptions.

Four strategies share uniform loop-avoidance (a visited set), TTL, and drop
semantics:

  GLR -- one model inference per packet produces a predicted hop-distance
         field on the surviving topology; the packet greedily follows the
         neighbor with the smallest predicted distance.
  TBR -- recomputes an exact shortest path on the surviving topology at every
         hop and takes its first edge.
  TSR -- computes one shortest path on the planned (pre-interruption)
         topology and follows it blindly; a failed link on the path drops
         the packet.
  CGR -- plans over a working copy of the planned link set, discovering
         failures hop by hop and re-planning around them.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from . import gnn, graphs, oracle
from .constellation import TopologySnapshot
from .oracle import DistanceField

__all__ = [
    "DELIVERED",
    "DROPPED_NO_NEXT_HOP",
    "DROPPED_TTL",
    "DROPPED_LINK_FAIL",
    "DEFAULT_TRANSMISSION_DELAY_S",
    "ActualTopology",
    "RouteResult",
    "glr_next_hop",
    "route_with_field",
    "route_glr",
    "route_tbr",
    "route_tsr",
    "route_cgr",
]

DELIVERED = "delivered"
DROPPED_NO_NEXT_HOP = "dropped_no_next_hop"
DROPPED_TTL = "dropped_ttl"
DROPPED_LINK_FAIL = "dropped_link_fail"

# 8000-bit packet at 100 kbit/s; see sim.hop_delay
DEFAULT_TRANSMISSION_DELAY_S = 0.08


@dataclass(frozen=True)
class ActualTopology:
    """Planned snapshot plus the subset of links actually interrupted."""

    planned: TopologySnapshot
    failed_links: frozenset
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        normalized = frozenset((min(i, j), max(i, j)) for i, j in self.failed_links)
        object.__setattr__(self, "failed_links", normalized)
        extra = normalized - set(self.planned.links)
        if extra:
            raise ValueError(f"failed links not in planned topology: {sorted(extra)}")

    @property
    def node_count(self) -> int:
        return self.planned.node_count

    def surviving_delays(self) -> dict:
        if "delays" not in self._cache:
            self._cache["delays"] = {
                link: d for link, d in self.planned.link_delays.items()
                if link not in self.failed_links
            }
        return self._cache["delays"]

    def surviving_adjacency(self) -> np.ndarray:
        if "adjacency" not in self._cache:
            n = self.planned.node_count
            adj = np.zeros((n, n))
            for i, j in self.surviving_delays():
                adj[i, j] = 1.0
                adj[j, i] = 1.0
            self._cache["adjacency"] = adj
        return self._cache["adjacency"]

    def neighbors(self, node: int) -> tuple:
        if "neighbors" not in self._cache:
            nbrs = {i: [] for i in range(self.planned.node_count)}
            for i, j in self.surviving_delays():
                nbrs[i].append(j)
                nbrs[j].append(i)
            self._cache["neighbors"] = {k: tuple(sorted(v)) for k, v in nbrs.items()}
        return self._cache["neighbors"][node]

    def delay(self, i: int, j: int) -> float:
        return self.surviving_delays()[(min(i, j), max(i, j))]

    def has_link(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.surviving_delays()


@dataclass(frozen=True)
class RouteResult:
    """Outcome of routing one packet: the realized node sequence plus
    delay and per-decision compute accounting."""

    path: tuple
    outcome: str
    total_delay_s: float
    decision_times_s: tuple = ()

    @property
    def hop_count(self) -> int:
        return len(self.path) - 1

    @property
    def delivered(self) -> bool:
        return self.outcome == DELIVERED

    @property
    def decision_time_s(self) -> float:
        return float(sum(self.decision_times_s))

    @property
    def decision_count(self) -> int:
        return len(self.decision_times_s)


def _check_endpoints(n, s, d):
    if not (0 <= s < n and 0 <= d < n):
        raise ValueError(f"s={s}, d={d} out of range for n={n}")


def glr_next_hop(fld: DistanceField, current: int, visited, actual: ActualTopology):
    """Surviving unvisited neighbor minimizing the predicted distance.

    Ties break on smaller link delay, then smaller node id; None means a dead
    end (the packet is dropped by the caller).
    """
    best = None
    best_key = None
    for v in actual.neighbors(current):
        if v in visited:
            continue
        key = (fld.values[v], actual.delay(current, v), v)
        if best_key is None or key < best_key:
            best, best_key = v, key
    return best


def route_with_field(fld: DistanceField, actual: ActualTopology, s: int, d: int,
                     ttl: int | None = None,
                     transmission_delay_s: float = DEFAULT_TRANSMISSION_DELAY_S,
                     decision_times_s: tuple = ()) -> RouteResult:
    """Greedy walk over a distance field (exact or predicted) toward d."""
    _check_endpoints(actual.node_count, s, d)
    if ttl is None:
        ttl = actual.node_count
    if s == d:
        return RouteResult((s,), DELIVERED, 0.0, decision_times_s)
    path = [s]
    visited = {s}
    total_delay = 0.0
    u = s
    for _ in range(ttl):
        v = glr_next_hop(fld, u, visited, actual)
        if v is None:
            return RouteResult(tuple(path), DROPPED_NO_NEXT_HOP, total_delay, decision_times_s)
        total_delay += actual.delay(u, v) + transmission_delay_s
        path.append(v)
        visited.add(v)
        u = v
        if u == d:
            return RouteResult(tuple(path), DELIVERED, total_delay, decision_times_s)
    return RouteResult(tuple(path), DROPPED_TTL, total_delay, decision_times_s)


def route_glr(params: gnn.ModelParameters, actual: ActualTopology, s: int, d: int,
              ttl: int | None = None,
              transmission_delay_s: float = DEFAULT_TRANSMISSION_DELAY_S) -> RouteResult:
    """Learned routing: one inference on the surviving topology, then a greedy
    walk down the predicted distance field (the field is destination-
    conditioned, so it is computed once and reused along the path)."""
    _check_endpoints(actual.node_count, s, d)
    if s == d:
        return RouteResult((s,), DELIVERED, 0.0, ())
    t0 = time.perf_counter()
    adj = actual.surviving_adjacency()
    features = graphs.build_features(adj, d)
    ahat = graphs.normalize(adj)
    values = gnn.predict_field(params, ahat, features)
    inference_s = time.perf_counter() - t0
    fld = DistanceField(destination=d, values=values, source="predicted")
    return route_with_field(fld, actual, s, d, ttl, transmission_delay_s,
                            decision_times_s=(inference_s,))


def route_tbr(actual: ActualTopology, s: int, d: int, ttl: int | None = None,
              transmission_delay_s: float = DEFAULT_TRANSMISSION_DELAY_S) -> RouteResult:
    """Per-hop recomputation: an exact minimum-hop path on the full surviving
    topology is recomputed at every hop and its first edge taken."""
    _check_endpoints(actual.node_count, s, d)
    if ttl is None:
        ttl = actual.node_count
    if s == d:
        return RouteResult((s,), DELIVERED, 0.0, ())
    adj = actual.surviving_adjacency()
    delays = actual.surviving_delays()
    path = [s]
    total_delay = 0.0
    decisions = []
    u = s
    for _ in range(ttl):
        t0 = time.perf_counter()
        sp = oracle.dijkstra(adj, delays, u, d, oracle.HOPS)
        decisions.append(time.perf_counter() - t0)
        if sp is None:
            return RouteResult(tuple(path), DROPPED_NO_NEXT_HOP, total_delay, tuple(decisions))
        v = sp[1]
        total_delay += actual.delay(u, v) + transmission_delay_s
        path.append(v)
        u = v
        if u == d:
            return RouteResult(tuple(path), DELIVERED, total_delay, tuple(decisions))
    return RouteResult(tuple(path), DROPPED_TTL, total_delay, tuple(decisions))


def route_tsr(planned: TopologySnapshot, actual: ActualTopology, s: int, d: int,
              transmission_delay_s: float = DEFAULT_TRANSMISSION_DELAY_S) -> RouteResult:
    """Source routing: one shortest path on the planned snapshot, encoded in
    the packet; the first interrupted link on the path drops the packet (no
    rerouting)."""
    _check_endpoints(planned.node_count, s, d)
    if s == d:
        return RouteResult((s,), DELIVERED, 0.0, ())
    adj = graphs.adjacency(planned)
    t0 = time.perf_counter()
    sp = oracle.dijkstra(adj, planned.link_delays, s, d, oracle.HOPS)
    decisions = (time.perf_counter() - t0,)
    if sp is None:
        return RouteResult((s,), DROPPED_NO_NEXT_HOP, 0.0, decisions)
    path = [s]
    total_delay = 0.0
    for u, v in zip(sp, sp[1:]):
        if (min(u, v), max(u, v)) in actual.failed_links:
            return RouteResult(tuple(path), DROPPED_LINK_FAIL, total_delay, decisions)
        total_delay += planned.delay(u, v) + transmission_delay_s
        path.append(v)
    return RouteResult(tuple(path), DELIVERED, total_delay, decisions)


def route_cgr(planned: TopologySnapshot, actual: ActualTopology, s: int, d: int,
              ttl: int | None = None,
              transmission_delay_s: float = DEFAULT_TRANSMISSION_DELAY_S) -> RouteResult:
    """Contact-plan routing with local failure discovery.

    Plans over a working copy of the planned link set; when the chosen next
    link turns out to be interrupted, it is removed from the working copy and
    the path is recomputed from the current node. Already-visited nodes are
    excluded from re-planning so the realized path never repeats a node.
    """
    _check_endpoints(planned.node_count, s, d)
    if ttl is None:
        ttl = planned.node_count
    if s == d:
        return RouteResult((s,), DELIVERED, 0.0, ())
    work_adj = graphs.adjacency(planned)
    work_delays = dict(planned.link_delays)
    path = [s]
    visited = {s}
    total_delay = 0.0
    decisions = []
    u = s
    hops = 0
    while hops < ttl:
        t0 = time.perf_counter()
        masked = work_adj.copy()
        for w in visited:
            if w != u:
                masked[w, :] = 0.0
                masked[:, w] = 0.0
        sp = oracle.dijkstra(masked, work_delays, u, d, oracle.HOPS)
        decisions.append(time.perf_counter() - t0)
        if sp is None:
            return RouteResult(tuple(path), DROPPED_NO_NEXT_HOP, total_delay, tuple(decisions))
        v = sp[1]
        link = (min(u, v), max(u, v))
        if link in actual.failed_links:
            # discovered interruption: drop it from the contact plan and re-plan
            work_adj[u, v] = work_adj[v, u] = 0.0
            work_delays.pop(link, None)
            continue
        total_delay += planned.delay(u, v) + transmission_delay_s
        path.append(v)
        visited.add(v)
        u = v
        hops += 1
        if u == d:
            return RouteResult(tuple(path), DELIVERED, total_delay, tuple(decisions))
    return RouteResult(tuple(path), DROPPED_TTL, total_delay, tuple(decisions))
