"""Packet-level experiment engine with per-link interruptions.

Every packet gets one (snapshot, source, destination, interruption draw)
instance that all selected algorithms face identically, so comparisons are
paired. Interruption draws use per-packet uniform variates keyed only by the
seed and packet index: running the same seed at a higher interruption
probability fails a superset of links (common random numbers).
"""
import csv
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import constellation as cst
from . import gnn, routing
from .util import substream

__all__ = [
    "ALGORITHMS",
    "ExperimentConfig",
    "Metrics",
    "apply_interruptions",
    "hop_delay",
    "run_experiment",
    "write_results_csv",
    "CSV_COLUMNS",
]

ALGORITHMS = ("GLR", "TBR", "TSR", "CGR")

DEFAULT_PACKET_SIZE_BITS = 8000.0
DEFAULT_TX_RATE_BPS = 100000.0


@dataclass
class ExperimentConfig:
    constellation: cst.ConstellationConfig
    snapshot_times: list
    interruption_prob: float = 0.0
    packets: int = 1000
    packet_size_bits: float = DEFAULT_PACKET_SIZE_BITS
    tx_rate_bps: float = DEFAULT_TX_RATE_BPS
    algorithms: tuple = ("TBR", "TSR", "CGR")
    model_path: str | None = None
    seed: int = 0
    isl_policy: str = "grid"

    def __post_init__(self):
        if not 0.0 <= self.interruption_prob <= 1.0:
            raise ValueError(f"interruption_prob must be in [0, 1], got {self.interruption_prob}")
        if self.tx_rate_bps <= 0:
            raise ValueError(f"tx_rate_bps must be > 0, got {self.tx_rate_bps}")
        if self.packets < 0:
            raise ValueError(f"packets must be >= 0, got {self.packets}")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}; expected subset of {ALGORITHMS}")
        if not self.snapshot_times:
            raise ValueError("snapshot_times must not be empty")


@dataclass
class Metrics:
    """Per-algorithm aggregate of one experiment."""

    algorithm: str
    packets: int
    delivered: int
    dropped: int
    mean_delay_s: float | None
    mean_hops: float | None
    total_compute_s: float
    median_decision_s: float | None
    median_packet_compute_s: float | None
    total_decisions: int
    outcomes: dict = field(default_factory=dict)

    @property
    def drop_rate(self) -> float:
        return self.dropped / self.packets if self.packets else 0.0

    @property
    def mean_decisions_per_packet(self) -> float | None:
        return self.total_decisions / self.packets if self.packets else None


def hop_delay(link_delay_s: float, packet_size_bits: float = DEFAULT_PACKET_SIZE_BITS,
              tx_rate_bps: float = DEFAULT_TX_RATE_BPS) -> float:
    """Per-hop delay: link propagation plus transmission time."""
    if tx_rate_bps <= 0:
        raise ValueError(f"tx_rate_bps must be > 0, got {tx_rate_bps}")
    return link_delay_s + packet_size_bits / tx_rate_bps


def apply_interruptions(planned: cst.TopologySnapshot, p: float, rng) -> routing.ActualTopology:
    """Fail each planned link independently with probability p.

    One uniform variate is drawn per link in link order, so for a fixed rng
    state the failed set at probability p1 is a subset of the failed set at
    any p2 > p1.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"interruption probability must be in [0, 1], got {p}")
    draws = rng.random(len(planned.links))
    failed = frozenset(link for link, u in zip(planned.links, draws) if u < p)
    return routing.ActualTopology(planned=planned, failed_links=failed)


def _route_packet(config, planned, params, packet_index):
    """Route one packet with every selected algorithm on an identical instance."""
    rng = substream(config.seed, f"packet:{packet_index}")
    snap_idx = int(rng.integers(len(config.snapshot_times)))  # advances the stream
    s, d = (int(x) for x in rng.choice(planned[snap_idx].node_count, size=2, replace=False))
    actual = apply_interruptions(planned[snap_idx], config.interruption_prob, rng)
    tx = config.packet_size_bits / config.tx_rate_bps
    results = {}
    for algo in config.algorithms:
        if algo == "GLR":
            res = routing.route_glr(params, actual, s, d, transmission_delay_s=tx)
        elif algo == "TBR":
            res = routing.route_tbr(actual, s, d, transmission_delay_s=tx)
        elif algo == "TSR":
            res = routing.route_tsr(planned[snap_idx], actual, s, d, transmission_delay_s=tx)
        else:
            res = routing.route_cgr(planned[snap_idx], actual, s, d, transmission_delay_s=tx)
        results[algo] = (res.outcome, res.hop_count, res.total_delay_s, res.decision_times_s)
    return results


def _route_packet_range(args):
    config, planned, params, indices = args
    return [_route_packet(config, planned, params, k) for k in indices]


def build_planned_snapshots(config: ExperimentConfig) -> list:
    planned = []
    for t in config.snapshot_times:
        states = cst.propagate(None, config.constellation, t)
        planned.append(cst.snapshot(states, config.constellation, t, config.isl_policy))
    return planned


def run_experiment(config: ExperimentConfig, params: gnn.ModelParameters | None = None,
                   jobs: int = 1) -> dict:
    """Run the experiment and return {algorithm: Metrics}.

    Routing and drop outcomes are fully deterministic under the seed; compute
    timings are measured on the executing worker and naturally vary. The
    trained model is taken from `params` or loaded from config.model_path.
    """
    if "GLR" in config.algorithms and params is None:
        if config.model_path is None:
            raise ValueError("GLR selected but no model: set model_path or pass params")
        params = gnn.load_params(config.model_path)

    planned = build_planned_snapshots(config)
    indices = list(range(config.packets))
    if jobs > 1 and config.packets > 1:
        chunk = max(1, (len(indices) + jobs - 1) // jobs)
        batches = [(config, planned, params, indices[i:i + chunk])
                   for i in range(0, len(indices), chunk)]
        records = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(_route_packet_range, batches):
                records.extend(out)
    else:
        records = [_route_packet(config, planned, params, k) for k in indices]

    metrics = {}
    for algo in config.algorithms:
        delivered = dropped = 0
        delays, hops, decision_times, packet_compute = [], [], [], []
        outcomes = {}
        for rec in records:
            outcome, hop_count, delay_s, dec_times = rec[algo]
            outcomes[outcome] = outcomes.get(outcome, 0) + 1
            if outcome == routing.DELIVERED:
                delivered += 1
                delays.append(delay_s)
                hops.append(hop_count)
            else:
                dropped += 1
            decision_times.extend(dec_times)
            packet_compute.append(sum(dec_times))
        metrics[algo] = Metrics(
            algorithm=algo,
            packets=config.packets,
            delivered=delivered,
            dropped=dropped,
            mean_delay_s=statistics.fmean(delays) if delays else None,
            mean_hops=statistics.fmean(hops) if hops else None,
            total_compute_s=sum(packet_compute),
            median_decision_s=statistics.median(decision_times) if decision_times else None,
            median_packet_compute_s=statistics.median(packet_compute) if packet_compute else None,
            total_decisions=len(decision_times),
            outcomes=outcomes,
        )
    return metrics


CSV_COLUMNS = [
    "algorithm",
    "scale",
    "p",
    "packets",
    "delivered",
    "dropped",
    "drop_rate",
    "mean_delay_s",
    "mean_hops",
    "median_decision_s",
    "median_packet_compute_s",
    "total_compute_s",
    "decisions_per_packet",
]


def metrics_csv_row(m: Metrics, scale: int, p: float) -> dict:
    def fmt(x):
        return "" if x is None else repr(float(x))

    return {
        "algorithm": m.algorithm,
        "scale": scale,
        "p": repr(float(p)),
        "packets": m.packets,
        "delivered": m.delivered,
        "dropped": m.dropped,
        "drop_rate": repr(m.drop_rate),
        "mean_delay_s": fmt(m.mean_delay_s),
        "mean_hops": fmt(m.mean_hops),
        "median_decision_s": fmt(m.median_decision_s),
        "median_packet_compute_s": fmt(m.median_packet_compute_s),
        "total_compute_s": fmt(m.total_compute_s),
        "decisions_per_packet": fmt(m.mean_decisions_per_packet),
    }


def write_results_csv(rows: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
