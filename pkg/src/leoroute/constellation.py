"""Walker constellation generation and inter-satellite-link topology snapshots.

Circular orbits only: satellites are placed on evenly spaced planes with a
configurable inter-plane phase offset, propagated analytically, and linked
into a topology snapshot whenever range and line-of-sight permit.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .util import SPEED_OF_LIGHT_KM_S

__all__ = [
    "ConfigError",
    "ConstellationConfig",
    "SatelliteState",
    "TopologySnapshot",
    "build_walker",
    "propagate",
    "inter_sat_distance",
    "line_of_sight",
    "snapshot",
    "parse_config_text",
    "read_config_file",
    "config_from_mapping",
    "snapshot_to_json",
    "snapshot_from_json",
]

EARTH_RADIUS_KM = 6371.0
MU_KM3_S2 = 398600.4418
ISL_POLICIES = ("grid", "range")


class ConfigError(ValueError):
    """Raised when a constellation configuration violates a bound."""


@dataclass(frozen=True)
class ConstellationConfig:
    """Walker-style constellation parameters (circular orbits)."""

    num_planes: int
    sats_per_plane: int
    altitude_km: float
    inclination_deg: float
    phase_factor: int
    comm_range_km: float
    eccentricity: float = 0.0
    earth_radius_km: float = EARTH_RADIUS_KM
    mu_km3_s2: float = MU_KM3_S2
    epoch_s: float = 0.0

    def __post_init__(self):
        if self.num_planes < 1:
            raise ConfigError(f"num_planes must be >= 1, got {self.num_planes}")
        if self.sats_per_plane < 1:
            raise ConfigError(f"sats_per_plane must be >= 1, got {self.sats_per_plane}")
        if self.altitude_km <= 0:
            raise ConfigError(f"altitude_km must be > 0, got {self.altitude_km}")
        if self.comm_range_km <= 0:
            raise ConfigError(f"comm_range_km must be > 0, got {self.comm_range_km}")
        if not 0 <= self.phase_factor < self.num_planes:
            raise ConfigError(
                f"phase_factor must satisfy 0 <= F < num_planes, got "
                f"F={self.phase_factor} with num_planes={self.num_planes}"
            )
        if self.eccentricity != 0.0:
            raise ConfigError(
                f"only circular orbits supported (eccentricity 0), got {self.eccentricity}"
            )

    @property
    def num_satellites(self) -> int:
        return self.num_planes * self.sats_per_plane

    @property
    def semi_major_axis_km(self) -> float:
        return self.earth_radius_km + self.altitude_km

    @property
    def orbital_period_s(self) -> float:
        a = self.semi_major_axis_km
        return 2.0 * math.pi * math.sqrt(a**3 / self.mu_km3_s2)


@dataclass(frozen=True)
class SatelliteState:
    """A satellite's identity and Earth-centered inertial position (km)."""

    sat_id: int
    plane_index: int
    slot_index: int
    position: np.ndarray


@dataclass(frozen=True)
class TopologySnapshot:
    """The constellation graph frozen at one instant.

    Links are unordered node pairs stored as sorted (i, j) tuples; each link
    carries its propagation delay in seconds as the only feature.
    """

    time_s: float
    node_count: int
    links: tuple
    link_delays: dict
    isolated: tuple = ()
    _neighbor_map: dict = field(default=None, repr=False, compare=False)

    def neighbors(self, node: int) -> tuple:
        if self._neighbor_map is None:
            nbrs = {i: [] for i in range(self.node_count)}
            for i, j in self.links:
                nbrs[i].append(j)
                nbrs[j].append(i)
            object.__setattr__(
                self, "_neighbor_map", {k: tuple(sorted(v)) for k, v in nbrs.items()}
            )
        return self._neighbor_map[node]

    def delay(self, i: int, j: int) -> float:
        return self.link_delays[(min(i, j), max(i, j))]

    def has_link(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.link_delays


def _make_snapshot(time_s, node_count, delays):
    links = tuple(sorted(delays))
    linked = set()
    for i, j in links:
        linked.add(i)
        linked.add(j)
    isolated = tuple(i for i in range(node_count) if i not in linked)
    return TopologySnapshot(
        time_s=time_s,
        node_count=node_count,
        links=links,
        link_delays=dict(sorted(delays.items())),
        isolated=isolated,
    )


def _position(a_km, raan_deg, incl_deg, arg_lat_deg) -> np.ndarray:
    """ECI position for a circular orbit: in-plane angle, inclination, RAAN."""
    u = math.radians(arg_lat_deg)
    inc = math.radians(incl_deg)
    raan = math.radians(raan_deg)
    x_orb = a_km * math.cos(u)
    y_orb = a_km * math.sin(u)
    # rotate about x by inclination, then about z by RAAN
    y_inc = y_orb * math.cos(inc)
    z_inc = y_orb * math.sin(inc)
    x = x_orb * math.cos(raan) - y_inc * math.sin(raan)
    y = x_orb * math.sin(raan) + y_inc * math.cos(raan)
    return np.array([x, y, z_inc])


def _arg_lat_deg(config: ConstellationConfig, plane: int, slot: int, t: float) -> float:
    base = slot * (360.0 / config.sats_per_plane) + plane * config.phase_factor * (
        360.0 / (config.num_planes * config.sats_per_plane)
    )
    return base + 360.0 * t / config.orbital_period_s


def build_walker(config: ConstellationConfig) -> list[SatelliteState]:
    """Generate all satellites of the constellation at the epoch (t = 0).

    Plane p has RAAN p * (360 / num_planes); slot s in plane p sits at
    argument of latitude s * (360 / sats_per_plane) plus the Walker phase
    offset p * F * (360 / (num_planes * sats_per_plane)).
    """
    return propagate(None, config, 0.0)


def propagate(states, config: ConstellationConfig, t: float) -> list[SatelliteState]:
    """Positions at time t seconds past the epoch (two-body circular motion).

    The argument of latitude of every satellite advances by 360 * t / T where
    T is the orbital period; positions are recomputed analytically, so `states`
    is accepted for interface symmetry but only the config determines output.
    """
    if t < 0:
        raise ValueError(f"propagation time must be >= 0, got {t}")
    a = config.semi_major_axis_km
    out = []
    sat_id = 0
    for p in range(config.num_planes):
        raan = p * (360.0 / config.num_planes)
        for s in range(config.sats_per_plane):
            pos = _position(a, raan, config.inclination_deg, _arg_lat_deg(config, p, s, t))
            out.append(SatelliteState(sat_id=sat_id, plane_index=p, slot_index=s, position=pos))
            sat_id += 1
    return out


def inter_sat_distance(a: SatelliteState, b: SatelliteState) -> float:
    """Euclidean distance between two satellites, km."""
    return float(np.linalg.norm(a.position - b.position))


def line_of_sight(a: SatelliteState, b: SatelliteState, earth_radius_km: float = EARTH_RADIUS_KM) -> bool:
    """True iff the straight segment between the satellites clears the Earth.

    The segment is blocked when its closest point to the Earth's center lies
    strictly inside the sphere of radius `earth_radius_km`; closest points
    beyond either endpoint cannot block because satellites orbit above the
    surface.
    """
    p = a.position
    d = b.position - p
    dd = float(d @ d)
    if dd == 0.0:
        return float(np.linalg.norm(p)) > earth_radius_km
    t = -float(p @ d) / dd
    if t <= 0.0 or t >= 1.0:
        return True
    closest = p + t * d
    return float(np.linalg.norm(closest)) > earth_radius_km


def _grid_candidates(states, config) -> set:
    """Neighbor proposals for the grid policy: intra-plane ring neighbors plus
    the nearest satellite in each adjacent plane."""
    P, S = config.num_planes, config.sats_per_plane
    by_plane = {}
    for st in states:
        by_plane.setdefault(st.plane_index, []).append(st)
    for plane in by_plane.values():
        plane.sort(key=lambda st: st.slot_index)
    proposals = set()
    for st in states:
        p, s = st.plane_index, st.slot_index
        if S >= 2:
            for ds in (-1, 1):
                other = by_plane[p][(s + ds) % S]
                if other.sat_id != st.sat_id:
                    proposals.add((min(st.sat_id, other.sat_id), max(st.sat_id, other.sat_id)))
        if P >= 2:
            for dp in (-1, 1):
                q = (p + dp) % P
                if q == p:
                    continue
                nearest = min(
                    by_plane[q],
                    key=lambda o: (inter_sat_distance(st, o), o.slot_index),
                )
                proposals.add((min(st.sat_id, nearest.sat_id), max(st.sat_id, nearest.sat_id)))
    return proposals


def snapshot(states, config: ConstellationConfig, t: float, isl_policy: str = "grid") -> TopologySnapshot:
    """Derive the link topology at time t from propagated satellite states.

    Policies:
      grid  -- each satellite proposes its two intra-plane ring neighbors and
               its nearest satellite in each adjacent plane; proposals that
               violate comm range or line of sight are discarded.
      range -- every pair within comm range with line of sight is linked.

    Nodes left without any link are permitted and recorded in `isolated`.
    """
    if isl_policy not in ISL_POLICIES:
        raise ValueError(f"unknown isl_policy {isl_policy!r}, expected one of {ISL_POLICIES}")
    states = sorted(states, key=lambda st: st.sat_id)
    n = len(states)
    if isl_policy == "grid":
        candidates = _grid_candidates(states, config)
    else:
        candidates = {(i, j) for i in range(n) for j in range(i + 1, n)}
    delays = {}
    for i, j in candidates:
        dist = inter_sat_distance(states[i], states[j])
        if dist > config.comm_range_km:
            continue
        if not line_of_sight(states[i], states[j], config.earth_radius_km):
            continue
        delays[(i, j)] = dist / SPEED_OF_LIGHT_KM_S
    return _make_snapshot(t, n, delays)


# --- configuration files and snapshot JSON ---------------------------------

_CONFIG_FIELDS = {
    "num_planes": int,
    "sats_per_plane": int,
    "altitude_km": float,
    "inclination_deg": float,
    "phase_factor": int,
    "comm_range_km": float,
    "eccentricity": float,
    "earth_radius_km": float,
    "mu_km3_s2": float,
    "epoch_s": float,
}

_EXTRA_FIELDS = {
    "isl_policy": str,
    "snapshot_start_s": float,
    "snapshot_cadence_s": float,
    "snapshot_count": int,
}


def parse_config_text(text: str) -> dict:
    """Parse the plain-text key/value configuration format.

    One `key = value` pair per line; blank lines and lines starting with `#`
    are ignored; inline `# ...` comments are stripped.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _CONFIG_FIELDS:
            caster = _CONFIG_FIELDS[key]
        elif key in _EXTRA_FIELDS:
            caster = _EXTRA_FIELDS[key]
        else:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        try:
            values[key] = caster(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    return values


def config_from_mapping(values: dict) -> tuple[ConstellationConfig, dict]:
    """Split parsed key/values into a ConstellationConfig and extras.

    Extras carry snapshot scheduling and the ISL policy:
    isl_policy (default "grid"), snapshot_start_s (0), snapshot_cadence_s (60),
    snapshot_count (1).
    """
    cfg_kwargs = {k: v for k, v in values.items() if k in _CONFIG_FIELDS}
    missing = [k for k in ("num_planes", "sats_per_plane", "altitude_km",
                           "inclination_deg", "phase_factor", "comm_range_km")
               if k not in cfg_kwargs]
    if missing:
        raise ConfigError(f"missing required configuration keys: {', '.join(missing)}")
    extras = {
        "isl_policy": values.get("isl_policy", "grid"),
        "snapshot_start_s": values.get("snapshot_start_s", 0.0),
        "snapshot_cadence_s": values.get("snapshot_cadence_s", 60.0),
        "snapshot_count": values.get("snapshot_count", 1),
    }
    if extras["isl_policy"] not in ISL_POLICIES:
        raise ConfigError(
            f"isl_policy must be one of {ISL_POLICIES}, got {extras['isl_policy']!r}"
        )
    return ConstellationConfig(**cfg_kwargs), extras


def read_config_file(path) -> tuple[ConstellationConfig, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_mapping(parse_config_text(fh.read()))


def snapshot_to_json(snap: TopologySnapshot) -> str:
    """Documented JSON form: {"time", "n", "links": [[i, j, delay_s], ...]}."""
    doc = {
        "time": snap.time_s,
        "n": snap.node_count,
        "links": [[i, j, snap.link_delays[(i, j)]] for i, j in snap.links],
        "isolated": list(snap.isolated),
    }
    return json.dumps(doc, sort_keys=True)


def snapshot_from_json(text: str) -> TopologySnapshot:
    doc = json.loads(text)
    delays = {(int(i), int(j)): float(d) for i, j, d in doc["links"]}
    return _make_snapshot(float(doc["time"]), int(doc["n"]), delays)
