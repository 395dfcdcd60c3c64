"""Smart meters, poles and the scenario they live in."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import link
from .params import PlanConfig, load_config
from .spatial import SpatialIndex

SMART_METER = "sm"
POLE = "pole"
EARTH_RADIUS_M = 6_371_008.8

CSV_HEADER = ["id", "kind", "x", "y", "height", "indoor"]

# SMs per km^2 of the four reference test areas
DENSITY_PRESETS = {"rural": 23.5, "suburban": 155.2, "suburban_dense": 513.9, "urban": 958.3}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    x: float
    y: float
    height: float
    indoor: bool = False

    def __post_init__(self):
        if self.kind not in (SMART_METER, POLE):
            raise ScenarioError(f"node {self.id}: unknown kind {self.kind!r}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ScenarioError(f"node {self.id}: non-finite coordinate")
        if not self.height > 0:
            raise ScenarioError(f"node {self.id}: height must be > 0")

    @property
    def position(self):
        return (self.x, self.y)

    @property
    def is_sm(self) -> bool:
        return self.kind == SMART_METER


@dataclass(frozen=True, eq=False)
class Scenario:
    nodes: tuple
    config: PlanConfig = field(default_factory=PlanConfig)
    per_curve: link.PerCurve | None = None
    origin: tuple | None = None  # (lat0, lon0) when loaded from lat/lon

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate node ids")
        if any(n.is_sm for n in self.nodes) and not any(not n.is_sm for n in self.nodes):
            raise ScenarioError("scenario has smart meters but no poles")
        if self.per_curve is None:
            object.__setattr__(self, "per_curve", link.PerCurve(self.config.radio.coding_gain_db))

    # views -----------------------------------------------------------------
    @property
    def radio(self):
        return self.config.radio

    @property
    def mac(self):
        return self.config.mac

    @property
    def traffic(self):
        return self.config.traffic

    @property
    def rho(self) -> float:
        return self.config.rho

    @cached_property
    def sms(self) -> tuple:
        return tuple(n for n in self.nodes if n.is_sm)

    @cached_property
    def poles(self) -> tuple:
        return tuple(n for n in self.nodes if not n.is_sm)

    @cached_property
    def sm_xy(self) -> np.ndarray:
        return np.array([n.position for n in self.sms], dtype=float).reshape(-1, 2)

    @cached_property
    def pole_xy(self) -> np.ndarray:
        return np.array([n.position for n in self.poles], dtype=float).reshape(-1, 2)

    @cached_property
    def sm_index(self) -> SpatialIndex:
        return SpatialIndex(self.sm_xy, [n.id for n in self.sms])

    @cached_property
    def pole_index(self) -> SpatialIndex:
        return SpatialIndex(self.pole_xy, [n.id for n in self.poles])

    @cached_property
    def d_smax(self) -> float:
        if self.config.d_smax is not None:
            return float(self.config.d_smax)
        c = self.config
        return link.max_range(c.radio, self.per_curve, c.per_ceiling, c.sm_height, c.sm_height, c.max_packet_size)

    @cached_property
    def d_pmax(self) -> float:
        if self.config.d_pmax is not None:
            return float(self.config.d_pmax)
        c = self.config
        # uplink geometry: the meter transmits, the pole-mounted DAP receives
        return link.max_range(c.radio, self.per_curve, c.per_ceiling, c.sm_height, c.dap_height, c.max_packet_size)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for n in self.nodes:
            w.writerow([n.id, n.kind, _num(n.x), _num(n.y), _num(n.height), "true" if n.indoor else "false"])
        return buf.getvalue()

    def with_config(self, config: PlanConfig) -> "Scenario":
        return Scenario(self.nodes, config, None if self.per_curve.table is None else self.per_curve, self.origin)


def _num(v: float) -> str:
    r = round(float(v), 3)
    return repr(r + 0.0)


def _parse_bool(raw: str, where: str) -> bool:
    s = raw.strip().lower()
    if s in ("", "0", "false", "no", "n"):
        return False
    if s in ("1", "true", "yes", "y"):
        return True
    raise ScenarioError(f"{where}: bad indoor flag {raw!r}")


def parse_nodes(text: str, config: PlanConfig, source: str = "<nodes>", latlon: bool = False):
    """Parse node CSV text; returns (nodes, origin)."""
    # '#' lines (e.g. the provenance line written by the CLI) are skipped
    numbered = [(k, ln) for k, ln in enumerate(text.splitlines(), 1) if not ln.lstrip().startswith("#")]
    if not numbered:
        raise ScenarioError(f"{source}:1: empty node file")
    rows_in = list(csv.reader(ln for _, ln in numbered))
    header = [h.strip().lower() for h in rows_in[0]]
    if header != CSV_HEADER:
        raise ScenarioError(f"{source}:{numbered[0][0]}: header must be {','.join(CSV_HEADER)}")
    rows = []
    seen = {}
    for (lineno, _), row in zip(numbered[1:], rows_in[1:]):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{source}:{lineno}"
        if len(row) != len(CSV_HEADER):
            raise ScenarioError(f"{where}: expected {len(CSV_HEADER)} columns, got {len(row)}")
        try:
            nid = int(row[0])
        except ValueError:
            raise ScenarioError(f"{where}: bad id {row[0]!r}") from None
        if nid in seen:
            raise ScenarioError(f"{where}: duplicate id {nid} (first seen on line {seen[nid]})")
        seen[nid] = lineno
        kind = row[1].strip().lower()
        if kind not in (SMART_METER, POLE):
            raise ScenarioError(f"{where}: unknown kind {row[1]!r}")
        try:
            x, y = float(row[2]), float(row[3])
        except ValueError:
            raise ScenarioError(f"{where}: bad coordinate") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ScenarioError(f"{where}: non-finite coordinate")
        if row[4].strip():
            try:
                h = float(row[4])
            except ValueError:
                raise ScenarioError(f"{where}: bad height {row[4]!r}") from None
        else:
            h = config.sm_height if kind == SMART_METER else config.dap_height
        if not (h > 0 and math.isfinite(h)):
            raise ScenarioError(f"{where}: height must be > 0")
        rows.append((nid, kind, x, y, h, _parse_bool(row[5], where)))

    origin = None
    if latlon and rows:
        # x column holds longitude, y latitude
        lat = np.array([r[3] for r in rows])
        lon = np.array([r[2] for r in rows])
        origin = (float(lat.mean()), float(lon.mean()))
        px, py = project(lat, lon, origin)
        rows = [(r[0], r[1], float(a), float(b), r[4], r[5]) for r, a, b in zip(rows, px, py)]
    return [Node(*r) for r in rows], origin


def load_scenario(node_file, config_file=None, latlon: bool | None = None, per_curve_file=None) -> Scenario:
    config = load_config(config_file) if config_file else PlanConfig()
    if latlon is None:
        latlon = config.coordinates == "latlon"
    with open(node_file, newline="") as fh:
        nodes, origin = parse_nodes(fh.read(), config, str(node_file), latlon)
    curve = link.PerCurve.from_csv(per_curve_file) if per_curve_file else None
    return Scenario(tuple(nodes), config, curve, origin)


# projection ------------------------------------------------------------------

def project(lat, lon, origin):
    """Equirectangular projection about ``origin`` = (lat0, lon0), degrees -> m."""
    lat0, lon0 = origin
    x = EARTH_RADIUS_M * np.radians(np.asarray(lon, dtype=float) - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * np.radians(np.asarray(lat, dtype=float) - lat0)
    return x, y


def unproject(x, y, origin):
    lat0, lon0 = origin
    lat = lat0 + np.degrees(np.asarray(y, dtype=float) / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(np.asarray(x, dtype=float) / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


# synthetic generation --------------------------------------------------------

_PROFILES = {
    # roads per km of side, meter offset from road (m), mean houses per cluster
    "rural": dict(roads=2.0, offset=35.0, cluster=2.0, grid=False),
    "suburban": dict(roads=4.0, offset=25.0, cluster=3.0, grid=False),
    "urban": dict(roads=7.0, offset=12.0, cluster=4.0, grid=True),
}


def _polyline(rng, side: float, horizontal: bool, n_pts: int = 6, wobble: float = 0.08):
    t = np.linspace(0.0, side, n_pts)
    c = rng.uniform(0.1 * side, 0.9 * side)
    drift = np.cumsum(rng.normal(0.0, wobble * side / n_pts, n_pts))
    other = np.clip(c + drift - drift.mean(), 0.0, side)
    return np.column_stack([t, other]) if horizontal else np.column_stack([other, t])


def _grid_roads(rng, side: float, per_axis: int):
    roads = []
    for horizontal in (True, False):
        for k in range(per_axis):
            c = (k + 0.5) * side / per_axis + rng.normal(0.0, 0.03 * side / per_axis)
            c = float(np.clip(c, 0.0, side))
            pts = np.array([[0.0, c], [side, c]]) if horizontal else np.array([[c, 0.0], [c, side]])
            roads.append(pts)
    return roads


def _sample_on_roads(rng, roads, n: int, jitter: float = 0.0):
    """Points at random arc-length positions plus the unit normals there."""
    seg_a = np.concatenate([r[:-1] for r in roads])
    seg_b = np.concatenate([r[1:] for r in roads])
    lengths = np.linalg.norm(seg_b - seg_a, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = np.sort(rng.uniform(0.0, cum[-1], n)) if jitter == 0 else None
    if s is None:
        # evenly spaced along the network with relative jitter
        step = cum[-1] / n
        s = (np.arange(n) + 0.5) * step + rng.uniform(-jitter, jitter, n) * step
        s = np.clip(s, 0.0, cum[-1] - 1e-9)
    k = np.searchsorted(cum, s, side="right") - 1
    k = np.clip(k, 0, len(lengths) - 1)
    frac = (s - cum[k]) / np.where(lengths[k] > 0, lengths[k], 1.0)
    pts = seg_a[k] + (seg_b[k] - seg_a[k]) * frac[:, None]
    d = (seg_b[k] - seg_a[k]) / np.where(lengths[k] > 0, lengths[k], 1.0)[:, None]
    normals = np.column_stack([-d[:, 1], d[:, 0]])
    return pts, normals


def generate_synthetic(n_sm: int, n_poles: int, area_km2: float, profile: str = "suburban", seed: int = 0,
                       config: PlanConfig | None = None) -> Scenario:
    """Seeded scenario with poles along road polylines and meters clustered near roads."""
    if n_sm < 1 or n_poles < 1:
        raise ScenarioError("need at least one smart meter and one pole")
    if not area_km2 > 0:
        raise ScenarioError("area must be > 0")
    base = profile.split("_")[0]
    if base not in _PROFILES:
        raise ScenarioError(f"unknown profile {profile!r}")
    prof = _PROFILES[base]
    config = config or PlanConfig()
    rng = np.random.default_rng(seed)
    side = math.sqrt(area_km2) * 1000.0

    n_roads = max(1, int(round(prof["roads"] * side / 1000.0)))
    if prof["grid"]:
        roads = _grid_roads(rng, side, max(1, (n_roads + 1) // 2))
    else:
        roads = [_polyline(rng, side, bool(k % 2 == 0)) for k in range(n_roads)]

    pole_pts, pole_n = _sample_on_roads(rng, roads, n_poles, jitter=0.3)
    pole_pts = pole_pts + pole_n * rng.normal(0.0, 3.0, (n_poles, 1))

    n_clusters = max(1, int(round(n_sm / prof["cluster"])))
    centers, normals = _sample_on_roads(rng, roads, n_clusters)
    side_sign = rng.choice([-1.0, 1.0], n_clusters)
    offsets = np.abs(rng.normal(prof["offset"], 0.4 * prof["offset"], n_clusters)) + 5.0
    centers = centers + normals * (side_sign * offsets)[:, None]
    which = np.sort(rng.integers(0, n_clusters, n_sm))
    which[: min(n_clusters, n_sm)] = np.arange(min(n_clusters, n_sm))
    which.sort()
    sm_pts = centers[which] + rng.normal(0.0, 6.0, (n_sm, 2))

    pole_pts = np.clip(pole_pts, 0.0, side)
    sm_pts = np.clip(sm_pts, 0.0, side)
    nodes = [Node(i, SMART_METER, round(float(x), 3), round(float(y), 3), config.sm_height) for i, (x, y) in enumerate(sm_pts)]
    nodes += [Node(n_sm + j, POLE, round(float(x), 3), round(float(y), 3), config.dap_height) for j, (x, y) in enumerate(pole_pts)]
    return Scenario(tuple(nodes), config)
