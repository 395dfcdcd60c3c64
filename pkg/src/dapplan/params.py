"""Radio, MAC and traffic parameter bundles plus the flat config format.

Config files are ``key = value`` lines; ``#`` starts a comment.  Keys:

    rho, per_ceiling, d_smax, d_pmax, sm_height, dap_height, coordinates
    radio.<field>        any RadioParams field
    mac.<field>          any MacParams field (backoff_windows is a comma list)
    traffic.classes      comma list selecting/ordering traffic classes
    traffic.<NAME>.<field>   category, packet_size, interval_s, latency_s, arrival

Unknown keys are rejected.  Environment variables ``DAPPLAN_<KEY>`` (dots
replaced by double underscores, case-insensitive) override file values.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field

MC = "MC"
NC = "NC"
CATEGORIES = (NC, MC)

DETERMINISTIC = "deterministic"
POISSON = "poisson"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficClass:
    name: str
    category: str
    packet_size: int  # bytes
    interval_s: float  # mean inter-arrival time
    latency_s: float  # required latency L
    arrival: str = POISSON

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigError(f"traffic class {self.name}: category must be MC or NC")
        if self.arrival not in (DETERMINISTIC, POISSON):
            raise ConfigError(f"traffic class {self.name}: arrival must be deterministic or poisson")
        if not self.latency_s > 0:
            raise ConfigError(f"traffic class {self.name}: latency must be > 0")
        if not self.interval_s > 0:
            raise ConfigError(f"traffic class {self.name}: interval must be > 0")
        if self.packet_size <= 0:
            raise ConfigError(f"traffic class {self.name}: packet size must be > 0")

    @property
    def rate(self) -> float:
        """Packets per second generated by one meter."""
        return 1.0 / self.interval_s


MINUTE = 60.0
DAY = 86400.0

# Smart-grid traffic mix (OpenSG): six classes, three per category.
DEFAULT_TRAFFIC = (
    TrafficClass("MR", NC, 250, 15 * MINUTE, 5.0, DETERMINISTIC),
    TrafficClass("OD_REQ", NC, 50, 5 * DAY, 30.0, POISSON),
    TrafficClass("OD_RESP", NC, 250, 5 * DAY, 30.0, POISSON),
    TrafficClass("PQ", MC, 100, 5 * MINUTE, 1.0, POISSON),
    TrafficClass("RC", MC, 100, 1 * DAY, 1.0, POISSON),
    TrafficClass("ALERT", MC, 50, 7 * DAY, 3.0, POISSON),
)


@dataclass(frozen=True)
class RadioParams:
    tx_power_dbm: float = 10 * math.log10(30.0)  # 30 mW
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 7.0
    bandwidth_hz: float = 281e3
    interference_margin_db: float = 6.0
    fading_margin_db: float = 12.3
    penetration_loss_db: float = 10.0
    carrier_freq_hz: float = 900e6
    mcs: str = "qpsk-3/4"
    coding_gain_db: float = 4.0
    path_loss_model: str = "erceg_b"
    path_loss_exponent: float = 3.5  # log-distance model only

    def __post_init__(self):
        for name in ("interference_margin_db", "fading_margin_db", "penetration_loss_db", "noise_figure_db"):
            if getattr(self, name) < 0:
                raise ConfigError(f"radio.{name} must be >= 0")
        if not self.bandwidth_hz > 0:
            raise ConfigError("radio.bandwidth_hz must be > 0")
        if not self.carrier_freq_hz > 0:
            raise ConfigError("radio.carrier_freq_hz must be > 0")
        if self.path_loss_model not in ("erceg_b", "log_distance"):
            raise ConfigError("radio.path_loss_model must be erceg_b or log_distance")


def _default_windows(max_stage: int = 4) -> tuple:
    return tuple(2 ** min(3 + m, 5) for m in range(max_stage + 1))


@dataclass(frozen=True)
class MacParams:
    frame_duration_s: float = 0.16
    cfp_slots: int = 6
    cap_slots: int = 10
    max_retries: int = 4  # N_ARQ, transmission attempts per hop
    max_backoff_stage: int = 4  # M
    backoff_windows: tuple = field(default_factory=_default_windows)
    dap_capacity_pps: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "backoff_windows", tuple(int(w) for w in self.backoff_windows))
        if self.cfp_slots < 1 or self.cap_slots < 1:
            raise ConfigError("mac.cfp_slots and mac.cap_slots must be >= 1")
        if self.max_retries < 1:
            raise ConfigError("mac.max_retries must be >= 1")
        if self.max_backoff_stage < 0:
            raise ConfigError("mac.max_backoff_stage must be >= 0")
        w = self.backoff_windows
        if len(w) != self.max_backoff_stage + 1:
            raise ConfigError("mac.backoff_windows needs max_backoff_stage + 1 entries")
        if any(x < 1 for x in w) or any(b < a for a, b in zip(w, w[1:])):
            raise ConfigError("mac.backoff_windows must be >= 1 and non-decreasing")
        if not self.frame_duration_s > 0:
            raise ConfigError("mac.frame_duration_s must be > 0")
        if not self.dap_capacity_pps > 0:
            raise ConfigError("mac.dap_capacity_pps must be > 0")

    @property
    def slots_per_frame(self) -> int:
        return self.cap_slots + self.cfp_slots

    @property
    def slot_s(self) -> float:
        return self.frame_duration_s / self.slots_per_frame

    def class_slots(self, category: str) -> int:
        return self.cfp_slots if category == MC else self.cap_slots


@dataclass(frozen=True)
class PlanConfig:
    """Everything a scenario needs besides the node list."""

    radio: RadioParams = field(default_factory=RadioParams)
    mac: MacParams = field(default_factory=MacParams)
    traffic: tuple = DEFAULT_TRAFFIC
    rho: float = 0.9
    per_ceiling: float = 0.3
    d_smax: float | None = None
    d_pmax: float | None = None
    sm_height: float = 2.0
    dap_height: float = 10.0
    coordinates: str = "planar"

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (0, 1)")
        if not 0.0 < self.per_ceiling < 1.0:
            raise ConfigError("per_ceiling must lie in (0, 1)")
        if self.sm_height <= 0 or self.dap_height <= 0:
            raise ConfigError("heights must be > 0")
        if self.coordinates not in ("planar", "latlon"):
            raise ConfigError("coordinates must be planar or latlon")
        if not self.traffic:
            raise ConfigError("at least one traffic class is required")
        max_bytes = max(t.packet_size for t in self.traffic)
        # one slot must carry the largest packet
        capacity = self.radio.bandwidth_hz * self.mac.slot_s / 8.0
        if max_bytes > capacity:
            raise ConfigError(f"packet of {max_bytes} B does not fit one {self.mac.slot_s * 1e3:.1f} ms slot")

    def classes(self, category: str) -> list:
        return [t for t in self.traffic if t.category == category]

    def rate(self, category: str) -> float:
        """Per-meter packet generation rate (1/s) of one category."""
        return sum(t.rate for t in self.classes(category))

    def min_latency(self, category: str) -> float:
        return min(t.latency_s for t in self.classes(category))

    @property
    def max_packet_size(self) -> int:
        return max(t.packet_size for t in self.traffic)

    def to_items(self) -> list:
        """Flat (key, value) pairs; inverse of :func:`parse_config`."""
        items = [
            ("rho", self.rho),
            ("per_ceiling", self.per_ceiling),
            ("sm_height", self.sm_height),
            ("dap_height", self.dap_height),
            ("coordinates", self.coordinates),
        ]
        if self.d_smax is not None:
            items.append(("d_smax", self.d_smax))
        if self.d_pmax is not None:
            items.append(("d_pmax", self.d_pmax))
        for f in dataclasses.fields(RadioParams):
            items.append((f"radio.{f.name}", getattr(self.radio, f.name)))
        for f in dataclasses.fields(MacParams):
            v = getattr(self.mac, f.name)
            if f.name == "backoff_windows":
                v = ",".join(str(x) for x in v)
            items.append((f"mac.{f.name}", v))
        items.append(("traffic.classes", ",".join(t.name for t in self.traffic)))
        for t in self.traffic:
            for f in dataclasses.fields(TrafficClass):
                if f.name != "name":
                    items.append((f"traffic.{t.name}.{f.name}", getattr(t, f.name)))
        return items

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_items())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TOP_KEYS = {
    "rho": float,
    "per_ceiling": float,
    "d_smax": float,
    "d_pmax": float,
    "sm_height": float,
    "dap_height": float,
    "coordinates": str,
}
_TRAFFIC_FIELDS = {
    "category": lambda s: s.strip().upper(),
    "packet_size": int,
    "interval_s": float,
    "latency_s": float,
    "arrival": lambda s: s.strip().lower(),
}


def _field_types(cls) -> dict:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls)}


def _convert(kind, raw: str, key: str, where: str):
    try:
        if kind is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes")
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: bad value {raw!r} for {key}") from None


def parse_config(text: str, source: str = "<config>", env: dict | None = None) -> PlanConfig:
    """Parse flat key-value text into a :class:`PlanConfig`.

    ``env`` defaults to ``os.environ``; pass ``{}`` to ignore overrides.
    """
    raw: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key.lower()] = value
        lines[key.lower()] = lineno
    env = os.environ if env is None else env
    for name, value in env.items():
        if name.upper().startswith("DAPPLAN_") and name.upper() != "DAPPLAN_DISABLE_NUMBA":
            key = name[len("DAPPLAN_"):].lower().replace("__", ".")
            raw[key] = value
            lines[key] = 0
    return _build(raw, lines, source)


def _build(raw: dict, lines: dict, source: str) -> PlanConfig:
    radio_types = _field_types(RadioParams)
    mac_types = _field_types(MacParams)
    top, radio, mac = {}, {}, {}
    traffic_fields: dict = {}
    selected = None

    for key, value in raw.items():
        where = f"{source}:{lines[key]}" if lines[key] else f"environment DAPPLAN_{key.upper()}"
        if key in _TOP_KEYS:
            top[key] = _convert(_TOP_KEYS[key], value, key, where)
        elif key.startswith("radio.") and key[6:] in radio_types:
            radio[key[6:]] = _convert(radio_types[key[6:]], value, key, where)
        elif key.startswith("mac.") and key[4:] in mac_types:
            mac[key[4:]] = _convert(mac_types[key[4:]], value, key, where)
        elif key == "traffic.classes":
            selected = [s.strip().upper() for s in value.split(",") if s.strip()]
        elif key.startswith("traffic.") and key.count(".") == 2:
            _, name, fname = key.split(".")
            if fname not in _TRAFFIC_FIELDS:
                raise ConfigError(f"{where}: unknown key {key!r}")
            try:
                traffic_fields.setdefault(name.upper(), {})[fname] = _TRAFFIC_FIELDS[fname](value)
            except ValueError:
                raise ConfigError(f"{where}: bad value {value!r} for {key}") from None
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")

    if "max_backoff_stage" in mac and "backoff_windows" not in mac:
        mac["backoff_windows"] = _default_windows(mac["max_backoff_stage"])

    by_name = {t.name: t for t in DEFAULT_TRAFFIC}
    for name, fields in traffic_fields.items():
        if name in by_name:
            by_name[name] = dataclasses.replace(by_name[name], **fields)
        else:
            missing = set(_TRAFFIC_FIELDS) - set(fields) - {"arrival"}
            if missing:
                raise ConfigError(f"{source}: traffic class {name} is missing {sorted(missing)}")
            by_name[name] = TrafficClass(name=name, **fields)
    if selected is None:
        selected = [t.name for t in DEFAULT_TRAFFIC] + [n for n in traffic_fields if n not in {t.name for t in DEFAULT_TRAFFIC}]
    unknown = [n for n in selected if n not in by_name]
    if unknown:
        raise ConfigError(f"{source}: traffic.classes names unknown classes {unknown}")

    return PlanConfig(
        radio=RadioParams(**radio),
        mac=MacParams(**mac),
        traffic=tuple(by_name[n] for n in selected),
        **top,
    )


def load_config(path) -> PlanConfig:
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))
