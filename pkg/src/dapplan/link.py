"""Link budget: path loss, SINR, packet error rate and Dijkstra link cost."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .params import RadioParams

C_LIGHT = 299_792_458.0
D0 = 100.0  # Erceg reference distance, m
ERCEG_B = (4.0, 0.0065, 17.1)


class RadioBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class LinkBudgetResult:
    distance: float
    path_loss: float
    sinr: float
    per: float
    cost: float


def free_space_loss(d, freq_hz: float):
    lam = C_LIGHT / freq_hz
    return 20.0 * np.log10(4.0 * math.pi * np.asarray(d, dtype=float) / lam)


def erceg_exponent(base_height: float) -> float:
    a, b, c = ERCEG_B
    return a - b * base_height + c / base_height


def erceg_corrections(freq_hz: float, rx_height: float) -> float:
    """SUI frequency and receive-height corrections (dB).

    Both terms are only applied inside their fitted range (f > 2 GHz,
    h_r > 2 m) and are zero otherwise.
    """
    df = 6.0 * math.log10(freq_hz / 2e9) if freq_hz > 2e9 else 0.0
    dh = -10.8 * math.log10(rx_height / 2.0) if rx_height > 2.0 else 0.0
    return df + dh


def path_loss(d, radio: RadioParams, tx_height: float = 2.0, rx_height: float = 2.0, model: str | None = None):
    """Path loss in dB; ``tx_height`` is used as the Erceg base height.

    Below the 100 m reference distance the loss is free-space (plus the
    same height/frequency corrections, so PL is continuous in ``d``).
    """
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be > 0")
    if tx_height <= 0 or rx_height <= 0:
        raise ValueError("heights must be > 0")
    model = model or radio.path_loss_model
    if model == "erceg_b":
        a0 = float(free_space_loss(D0, radio.carrier_freq_hz))
        gamma = erceg_exponent(tx_height)
        corr = erceg_corrections(radio.carrier_freq_hz, rx_height)
        far = a0 + 10.0 * gamma * np.log10(np.maximum(d, D0) / D0)
        near = free_space_loss(np.minimum(d, D0), radio.carrier_freq_hz)
        out = np.where(d >= D0, far, near) + corr
    elif model == "log_distance":
        a0 = float(free_space_loss(1.0, radio.carrier_freq_hz))
        out = np.where(d >= 1.0, a0 + 10.0 * radio.path_loss_exponent * np.log10(np.maximum(d, 1.0)), free_space_loss(d, radio.carrier_freq_hz))
    else:
        raise ValueError(f"unknown path loss model {model!r}")
    return out if out.ndim else float(out)


def noise_floor_dbm(radio: RadioParams) -> float:
    return radio.noise_psd_dbm_hz + radio.noise_figure_db + 10.0 * math.log10(radio.bandwidth_hz)


def sinr(d, radio: RadioParams, indoor=False, tx_height: float = 2.0, rx_height: float = 2.0):
    """SINR in dB with interference, fading and penetration as fixed margins."""
    pl = path_loss(d, radio, tx_height, rx_height)
    pen = np.where(np.asarray(indoor, dtype=bool), radio.penetration_loss_db, 0.0)
    out = (
        radio.tx_power_dbm
        - noise_floor_dbm(radio)
        - radio.interference_margin_db
        - pl
        - radio.fading_margin_db
        - pen
    )
    return out if np.ndim(out) else float(out)


def sinr_linear(d, radio: RadioParams, indoor: bool = False, tx_height: float = 2.0, rx_height: float = 2.0) -> float:
    """Same quantity evaluated as a ratio of linear powers."""
    lin = lambda db: 10.0 ** (db / 10.0)  # noqa: E731
    p_tx = lin(radio.tx_power_dbm)
    n0 = lin(radio.noise_psd_dbm_hz) * lin(radio.noise_figure_db) * radio.bandwidth_hz
    pl = lin(path_loss(d, radio, tx_height, rx_height))
    delta = lin(radio.penetration_loss_db) if indoor else 1.0
    # interference enters as a margin on the noise floor
    return p_tx / (n0 * lin(radio.interference_margin_db) * pl * lin(radio.fading_margin_db) * delta)


class PerCurve:
    """SINR (dB) -> packet error rate.

    Default is uncoded-QPSK BER in AWGN shifted by a coding gain, raised to
    the packet length.  ``from_table`` gives a tabulated curve with linear
    interpolation and clamped ends.
    """

    def __init__(self, coding_gain_db: float = 4.0, table=None):
        self.coding_gain_db = coding_gain_db
        self.table = table

    @classmethod
    def from_table(cls, sinr_db, per):
        s = np.asarray(sinr_db, dtype=float)
        p = np.asarray(per, dtype=float)
        if s.ndim != 1 or s.shape != p.shape or len(s) < 2:
            raise ValueError("PER table needs two equal-length columns with >= 2 rows")
        if np.any(np.diff(s) <= 0):
            raise ValueError("PER table sinr_db must be strictly increasing")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("PER table values must lie in [0, 1]")
        if np.any(np.diff(p) > 0):
            raise ValueError("PER table must be non-increasing in SINR")
        return cls(table=(s, p))

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls.from_table(data[:, 0], data[:, 1])

    def ber(self, sinr_db):
        g = 10.0 ** ((np.asarray(sinr_db, dtype=float) + self.coding_gain_db) / 10.0)
        return 0.5 * erfc(np.sqrt(g))

    def __call__(self, sinr_db, packet_size: int = 250):
        if self.table is not None:
            s, p = self.table
            out = np.interp(np.asarray(sinr_db, dtype=float), s, p)
        else:
            # 1 - (1 - ber)^bits without cancellation for tiny ber
            out = -np.expm1(8 * packet_size * np.log1p(-self.ber(sinr_db)))
        out = np.clip(out, 0.0, 1.0)
        return out if np.ndim(out) else float(out)


def per(sinr_db, curve: PerCurve, packet_size: int = 250):
    return curve(sinr_db, packet_size)


def link_cost(eps):
    """-log(1 - eps); +inf for an unusable link."""
    eps = np.asarray(eps, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(eps >= 1.0, np.inf, -np.log1p(-np.minimum(eps, 1.0)))
    return out if out.ndim else float(out)


def link_budget(d: float, radio: RadioParams, curve: PerCurve, packet_size: int, indoor=False,
                tx_height: float = 2.0, rx_height: float = 2.0) -> LinkBudgetResult:
    pl = path_loss(d, radio, tx_height, rx_height)
    g = sinr(d, radio, indoor, tx_height, rx_height)
    e = curve(g, packet_size)
    return LinkBudgetResult(float(d), float(pl), float(g), float(e), float(link_cost(e)))


def max_range(radio: RadioParams, curve: PerCurve, eps_max: float, tx_height: float = 2.0,
              rx_height: float = 2.0, packet_size: int = 250, tol: float = 0.1) -> float:
    """Largest distance whose PER stays <= ``eps_max`` (bisection to ``tol`` m)."""
    if not 0.0 < eps_max < 1.0:
        raise ValueError("eps_max must lie in (0, 1)")

    def ok(d):
        return curve(sinr(d, radio, False, tx_height, rx_height), packet_size) <= eps_max

    if not ok(D0):
        raise RadioBudgetError("radio budget infeasible: PER above ceiling at the reference distance")
    lo, hi = D0, 2.0 * D0
    while ok(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e9:
            return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
