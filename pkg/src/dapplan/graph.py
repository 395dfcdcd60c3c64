"""Feasible links between meters (and meter -> pole) with uplink PER and route cost."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import link

MIN_DISTANCE_M = 1.0  # co-located nodes are treated as 1 m apart


@dataclass
class LinkGraph:
    """CSR adjacency.  ``sm_*`` arrays describe meter i transmitting to meter
    ``sm_idx[k]``; ``sp_*`` describe meter i transmitting to pole ``sp_idx[k]``
    (pole positions, not ids).  Every pair within range is listed, usable or not.
    """

    n_sm: int
    n_pole: int
    sm_ptr: np.ndarray
    sm_idx: np.ndarray
    sm_eps: np.ndarray
    sm_cost: np.ndarray
    sp_ptr: np.ndarray
    sp_idx: np.ndarray
    sp_eps: np.ndarray
    sp_cost: np.ndarray
    ps_ptr: np.ndarray  # pole -> meters with a usable uplink to it
    ps_idx: np.ndarray

    def sm_neighbors(self, i: int) -> np.ndarray:
        return self.sm_idx[self.sm_ptr[i]:self.sm_ptr[i + 1]]

    def pole_links(self, i: int):
        s = slice(self.sp_ptr[i], self.sp_ptr[i + 1])
        return self.sp_idx[s], self.sp_eps[s], self.sp_cost[s]

    def meters_of_pole(self, j: int) -> np.ndarray:
        return self.ps_idx[self.ps_ptr[j]:self.ps_ptr[j + 1]]

    @cached_property
    def sm_rev_eps(self) -> np.ndarray:
        """Aligned with ``sm_idx``: PER of the link from ``sm_idx[k]`` back into row i.

        Pairs are listed in both directions, so every entry has a partner.
        """
        src = np.repeat(np.arange(self.n_sm), np.diff(self.sm_ptr))
        dst = self.sm_idx
        fwd = np.lexsort((dst, src))  # already sorted; kept explicit
        rev = np.lexsort((src, dst))  # row dst, column src
        out = np.empty_like(self.sm_eps)
        out[fwd] = self.sm_eps[rev]
        return out

    def edge_eps(self, i: int, j: int) -> float:
        nb = self.sm_neighbors(i)
        k = np.searchsorted(nb, j)
        if k < len(nb) and nb[k] == j:
            return float(self.sm_eps[self.sm_ptr[i] + k])
        return 1.0

    def pole_eps(self, i: int, j: int) -> float:
        idx, eps, _ = self.pole_links(i)
        k = np.searchsorted(idx, j)
        if k < len(idx) and idx[k] == j:
            return float(eps[k])
        return 1.0


def _uplink_per(scenario, d, tx_h, rx_h, indoor) -> np.ndarray:
    """PER of each listed link at the largest packet size."""
    d = np.maximum(np.asarray(d, dtype=float), MIN_DISTANCE_M)
    out = np.empty(len(d))
    if not len(d):
        return out
    pairs = np.column_stack([tx_h, rx_h])
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    size = scenario.config.max_packet_size
    for g, (ht, hr) in enumerate(uniq):
        sel = inv == g
        s = link.sinr(d[sel], scenario.radio, indoor[sel], float(ht), float(hr))
        out[sel] = scenario.per_curve(np.atleast_1d(s), size)
    return out


def _csr(src, dst, n):
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, src + 1, 1)
    return np.cumsum(ptr), dst.astype(np.int64), order


def build_link_graph(scenario) -> LinkGraph:
    sms, poles = scenario.sms, scenario.poles
    n, m = len(sms), len(poles)
    xy = scenario.sm_xy
    h = np.array([s.height for s in sms], dtype=float)
    indoor = np.array([s.indoor for s in sms], dtype=bool)

    pairs = scenario.sm_index.pairs_within(scenario.d_smax) if n else np.empty((0, 2), dtype=np.int64)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]]).astype(np.int64)
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]]).astype(np.int64)
    sm_ptr, sm_idx, order = _csr(src, dst, n)
    src = src[order]
    d = np.hypot(*(xy[src] - xy[sm_idx]).T) if len(src) else np.zeros(0)
    # penetration loss once when either end is indoors
    sm_eps = _uplink_per(scenario, d, h[src], h[sm_idx], indoor[src] | indoor[sm_idx])

    hits = scenario.pole_index.range_query_many(xy, scenario.d_pmax) if n else []
    psrc = np.array([i for i, hs in enumerate(hits) for _ in hs], dtype=np.int64)
    pdst = np.array([j for hs in hits for j in hs], dtype=np.int64)
    sp_ptr, sp_idx, porder = _csr(psrc, pdst, n)
    psrc = psrc[porder]
    ph = np.array([p.height for p in poles], dtype=float)
    pd = np.hypot(*(xy[psrc] - scenario.pole_xy[sp_idx]).T) if len(psrc) else np.zeros(0)
    sp_eps = _uplink_per(scenario, pd, h[psrc], ph[sp_idx], indoor[psrc])

    usable = sp_eps < 1.0
    ps_ptr, ps_idx, _ = _csr(sp_idx[usable], psrc[usable], m)
    return LinkGraph(n, m, sm_ptr, sm_idx, sm_eps, link.link_cost(sm_eps), sp_ptr, sp_idx, sp_eps,
                     link.link_cost(sp_eps), ps_ptr, ps_idx)
