"""Slot-level discrete-event simulation of the CAP/CFP superframe.

NC packets contend with slotted CSMA/CA in CAP slots; MC packets get
conflict-free CFP grants.  The two periods never share a slot, so each
category is simulated on its own slot axis (CAP index or CFP index) and
mapped back to real time afterwards.  Idle stretches are skipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import jit
from .params import DETERMINISTIC, MC, NC

IDLE, CCA1, CCA2, TX = 0, 1, 2, 3
NEVER = np.iinfo(np.int64).max // 4


@jit
def _any_neighbor_tx(i, t, nbr_ptr, nbr_idx, tx_stamp):
    for k in range(nbr_ptr[i], nbr_ptr[i + 1]):
        if tx_stamp[nbr_idx[k]] == t:
            return True
    return False


@jit
def _backoff(w):
    return 1 + int(np.random.random() * w)


@jit
def csma_kernel(src, avail, parent, nbr_ptr, nbr_idx, eps, windows, n_arq, seed, max_visits):
    """Simulate slotted CSMA/CA on the CAP axis.

    Returns (delivered slot per packet or -1, hops per packet, visit arrays
    node/packet/arrival/start/end, number of visits).
    """
    np.random.seed(seed)
    n_pkt = src.shape[0]
    n = parent.shape[0]
    big_m = windows.shape[0] - 1
    head = np.full(n, -1, np.int64)
    tail = np.full(n, -1, np.int64)
    nxt = np.full(n_pkt, -1, np.int64)
    state = np.zeros(n, np.int64)
    ev = np.full(n, NEVER, np.int64)
    stage = np.zeros(n, np.int64)
    attempt = np.zeros(n, np.int64)
    tx_stamp = np.full(n, -1, np.int64)
    start = np.zeros(n, np.int64)
    arr_here = np.zeros(n_pkt, np.int64)
    delivered = np.full(n_pkt, -1, np.int64)
    hops = np.zeros(n_pkt, np.int64)
    v_node = np.empty(max_visits, np.int64)
    v_pkt = np.empty(max_visits, np.int64)
    v_arr = np.empty(max_visits, np.int64)
    v_start = np.empty(max_visits, np.int64)
    v_end = np.empty(max_visits, np.int64)
    nv = 0
    txl = np.empty(n, np.int64)
    ip = 0
    while True:
        t = NEVER
        for i in range(n):
            if ev[i] < t:
                t = ev[i]
        if ip < n_pkt and avail[ip] < t:
            t = avail[ip]
        if t == NEVER:
            break
        # new packets
        while ip < n_pkt and avail[ip] <= t:
            i = src[ip]
            arr_here[ip] = avail[ip]
            if head[i] < 0:
                head[i] = ip
                tail[i] = ip
                start[i] = avail[ip]
                attempt[i] = 1
                stage[i] = 0
                state[i] = CCA1
                ev[i] = avail[ip] + _backoff(windows[0]) - 1
            else:
                nxt[tail[i]] = ip
                tail[i] = ip
            ip += 1
        # transmissions in slot t
        ntx = 0
        for i in range(n):
            if state[i] == TX and ev[i] == t:
                txl[ntx] = i
                ntx += 1
                tx_stamp[i] = t
        for q in range(ntx):
            i = txl[q]
            pk = head[i]
            ok = not _any_neighbor_tx(i, t, nbr_ptr, nbr_idx, tx_stamp)
            if np.random.random() < eps[i]:
                ok = False
            done = ok
            if not ok:
                attempt[i] += 1
                if attempt[i] > n_arq:
                    done = True
                else:
                    stage[i] = 0
                    state[i] = CCA1
                    ev[i] = t + _backoff(windows[0])
            if done:
                v_node[nv] = i
                v_pkt[nv] = pk
                v_arr[nv] = arr_here[pk]
                v_start[nv] = start[i]
                v_end[nv] = t
                nv += 1
                hops[pk] += 1
                # pop and forward
                head[i] = nxt[pk]
                if head[i] < 0:
                    tail[i] = -1
                nxt[pk] = -1
                if ok:
                    p = parent[i]
                    if p < 0:
                        delivered[pk] = t
                    else:
                        arr_here[pk] = t + 1
                        if head[p] < 0:
                            head[p] = pk
                            tail[p] = pk
                            start[p] = t + 1
                            attempt[p] = 1
                            stage[p] = 0
                            state[p] = CCA1
                            ev[p] = t + _backoff(windows[0])
                        else:
                            nxt[tail[p]] = pk
                            tail[p] = pk
                if head[i] >= 0:
                    start[i] = t + 1
                    attempt[i] = 1
                    stage[i] = 0
                    state[i] = CCA1
                    ev[i] = t + _backoff(windows[0])
                else:
                    state[i] = IDLE
                    ev[i] = NEVER
        # carrier sensing in slot t
        for i in range(n):
            if ev[i] != t or (state[i] != CCA1 and state[i] != CCA2):
                continue
            busy = _any_neighbor_tx(i, t, nbr_ptr, nbr_idx, tx_stamp)
            if not busy:
                if state[i] == CCA1:
                    state[i] = CCA2
                else:
                    state[i] = TX
                ev[i] = t + 1
                continue
            # slot of the first assessment of this try
            d = t if state[i] == CCA1 else t - 1
            if stage[i] < big_m:
                stage[i] += 1
                state[i] = CCA1
                ev[i] = t + _backoff(windows[stage[i]])
                continue
            attempt[i] += 1
            if attempt[i] <= n_arq:
                stage[i] = 0
                state[i] = CCA1
                ev[i] = d + 2 + _backoff(windows[0])
                continue
            # channel access failed on the last attempt: drop
            pk = head[i]
            v_node[nv] = i
            v_pkt[nv] = pk
            v_arr[nv] = arr_here[pk]
            v_start[nv] = start[i]
            v_end[nv] = t
            nv += 1
            hops[pk] += 1
            head[i] = nxt[pk]
            nxt[pk] = -1
            if head[i] < 0:
                tail[i] = -1
                state[i] = IDLE
                ev[i] = NEVER
            else:
                start[i] = t + 1
                attempt[i] = 1
                stage[i] = 0
                state[i] = CCA1
                ev[i] = t + _backoff(windows[0])
    return delivered, hops, v_node[:nv], v_pkt[:nv], v_arr[:nv], v_start[:nv], v_end[:nv]


@jit
def tdma_kernel(src, avail, parent, nbr_ptr, nbr_idx, eps, n_arq, seed, max_visits):
    """Simulate CFP grants: each slot, pending nodes ordered by (head-of-line time, index)
    are granted greedily unless a neighbour already holds the slot."""
    np.random.seed(seed)
    n_pkt = src.shape[0]
    n = parent.shape[0]
    head = np.full(n, -1, np.int64)
    tail = np.full(n, -1, np.int64)
    nxt = np.full(n_pkt, -1, np.int64)
    attempt = np.zeros(n, np.int64)
    hol = np.full(n, NEVER, np.int64)
    start = np.zeros(n, np.int64)
    arr_here = np.zeros(n_pkt, np.int64)
    delivered = np.full(n_pkt, -1, np.int64)
    hops = np.zeros(n_pkt, np.int64)
    granted = np.full(n, -1, np.int64)
    v_node = np.empty(max_visits, np.int64)
    v_pkt = np.empty(max_visits, np.int64)
    v_arr = np.empty(max_visits, np.int64)
    v_start = np.empty(max_visits, np.int64)
    v_end = np.empty(max_visits, np.int64)
    nv = 0
    keys = np.empty(n, np.int64)
    cand = np.empty(n, np.int64)
    ip = 0
    n_busy = 0
    t = -1
    while True:
        if n_busy > 0:
            t = t + 1
        elif ip < n_pkt:
            t = avail[ip]
        else:
            break
        while ip < n_pkt and avail[ip] <= t:
            i = src[ip]
            arr_here[ip] = avail[ip]
            if head[i] < 0:
                head[i] = ip
                tail[i] = ip
                hol[i] = avail[ip]
                start[i] = avail[ip]
                attempt[i] = 1
                n_busy += 1
            else:
                nxt[tail[i]] = ip
                tail[i] = ip
            ip += 1
        nc = 0
        for i in range(n):
            if head[i] >= 0 and hol[i] <= t:
                keys[nc] = hol[i] * n + i
                cand[nc] = i
                nc += 1
        if nc == 0:
            continue
        order = np.argsort(keys[:nc])
        ng = 0
        for r in range(nc):
            i = cand[order[r]]
            clash = False
            for k in range(nbr_ptr[i], nbr_ptr[i + 1]):
                if granted[nbr_idx[k]] == t:
                    clash = True
                    break
            if not clash:
                granted[i] = t
                keys[ng] = i  # reuse as the grant list
                ng += 1
        for r in range(ng):
            i = keys[r]
            pk = head[i]
            ok = np.random.random() >= eps[i]
            if not ok:
                attempt[i] += 1
                if attempt[i] <= n_arq:
                    continue
            v_node[nv] = i
            v_pkt[nv] = pk
            v_arr[nv] = arr_here[pk]
            v_start[nv] = start[i]
            v_end[nv] = t
            nv += 1
            hops[pk] += 1
            head[i] = nxt[pk]
            nxt[pk] = -1
            if head[i] < 0:
                tail[i] = -1
                hol[i] = NEVER
                n_busy -= 1
            else:
                hol[i] = t + 1
                start[i] = t + 1
                attempt[i] = 1
            if ok:
                p = parent[i]
                if p < 0:
                    delivered[pk] = t
                else:
                    arr_here[pk] = t + 1
                    if head[p] < 0:
                        head[p] = pk
                        tail[p] = pk
                        hol[p] = t + 1
                        start[p] = t + 1
                        attempt[p] = 1
                        n_busy += 1
                    else:
                        nxt[tail[p]] = pk
                        tail[p] = pk
    return delivered, hops, v_node[:nv], v_pkt[:nv], v_arr[:nv], v_start[:nv], v_end[:nv]


# --- driver ---------------------------------------------------------------------------


@dataclass
class DesResult:
    """Packet stream and per-hop visits; times in seconds unless noted."""

    packet_src: np.ndarray  # meter positions
    packet_class: np.ndarray  # index into config.traffic
    gen_t: np.ndarray
    del_t: np.ndarray  # nan when lost
    hops: np.ndarray
    visit_node: np.ndarray
    visit_cat: np.ndarray  # 0 NC, 1 MC
    visit_pkt: np.ndarray
    visit_arr: np.ndarray  # real slot the packet reached the node (generation or previous hop)
    visit_start: np.ndarray  # real slot its class period let it reach the head of the queue
    visit_end: np.ndarray  # real slot of its last transmission at the node
    slot_s: float
    duration_s: float

    @property
    def lost(self) -> np.ndarray:
        return np.isnan(self.del_t)

    @property
    def delay(self) -> np.ndarray:
        return self.del_t - self.gen_t

    def rows(self, sm_ids, class_names):
        for k in range(len(self.gen_t)):
            lost = bool(np.isnan(self.del_t[k]))
            yield (k, int(sm_ids[self.packet_src[k]]), class_names[self.packet_class[k]], float(self.gen_t[k]),
                   "" if lost else float(self.del_t[k]), int(self.hops[k]), int(lost))


def _arrivals(config, sources, duration, rng, traffic_scale):
    """Generation times per (source, class): periodic with random phase or Poisson."""
    src, cls, gen = [], [], []
    for c, t in enumerate(config.traffic):
        rate = t.rate * traffic_scale
        if rate <= 0:
            continue
        for s in sources:
            if t.arrival == DETERMINISTIC:
                period = 1.0 / rate
                times = np.arange(rng.uniform(0.0, period), duration, period)
            else:
                k = rng.poisson(rate * duration)
                times = np.sort(rng.uniform(0.0, duration, k))
            src.append(np.full(len(times), s, dtype=np.int64))
            cls.append(np.full(len(times), c, dtype=np.int64))
            gen.append(times)
    if not gen:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(src), np.concatenate(cls), np.concatenate(gen)


def _to_class_axis(real_slot, offset, width, frame):
    """First slot of the class period starting at or after each real slot."""
    f, pos = np.divmod(real_slot, frame)
    rel = pos - offset
    inside = (rel >= 0) & (rel < width)
    return np.where(inside, f * width + rel, np.where(rel < 0, f * width, (f + 1) * width))


def _to_real(class_slot, offset, width, frame):
    f, pos = np.divmod(class_slot, width)
    return f * frame + offset + pos


def simulate_des(forest, config, duration_s: float, seed: int = 0, traffic_scale: float = 1.0) -> DesResult:
    """Simulate every connected meter of ``forest`` for ``duration_s`` seconds of traffic.

    Packets generated within the window are followed until delivery or
    loss, however long that takes.
    """
    mac = config.mac
    rng = np.random.default_rng(seed)
    conn = np.flatnonzero(forest.connected)
    local = np.full(forest.n, -1, dtype=np.int64)
    local[conn] = np.arange(len(conn))
    parent = np.array([local[forest.parent[i]] if forest.parent[i] >= 0 else -1 for i in conn], dtype=np.int64)
    ptr = [0]
    idx = []
    for i in conn:
        idx.extend(int(local[j]) for j in forest.neighbors(i) if local[j] >= 0)
        ptr.append(len(idx))
    nbr_ptr = np.asarray(ptr, dtype=np.int64)
    nbr_idx = np.asarray(idx, dtype=np.int64)
    eps = np.nan_to_num(forest.eps[conn], nan=0.0).astype(float)
    depth = forest.depth[conn]

    src, cls, gen = _arrivals(config, range(len(conn)), duration_s, rng, traffic_scale)
    slot = mac.slot_s
    frame = mac.slots_per_frame
    real = np.ceil(gen / slot - 1e-9).astype(np.int64)
    cat_of = np.array([1 if t.category == MC else 0 for t in config.traffic], dtype=np.int64)
    pcat = cat_of[cls] if len(cls) else np.zeros(0, np.int64)

    del_real = np.full(len(gen), -1, dtype=np.int64)
    hops = np.zeros(len(gen), dtype=np.int64)
    visits = []
    seeds = rng.integers(0, 2 ** 31 - 1, size=2)
    for c_i, (cat, offset, width) in enumerate(((NC, 0, mac.cap_slots), (MC, mac.cap_slots, mac.cfp_slots))):
        sel = np.flatnonzero(pcat == c_i)
        if not len(sel):
            continue
        avail = _to_class_axis(real[sel], offset, width, frame)
        order = np.lexsort((sel, avail))
        sel, avail = sel[order], avail[order]
        max_visits = int(len(sel) * (int(depth.max()) + 1)) if len(depth) else 0
        if cat == NC:
            out = csma_kernel(src[sel], avail, parent, nbr_ptr, nbr_idx, eps,
                              np.asarray(mac.backoff_windows, dtype=np.int64), mac.max_retries, int(seeds[0]), max_visits)
        else:
            out = tdma_kernel(src[sel], avail, parent, nbr_ptr, nbr_idx, eps, mac.max_retries, int(seeds[1]), max_visits)
        delivered, h, v_node, v_pkt, v_arr, v_start, v_end = out
        ok = delivered >= 0
        del_real[sel[ok]] = _to_real(delivered[ok], offset, width, frame)
        hops[sel] = h
        visits.append((conn[v_node], np.full(len(v_node), c_i), sel[v_pkt],
                       _to_real(v_start, offset, width, frame), _to_real(v_end, offset, width, frame)))
    # delivery completes at the end of the transmission slot
    del_t = np.where(del_real >= 0, (del_real + 1) * slot, np.nan)
    if visits:
        vn, vc, vp, vs, ve = (np.concatenate(x) for x in zip(*visits))
    else:
        vn = vc = vp = vs = ve = np.zeros(0, dtype=np.int64)
    # a packet reaches its source when generated and each later node one slot after the previous hop
    order = np.lexsort((ve, vp))
    va = np.empty_like(vs)
    first = np.ones(len(order), dtype=bool)
    first[1:] = vp[order][1:] != vp[order][:-1]
    va[order[first]] = real[vp[order[first]]]
    va[order[~first]] = ve[order[np.flatnonzero(~first) - 1]] + 1
    return DesResult(conn[src] if len(src) else src, cls, gen, del_t, hops, vn, vc, vp, va, vs, ve, slot, duration_s)


def empirical_reliability(result: DesResult, forest, config, min_samples: int = 1):
    """Pr(delay <= L_c) per (meter, class), pooling packets of the class's category.

    Classes of one category share a queue and MAC, so their delay
    distributions coincide; pooling lets rare classes borrow samples.
    Returns (probability array, sample-count array), nan where too few samples.
    """
    n, n_cls = forest.n, len(config.traffic)
    prob = np.full((n, n_cls), np.nan)
    count = np.zeros((n, n_cls), dtype=np.int64)
    delay = np.where(result.lost, np.inf, result.delay)
    cat_of = np.array([1 if t.category == MC else 0 for t in config.traffic])
    pcat = cat_of[result.packet_class] if len(result.packet_class) else np.zeros(0, int)
    for c, t in enumerate(config.traffic):
        sel = pcat == cat_of[c]
        srcs = result.packet_src[sel]
        ok = delay[sel] <= t.latency_s + 1e-9
        tot = np.bincount(srcs, minlength=n)
        good = np.bincount(srcs, weights=ok, minlength=n)
        count[:, c] = tot
        with np.errstate(invalid="ignore", divide="ignore"):
            prob[:, c] = np.where(tot >= max(min_samples, 1), good / np.maximum(tot, 1), np.nan)
    return prob, count


def queue_statistics(result: DesResult, node: int, category: str):
    """Mean wait, arrival rate (per slot) and service moments (slots) at one node.

    All in real slots.  Service of a packet starts when it is at the node
    and the previous packet has left, so time spent waiting for the own
    class period is service, not queueing; the wait is the rest.
    """
    c_i = 1 if category == MC else 0
    sel = np.flatnonzero((result.visit_node == node) & (result.visit_cat == c_i))
    sel = sel[np.argsort(result.visit_start[sel], kind="stable")]
    arr = result.visit_arr[sel].astype(float)
    end = result.visit_end[sel] + 1
    prev = np.concatenate([[-np.inf], end[:-1]])
    begin = np.maximum(arr, prev)
    wait = begin - arr
    service = end - begin
    span = max(arr.max() - arr.min(), 1.0) if len(arr) else math.inf
    return {
        "packets": int(len(sel)),
        "mean_wait": float(wait.mean()) if len(wait) else math.nan,
        "lambda": float(len(arr) / span) if len(arr) else 0.0,
        "ey": float(service.mean()) if len(service) else math.nan,
        "ey2": float((service.astype(float) ** 2).mean()) if len(service) else math.nan,
    }


@dataclass
class ValidationRow:
    node: int  # meter id
    traffic_class: str
    analytic: float
    empirical: float  # nan when too few samples
    samples: int

    @property
    def gap(self) -> float:
        return abs(self.analytic - self.empirical) if not math.isnan(self.empirical) else math.nan

    def flagged(self, tolerance: float) -> bool:
        return not math.isnan(self.gap) and self.gap > tolerance


@dataclass
class ValidationReport:
    rows: list
    tolerance: float
    packets: int

    @property
    def flagged(self) -> list:
        return [r for r in self.rows if r.flagged(self.tolerance)]

    @property
    def max_gap(self) -> float:
        gaps = [r.gap for r in self.rows if not math.isnan(r.gap)]
        return max(gaps) if gaps else 0.0

    @property
    def ok(self) -> bool:
        return not self.flagged


def validate(scenario, forest, analytic, result: DesResult, tolerance: float = 0.05,
             min_samples: int = 30) -> ValidationReport:
    """Analytic R next to the simulated Pr(delay <= L) for every connected meter and class.

    ``analytic`` is an (n, n_classes) reliability array.  Rows with fewer
    than ``min_samples`` simulated packets carry no empirical value and are
    never flagged.  With no packets at all (zero traffic) both sides are 1.
    """
    prob, count = empirical_reliability(result, forest, scenario.config, min_samples)
    names = [t.name for t in scenario.traffic]
    rows = []
    for i in np.flatnonzero(forest.connected):
        for c, name in enumerate(names):
            emp = float(prob[i, c])
            if count[i, c] == 0 and len(result.gen_t) == 0:
                emp = 1.0
            rows.append(ValidationRow(scenario.sms[i].id, name, float(analytic[i, c]), emp, int(count[i, c])))
    return ValidationReport(rows, tolerance, len(result.gen_t))
