"""Per-hop and per-path latency reliability for CSMA/CA (NC) and TDMA (MC) traffic.

Units: arrival rates are packets/second at the API boundary and packets per
real slot inside; service times and the queue wait T_Q are in real slots
(CAP + CFP); slot budgets S and reliability curves are in slots of the
class's own period (CAP slots for NC, CFP slots for MC).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .forest import DIRECT, RoutingForest
from .params import MC, NC, MacParams


class MarkovChainError(RuntimeError):
    pass


class FixedPointError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


class UnstableQueueError(ValueError):
    pass


# --- slot budget ------------------------------------------------------------------


@dataclass(frozen=True)
class SlotBudget:
    total: float  # N_s, class slots available within the latency
    per_hop: int  # S
    hops: int

    @property
    def feasible(self) -> bool:
        return self.per_hop >= 1


def class_slots_in(latency: float, category: str, mac: MacParams) -> float:
    return latency / mac.frame_duration_s * mac.class_slots(category)


def slot_budget(latency: float, category: str, mac: MacParams, hops: int) -> SlotBudget:
    if hops < 1:
        raise ValueError("hops must be >= 1")
    ns = class_slots_in(latency, category, mac)
    # guard against 312.4999999 from float division
    return SlotBudget(ns, int(math.floor(ns / hops + 1e-9)), hops)


# --- Poisson-binomial --------------------------------------------------------------


@dataclass(frozen=True)
class PoissonBinomial:
    pmf: np.ndarray  # Pr(ell - 1 = i) = Pr(i competitors pending), i = 0..n
    imag_residue: float

    def cdf(self, s: int) -> float:
        """Pr(ell <= s) = sum_{i=0}^{s-1} pmf(i)."""
        if s <= 0:
            return 0.0
        return float(min(1.0, self.pmf[:s].sum()))

    def delay_pmf(self) -> np.ndarray:
        """Pr(ell = u) for u = 0..n+1 (zero at u = 0)."""
        return np.concatenate([[0.0], self.pmf])


def poisson_binomial(p) -> PoissonBinomial:
    p = np.ascontiguousarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    pmf, resid = kernels.pb_pmf_dft(p)
    if resid > 1e-9:
        raise ArithmeticError(f"DFT imaginary residue {resid:.3g} too large")
    return PoissonBinomial(np.clip(pmf, 0.0, 1.0), float(resid))


# --- CSMA/CA Markov chain ----------------------------------------------------------


def n_states(mac: MacParams) -> int:
    return 1 + mac.max_retries * (mac.max_backoff_stage + 1)


def state_index(i: int, m: int, mac: MacParams) -> int:
    """Index of sensing stage m in attempt i (1-based attempts); 0 is the empty state."""
    return (i - 1) * (mac.max_backoff_stage + 1) + m + 1


def transition_matrices(p, alpha, chi, mac: MacParams) -> np.ndarray:
    """Batched transition matrices, shape (n, states, states)."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), p.shape)
    chi = np.broadcast_to(np.asarray(chi, dtype=float), p.shape)
    n_arq, big_m = mac.max_retries, mac.max_backoff_stage
    s = n_states(mac)
    T = np.zeros((len(p), s, s))
    start = state_index(1, 0, mac)
    T[:, 0, 0] = 1.0 - p
    T[:, 0, start] = p
    for i in range(1, n_arq + 1):
        for m in range(big_m + 1):
            g = state_index(i, m, mac)
            done = alpha * (1.0 - chi)  # sent successfully
            fail = alpha * chi
            busy = 1.0 - alpha
            if i < n_arq:
                T[:, g, state_index(i + 1, 0, mac)] += fail
            else:
                done = done + fail
            if m < big_m:
                T[:, g, state_index(i, m + 1, mac)] += busy
            elif i < n_arq:
                T[:, g, state_index(i + 1, 0, mac)] += busy
            else:
                done = done + busy
            # a finished packet leaves the node empty or starts the next one
            T[:, g, 0] += done * (1.0 - p)
            T[:, g, start] += done * p
    return T


def transition_matrix(p: float, alpha: float, chi: float, mac: MacParams) -> np.ndarray:
    return transition_matrices([p], alpha, chi, mac)[0]


def _stationary_batch(T: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    n, s, _ = T.shape
    A = np.transpose(T, (0, 2, 1)) - np.eye(s)[None]
    A[:, -1, :] = 1.0
    b = np.zeros((n, s))
    b[:, -1] = 1.0
    try:
        pi = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise MarkovChainError("chain has no unique stationary distribution") from None
    pi = np.where(pi < 0, np.where(pi > -1e-13, 0.0, pi), pi)
    resid = np.max(np.abs(np.einsum("ni,nij->nj", pi, T) - pi), axis=1) if n else np.zeros(0)
    bad = (resid >= tol) | np.any(pi < 0, axis=1)
    for k in np.flatnonzero(bad):
        pi[k] = _power_iteration(T[k], tol)
    return pi / pi.sum(axis=1, keepdims=True)


def _power_iteration(T: np.ndarray, tol: float, max_iter: int = 200_000) -> np.ndarray:
    s = T.shape[0]
    x = np.full(s, 1.0 / s)
    avg = x.copy()
    for it in range(1, max_iter + 1):
        x = x @ T
        avg += (x - avg) / (it + 1)  # Cesaro mean also settles periodic chains
        if it % 64 == 0 and np.max(np.abs(avg @ T - avg)) < tol:
            return avg
    raise MarkovChainError("power iteration did not converge")


def stationary_distribution(T, tol: float = 1e-10) -> np.ndarray:
    """pi with pi T = pi, sum(pi) = 1; linear solve with a power-iteration fallback."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValueError("T must be square")
    if np.any(T < -1e-15) or np.max(np.abs(T.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("T must be row-stochastic")
    return _stationary_batch(T[None], tol)[0]


def first_sense_probability(pi: np.ndarray, mac: MacParams) -> np.ndarray:
    """xi: probability of a first carrier-sensing attempt in an arbitrary slot."""
    w = np.asarray(mac.backoff_windows, dtype=float)
    stages = pi[..., 1:].reshape(pi.shape[:-1] + (mac.max_retries, mac.max_backoff_stage + 1))
    return (stages / w).sum(axis=(-1, -2))


def busy_probabilities(others_idle):
    """beta1, beta2 given the probability that no neighbour starts sensing in a slot."""
    b = 1.0 - np.asarray(others_idle, dtype=float)
    beta2 = b / (1.0 + b)
    beta1 = (1.0 - beta2) * b / (1.0 + (1.0 - beta2) * b)
    return beta1, beta2


@dataclass
class FixedPointResult:
    beta1: np.ndarray
    beta2: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    chi: np.ndarray
    pi: np.ndarray
    residual: float
    iterations: int


def _neighbor_matrix(nbr_ptr, nbr_idx, n):
    data = np.ones(len(nbr_idx))
    return sp.csr_matrix((data, np.asarray(nbr_idx), np.asarray(nbr_ptr)), shape=(n, n))


def _fp_map(xi, p, eps, adj, mac):
    with np.errstate(divide="ignore"):
        log_idle = adj @ np.log1p(-np.minimum(xi, 1.0))
    idle = np.exp(log_idle)
    beta1, beta2 = busy_probabilities(idle)
    alpha = (1.0 - beta1) * (1.0 - beta2)
    chi = 1.0 - (1.0 - eps) * idle
    pi = _stationary_batch(transition_matrices(p, alpha, chi, mac))
    return first_sense_probability(pi, mac), beta1, beta2, alpha, chi, pi


def csma_fixed_point(p, eps, nbr_ptr, nbr_idx, mac: MacParams, damping: float = 0.5,
                     tol: float = 1e-11, max_iter: int = 10_000) -> FixedPointResult:
    """Damped iteration of xi -> (beta1, beta2, alpha, chi) -> pi -> xi over a neighbourhood.

    ``p`` is each node's probability of holding an NC packet, ``eps`` its
    next-hop PER; neighbours are given as CSR arrays.
    """
    p = np.asarray(p, dtype=float)
    eps = np.asarray(eps, dtype=float)
    n = len(p)
    adj = _neighbor_matrix(nbr_ptr, nbr_idx, n)
    xi = np.zeros(n)
    resid = math.inf
    for it in range(1, max_iter + 1):
        new, beta1, beta2, alpha, chi, pi = _fp_map(xi, p, eps, adj, mac)
        resid = float(np.max(np.abs(new - xi))) if n else 0.0
        if resid < tol:
            xi = new
            break
        xi = damping * xi + (1.0 - damping) * new
    else:
        raise FixedPointError(f"CSMA fixed point did not converge (residual {resid:.3g})", resid)
    # quantities consistent with the returned xi
    _, beta1, beta2, alpha, chi, pi = _fp_map(xi, p, eps, adj, mac)
    return FixedPointResult(beta1, beta2, alpha, xi, chi, pi, resid, it)


# --- per-node context and per-hop reliability ----------------------------------------


@dataclass
class NodeMacContext:
    """Everything one relay needs for its per-hop reliability."""

    eps: float = 0.0  # next-hop PER
    tq: int = 0  # queue wait, class slots (already rounded up)
    alpha: float = 1.0
    chi: float | None = None
    beta1: float = 0.0
    beta2: float = 0.0
    neighbor_p: np.ndarray = field(default_factory=lambda: np.zeros(0))  # MC competitors
    neighbor_xi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.neighbor_p = np.asarray(self.neighbor_p, dtype=float)
        self.neighbor_xi = np.asarray(self.neighbor_xi, dtype=float)
        if self.chi is None:
            self.chi = 1.0 - (1.0 - self.eps) * float(np.prod(1.0 - self.neighbor_xi))


def csma_curve(alpha, chi, beta1, beta2, mac: MacParams, kmax: int) -> np.ndarray:
    """C[K] = (1 - chi) * sum_{k=1}^{K} theta(k), K = 0..kmax."""
    w = np.asarray(mac.backoff_windows, dtype=np.int64)
    theta = kernels.csma_theta(float(alpha), float(chi), float(beta1), float(beta2), w, mac.max_retries, int(kmax))
    return np.minimum(np.cumsum(theta) * (1.0 - chi), 1.0)


def tdma_curve(neighbor_p, eps, mac: MacParams, kmax: int) -> np.ndarray:
    """G[K] = sum_i Pr(L_i <= K) eps^(i-1) (1 - eps), K = 0..kmax."""
    ell = poisson_binomial(neighbor_p).delay_pmf()
    return np.minimum(kernels.tdma_cdf(ell, float(eps), mac.max_retries, int(kmax)), 1.0)


def csma_reliability(ctx: NodeMacContext, S: int, mac: MacParams) -> float:
    k = S - ctx.tq - 1
    if k < 1:
        return 0.0
    return float(csma_curve(ctx.alpha, ctx.chi, ctx.beta1, ctx.beta2, mac, k)[k])


def tdma_reliability(ctx: NodeMacContext, S: int, mac: MacParams) -> float:
    k = S - ctx.tq
    if k < 1:
        return 0.0
    return float(tdma_curve(ctx.neighbor_p, ctx.eps, mac, k)[k])


def path_reliability(hop_reliabilities) -> float:
    r = 1.0
    for h in hop_reliabilities:
        r *= h
    return r


# --- service moments and queueing ----------------------------------------------------


def csma_mean_service(alpha, mac: MacParams):
    """Mean NC service time in real slots."""
    nc, nt = mac.cap_slots, mac.cfp_slots
    w = np.asarray(mac.backoff_windows, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    busy = (1.0 - alpha)[..., None] ** np.arange(len(w))
    cfp_wait = nt * (nt + 1) / 2.0 / (nc + nt)
    backoff = (busy * (w + 2.0) / 2.0).sum(axis=-1)
    cfp_insert = (busy[..., 1:] * (w[1:] + 2.0) / (2.0 * nc) * nt).sum(axis=-1)
    return cfp_wait + backoff + cfp_insert + 1.0


def tdma_mean_service(load_packets, mac: MacParams):
    """Mean MC service time in real slots.

    ``load_packets`` = sum of arrival rates (1/s) over the node and its
    neighbours times L/H, i.e. packets generated in one hop's share of L.
    """
    nc, nt = mac.cap_slots, mac.cfp_slots
    q = 0.5 * np.asarray(load_packets, dtype=float)
    return nc * (nc + 1) / 2.0 / (nc + nt) + np.floor(q / nt) * (nc + nt) + np.fmod(q, nt)


def second_moment(curve: np.ndarray, category: str, mac: MacParams) -> float:
    """E[Y^2] from R(k), k = 0..S, scaled from class slots to real slots."""
    r = np.asarray(curve, dtype=float)
    k = np.arange(len(r))
    inc = np.diff(r, prepend=0.0)
    inc[0] = 0.0
    return mac.slots_per_frame / mac.class_slots(category) * float(np.sum(inc * k * k))


@dataclass(frozen=True)
class ServiceMoments:
    mean: float
    second: float
    mu: float


def service_moments(ctx: NodeMacContext, category: str, mac: MacParams, latency: float, hops: int,
                    load_rate: float = 0.0) -> ServiceMoments:
    """Mean, second moment and rate of the service time of one relay.

    ``load_rate`` (MC only) is the summed arrival rate (1/s) of the node and
    its neighbours.
    """
    S = slot_budget(latency, category, mac, hops).per_hop
    if category == NC:
        mean = float(csma_mean_service(ctx.alpha, mac))
        curve = np.concatenate([[0.0], csma_curve(ctx.alpha, ctx.chi, ctx.beta1, ctx.beta2, mac, max(S - 1, 0))])[: S + 1]
    else:
        mean = float(tdma_mean_service(load_rate * latency / hops, mac))
        curve = tdma_curve(ctx.neighbor_p, ctx.eps, mac, S)
    return ServiceMoments(mean, second_moment(curve, category, mac), 1.0 / mean)


def queue_wait(lam: float, ey2: float, mu: float) -> float:
    """Pollaczek-Khinchine mean wait; all quantities per real slot."""
    rho = lam / mu
    if rho >= 1.0:
        raise UnstableQueueError(f"utilisation {rho:.3f} >= 1")
    return lam * ey2 / (2.0 * (1.0 - rho))


def queue_wait_class_slots(tq_real: float, category: str, mac: MacParams) -> int:
    """Convert a real-slot wait to whole class slots, rounding up."""
    if not math.isfinite(tq_real):
        return 10 ** 9
    x = tq_real * mac.class_slots(category) / mac.slots_per_frame
    return int(math.ceil(x - 1e-12)) if x > 0 else 0


def retransmission_factor(category: str, eps: float, chi: float = 0.0, alpha: float = 1.0, max_stage: int = 0) -> float:
    if category == MC:
        den = 1.0 - eps
    else:
        den = (1.0 - chi) * (1.0 - (1.0 - alpha) ** (max_stage + 1))
    if den <= 0.0:
        return math.inf
    return 1.0 / den


# --- whole-forest evaluation ------------------------------------------------------------


@dataclass
class CategoryState:
    lam: np.ndarray  # 1/s
    sigma: np.ndarray
    mean: np.ndarray  # E[Y], real slots
    second: np.ndarray  # E[Y^2], real slots^2
    mu: np.ndarray  # 1/real slot
    p: np.ndarray
    tq_real: np.ndarray
    tq: np.ndarray  # class slots
    stable: np.ndarray
    curves: list  # per node: R(K) for K = 0..kmax (T_Q excluded)


@dataclass
class ForestAnalysis:
    forest: RoutingForest
    class_names: tuple
    class_category: tuple
    class_latency: tuple
    nc: CategoryState
    mc: CategoryState
    alpha: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    xi: np.ndarray
    chi: np.ndarray
    fixed_point_residual: float
    feeding: np.ndarray
    budget: np.ndarray  # (n, n_classes) per-hop S of each source
    reliability: np.ndarray  # (n, n_classes); nan when unconnected

    def state(self, category: str) -> CategoryState:
        return self.mc if category == MC else self.nc

    def min_reliability(self) -> np.ndarray:
        r = self.reliability
        out = np.full(r.shape[0], np.nan)
        conn = self.forest.connected
        out[conn] = r[conn].min(axis=1) if r.shape[1] else 1.0
        return out

    def satisfied(self, rho: float) -> np.ndarray:
        m = self.min_reliability()
        return self.forest.connected & (np.nan_to_num(m, nan=-1.0) >= rho - 1e-12)

    def node_context(self, i: int, category: str, mac: MacParams) -> NodeMacContext:
        nb = [j for j in self.forest.neighbors(i) if self.forest.connected[j]]
        st = self.state(category)
        if category == NC:
            return NodeMacContext(eps=float(self.forest.eps[i]), tq=int(st.tq[i]), alpha=float(self.alpha[i]),
                                  chi=float(self.chi[i]), beta1=float(self.beta1[i]), beta2=float(self.beta2[i]),
                                  neighbor_xi=self.xi[nb])
        return NodeMacContext(eps=float(self.forest.eps[i]), tq=int(st.tq[i]), neighbor_p=self.mc.p[nb])

    def dap_arrival(self) -> dict:
        """Aggregate attempted arrival rate (1/s, both categories) into each DAP."""
        f = self.forest
        out = {int(d): 0.0 for d in f.dap_poles}
        lam = self.nc.lam + self.mc.lam
        for i in np.flatnonzero(f.parent == DIRECT):
            out[int(f.dap[i])] = out.get(int(f.dap[i]), 0.0) + float(lam[i])
        return out

    def rows(self, sm_ids) -> list:
        """Diagnostic rows node,class,lambda,mu,p,alpha,xi,chi,TQ,S,R."""
        out = []
        for i in np.flatnonzero(self.forest.connected):
            for c, name in enumerate(self.class_names):
                cat = self.class_category[c]
                st = self.state(cat)
                nc = cat == NC
                out.append((int(sm_ids[i]), name, float(st.lam[i]), float(st.mu[i]), float(st.p[i]),
                            float(self.alpha[i]) if nc else 1.0, float(self.xi[i]) if nc else 0.0,
                            float(self.chi[i]) if nc else float(self.forest.eps[i]), int(st.tq[i]),
                            int(self.budget[i, c]), float(self.reliability[i, c])))
        return out


def _restricted_neighbors(forest: RoutingForest):
    conn = forest.connected
    ptr = [0]
    idx = []
    for i in range(forest.n):
        if conn[i]:
            nb = forest.neighbors(i)
            idx.extend(int(j) for j in nb if conn[j])
        ptr.append(len(idx))
    return np.asarray(ptr, dtype=np.int64), np.asarray(idx, dtype=np.int64)


def evaluate_forest(forest: RoutingForest, config, outer_passes: int = 2) -> ForestAnalysis:
    """Reliability of every connected meter for every traffic class.

    Order: arrival rates bottom-up, CSMA fixed point, service moments,
    queue waits, per-hop curves, path products; ``outer_passes`` refreshes
    p = lambda/mu after the retransmission factors change.
    """
    mac = config.mac
    n = forest.n
    conn = forest.connected
    ptr, idx = _restricted_neighbors(forest)
    adj = _neighbor_matrix(ptr, idx, n)
    feeding = forest.feeding_counts()
    depth = np.maximum(forest.depth, 1)
    eps = np.where(conn, np.nan_to_num(forest.eps, nan=0.0), 0.0)
    slot = mac.slot_s
    lam0 = {c: config.rate(c) for c in (NC, MC)}
    lat_min = {c: config.min_latency(c) if config.classes(c) else 1.0 for c in (NC, MC)}
    big_m = mac.max_backoff_stage

    sigma = {c: np.where(conn, 1.0 / np.maximum(1.0 - eps, 1e-300), 0.0) for c in (NC, MC)}
    alpha = np.ones(n)
    fp = None

    def rates():
        lam = {c: np.where(conn, sigma[c] * lam0[c] * (feeding + 1), 0.0) for c in (NC, MC)}
        mc_load = (adj @ lam[MC] + lam[MC]) * lat_min[MC] / depth
        mean = {NC: np.asarray(csma_mean_service(alpha, mac)) * np.ones(n), MC: tdma_mean_service(mc_load, mac)}
        mu = {c: 1.0 / mean[c] for c in (NC, MC)}
        p = {c: lam[c] * slot / mu[c] for c in (NC, MC)}
        return lam, mean, mu, p

    for _ in range(max(outer_passes, 1)):
        lam, mean, mu, p = rates()
        fp = csma_fixed_point(np.where(conn, np.minimum(p[NC], 1.0 - 1e-9), 0.0), eps, ptr, idx, mac)
        alpha = fp.alpha
        with np.errstate(divide="ignore"):
            den = (1.0 - fp.chi) * (1.0 - (1.0 - alpha) ** (big_m + 1))
            sigma[NC] = np.where(conn, np.where(den > 0, 1.0 / den, np.inf), 0.0)
        sigma[MC] = np.where(conn, 1.0 / np.maximum(1.0 - eps, 1e-300), 0.0)
    lam, mean, mu, p = rates()

    # per-node curves up to the largest budget any source through it can have
    names = tuple(t.name for t in config.traffic)
    cats = tuple(t.category for t in config.traffic)
    lats = tuple(t.latency_s for t in config.traffic)
    ns_max = {c: max([class_slots_in(t.latency_s, c, mac) for t in config.classes(c)] or [0.0]) for c in (NC, MC)}
    ns_min = {c: class_slots_in(lat_min[c], c, mac) for c in (NC, MC)}

    states = {}
    for c in (NC, MC):
        curves = [None] * n
        second = np.zeros(n)
        tq_real = np.full(n, np.inf)
        tq = np.full(n, 10 ** 9, dtype=np.int64)
        stable = conn & (p[c] < 1.0) & np.isfinite(sigma[c])
        for i in np.flatnonzero(conn):
            kmax = int(math.floor(ns_max[c] / depth[i] + 1e-9))
            if c == NC:
                curve = csma_curve(fp.alpha[i], fp.chi[i], fp.beta1[i], fp.beta2[i], mac, kmax)
                s_own = int(math.floor(ns_min[c] / depth[i] + 1e-9))
                rk = np.concatenate([[0.0], curve])[: s_own + 1]
            else:
                nb = idx[ptr[i]:ptr[i + 1]]
                curve = tdma_curve(p[MC][nb].clip(0.0, 1.0), eps[i], mac, kmax)
                s_own = int(math.floor(ns_min[c] / depth[i] + 1e-9))
                rk = curve[: s_own + 1]
            curves[i] = curve
            second[i] = second_moment(rk, c, mac)
            if stable[i]:
                lam_slot = lam[c][i] * slot
                tq_real[i] = queue_wait(lam_slot, second[i], mu[c][i])
                tq[i] = queue_wait_class_slots(tq_real[i], c, mac)
        states[c] = CategoryState(lam[c], sigma[c], mean[c], second, mu[c], p[c], tq_real, tq, stable, curves)

    # path products
    n_cls = len(names)
    budget = np.zeros((n, n_cls), dtype=np.int64)
    rel = np.full((n, n_cls), np.nan)
    for c_i, (cat, lat) in enumerate(zip(cats, lats)):
        st = states[cat]
        offset = 1 if cat == NC else 0
        ns = class_slots_in(lat, cat, mac)
        for i in np.flatnonzero(conn):
            S = int(math.floor(ns / depth[i] + 1e-9))
            budget[i, c_i] = S
            r = 1.0
            for hop in forest.path(i):
                if not st.stable[hop]:
                    r = 0.0
                    break
                k = S - int(st.tq[hop]) - offset
                if k < 1:
                    r = 0.0
                    break
                curve = st.curves[hop]
                r *= curve[min(k, len(curve) - 1)]
            rel[i, c_i] = r
    return ForestAnalysis(forest, names, cats, lats, states[NC], states[MC], fp.alpha, fp.beta1, fp.beta2,
                          fp.xi, fp.chi, fp.residual, feeding, budget, rel)
