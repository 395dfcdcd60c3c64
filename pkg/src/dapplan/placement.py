"""DAP selection and meter routing.

Phase 1 picks poles greedily by multi-hop coverage; phase 2 routes every
meter with a capacity-aware multi-source Dijkstra, moves each DAP to the
pole nearest its cluster's centroid and re-routes; step III adds DAPs for
meters that miss the reliability target and repeats.
"""
from __future__ import annotations

import heapq
import math
import time
import tracemalloc
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .forest import DIRECT, UNCONNECTED, RoutingForest
from .graph import LinkGraph, build_link_graph
from .macdelay import ForestAnalysis, evaluate_forest


# --- phase 1 ---------------------------------------------------------------------


def _components(graph: LinkGraph, allowed: np.ndarray):
    """Connected components of the meter graph induced on ``allowed``.

    Only links usable in both directions join components, so every member
    of a component can reach every other one.
    """
    n = graph.n_sm
    src = np.repeat(np.arange(n), np.diff(graph.sm_ptr))
    dst = graph.sm_idx
    ok = np.isfinite(graph.sm_cost) & allowed[src] & allowed[dst]
    adj = sp.csr_matrix((np.ones(int(ok.sum())), (src[ok], dst[ok])), shape=(n, n))
    adj = adj.minimum(adj.T)  # mutual links only
    _, labels = connected_components(adj, directed=False)
    return labels


def coverage_sets(graph: LinkGraph, uncovered, exclude=()) -> dict:
    """Pole position -> set of uncovered meters it reaches over meter links."""
    allowed = np.zeros(graph.n_sm, dtype=bool)
    allowed[list(uncovered)] = True
    labels = _components(graph, allowed)
    members = {}
    for i in np.flatnonzero(allowed):
        members.setdefault(int(labels[i]), []).append(int(i))
    excl = set(int(e) for e in exclude)
    out = {}
    for j in range(graph.n_pole):
        if j in excl:
            continue
        comps = {int(labels[i]) for i in graph.meters_of_pole(j) if allowed[i]}
        if comps:
            out[j] = set().union(*(members[c] for c in comps))
    return out


def phase1_greedy(scenario, uncovered, existing_daps=(), graph: LinkGraph | None = None) -> list:
    """Poles (positions into ``scenario.poles``) chosen to cover ``uncovered``, in pick order."""
    graph = graph or build_link_graph(scenario)
    pole_ids = [p.id for p in scenario.poles]
    cover = coverage_sets(graph, uncovered, exclude=existing_daps)
    left = set(int(i) for i in uncovered)
    chosen = []
    while left and cover:
        best = max(cover, key=lambda j: (len(cover[j] & left), -pole_ids[j]))
        gain = cover[best] & left
        if not gain:
            break
        chosen.append(best)
        left -= gain
        del cover[best]
    return chosen


# --- phase 2, step I: routing ---------------------------------------------------------

COST_QUANTUM = 1e-9  # nats; link costs below this count as zero


def link_cost_units(e: float) -> int:
    """Uplink cost -log(1 - e) in whole quanta (rounded to nearest)."""
    return int(round(-math.log1p(-e) / COST_QUANTUM))


def meter_weights(scenario, graph: LinkGraph, parent_eps) -> np.ndarray:
    """Arrival rate (1/s) a meter's own traffic puts on its DAP, inflated by retransmissions."""
    lam0 = sum(t.rate for t in scenario.traffic)
    eps = np.clip(np.nan_to_num(np.asarray(parent_eps, dtype=float), nan=0.0), 0.0, 1.0 - 1e-12)
    return lam0 / (1.0 - eps)


def phase2_routes(scenario, daps, graph: LinkGraph | None = None, allowed=None) -> RoutingForest:
    """Capacity-aware multi-source Dijkstra over uplink costs.

    Link costs are counted in whole units of ``COST_QUANTUM`` so that
    equal-cost routes compare exactly.  Heap entries are ordered by
    (cost, hops, DAP id, meter id): among equally reliable routes the
    shorter one wins, then the lower DAP id, then the lower meter id.
    Without the hop tie-break, links whose loss rounds to zero would make
    every route free and chains would grow without bound.  A meter is
    attached to a tree only if its DAP's load stays within
    ``mac.dap_capacity_pps``.
    """
    graph = graph or build_link_graph(scenario)
    n = graph.n_sm
    daps = tuple(sorted(int(d) for d in daps))
    sm_ids = [s.id for s in scenario.sms]
    pole_ids = [p.id for p in scenario.poles]
    cap = scenario.mac.dap_capacity_pps
    lam0 = sum(t.rate for t in scenario.traffic)
    allowed = np.ones(n, dtype=bool) if allowed is None else np.asarray(allowed, dtype=bool)

    parent = np.full(n, UNCONNECTED, dtype=np.int64)
    dap = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    cost = np.full(n, np.inf)
    eps = np.full(n, np.nan)
    load = {d: 0.0 for d in daps}
    best = {}
    heap = []
    for d in daps:
        for i in graph.meters_of_pole(d):
            if not allowed[i]:
                continue
            e = graph.pole_eps(i, d)
            c = (link_cost_units(e), 1)
            key = (int(i), d)
            if c < best.get(key, (math.inf, 0)):
                best[key] = c
                heapq.heappush(heap, (c, pole_ids[d], sm_ids[i], int(i), DIRECT, d, e))
    rev_eps = graph.sm_rev_eps
    order = []
    while heap:
        c, _, _, i, par, d, e = heapq.heappop(heap)
        if parent[i] != UNCONNECTED:
            continue
        w = lam0 / max(1.0 - e, 1e-12)
        if load[d] + w > cap * (1.0 + 1e-12):
            continue
        load[d] += w
        parent[i], dap[i], cost[i], eps[i] = par, d, c[0] * COST_QUANTUM, e
        depth[i] = 1 if par == DIRECT else depth[par] + 1
        order.append(i)
        # meters that could use i as their parent
        for k in range(graph.sm_ptr[i], graph.sm_ptr[i + 1]):
            u = int(graph.sm_idx[k])
            if parent[u] != UNCONNECTED or not allowed[u]:
                continue
            e_u = float(rev_eps[k])
            if e_u >= 1.0:
                continue
            cu = (c[0] + link_cost_units(e_u), c[1] + 1)
            key = (u, d)
            if cu < best.get(key, (math.inf, 0)):
                best[key] = cu
                heapq.heappush(heap, (cu, pole_ids[d], sm_ids[u], u, i, d, e_u))
    return RoutingForest(parent, dap, depth, cost, eps, daps, graph.sm_ptr, graph.sm_idx,
                         np.asarray(order, dtype=np.int64))


def dap_loads(scenario, forest: RoutingForest, scope: str = "cluster") -> dict:
    """Retransmission-weighted arrival rate (1/s) into each DAP.

    ``cluster`` sums over every meter routed to the DAP; ``direct`` sums the
    aggregate (own plus forwarded) rate of the DAP's direct children.
    """
    lam0 = sum(t.rate for t in scenario.traffic)
    w = lam0 / np.maximum(1.0 - np.nan_to_num(forest.eps, nan=0.0), 1e-12)
    out = {int(d): 0.0 for d in forest.dap_poles}
    conn = forest.connected
    if scope == "cluster":
        for i in np.flatnonzero(conn):
            d = int(forest.dap[i])
            out[d] = out.get(d, 0.0) + float(w[i])
    elif scope == "direct":
        agg = np.where(conn, w, 0.0)
        for i in forest.order[::-1]:
            if forest.parent[i] >= 0:
                agg[forest.parent[i]] += agg[i]
        for i in np.flatnonzero(forest.parent == DIRECT):
            d = int(forest.dap[i])
            out[d] = out.get(d, 0.0) + float(agg[i])
    else:
        raise ValueError("scope must be cluster or direct")
    return out


# --- phase 2, step II: relocation -------------------------------------------------------


def reaches_all(graph: LinkGraph, members, pole: int) -> bool:
    """True when every meter in ``members`` has an uplink path to ``pole`` inside ``members``."""
    inside = set(int(i) for i in members)
    seen = {int(i) for i in graph.meters_of_pole(pole) if int(i) in inside}
    todo = deque(seen)
    while todo:
        v = todo.popleft()
        for u in graph.sm_neighbors(v):
            u = int(u)
            if u in inside and u not in seen and graph.edge_eps(u, v) < 1.0:
                seen.add(u)
                todo.append(u)
    return len(seen) == len(inside)


def relocate_centroids(scenario, forest: RoutingForest, graph: LinkGraph | None = None) -> tuple:
    """Move each DAP to the unused pole nearest its cluster centroid when all members can still reach it."""
    graph = graph or build_link_graph(scenario)
    xy = scenario.sm_xy
    index = scenario.pole_index
    clusters = forest.clusters()
    in_use = set(int(d) for d in forest.dap_poles)
    out = []
    for d in sorted(in_use, key=lambda j: scenario.poles[j].id):
        members = clusters.get(d, [])
        if not members:
            out.append(d)
            continue
        centroid = xy[members].mean(axis=0)
        cand = None
        k = 1
        while cand is None:
            near = index.nearest(centroid, k)
            free = [int(j) for j in near if int(j) == d or int(j) not in in_use]
            if free:
                cand = free[0]
            elif k >= len(index):
                cand = d
            k *= 2
        if cand != d and reaches_all(graph, members, cand):
            in_use.discard(d)
            in_use.add(cand)
            out.append(cand)
        else:
            out.append(d)
    return tuple(sorted(out))


# --- step III and the overall loop ----------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    daps: int
    added: int
    low_reliability: int
    satisfied: int
    unconnected: int
    note: str = ""


@dataclass
class PlacementSolution:
    scenario: object
    daps: tuple  # pole positions
    forest: RoutingForest
    analysis: ForestAnalysis
    log: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)  # wall time / memory; never written to output files

    @property
    def dap_ids(self) -> list:
        return [self.scenario.poles[j].id for j in self.daps]

    @property
    def unconnected(self) -> list:
        return [int(i) for i in np.flatnonzero(~self.forest.connected)]

    @property
    def unconnected_ids(self) -> list:
        return [self.scenario.sms[i].id for i in self.unconnected]

    def convergence_ratios(self) -> list:
        """nu_k = low_{k+1} / low_k over consecutive step-III iterations."""
        lows = [r.low_reliability for r in self.log]
        return [b / a for a, b in zip(lows, lows[1:]) if a > 0]


def _route_and_evaluate(scenario, graph, daps, relocate: bool):
    forest = phase2_routes(scenario, daps, graph)
    if relocate:
        moved = relocate_centroids(scenario, forest, graph)
        if moved != tuple(sorted(daps)):
            forest = phase2_routes(scenario, moved, graph)
            daps = moved
    return tuple(sorted(daps)), forest, evaluate_forest(forest, scenario.config)


def prune_unreliable(scenario, forest: RoutingForest, analysis: ForestAnalysis | None = None):
    """Disconnect meters below the target (with their subtrees) until every connected meter meets it."""
    rho = scenario.rho
    analysis = analysis or evaluate_forest(forest, scenario.config)
    for _ in range(forest.n + 1):
        ok = analysis.satisfied(rho)
        if np.all(ok | ~forest.connected):
            break
        forest = forest.restrict(ok)
        analysis = evaluate_forest(forest, scenario.config)
    used = tuple(sorted({int(d) for d in forest.dap[forest.connected]}))
    if used != tuple(forest.dap_poles):
        forest = RoutingForest(forest.parent, forest.dap, forest.depth, forest.cost, forest.eps, used,
                               forest.nbr_ptr, forest.nbr_idx)
    return forest, analysis


def step3_add_daps(scenario, daps, analysis: ForestAnalysis, graph: LinkGraph | None = None) -> list:
    """New poles covering the meters that miss the reliability target (existing DAPs kept)."""
    graph = graph or build_link_graph(scenario)
    low = np.flatnonzero(analysis.forest.connected & ~analysis.satisfied(scenario.rho))
    if not len(low):
        return []
    return phase1_greedy(scenario, low, existing_daps=daps, graph=graph)


def plan(scenario, relocate: bool = True, max_iterations: int | None = None, measure: bool = False) -> PlacementSolution:
    """Phase 1, then routing/relocation and step III until every reachable meter meets the target."""
    t0 = time.perf_counter()
    if measure:
        tracemalloc.start()
    graph = build_link_graph(scenario)
    rho = scenario.rho
    n_poles = len(scenario.poles)
    limit = n_poles if max_iterations is None else max_iterations

    daps = phase1_greedy(scenario, range(len(scenario.sms)), graph=graph)
    daps, forest, analysis = _route_and_evaluate(scenario, graph, daps, relocate)
    sat = int(analysis.satisfied(rho).sum())

    def record(it, added, note=""):
        low = int((forest.connected & ~analysis.satisfied(rho)).sum())
        log.append(IterationRecord(it, len(daps), added, low, sat, int((~forest.connected).sum()), note))
        return low

    log = []
    low = record(0, len(daps))
    it = 0
    while low and it < limit:
        it += 1
        new = step3_add_daps(scenario, daps, analysis, graph)
        if not new:
            log[-1].note = "no pole covers the remaining low-reliability meters"
            break
        cand = tuple(sorted(set(daps) | set(new)))
        c_daps, c_forest, c_analysis = _route_and_evaluate(scenario, graph, cand, relocate)
        c_sat = int(c_analysis.satisfied(rho).sum())
        note = ""
        if c_sat < sat and relocate:
            c_daps, c_forest, c_analysis = _route_and_evaluate(scenario, graph, cand, False)
            c_sat = int(c_analysis.satisfied(rho).sum())
            note = "relocation skipped"
        if c_sat < sat:
            log[-1].note = "adding DAPs lowered satisfaction; kept previous iteration"
            break
        daps, forest, analysis, sat = c_daps, c_forest, c_analysis, c_sat
        low = record(it, len(new), note)

    forest, analysis = prune_unreliable(scenario, forest, analysis)
    daps = tuple(forest.dap_poles)
    stats = {"wall_time_s": time.perf_counter() - t0, "iterations": it}
    if measure:
        stats["peak_traced_mb"] = tracemalloc.get_traced_memory()[1] / 2 ** 20
        tracemalloc.stop()
    return PlacementSolution(scenario, daps, forest, analysis, log, stats)
