"""Exact minimum-DAP search for small instances and brute-force probability oracles."""
from __future__ import annotations

import itertools
import math
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .graph import LinkGraph, build_link_graph
from .placement import phase2_routes, prune_unreliable

OPTIMAL = "optimal"
INCOMPLETE = "incomplete"


class OracleRefusal(ValueError):
    pass


@dataclass
class ExactResult:
    count: int | None  # optimum (None when incomplete)
    subset: tuple | None  # pole ids of one optimal subset
    status: str
    explored: int
    wall_time_s: float
    lower_bound: int
    target: tuple  # meter positions every feasible subset must satisfy
    forest: object = None


def reachable_meters(graph: LinkGraph, pole: int) -> set:
    """Meters with an uplink path (possibly multi-hop) to ``pole``."""
    seen = set(int(i) for i in graph.meters_of_pole(pole))
    todo = deque(seen)
    while todo:
        v = todo.popleft()
        for u in graph.sm_neighbors(v):
            u = int(u)
            if u not in seen and graph.edge_eps(u, v) < 1.0:
                seen.add(u)
                todo.append(u)
    return seen


def _satisfied_set(scenario, graph, poles) -> set:
    forest = phase2_routes(scenario, poles, graph)
    forest, _ = prune_unreliable(scenario, forest)
    return set(int(i) for i in np.flatnonzero(forest.connected)), forest


def exact_min_daps(scenario, max_poles: int = 20, max_sms: int = 80, timeout: float = 120.0) -> ExactResult:
    """Smallest pole subset under which every satisfiable meter meets the target.

    A meter is satisfiable when it meets the target with every pole used
    as a DAP.  Subsets are tried in order of size (lexicographic within a
    size) and skipped when their reachability union misses a target meter;
    the rest are routed and audited exactly as the heuristic would.
    """
    m, n = len(scenario.poles), len(scenario.sms)
    if m > max_poles or n > max_sms:
        raise OracleRefusal(f"instance has {n} meters / {m} poles; limits are {max_sms} / {max_poles}")
    t0 = time.perf_counter()
    graph = build_link_graph(scenario)
    target, _ = _satisfied_set(scenario, graph, range(m))
    target_t = tuple(sorted(target))
    if not target:
        return ExactResult(0, (), OPTIMAL, 0, time.perf_counter() - t0, 0, target_t)
    tmask = sum(1 << i for i in target)
    cover = [sum(1 << i for i in reachable_meters(graph, j) if i in target) for j in range(m)]
    ids = [p.id for p in scenario.poles]
    explored = 0
    for k in range(1, m + 1):
        for combo in itertools.combinations(range(m), k):
            if time.perf_counter() - t0 > timeout:
                return ExactResult(None, None, INCOMPLETE, explored, time.perf_counter() - t0, k, target_t)
            u = 0
            for j in combo:
                u |= cover[j]
            if u & tmask != tmask:
                continue
            explored += 1
            got, forest = _satisfied_set(scenario, graph, combo)
            if target <= got:
                subset = tuple(sorted(ids[j] for j in combo))
                return ExactResult(k, subset, OPTIMAL, explored, time.perf_counter() - t0, k, target_t, forest)
    # unreachable: the full set is feasible by construction
    raise AssertionError("no feasible subset although all poles satisfy the target")


def approximation_bound(n_sm: int) -> float:
    """Greedy set-cover factor ln(N), floored at 1 for tiny instances."""
    return max(1.0, math.log(max(n_sm, 1)))


# --- Poisson-binomial oracles -------------------------------------------------------


def pb_oracle(p, mode: str = "dp") -> np.ndarray:
    """Exact pmf of a sum of independent Bernoullis.

    ``dp`` convolves one factor at a time; ``enumerate`` sums all 2^n outcomes (n <= 20).
    """
    p = [float(x) for x in p]
    n = len(p)
    if mode == "dp":
        pmf = np.zeros(n + 1)
        pmf[0] = 1.0
        for k, q in enumerate(p):
            pmf[1:k + 2] = pmf[1:k + 2] * (1.0 - q) + pmf[0:k + 1] * q
            pmf[0] *= 1.0 - q
        return pmf
    if mode == "enumerate":
        if n > 20:
            raise ValueError("enumeration limited to n <= 20")
        pmf = np.zeros(n + 1)
        for bits in itertools.product((0, 1), repeat=n):
            pr = 1.0
            for b, q in zip(bits, p):
                pr *= q if b else 1.0 - q
            pmf[sum(bits)] += pr
        return pmf
    raise ValueError("mode must be dp or enumerate")
