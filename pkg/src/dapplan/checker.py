"""Standalone audit of a placement: structure, coverage, ranges, capacity and reliability."""
from __future__ import annotations

import math

import numpy as np

from .forest import DIRECT, UNCONNECTED
from .graph import build_link_graph
from .macdelay import evaluate_forest
from .placement import dap_loads


def check_solution(scenario, forest, unconnected=None, capacity_scope: str = "cluster",
                   check_reliability: bool = True, graph=None) -> list:
    """Return a list of human-readable violations (empty when the solution is sound).

    Reliability is recomputed from scratch rather than read from the
    solution, so a stale or edited analysis cannot hide a violation.
    """
    out = []
    n = len(scenario.sms)
    n_pole = len(scenario.poles)
    graph = graph or build_link_graph(scenario)
    parent, dap, depth = forest.parent, forest.dap, forest.depth
    daps = [int(d) for d in forest.dap_poles]

    if len(parent) != n:
        return [f"forest has {len(parent)} entries for {n} meters"]
    if len(set(daps)) != len(daps):
        out.append("duplicate DAP poles")
    for d in daps:
        if not 0 <= d < n_pole:
            out.append(f"DAP {d} is not a pole")

    dap_set = set(daps)
    for i in range(n):
        p = int(parent[i])
        if p == UNCONNECTED:
            continue
        if p == i:
            out.append(f"meter {i} is its own parent")
            continue
        if p != DIRECT and not 0 <= p < n:
            out.append(f"meter {i} has invalid parent {p}")
            continue
        if p >= 0 and int(parent[p]) == i:
            out.append(f"meters {i} and {p} are each other's parent")
        # walk to the root; a chain longer than n means a cycle
        j, steps = i, 0
        while j >= 0 and steps <= n:
            j = int(parent[j])
            steps += 1
        if j == UNCONNECTED:
            out.append(f"meter {i} hangs off an unconnected meter")
        elif j != DIRECT:
            out.append(f"meter {i} is on a cycle")
        if int(dap[i]) not in dap_set:
            out.append(f"meter {i} uses pole {int(dap[i])} which is not a DAP")
        if p >= 0 and int(dap[p]) != int(dap[i]):
            out.append(f"meter {i} and its parent report different DAPs")
        want = 1 if p == DIRECT else int(depth[p]) + 1
        if int(depth[i]) != want:
            out.append(f"meter {i} depth {int(depth[i])} != {want}")
        e = graph.pole_eps(i, int(dap[i])) if p == DIRECT else graph.edge_eps(i, p)
        if not e < 1.0:
            out.append(f"meter {i} uses a link out of range or unusable")

    if unconnected is not None:
        listed = set(int(u) for u in unconnected)
        conn = forest.connected
        for i in range(n):
            if conn[i] and i in listed:
                out.append(f"meter {i} is both connected and listed unconnected")
            if not conn[i] and i not in listed:
                out.append(f"meter {i} is neither connected nor listed unconnected")

    cap = scenario.mac.dap_capacity_pps
    for d, load in dap_loads(scenario, forest, capacity_scope).items():
        if load > cap * (1.0 + 1e-9):
            out.append(f"DAP {d} load {load:.4g}/s exceeds capacity {cap:g}/s")

    if check_reliability and not out:
        analysis = evaluate_forest(forest, scenario.config)
        rho = scenario.rho
        for i in np.flatnonzero(forest.connected):
            r = analysis.reliability[i]
            if np.any(~np.isfinite(r)) or np.any(r < rho - 1e-12):
                worst = float(np.nanmin(r)) if np.any(np.isfinite(r)) else math.nan
                out.append(f"meter {i} reliability {worst:.4f} < {rho}")
    return out
