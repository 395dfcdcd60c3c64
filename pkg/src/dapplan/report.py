"""Solution files, GeoJSON, CDF tables and summaries.

Every file starts with a provenance line (tool version, seed, config
digest).  Nothing time- or machine-dependent is written, so identical
inputs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from . import __version__
from .forest import DIRECT, UNCONNECTED, RoutingForest
from .graph import build_link_graph
from .scenario import unproject

FORMAT_VERSION = 1


def header(scenario, seed) -> dict:
    return {"tool": "dapplan", "version": __version__, "format": FORMAT_VERSION, "seed": seed,
            "config": scenario.config.digest()}


def header_line(scenario, seed) -> str:
    return f"# dapplan {__version__} seed={seed} config={scenario.config.digest()}\n"


def _f(x, digits: int = 12):
    """Round floats so the text does not depend on the last ulp."""
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return float(f"{float(x):.{digits}g}")


# --- solution JSON -------------------------------------------------------------------


def solution_dict(solution) -> dict:
    sc = solution.scenario
    f = solution.forest
    an = solution.analysis
    sm_ids = [s.id for s in sc.sms]
    pole_ids = [p.id for p in sc.poles]
    meters = []
    for i in range(f.n):
        if not f.connected[i]:
            continue
        p = int(f.parent[i])
        meters.append({
            "id": sm_ids[i],
            "parent": pole_ids[int(f.dap[i])] if p == DIRECT else sm_ids[p],
            "parent_is_dap": p == DIRECT,
            "dap": pole_ids[int(f.dap[i])],
            "depth": int(f.depth[i]),
            "cost": _f(f.cost[i]),
            "per": _f(f.eps[i]),
            "reliability": {name: _f(an.reliability[i, c]) for c, name in enumerate(an.class_names)},
        })
    return {
        "daps": sorted(solution.dap_ids),
        "meters": meters,
        "unconnected": sorted(solution.unconnected_ids),
        "iterations": [
            {"iteration": r.iteration, "daps": r.daps, "added": r.added, "low_reliability": r.low_reliability,
             "satisfied": r.satisfied, "unconnected": r.unconnected, "note": r.note}
            for r in solution.log
        ],
        "convergence_ratios": [_f(v) for v in solution.convergence_ratios()],
        "ranges_m": {"d_smax": _f(sc.d_smax), "d_pmax": _f(sc.d_pmax)},
        "rho": sc.rho,
    }


def solution_json(solution, seed) -> str:
    """JSON whose first line is the header object."""
    head = json.dumps(header(solution.scenario, seed), sort_keys=True)
    body = json.dumps(solution_dict(solution), indent=1, sort_keys=True)
    return '{"header": ' + head + ",\n" + body[1:].lstrip("\n") + "\n"


def load_solution(text: str, scenario) -> RoutingForest:
    """Rebuild the routing forest stored in a solution file."""
    data = json.loads(text)
    sm_pos = {s.id: k for k, s in enumerate(scenario.sms)}
    pole_pos = {p.id: k for k, p in enumerate(scenario.poles)}
    n = len(scenario.sms)
    graph = build_link_graph(scenario)
    parent = np.full(n, UNCONNECTED, dtype=np.int64)
    dap = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    cost = np.full(n, np.inf)
    eps = np.full(n, np.nan)
    try:
        for m in data["meters"]:
            i = sm_pos[m["id"]]
            dap[i] = pole_pos[m["dap"]]
            parent[i] = DIRECT if m["parent_is_dap"] else sm_pos[m["parent"]]
            depth[i] = m["depth"]
        daps = tuple(sorted(pole_pos[d] for d in data["daps"]))
    except KeyError as exc:
        raise ValueError(f"solution refers to unknown node {exc}") from None
    for i in np.flatnonzero(parent != UNCONNECTED):
        eps[i] = graph.pole_eps(i, int(dap[i])) if parent[i] == DIRECT else graph.edge_eps(i, int(parent[i]))
    forest = RoutingForest(parent, dap, depth, cost, eps, daps, graph.sm_ptr, graph.sm_idx)
    with np.errstate(divide="ignore"):
        step = -np.log1p(-np.minimum(np.nan_to_num(eps, nan=1.0), 1.0))
    for i in forest.order:
        p = parent[i]
        cost[i] = step[i] + (0.0 if p == DIRECT else cost[p])
    return forest


# --- GeoJSON ---------------------------------------------------------------------------


def _coords(scenario, x, y):
    if scenario.origin is None:
        return [_f(x, 10), _f(y, 10)]
    lat, lon = unproject(x, y, scenario.origin)
    return [_f(lon, 10), _f(lat, 10)]


def solution_geojson(solution, seed) -> str:
    sc = solution.scenario
    f = solution.forest
    feats = []
    dap_set = set(solution.daps)
    for j, p in enumerate(sc.poles):
        feats.append({"type": "Feature", "geometry": {"type": "Point", "coordinates": _coords(sc, p.x, p.y)},
                      "properties": {"id": p.id, "kind": "pole", "dap": j in dap_set}})
    for i, s in enumerate(sc.sms):
        props = {"id": s.id, "kind": "sm", "connected": bool(f.connected[i])}
        if f.connected[i]:
            props["depth"] = int(f.depth[i])
        feats.append({"type": "Feature", "geometry": {"type": "Point", "coordinates": _coords(sc, s.x, s.y)},
                      "properties": props})
    for i, s in enumerate(sc.sms):
        p = int(f.parent[i])
        if p == UNCONNECTED:
            continue
        to = sc.poles[int(f.dap[i])] if p == DIRECT else sc.sms[p]
        feats.append({"type": "Feature",
                      "geometry": {"type": "LineString", "coordinates": [_coords(sc, s.x, s.y), _coords(sc, to.x, to.y)]},
                      "properties": {"from": s.id, "to": to.id, "kind": "link"}})
    doc = {"type": "FeatureCollection", "dapplan": header(sc, seed), "features": feats}
    text = json.dumps(doc, sort_keys=True)
    return text + "\n"


# --- CSV helpers -------------------------------------------------------------------------


def csv_text(scenario, seed, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(header_line(scenario, seed))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if v is None else (repr(_f(v)) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def _rounded(values) -> np.ndarray:
    return np.array([_f(x) for x in np.asarray(values, dtype=float).ravel()], dtype=float)


def cdf_rows(values):
    """(value, fraction <= value) over the distinct values, ascending."""
    v = np.sort(_rounded(values))
    if not len(v):
        return []
    uniq, counts = np.unique(v, return_counts=True)
    cum = np.cumsum(counts) / len(v)
    cum[-1] = 1.0
    return list(zip(uniq.tolist(), cum.tolist()))


def multi_cdf_rows(columns: dict):
    """One row per distinct value across all series; each series' CDF evaluated there."""
    columns = {k: _rounded(v) for k, v in columns.items()}
    allv = np.unique(np.concatenate(list(columns.values()) or [np.zeros(0)]))
    rows = []
    for x in allv:
        row = [float(x)]
        for v in columns.values():
            row.append(float(np.mean(v <= x)) if len(v) else 1.0)
        rows.append(row)
    return rows


def hops_cdf(solution, seed) -> str:
    f = solution.forest
    rows = cdf_rows(f.depth[f.connected])
    return csv_text(solution.scenario, seed, ["hops", "cdf"], [(int(h), c) for h, c in rows])


def connections_cdf(solution, seed) -> str:
    sizes = [len(v) for v in solution.forest.clusters().values()]
    return csv_text(solution.scenario, seed, ["connections", "cdf"], [(int(s), c) for s, c in cdf_rows(sizes)])


def queue_delay_cdf(solution, seed) -> str:
    """Analytic mean queueing delay per connected meter, in milliseconds."""
    an = solution.analysis
    conn = solution.forest.connected
    slot_ms = solution.scenario.mac.slot_s * 1e3
    cols = {"cdf_nc": an.nc.tq_real[conn] * slot_ms, "cdf_mc": an.mc.tq_real[conn] * slot_ms}
    cols = {k: v[np.isfinite(v)] for k, v in cols.items()}
    return csv_text(solution.scenario, seed, ["delay_ms", "cdf_nc", "cdf_mc"], multi_cdf_rows(cols))


def diagnostics_csv(solution, seed) -> str:
    sm_ids = [s.id for s in solution.scenario.sms]
    return csv_text(solution.scenario, seed, ["node", "class", "lambda", "mu", "p", "alpha", "xi", "chi", "TQ", "S", "R"],
                    solution.analysis.rows(sm_ids))


def summary_text(solution, seed) -> str:
    sc = solution.scenario
    f = solution.forest
    depth = f.depth[f.connected]
    lines = [header_line(sc, seed).rstrip("\n")]
    lines.append(f"smart meters: {len(sc.sms)}")
    lines.append(f"poles: {len(sc.poles)}")
    lines.append(f"ranges (m): d_smax={sc.d_smax:.1f} d_pmax={sc.d_pmax:.1f}")
    lines.append(f"DAPs: {len(solution.daps)}")
    lines.append(f"DAP ids: {' '.join(str(d) for d in sorted(solution.dap_ids))}")
    lines.append(f"unconnected meters: {len(solution.unconnected)}")
    if solution.unconnected:
        lines.append(f"unconnected ids: {' '.join(str(u) for u in sorted(solution.unconnected_ids))}")
    lines.append(f"max hops: {int(depth.max()) if len(depth) else 0}")
    lines.append(f"mean hops: {float(depth.mean()) if len(depth) else 0.0:.3f}")
    lines.append("iterations (iteration: DAPs, added, low-reliability, satisfied, unconnected):")
    for r in solution.log:
        note = f"  [{r.note}]" if r.note else ""
        lines.append(f"  {r.iteration}: {r.daps}, {r.added}, {r.low_reliability}, {r.satisfied}, {r.unconnected}{note}")
    nu = solution.convergence_ratios()
    lines.append("convergence ratios: " + (" ".join(f"{v:.4f}" for v in nu) if nu else "n/a"))
    mins = solution.analysis.min_reliability()[f.connected]
    if len(mins):
        lines.append(f"lowest reliability: {float(mins.min()):.6f} (target {sc.rho})")
    return "\n".join(lines) + "\n"
