"""One test per acceptance criterion; each prints a single PASS/FAIL line (run with -s to see them)."""
import functools
import json
import subprocess
import sys
import time

import numpy as np

from dapplan.checker import check_solution
from dapplan.cli import main
from dapplan.des import queue_statistics, simulate_des, validate
from dapplan.macdelay import (NodeMacContext, _fp_map, _neighbor_matrix, csma_fixed_point, csma_reliability,
                              evaluate_forest, poisson_binomial, queue_wait, stationary_distribution,
                              transition_matrix)
from dapplan.oracle import OPTIMAL, approximation_bound, exact_min_daps, pb_oracle
from dapplan.params import MacParams, PlanConfig, TrafficClass
from dapplan.placement import phase2_routes, plan
from dapplan.scenario import DENSITY_PRESETS, Scenario, generate_synthetic
from topologies import chain, hub, pole, sm, star, star_of_chains


def report(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def small_instances():
    """30 seeded instances, 30..60 meters, 10..15 poles, cycling rural/suburban/urban."""
    out = []
    for k in range(30):
        prof = ("rural", "suburban", "urban")[k % 3]
        n, m = 30 + 2 * k % 31, 10 + k % 6
        out.append(generate_synthetic(n, m, n / DENSITY_PRESETS[prof], prof, 100 + k))
    return out


def larger_instances():
    tail = Scenario([sm(i, 150.0 * (i + 1), 0.0) for i in range(20)] + [pole(20, 0, 0), pole(21, 3100, 0)],
                    PlanConfig())
    return [generate_synthetic(47, 43, 47 / 23.5, "rural", 1),
            generate_synthetic(300, 40, 300 / 155.2, "suburban", 2),
            generate_synthetic(425, 45, 425 / 155.2, "suburban", 2, PlanConfig(rho=0.98)),
            generate_synthetic(161, 24, 161 / 958.3, "urban", 3),
            chain(16), chain(25), tail, hub(60)]


@functools.lru_cache(maxsize=None)
def planned():
    """(scenario, solution, heuristic seconds) for every instance the suite plans."""
    runs = []
    for sc in small_instances() + larger_instances():
        t0 = time.perf_counter()
        sol = plan(sc)
        runs.append((sc, sol, time.perf_counter() - t0))
    return runs


def test_criterion_1_poisson_binomial_matches_dp():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        p = rng.uniform(0, 1, int(rng.integers(0, 26)))
        worst = max(worst, float(np.max(np.abs(poisson_binomial(p).pmf - pb_oracle(p)))))
    wall = time.perf_counter() - t0
    assert report(1, worst < 1e-9 and wall < 5, f"max |dft - dp| = {worst:.2e}, {wall:.2f} s")


def test_criterion_2_markov_stationarity():
    rng = np.random.default_rng(7)
    worst_res = worst_sum = 0.0
    for _ in range(100):
        stages = int(rng.integers(0, 6))
        windows = tuple(int(w) for w in np.sort(rng.integers(1, 33, stages + 1)))
        mac = MacParams(max_retries=int(rng.integers(1, 6)), max_backoff_stage=stages, backoff_windows=windows)
        T = transition_matrix(*rng.uniform(0.001, 0.999, 3), mac)
        pi = stationary_distribution(T)
        worst_res = max(worst_res, float(np.max(np.abs(pi @ T - pi))))
        worst_sum = max(worst_sum, abs(float(pi.sum()) - 1.0))
    ok = worst_res < 1e-10 and worst_sum < 1e-12
    assert report(2, ok, f"max residual {worst_res:.2e}, max |sum - 1| {worst_sum:.2e}")


def test_criterion_3_csma_fixed_point():
    rng = np.random.default_rng(3)
    mac = MacParams()
    worst = worst_remap = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 30))
        reach = int(rng.integers(1, 6))
        neigh = [[j for j in range(n) if j != i and abs(i - j) <= reach] for i in range(n)]
        ptr = np.cumsum([0] + [len(v) for v in neigh])
        idx = np.array([j for v in neigh for j in v], dtype=np.int64)
        p, eps = rng.uniform(0, 0.6, n), rng.uniform(0, 0.3, n)
        fp = csma_fixed_point(p, eps, ptr, idx, mac)
        worst = max(worst, fp.residual)
        # independent route: one more application of the map must not move the answer
        new = _fp_map(fp.xi, p, eps, _neighbor_matrix(ptr, idx, n), mac)[0]
        worst_remap = max(worst_remap, float(np.max(np.abs(new - fp.xi))))
    single = MacParams(max_retries=1, max_backoff_stage=0, backoff_windows=(1,))
    r = csma_reliability(NodeMacContext(eps=0.2), 3, single)
    ok = worst < 1e-9 and worst_remap < 1e-9 and abs(r - 0.8) <= 1e-12
    assert report(3, ok, f"residual {worst:.2e}, remap {worst_remap:.2e}, hand-unrolled R = {r!r}")


def test_criterion_4_pk_queue():
    cfg = PlanConfig(traffic=(TrafficClass("X", "NC", 100, 1.0, 5.0, "poisson"),))
    sc = star(1, config=cfg)
    f = phase2_routes(sc, [0])
    ey = evaluate_forest(f, cfg).nc.mean[0]
    rate = 0.2 / ey / cfg.mac.slot_s
    t0 = time.perf_counter()
    res = simulate_des(f, cfg, 1.2e5 / rate, seed=11, traffic_scale=rate)
    wall = time.perf_counter() - t0
    q = queue_statistics(res, 0, "NC")
    util = q["lambda"] * q["ey"]
    pk = queue_wait(q["lambda"], q["ey2"], 1 / q["ey"])
    rel = abs(q["mean_wait"] / pk - 1)
    ok = q["packets"] >= 1e5 and util <= 0.3 and rel <= 0.1 and wall < 60
    assert report(4, ok, f"{q['packets']} packets, utilization {util:.3f}, simulated wait {q['mean_wait']:.4f} "
                         f"vs PK {pk:.4f} slots ({rel:.1%}), {wall:.1f} s")


def test_criterion_5_analysis_matches_simulation():
    cases = {"chain8": chain(8), "chain12": chain(12), "chain16": chain(16), "star40": star(40),
             "arms6x14": star_of_chains(6, 14), "hub50": hub(50), "hub149": hub(149)}
    t0 = time.perf_counter()
    gaps = {}
    for name, sc in cases.items():
        f = phase2_routes(sc, [len(sc.poles) - 1])
        an = evaluate_forest(f, sc.config)
        res = simulate_des(f, sc.config, 10 * 86400, seed=1)
        rep = validate(sc, f, an.reliability, res, min_samples=200)
        assert len(rep.rows) == f.connected.sum() * len(sc.traffic)
        gaps[name] = rep.max_gap
    wall = time.perf_counter() - t0
    ok = max(gaps.values()) <= 0.05 and wall < 300
    detail = " ".join(f"{k}={v:.3f}" for k, v in gaps.items())
    assert report(5, ok, f"max gap per topology: {detail}; {wall:.0f} s")


def test_criterion_6_heuristic_vs_exact():
    ratios, bad = [], []
    for sc, sol, wall in planned()[:30]:
        res = exact_min_daps(sc, timeout=600)
        n = len(sc.sms)
        k = len(sol.daps)
        ratios.append(k / max(res.count, 1))
        if res.status != OPTIMAL or not res.count <= k <= approximation_bound(n) * max(res.count, 1) or wall >= 10:
            bad.append((n, len(sc.poles), k, res.count, res.status, round(wall, 2)))
    med = float(np.median(ratios))
    ok = not bad and med <= 1.5
    assert report(6, ok, f"30 instances, median ratio {med:.3f}, max ratio {max(ratios):.3f}, violations {bad}")


def test_criterion_7_every_solution_passes_checker():
    failures = []
    total = 0
    for sc, sol, _ in planned():
        total += 1
        v = check_solution(sc, sol.forest, sol.unconnected)
        if v:
            failures.append((len(sc.sms), v[:2]))
    for sc in small_instances()[:10]:
        total += 1
        res = exact_min_daps(sc)
        v = check_solution(sc, res.forest, np.flatnonzero(~res.forest.connected))
        if v:
            failures.append((len(sc.sms), v[:2]))
    assert report(7, not failures, f"{total - len(failures)}/{total} solutions sound {failures}")


def test_criterion_8_monotone_improvement():
    bad = []
    for sc, sol, _ in planned():
        sat = [r.satisfied for r in sol.log]
        if sat != sorted(sat) or len(sol.log) - 1 > len(sc.poles):
            bad.append((len(sc.sms), len(sc.poles), sat))
    longest = max(len(sol.log) for _, sol, _ in planned())
    assert report(8, not bad, f"{len(planned())} instances, longest loop {longest} rounds, violations {bad}")


SCALE = """
import json, resource, time
from dapplan.placement import plan
from dapplan.scenario import generate_synthetic
sc = generate_synthetic(8000, 800, 8000 / 155.2, "suburban", 7)
t0 = time.perf_counter()
sol = plan(sc)
wall = time.perf_counter() - t0
print(json.dumps({"wall": wall, "rss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024,
                  "daps": len(sol.daps), "unconnected": len(sol.unconnected)}))
"""


def test_criterion_9_scale():
    out = subprocess.run([sys.executable, "-c", SCALE], capture_output=True, text=True, timeout=1200, check=True)
    r = json.loads(out.stdout.strip().splitlines()[-1])
    ok = r["wall"] < 600 and r["rss_mb"] < 1024
    assert report(9, ok, f"8000/800 planned in {r['wall']:.1f} s, peak RSS {r['rss_mb']:.0f} MB, "
                         f"{r['daps']} DAPs, {r['unconnected']} unconnected")


def test_criterion_10_determinism(tmp_path):
    gen = tmp_path / "g"
    assert main(["generate", "--profile", "suburban", "--sms", "400", "--poles", "40", "--seed", "5",
                 "--out", str(gen)]) == 0
    scen, cfg = str(gen / "scenario.csv"), str(gen / "config")
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["plan", "--scenario", scen, "--config", cfg, "--seed", "5", "--diagnostics",
                     "--out", str(out)]) == 0
        assert main(["validate", "--scenario", scen, "--config", cfg, "--solution", str(out / "solution.json"),
                     "--duration", "86400", "--seed", "5", "--packets", "--out", str(out / "v")]) in (0, 5)
        assert main(["report", "--scenario", scen, "--config", cfg, "--solution", str(out / "solution.json"),
                     "--seed", "5", "--out", str(out / "r")]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = len(files) >= 10 and not differ
    assert report(10, ok, f"{len(files)} files compared, differing: {differ}")
