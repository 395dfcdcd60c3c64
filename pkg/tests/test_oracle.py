import numpy as np
import pytest

from dapplan.checker import check_solution
from dapplan.oracle import INCOMPLETE, OPTIMAL, OracleRefusal, approximation_bound, exact_min_daps, reachable_meters
from dapplan.graph import build_link_graph
from dapplan.params import PlanConfig
from dapplan.placement import plan
from dapplan.scenario import Scenario, generate_synthetic
from topologies import pole, sm, star


def test_one_meter_one_pole():
    res = exact_min_daps(star(1))
    assert res.status == OPTIMAL and res.count == 1 and res.subset == (1,)


def test_two_far_clusters_need_two_daps():
    nodes = [sm(0, 0, 0), sm(1, 30, 0), sm(2, 5000, 0), sm(3, 5030, 0), pole(10, 15, 20), pole(11, 5015, 20)]
    sc = Scenario(nodes, PlanConfig())
    g = build_link_graph(sc)
    assert reachable_meters(g, 0) == {0, 1} and reachable_meters(g, 1) == {2, 3}
    res = exact_min_daps(sc)
    assert res.count == 2 and res.subset == (10, 11)


def test_result_passes_checker():
    sc = generate_synthetic(30, 8, 30 / 155.2, "suburban", 3)
    res = exact_min_daps(sc)
    assert res.status == OPTIMAL
    assert check_solution(sc, res.forest, np.flatnonzero(~res.forest.connected)) == []
    assert set(res.target) <= set(np.flatnonzero(res.forest.connected).tolist())


def test_pole_permutation_invariance():
    sc = generate_synthetic(30, 8, 30 / 155.2, "suburban", 5)
    sms = [n for n in sc.nodes if n.is_sm]
    poles = [n for n in sc.nodes if not n.is_sm]
    shuffled = Scenario(sms + poles[::-1], sc.config)
    assert exact_min_daps(sc).count == exact_min_daps(shuffled).count


def test_refusal_and_timeout():
    big = generate_synthetic(90, 25, 1.0, "suburban", 1)
    with pytest.raises(OracleRefusal):
        exact_min_daps(big)
    sc = generate_synthetic(40, 12, 40 / 155.2, "suburban", 2)
    res = exact_min_daps(sc, timeout=0.0)
    assert res.status == INCOMPLETE and res.count is None


@pytest.mark.parametrize("seed", range(4))
def test_heuristic_within_greedy_bound(seed):
    sc = generate_synthetic(30, 10, 30 / 23.5, "rural", seed)
    res = exact_min_daps(sc)
    sol = plan(sc)
    assert res.count <= len(sol.daps) <= approximation_bound(30) * max(res.count, 1)


def test_bound_floor():
    assert approximation_bound(1) == 1.0
    assert approximation_bound(47) == pytest.approx(np.log(47))
