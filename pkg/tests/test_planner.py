import math

import numpy as np
import pytest

from streamglide import planner as P
from streamglide import steering as S
from streamglide.errors import ScenarioError

from conftest import small_scenario_doc


@pytest.fixture(scope="module")
def small():
    return P.scenario_from_dict(small_scenario_doc())


def test_lattice_eight_in_cube():
    assert P.lattice_shape(8, (10, 10, 10)) == (2, 2, 2)
    sc = P.Scenario(((0, 10), (0, 10), (-10, 0)), (1, 1, -1), (9, 9, -9), n_positions=8)
    nodes = P.sample_positions(sc)
    assert nodes.shape == (10, 3)
    assert sorted(set(nodes[:8, 0])) == [2.5, 7.5]


def test_lattice_kilometre_box_count():
    sc = P.Scenario(((-500, 500), (-500, 500), (-800, 0)), (-450, 450, 0), (450, -450, 0), n_positions=1024)
    nodes = P.sample_positions(sc)
    assert nodes.shape == (1026, 3)
    assert np.array_equal(nodes[-2], [-450, 450, 0]) and np.array_equal(nodes[-1], [450, -450, 0])
    box = sc.box
    assert np.all((nodes >= box[:, 0]) & (nodes <= box[:, 1]))


def test_lattice_shape_exact_product():
    for n in [12, 64, 100, 1024, 7]:
        assert math.prod(P.lattice_shape(n, (400, 400, 160))) == n


def test_random_sampling_deterministic():
    kw = dict(bounds=((0, 100), (0, 100), (-50, 0)), start=(1, 1, -1), goal=(99, 99, -49),
              n_positions=50, sampling_mode="random", sampling_seed=7)
    a = P.sample_positions(P.Scenario(**kw))
    b = P.sample_positions(P.Scenario(**kw))
    c = P.sample_positions(P.Scenario(**{**kw, "sampling_seed": 8}))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@pytest.mark.parametrize("over, msg", [
    ({"start": [500, 0, 0]}, "outside"),
    ({"n_positions": 1}, "n_positions"),
    ({"k_neighbors": 0}, "k_neighbors"),
    ({"method": "magic"}, "method"),
    ({"sampling": {"mode": "sobol"}}, "sampling"),
    ({"sampling": {"mode": "lattice", "shape": [3, 3, 3]}}, "shape"),
])
def test_scenario_validation(over, msg):
    with pytest.raises(ScenarioError, match=msg):
        P.scenario_from_dict(small_scenario_doc(**over))


def test_scenario_missing_field():
    doc = small_scenario_doc()
    del doc["field"]
    with pytest.raises(ScenarioError):
        P.scenario_from_dict(doc)


def test_load_bundled_scenarios():
    for name in ["desk_hard.json", "km_box.json"]:
        sc = P.load_scenario(name)
        assert sc.steering.dt == 5.0 and sc.steering.steps == 125 and sc.steering.tol == 5.0
        assert sc.k_neighbors == 27


def test_neighbour_pairs_symmetric_and_unique():
    rng = np.random.default_rng(0)
    pts = rng.random((40, 3))
    pairs = P.neighbour_pairs(pts, 5)
    as_set = {tuple(p) for p in pairs}
    assert len(as_set) == len(pairs)
    assert all((j, i) in as_set for i, j in as_set)
    assert all(i != j for i, j in as_set)
    # every node links to its own 5 nearest
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    for i in range(40):
        for j in np.argsort(d[i])[1:6]:
            assert (i, j) in as_set


def test_two_node_zero_flow_roadmap(model, still_water):
    sc = P.Scenario(((-100, 100), (-100, 100), (-100, 0)), (-50, 0, -10), (50, 0, -70), n_positions=2,
                    k_neighbors=1, sampling_mode="random", field=still_water,
                    steering=S.SteerParams(n_controls=54))
    nodes = np.array([sc.start, sc.goal], dtype=float)
    ctx = P.prepare_roadmap(sc, still_water, nodes)
    rm = P.build_roadmap(sc, context=ctx)
    assert rm.metrics["edges_attempted"] == 2 and rm.metrics["edges_connected"] == 2
    assert {(e.src, e.dst) for e in rm.edges} == {(0, 1), (1, 0)}


def test_equal_depth_pairs_skipped(model, still_water):
    sc = P.Scenario(((-100, 100), (-100, 100), (-100, 0)), (-50, 0, -10), (50, 0, -10), n_positions=2,
                    k_neighbors=1, field=still_water)
    ctx = P.prepare_roadmap(sc, still_water, np.array([sc.start, sc.goal], dtype=float))
    rm = P.build_roadmap(sc, context=ctx)
    assert rm.metrics["equal_depth_skips"] == 2 and rm.metrics["edges_attempted"] == 0
    res = P.plan(sc, context=ctx)
    assert not res.solved and res.plan is None
    assert res.metrics["total_travel_time_s"] == math.inf


def test_dijkstra_triangle():
    rm = P.Roadmap.from_edges(np.zeros((3, 3)) + np.arange(3)[:, None], [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)])
    plan = P.shortest_path(rm, rm.nodes[0], rm.nodes[2])
    assert plan.node_ids == [0, 1, 2] and plan.total_time == 2.0


def test_dijkstra_single_edge_and_unreachable():
    nodes = np.arange(9.0).reshape(3, 3)
    rm = P.Roadmap.from_edges(nodes, [(0, 2, 4.5)])
    plan = P.shortest_path(rm, nodes[0], nodes[2])
    assert plan.edge_ids == [0] and plan.total_time == 4.5
    assert P.shortest_path(rm, nodes[2], nodes[0]) is None
    assert P.dijkstra(3, np.array([0]), np.array([1]), np.array([1.0]), 0, 2) is None


def test_dijkstra_matches_scipy():
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra as sp_dijkstra
    rng = np.random.default_rng(5)
    n = 60
    src = rng.integers(0, n, 400)
    dst = rng.integers(0, n, 400)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    w = rng.uniform(1, 10, src.size)
    # collapse parallel edges to their minimum for the reference graph
    best = {}
    for s, d, x in zip(src, dst, w):
        best[(s, d)] = min(best.get((s, d), np.inf), x)
    ks = list(best)
    g = csr_matrix(([best[k] for k in ks], ([k[0] for k in ks], [k[1] for k in ks])), shape=(n, n))
    ref = sp_dijkstra(g, indices=0)
    for goal in range(1, n):
        found = P.dijkstra(n, src, dst, w, 0, goal)
        if not np.isfinite(ref[goal]):
            assert found is None
            continue
        nodes, edges = found
        assert sum(w[e] for e in edges) == pytest.approx(ref[goal], rel=1e-12)
        assert [src[e] for e in edges] == nodes[:-1] and [dst[e] for e in edges] == nodes[1:]


def test_roadmap_edge_invariants(small):
    rm = P.build_roadmap(small)
    m = rm.metrics
    assert m["n_nodes"] == 66
    assert m["pairs_considered"] == m["equal_depth_skips"] + m["degenerate_skips"] + m["edges_attempted"]
    assert m["edges_connected"] == len(rm) <= m["edges_attempted"] - m["infeasible_skips"]
    assert np.all(rm.nodes[rm.src, 2] != rm.nodes[rm.dst, 2])
    assert np.all(rm.travel_time > 0) and np.all(rm.travel_time <= small.steering.horizon)
    assert np.all(rm.miss <= small.steering.tol)
    assert np.all(np.sign(rm.gamma) == np.sign(rm.nodes[rm.dst, 2] - rm.nodes[rm.src, 2]))


def test_roadmap_is_directed(small):
    rm = P.build_roadmap(small)
    edges = set(zip(rm.src.tolist(), rm.dst.tolist()))
    assert any((d, s) not in edges for s, d in edges)


def test_plan_reintegration_consistency(small):
    res = P.plan(small, n_controls=54)
    assert res.solved
    plan = res.plan
    assert np.array_equal(plan.positions[0], small.start) and np.array_equal(plan.positions[-1], small.goal)
    legs = [leg.travel_time for leg in plan.legs]
    assert plan.total_time == pytest.approx(sum(legs), abs=1e-9)
    for e, leg in zip(plan.edge_ids, plan.legs):
        assert leg.travel_time == res.roadmap.travel_time[e]
        assert leg.miss_distance <= small.steering.tol
        assert np.array_equal(leg.trajectory.positions[0], res.roadmap.nodes[res.roadmap.src[e]])


def test_trajectory_rebuilt_bit_for_bit(small):
    res = P.plan(small, n_controls=54)
    params = small.steer_params(54)
    for leg, e in zip(res.plan.legs, res.plan.edge_ids):
        again, _, _ = S.integrate_to(small.resolved_field(), leg.trajectory.positions[0], leg.control,
                                     res.roadmap.nodes[res.roadmap.dst[e]], params)
        assert np.array_equal(again.positions, leg.trajectory.positions)


def test_more_controls_never_fewer_edges(small):
    ctx = P.prepare_roadmap(small, small.resolved_field())
    counts = [P.build_roadmap(small, n_controls=n, context=ctx).metrics["edges_connected"] for n in (4, 7, 16, 31)]
    assert counts == sorted(counts)
    seeded = [P.build_roadmap(small, n_controls=n, control_seed=3, context=ctx).metrics["edges_connected"]
              for n in (8, 20, 40)]
    assert seeded == sorted(seeded)


def test_worker_count_does_not_change_result(small):
    ctx = P.prepare_roadmap(small, small.resolved_field())
    one = P.build_roadmap(small, context=ctx, workers=1)
    four = P.build_roadmap(small, context=ctx, workers=4)
    for name in ("src", "dst", "travel_time", "controls", "gamma", "miss"):
        assert np.array_equal(getattr(one, name), getattr(four, name), equal_nan=True)
    drop = ("steering_time_s", "sampling_time_s")
    assert {k: v for k, v in one.metrics.items() if k not in drop} == \
        {k: v for k, v in four.metrics.items() if k not in drop}


def test_workers_env(monkeypatch):
    monkeypatch.setenv(P.WORKERS_ENV, "3")
    assert P.resolve_workers() == 3
    assert P.resolve_workers(2) == 2


def test_infeasible_skips_fail_brute_force_too(model):
    doc = small_scenario_doc(field="fields/depth_uniform.json",
                             bounds=[[-300, 300], [-300, 300], [-200, 0]], start=[-250, 250, 0],
                             goal=[250, -250, -200])
    sc = P.scenario_from_dict(doc)
    fld = sc.resolved_field()
    ctx = P.prepare_roadmap(sc, fld)
    rm = P.build_roadmap(sc, context=ctx)
    assert rm.metrics["infeasible_skips"] > 0
    A, B, C = ctx.planes
    bad = np.flatnonzero(np.abs(C) / np.hypot(A, B) > model.max_horizontal_speed()[0])
    assert bad.size == rm.metrics["infeasible_skips"]
    params = sc.steer_params(400)
    out = S.steer_pairs(fld, model, ctx.nodes[ctx.src[bad]], ctx.nodes[ctx.dst[bad]], params, S.BASELINE)
    assert not out.connected.any()
