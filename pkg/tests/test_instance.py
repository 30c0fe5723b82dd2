import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpmedian.instance import (
    SCENARIOS,
    ProblemInstance,
    ScenarioSpec,
    SchemaError,
    Solution,
    evaluate_cost,
    generate_instance,
    instance_to_dict,
    knn_neighbors,
    load_instance,
    load_solution,
    save_instance,
    save_solution,
    validate,
)


def make_instance(nodes, weights, p_schedule, **kw):
    return ProblemInstance(
        id=kw.pop("id", "test"), seed=kw.pop("seed", 0),
        nodes=np.asarray(nodes, float), weights=np.asarray(weights, float),
        p_schedule=tuple(p_schedule), **kw,
    )


def random_instance(rng, n=8, t=2, medians=(2, 3)):
    return generate_instance(ScenarioSpec("rand", n, t, medians), seed=int(rng.integers(1 << 30)))


class TestEvaluateCost:
    def test_single_node_serves_itself(self):
        inst = make_instance([[0.5, 0.5]], [[1.0]], [1])
        assert evaluate_cost(inst, [(0,)]) == 0.0

    def test_two_node_symmetry(self):
        inst = make_instance([[0, 0], [1, 0]], [[1.0, 1.0]], [1])
        assert evaluate_cost(inst, [(0,)]) == pytest.approx(1.0)
        assert evaluate_cost(inst, [(1,)]) == pytest.approx(1.0)

    def test_three_node_enumeration(self):
        # all C(3,1) placements: node 0 -> 2.0 is the minimum
        inst = make_instance([[0, 0], [1, 0], [0, 1]], [[1.0, 1.0, 1.0]], [1])
        assert evaluate_cost(inst, [(0,)]) == pytest.approx(2.0)
        assert evaluate_cost(inst, [(1,)]) == pytest.approx(1.0 + math.sqrt(2.0))
        assert evaluate_cost(inst, [(2,)]) == pytest.approx(1.0 + math.sqrt(2.0))

    def test_errors(self):
        inst = make_instance([[0, 0], [1, 0]], [[1.0, 1.0]], [1])
        with pytest.raises(ValueError, match="periods"):
            evaluate_cost(inst, [(0,), (1,)])
        with pytest.raises(ValueError, match="empty"):
            evaluate_cost(inst, [()])
        with pytest.raises(ValueError, match="range"):
            evaluate_cost(inst, [(5,)])

    def test_period_decomposition(self, rng):
        inst = random_instance(rng, n=7, t=3, medians=(2,))
        fac = [tuple(rng.choice(7, size=2, replace=False)) for _ in range(3)]
        total = evaluate_cost(inst, fac)
        parts = 0.0
        for t in range(3):
            slice_t = make_instance(inst.nodes, inst.weights[t : t + 1], [inst.p_schedule[t]])
            parts += evaluate_cost(slice_t, [fac[t]])
        assert total == pytest.approx(parts, rel=1e-12)

    @given(seed=st.integers(0, 2**31 - 1))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, n=6, t=2, medians=(2,))
        fac = [tuple(rng.choice(6, size=2, replace=False)) for _ in range(2)]
        perm = rng.permutation(6)
        inv = np.argsort(perm)
        permuted = make_instance(inst.nodes[perm], inst.weights[:, perm], inst.p_schedule)
        fac_p = [tuple(int(inv[j]) for j in period) for period in fac]
        assert evaluate_cost(inst, fac) == pytest.approx(
            evaluate_cost(permuted, fac_p), rel=1e-12
        )

    def test_monotone_in_facilities(self, rng):
        inst = random_instance(rng, n=8, t=1, medians=(2,))
        base = (0, 3)
        cost = evaluate_cost(inst, [base])
        for extra in range(8):
            if extra in base:
                continue
            assert evaluate_cost(inst, [base + (extra,)]) <= cost + 1e-12


class TestValidate:
    def test_ok(self, rng):
        inst = random_instance(rng)
        fac = tuple(tuple(sorted(rng.choice(8, size=p, replace=False))) for p in inst.p_schedule)
        sol = Solution(fac, evaluate_cost(inst, fac))
        assert validate(inst, sol) == []

    def test_cardinality(self, rng):
        inst = make_instance([[0, 0], [1, 0], [0, 1]], [[1, 1, 1]], [2])
        sol = Solution(((0,),), 0.0)
        report = validate(inst, sol)
        assert [v.kind for v in report] == ["cardinality"]
        assert report[0].period == 0

    def test_duplicate_and_range(self):
        inst = make_instance([[0, 0], [1, 0], [0, 1]], [[1, 1, 1]], [2])
        report = validate(inst, Solution(((1, 1),), 0.0))
        assert any(v.kind == "duplicate" for v in report)
        report = validate(inst, Solution(((0, 7),), 0.0))
        assert any(v.kind == "out_of_range" for v in report)

    def test_period_count(self):
        inst = make_instance([[0, 0], [1, 0]], [[1, 1]], [1])
        report = validate(inst, Solution(((0,), (1,)), 0.0))
        assert [v.kind for v in report] == ["period_count"]


class TestGenerate:
    def test_small_scenario(self):
        inst = generate_instance("Small", seed=7)
        assert inst.id == "Small-7"
        assert inst.n_nodes == 20 and inst.n_periods == 3
        assert all(p in (2, 3, 4) for p in inst.p_schedule)
        assert inst.service_radius == 0.32
        assert 0.12 <= inst.discount_rate <= 0.2

    def test_medium_scenario(self):
        inst = generate_instance("Medium", seed=1)
        assert inst.n_nodes == 50 and inst.n_periods == 5
        assert all(p in (2, 3, 4, 6, 8) for p in inst.p_schedule)

    def test_determinism(self):
        a = generate_instance("Small", seed=42)
        b = generate_instance("Small", seed=42)
        assert np.array_equal(a.nodes, b.nodes)
        assert np.array_equal(a.weights, b.weights)
        assert a.p_schedule == b.p_schedule and a.discount_rate == b.discount_rate

    def test_bounds(self):
        inst = generate_instance("Small", seed=3)
        assert np.all(inst.nodes >= 0) and np.all(inst.nodes <= 1)
        assert np.all(inst.weights >= 0.5) and np.all(inst.weights <= 1.5)

    def test_unknown_scenario(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            generate_instance("Tiny", seed=0)

    def test_median_exceeds_n(self):
        with pytest.raises(ValueError, match="exceeds"):
            ScenarioSpec("bad", 3, 1, (5,))


class TestKnn:
    def test_collinear(self):
        # spacings are exactly representable so interior ties are exact
        inst = make_instance([[0, 0], [0.25, 0], [0.5, 0], [0.75, 0]], [[1, 1, 1, 1]], [1])
        nbr = knn_neighbors(inst, 1)
        assert nbr[:, 0].tolist() == [1, 0, 1, 2]

    def test_saturation(self, rng):
        inst = random_instance(rng, n=6)
        nbr = knn_neighbors(inst, 100)
        assert nbr.shape == (6, 5)
        for i in range(6):
            assert sorted(nbr[i].tolist() + [i]) == list(range(6))

    def test_tie_breaks_to_lower_index(self):
        # nodes 1 and 2 equidistant from node 0
        inst = make_instance([[0.5, 0.5], [0.5, 0.7], [0.5, 0.3], [0.9, 0.9]], np.ones((1, 4)), [1])
        nbr = knn_neighbors(inst, 2)
        assert nbr[0].tolist() == [1, 2]

    @given(seed=st.integers(0, 2**31 - 1))
    def test_sorted_by_distance(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, n=9)
        k = int(rng.integers(1, 9))
        nbr = knn_neighbors(inst, k)
        d = inst.distance_matrix()
        for i in range(9):
            dists = d[i, nbr[i]]
            assert np.all(np.diff(dists) >= -1e-15)
            assert i not in nbr[i]
            # the listed neighbors are the true nearest ones
            others = sorted(d[i, j] for j in range(9) if j != i)
            assert dists.tolist() == pytest.approx(others[: min(k, 8)])

    def test_grid_matches_bruteforce_above_cache_limit(self):
        rng = np.random.default_rng(9)
        n = 2050  # above the distance-matrix guard, grid path engages
        nodes = rng.uniform(0, 1, size=(n, 2))
        inst = make_instance(nodes, np.ones((1, n)), [1])
        nbr = knn_neighbors(inst, 4)
        diff = nodes[:, None, :] - nodes[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        expect = np.argsort(dist, axis=1, kind="stable")[:, :4]
        assert np.array_equal(nbr, expect)


class TestIO:
    def test_round_trip(self, tmp_path, rng):
        inst = random_instance(rng)
        path = tmp_path / "inst.json"
        save_instance(inst, path)
        back = load_instance(path)
        assert back.id == inst.id
        assert np.array_equal(back.nodes, inst.nodes)
        assert np.array_equal(back.weights, inst.weights)
        assert back.p_schedule == inst.p_schedule

    def test_missing_field(self, tmp_path, rng):
        inst = random_instance(rng)
        payload = instance_to_dict(inst)
        del payload["p_schedule"]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaError, match="p_schedule"):
            load_instance(path)

    def test_negative_weight_rejected(self, tmp_path, rng):
        inst = random_instance(rng)
        payload = instance_to_dict(inst)
        payload["weights"][0][0] = -1.0
        path = tmp_path / "neg.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaError, match="nonnegative"):
            load_instance(path)

    def test_solution_round_trip(self, tmp_path):
        sol = Solution(((0, 1), (2,)), 3.25, instance_id="x", solver="oracle", runtime_s=0.5)
        path = tmp_path / "sol.json"
        save_solution(sol, path)
        back = load_solution(path)
        assert back == sol

    def test_solution_missing_field(self, tmp_path):
        path = tmp_path / "sol.json"
        path.write_text(json.dumps({"facilities": [[0]], "cost": 1.0}))
        with pytest.raises(SchemaError, match="instance_id"):
            load_solution(path)
