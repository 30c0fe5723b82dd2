import numpy as np
import pytest

from mpmedian.baselines import (
    SAParams,
    SearchSpaceError,
    brute_force_optimal,
    default_sa_params,
    random_solution,
    simulated_annealing,
    teitz_bart,
)
from mpmedian.instance import (
    ProblemInstance,
    ScenarioSpec,
    evaluate_cost,
    generate_instance,
    validate,
)

from _reference import exhaustive_optimal


def tiny(n=8, t=2, medians=(2, 3), seed=0):
    return generate_instance(ScenarioSpec("tiny", n, t, medians), seed=seed)


class TestBruteForce:
    def test_three_node_example(self):
        inst = ProblemInstance(
            "ex", 0, np.array([[0, 0], [1, 0], [0, 1]], float), np.ones((1, 3)), (1,)
        )
        sol = brute_force_optimal(inst)
        assert sol.facilities == ((0,),)
        assert sol.cost == pytest.approx(2.0)

    def test_p_equals_n(self):
        inst = tiny(n=5, t=1, medians=(5,))
        sol = brute_force_optimal(inst)
        assert sol.facilities == ((0, 1, 2, 3, 4),)
        assert sol.cost == 0.0

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_independent_enumerator(self, seed):
        inst = tiny(n=8, t=2, medians=(2, 3), seed=seed)
        sol = brute_force_optimal(inst)
        _, ref_cost = exhaustive_optimal(inst)
        assert abs(sol.cost - ref_cost) <= 1e-12
        assert validate(inst, sol) == []

    def test_cap_refusal(self):
        inst = tiny(n=10, t=1, medians=(5,))
        with pytest.raises(SearchSpaceError, match="exceeds cap"):
            brute_force_optimal(inst, max_combinations_per_period=10)

    def test_permutation_invariant_cost(self, rng):
        inst = tiny(seed=5)
        perm = rng.permutation(inst.n_nodes)
        permuted = ProblemInstance(
            "perm", 0, inst.nodes[perm], inst.weights[:, perm], inst.p_schedule
        )
        assert brute_force_optimal(inst).cost == pytest.approx(
            brute_force_optimal(permuted).cost, rel=1e-12
        )


class TestTeitzBart:
    def test_never_beats_oracle(self):
        for seed in range(10):
            inst = tiny(seed=seed)
            tb = teitz_bart(inst, np.random.default_rng(100 + seed))
            assert tb.cost >= brute_force_optimal(inst).cost - 1e-12
            assert validate(inst, tb) == []

    def test_one_swap_local_optimality(self):
        inst = tiny(n=9, t=2, medians=(3,), seed=11)
        sol = teitz_bart(inst, np.random.default_rng(4))
        dist = inst.distance_matrix()
        for t, open_t in enumerate(sol.facilities):
            w = inst.weights[t]
            cost = float(w @ dist[:, open_t].min(axis=1))
            for j_out in open_t:
                for j_in in range(inst.n_nodes):
                    if j_in in open_t:
                        continue
                    swapped = [j for j in open_t if j != j_out] + [j_in]
                    swapped_cost = float(w @ dist[:, swapped].min(axis=1))
                    assert swapped_cost >= cost - 1e-12

    def test_p_equals_n_zero_cost(self):
        inst = tiny(n=5, t=1, medians=(5,))
        assert teitz_bart(inst, np.random.default_rng(0)).cost == 0.0

    def test_deterministic_given_rng(self):
        inst = tiny(seed=2)
        a = teitz_bart(inst, np.random.default_rng(9))
        b = teitz_bart(inst, np.random.default_rng(9))
        assert a.facilities == b.facilities and a.cost == b.cost


class TestSimulatedAnnealing:
    def test_bounded_by_initial_solution(self):
        inst = tiny(seed=3)
        params = SAParams(1.0, 0.9, 50, 1e-3)
        seed = 77
        sa = simulated_annealing(inst, params, np.random.default_rng(seed))
        # replay the initial draw: same generator, same first draws
        rng = np.random.default_rng(seed)
        init = [
            tuple(sorted(int(j) for j in rng.choice(inst.n_nodes, size=p, replace=False)))
            for p in inst.p_schedule
        ]
        assert sa.cost <= evaluate_cost(inst, init) + 1e-12
        assert validate(inst, sa) == []

    def test_zero_iteration_budget_returns_initial(self):
        inst = tiny(seed=4)
        params = SAParams(1.0, 0.9, 0, 1e-3)
        seed = 5
        sa = simulated_annealing(inst, params, np.random.default_rng(seed))
        rng = np.random.default_rng(seed)
        init = [
            tuple(sorted(int(j) for j in rng.choice(inst.n_nodes, size=p, replace=False)))
            for p in inst.p_schedule
        ]
        assert sa.facilities == tuple(init)

    def test_close_to_oracle_on_small_corpus(self):
        gaps = []
        for seed in range(5):
            inst = tiny(n=7, t=1, medians=(2,), seed=40 + seed)
            oracle = brute_force_optimal(inst).cost
            sa = simulated_annealing(inst, None, np.random.default_rng(seed))
            gaps.append(100 * (sa.cost - oracle) / oracle)
        assert np.mean(gaps) <= 5.0

    def test_param_validation(self):
        with pytest.raises(ValueError):
            SAParams(1.0, 1.5, 10, 0.1)
        with pytest.raises(ValueError):
            SAParams(1.0, 0.9, 10, 2.0)
        with pytest.raises(ValueError):
            SAParams(-1.0, 0.9, 10, 0.1)

    def test_default_params_scale_with_instance(self):
        inst = tiny(seed=6)
        params = default_sa_params(inst, np.random.default_rng(0))
        assert params.steps_per_temperature == 100 * inst.n_nodes
        assert params.min_temperature == pytest.approx(1e-4 * params.initial_temperature)


class TestRandomSolution:
    def test_valid_and_seed_dependent(self):
        inst = tiny(seed=8)
        a = random_solution(inst, np.random.default_rng(1))
        b = random_solution(inst, np.random.default_rng(2))
        assert validate(inst, a) == [] and validate(inst, b) == []
        assert a.facilities != b.facilities  # overwhelmingly likely

    def test_ordering_against_oracle_and_teitz_bart(self):
        # oracle <= teitz-bart always; random worse in expectation
        diffs = []
        for seed in range(30):
            inst = tiny(seed=200 + seed)
            oracle = brute_force_optimal(inst).cost
            tb = teitz_bart(inst, np.random.default_rng(seed)).cost
            rnd = random_solution(inst, np.random.default_rng(seed)).cost
            assert oracle <= tb + 1e-12
            diffs.append(rnd - tb)
        assert np.mean(diffs) > 0
