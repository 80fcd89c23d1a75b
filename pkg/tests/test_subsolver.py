import numpy as np
import pytest

from dualopt.instances import generate_random
from dualopt.subsolver import (Budget, ExternalTourParseError, FixedEdgeStructureError,
                               FixedEdgeViolation, SubProblem, format_problem_file,
                               parse_tour_file, solve_exhaustive, solve_local_search,
                               verify_fixed_edges)
from oracles import (brute_force_tour, brute_force_tour_with_path, tour_length_oracle)

UNTIL_LOCAL_OPT = Budget(max_sweeps=1000)


def route_length(coords, route_global, ids):
    local = {int(g): i for i, g in enumerate(ids)}
    return tour_length_oracle(coords, [local[int(g)] for g in route_global])


def free_problem(n, seed):
    inst = generate_random(n, seed)
    ids = np.arange(n)
    return inst, SubProblem(node_ids=ids, coords=inst.coords)


def is_adjacent(route, u, v):
    k = len(route)
    for i in range(k):
        a, b = int(route[i]), int(route[(i + 1) % k])
        if {a, b} == {u, v}:
            return True
    return False


class TestBudget:
    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            Budget(max_sweeps=0)
        with pytest.raises(ValueError):
            Budget(time_limit=-1.0)

    def test_scaled_default(self):
        assert Budget.scaled(1000).time_limit == pytest.approx(0.5)
        assert Budget.scaled(10).time_limit == pytest.approx(0.05)


class TestFixedEdgeStructure:
    def test_three_incidences_rejected(self):
        inst, _ = free_problem(5, 0)
        fixed = ((0, 1, 0.1), (0, 2, 0.1), (0, 3, 0.1))
        p = SubProblem(node_ids=np.arange(5), coords=inst.coords, fixed_edges=fixed)
        with pytest.raises(FixedEdgeStructureError, match="more than two"):
            solve_local_search(p, UNTIL_LOCAL_OPT)

    def test_cycle_rejected(self):
        inst, _ = free_problem(5, 0)
        fixed = ((0, 1, 0.1), (1, 2, 0.1), (2, 0, 0.1))
        p = SubProblem(node_ids=np.arange(5), coords=inst.coords, fixed_edges=fixed)
        with pytest.raises(FixedEdgeStructureError, match="cycle"):
            solve_local_search(p, UNTIL_LOCAL_OPT)

    def test_unknown_node_rejected(self):
        inst, _ = free_problem(5, 0)
        p = SubProblem(node_ids=np.arange(5), coords=inst.coords, fixed_edges=((0, 9, 0.1),))
        with pytest.raises(FixedEdgeStructureError, match="outside"):
            solve_local_search(p, UNTIL_LOCAL_OPT)


class TestLocalSearch:
    def test_triangle_is_optimal(self):
        inst, p = free_problem(3, 1)
        route = solve_local_search(p, UNTIL_LOCAL_OPT, seed=0)
        opt, _ = brute_force_tour(inst.coords)
        assert route_length(inst.coords, route, p.node_ids) == pytest.approx(opt)

    def test_n8_matches_exhaustive_on_most_seeds(self):
        # measured 99/100 on this seed block; the contract is >= 95
        hits = 0
        for seed in range(100):
            inst, p = free_problem(8, 1000 + seed)
            route = solve_local_search(p, UNTIL_LOCAL_OPT, seed=seed)
            got = route_length(inst.coords, route, p.node_ids)
            opt, _ = brute_force_tour(inst.coords)
            if got <= opt + 1e-9:
                hits += 1
        assert hits >= 95

    def test_fixed_edge_kept_adjacent(self):
        inst, _ = free_problem(4, 5)
        p = SubProblem(node_ids=np.arange(4), coords=inst.coords, fixed_edges=((0, 1, 0.0),))
        route = solve_local_search(p, UNTIL_LOCAL_OPT, seed=2)
        assert is_adjacent(route, 0, 1)

    def test_fixed_edge_containment_property(self):
        rng = np.random.Generator(np.random.PCG64(77))
        for trial in range(50):
            n = int(rng.integers(8, 26))
            inst = generate_random(n, 4000 + trial)
            perm = rng.permutation(n)
            fixed = []
            pos = 0
            while pos + 1 < n and len(fixed) < 4:
                span = int(rng.integers(2, 4))
                chain = perm[pos:pos + span]
                for u, v in zip(chain, chain[1:]):
                    fixed.append((int(u), int(v), float(rng.random())))
                pos += span + 1
            p = SubProblem(node_ids=np.arange(n), coords=inst.coords, fixed_edges=tuple(fixed))
            route = solve_local_search(p, Budget(max_sweeps=30), seed=trial)
            assert sorted(route.tolist()) == list(range(n))
            for u, v, _ in fixed:
                assert is_adjacent(route, u, v), (trial, u, v)

    def test_anytime_monotone(self):
        inst, p = free_problem(120, 8)
        lengths: list[float] = []
        solve_local_search(p, Budget(max_sweeps=50), seed=1, sweep_lengths=lengths)
        assert len(lengths) >= 1
        for a, b in zip(lengths, lengths[1:]):
            assert b <= a + 1e-9

    def test_regression_vs_exhaustive_small(self):
        # spec bound: within 5% of exhaustive for n <= 9 with no fixed edges;
        # measured worst ratio on this block is 1.018, frozen at 1.02
        worst = 0.0
        for t in range(200):
            n = 5 + t % 5
            inst, p = free_problem(n, 5000 + t)
            route = solve_local_search(p, UNTIL_LOCAL_OPT, seed=t)
            got = route_length(inst.coords, route, p.node_ids)
            ex = solve_exhaustive(p)
            worst = max(worst, got / route_length(inst.coords, ex, p.node_ids))
        assert worst <= 1.05
        assert worst <= 1.02

    def test_too_small_rejected(self):
        inst, _ = free_problem(3, 0)
        p = SubProblem(node_ids=np.arange(2), coords=inst.coords[:2])
        with pytest.raises(ValueError, match="at least 3"):
            solve_local_search(p)

    def test_deterministic(self):
        inst, p = free_problem(50, 12)
        a = solve_local_search(p, Budget(max_sweeps=10), seed=3)
        b = solve_local_search(p, Budget(max_sweeps=10), seed=3)
        assert np.array_equal(a, b)


class TestExhaustive:
    def test_square_perimeter(self):
        coords = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
        p = SubProblem(node_ids=np.arange(4), coords=coords)
        route = solve_exhaustive(p)
        assert route_length(coords, route, p.node_ids) == pytest.approx(4.0)

    def test_never_worse_than_local_search(self):
        inst, p = free_problem(9, 33)
        ex = route_length(inst.coords, solve_exhaustive(p), p.node_ids)
        ls = route_length(inst.coords, solve_local_search(p, UNTIL_LOCAL_OPT, seed=5),
                          p.node_ids)
        assert ex <= ls + 1e-9

    def test_matches_bruteforce_oracle(self):
        for n, seed in ((5, 1), (6, 2), (7, 3), (8, 4), (9, 5)):
            inst, p = free_problem(n, seed)
            got = route_length(inst.coords, solve_exhaustive(p), p.node_ids)
            opt, _ = brute_force_tour(inst.coords)
            assert got == pytest.approx(opt, abs=1e-9)

    def test_fixed_path_restricted_optimum(self):
        inst = generate_random(5, 44)
        fixed = ((0, 1, 0.0), (1, 2, 0.0))
        p = SubProblem(node_ids=np.arange(5), coords=inst.coords, fixed_edges=fixed)
        route = solve_exhaustive(p)
        got = route_length(inst.coords, route, p.node_ids)
        opt, _ = brute_force_tour_with_path(inst.coords, [0, 1, 2])
        assert got == pytest.approx(opt, abs=1e-9)
        assert is_adjacent(route, 0, 1) and is_adjacent(route, 1, 2)

    def test_size_refusal(self):
        inst, _ = free_problem(11, 0)
        p = SubProblem(node_ids=np.arange(11), coords=inst.coords)
        with pytest.raises(ValueError, match="refuses"):
            solve_exhaustive(p)


class TestExternalPlumbing:
    def test_problem_file_roundtrip_mapping(self):
        inst = generate_random(50, 3)
        ids = np.arange(10, 60)  # non-trivial global ids
        p = SubProblem(node_ids=ids, coords=inst.coords,
                       fixed_edges=((10, 11, 0.5), (30, 31, 0.2)))
        text = format_problem_file(p)
        assert "DIMENSION : 50" in text
        assert "FIXED_EDGES_SECTION" in text
        assert "\n1 2\n" in text and "\n21 22\n" in text  # 1-based local pairs
        assert text.rstrip().endswith("EOF")
        # identity tour written 1-based comes back 0-based
        tour_text = "TOUR_SECTION\n" + "\n".join(str(i + 1) for i in range(50)) + "\n-1\nEOF\n"
        local = parse_tour_file(tour_text, 50)
        assert local == list(range(50))
        assert np.array_equal(ids[np.asarray(local)], ids)

    def test_tour_parse_errors(self):
        with pytest.raises(ExternalTourParseError):
            parse_tour_file("TOUR_SECTION\n1\n2\nbogus\n-1\n", 3)
        with pytest.raises(ExternalTourParseError):
            parse_tour_file("TOUR_SECTION\n1\n2\n-1\n", 3)

    def test_verify_fixed_edges(self):
        route = np.array([0, 1, 2, 3])
        verify_fixed_edges(route, ((0, 1, 0.0),))
        with pytest.raises(FixedEdgeViolation):
            verify_fixed_edges(route, ((0, 2, 0.0),))
