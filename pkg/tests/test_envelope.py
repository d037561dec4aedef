import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdd.dd import PointwiseRegularizer, table_subproblem
from gdd.envelope import (
    ChainSpec,
    EnvelopeLpSpec,
    TreeSpec,
    chain_envelope,
    cut_is_valid,
    envelope_oracle,
    envelope_separate,
    envelope_value,
    inject_envelope_cuts,
    tree2_envelope,
    vertex_separate,
)
from gdd.gdd import PartitionTree, lsc_milp_subproblem
from gdd.milp import solve_lp, solve_milp
from gdd.sp import RecourseOracle, scenario_model

from conftest import (
    all_chains,
    all_two_trees,
    envelope_by_vertices,
    random_cells,
    small_knapsack,
)

D = 0.3
VERT = {n: [np.array(v) for v in itertools.product((0.0, 1.0), repeat=n)] for n in range(1, 7)}


def box(lo, hi):
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    return A, np.array([hi[0], -lo[0], hi[1], -lo[1]])


def example3_cells(g=(0.0, 0.0, D - 2)):
    return [box((0, 0), (0, 1)) + (g[0],), box((1, 0), (1, 0.5)) + (g[1],),
            box((1, 0.5), (1, 1)) + (g[2],)]


# ------------------------------------------------------------ separation

@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 1), st.floats(0, 1))
def test_constant_function_envelope(c, x1, x2):
    spec = EnvelopeLpSpec([box((0, 0), (1, 1)) + (c,)])
    assert envelope_separate(spec, (x1, x2), c + 1.0).theta_star == pytest.approx(c, abs=1e-9)


def test_example3_query():
    spec = EnvelopeLpSpec(example3_cells())
    ref, _, _ = envelope_by_vertices(spec.cells, (1.0, 0.75))
    sep = envelope_separate(spec, (1.0, 0.75), 0.0)
    assert sep.theta_star == pytest.approx(ref, abs=1e-9)
    assert sep.theta_star == pytest.approx(D - 2)
    # the envelope there is negative, so theta = 0 sits above it
    assert sep.inside
    out = envelope_separate(spec, (1.0, 0.75), -2.0)
    assert not out.inside
    assert out.cut_value((1.0, 0.75)) > -2.0


def test_above_max_is_inside():
    rng = np.random.default_rng(2)
    _, cells = random_cells(rng, 4, 2)
    spec = EnvelopeLpSpec(cells)
    top = max(g for _, _, g in cells)
    for x in rng.uniform(0, 1, (10, 2)):
        assert envelope_separate(spec, x, top).inside


@pytest.mark.parametrize("seed", range(30))
def test_separation_matches_vertex_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    centers, cells = random_cells(rng, int(rng.integers(1, 5)), n)
    spec = EnvelopeLpSpec(cells)
    x = rng.uniform(0, 1, n)
    ref, pts, costs = envelope_by_vertices(cells, x)
    theta = ref + rng.uniform(-1, 0.5)
    sep = envelope_separate(spec, x, theta)
    assert sep.theta_star == pytest.approx(ref, abs=1e-7)
    assert sep.inside == (theta >= ref - 1e-8)
    if not sep.inside:
        assert sep.cut_value(x) > theta + 1e-8
        for v, g in zip(pts, costs):
            assert sep.cut_value(v) <= g + 1e-7


def test_vertex_separation_matches_oracle():
    # indicator of A as a table
    A = [np.array([1.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0])]
    table = {a.tobytes(): 1.0 for a in A}
    rng = np.random.default_rng(0)
    for x in rng.uniform(0, 1, (20, 3)):
        sep = vertex_separate(table, 3, x, -1.0)
        assert sep.theta_star == pytest.approx(envelope_oracle(A, x), abs=1e-8)


# ------------------------------------------------------------ oracle

def test_oracle_basics():
    assert envelope_oracle([(1.0, 0.0)], (1.0, 0.5)) == pytest.approx(0.5)
    assert envelope_oracle([(1.0, 0.0)], (0.0, 1.0)) == pytest.approx(0.0)
    assert envelope_oracle([(1.0, 0.0)], (1.0, 0.0)) <= 1.0
    cube = VERT[3]
    rng = np.random.default_rng(1)
    for x in rng.uniform(0, 1, (5, 3)):
        assert envelope_oracle(cube, x) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        envelope_oracle([], np.zeros(13))


@pytest.mark.parametrize("seed", range(4))
def test_zero_set_is_hull_of_complement(seed):
    from scipy.optimize import linprog

    rng = np.random.default_rng(seed)
    n = 3
    A = [v for v in VERT[n] if rng.random() < 0.5]
    comp = np.array([v for v in VERT[n] if not any(np.array_equal(v, a) for a in A)])
    if len(comp) == 0:
        return
    for x in rng.uniform(0, 1, (100, n)):
        res = linprog(np.zeros(len(comp)), A_eq=np.vstack([comp.T, np.ones(len(comp))]),
                      b_eq=np.r_[x, 1.0], bounds=(0, None), method="highs")
        in_hull = res.status == 0
        assert (envelope_oracle(A, x) <= 1e-9) == in_hull


# ------------------------------------------------------------ chains and trees

def test_chain_single_point():
    cuts = chain_envelope(ChainSpec([np.array([1.0, 0.0])]))
    assert len(cuts) == 1
    a, c = cuts[0]
    assert np.allclose(a, [1.0, -1.0]) and c == pytest.approx(0.0)
    for v in VERT[2]:
        assert envelope_value(cuts, v) == pytest.approx(max(0.0, v[0] - v[1]))
    (a, c), = chain_envelope(ChainSpec([np.array([1.0])]))
    assert np.allclose(a, [1.0]) and c == 0.0


def test_chain_accepts_any_order_and_permutation():
    spec = ChainSpec([np.array([1.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0])])
    assert list(spec.perm[:2]) == [1, 0]
    with pytest.raises(ValueError):
        ChainSpec([np.array([1.0, 0.0]), np.array([0.0, 1.0])])


@pytest.mark.parametrize("n", range(1, 7))
def test_chain_envelope_equals_oracle(n):
    rng = np.random.default_rng(n)
    for spec in all_chains(n, rng):
        cuts = chain_envelope(spec)
        for a_c in cuts:
            assert cut_is_valid(a_c, spec.points, n)
        for v in VERT[n]:
            assert envelope_value(cuts, v) == envelope_oracle(spec.points, v) or abs(
                envelope_value(cuts, v) - envelope_oracle(spec.points, v)) <= 1e-12
    # interior points on a few shapes
    specs = list(all_chains(n, rng))
    for spec in specs[:: max(1, len(specs) // 6)]:
        cuts = chain_envelope(spec)
        for x in rng.uniform(0, 1, (50, n)):
            assert envelope_value(cuts, x) == pytest.approx(envelope_oracle(spec.points, x), abs=1e-7)


def example_tree():
    c1 = ChainSpec([np.array(p, float) for p in [(1, 0, 0), (1, 1, 0), (1, 1, 1)]])
    c2 = ChainSpec([np.array(p, float) for p in [(0, 1, 0), (1, 1, 0)]])
    return TreeSpec(c1, c2, np.array([1.0, 1.0, 0.0]), 0)


def test_tree_extra_cut():
    spec = example_tree()
    cuts = tree2_envelope(spec)
    a, c = cuts[-1]
    assert np.allclose(a, [0.5, 0.5, -0.5]) and c == pytest.approx(0.0)
    assert a @ spec.junction + c == pytest.approx(1.0)
    assert a @ np.array([1.0, 0.0, 0.0]) + c == pytest.approx(0.5)
    keys = {p.tobytes() for p in spec.points}
    for v in VERT[3]:
        if v.tobytes() not in keys:
            assert a @ v + c <= 1e-12
        assert envelope_value(cuts, v) == pytest.approx(envelope_oracle(spec.points, v), abs=1e-9)


def test_tree_statement_one_is_union_of_chains():
    c1 = ChainSpec([np.array(p, float) for p in [(1, 0, 0), (1, 1, 0)]])
    c2 = ChainSpec([np.array(p, float) for p in [(0, 1, 0), (1, 1, 0)]])
    spec = TreeSpec(c1, c2, np.array([1.0, 1.0, 0.0]), 0)
    assert spec.statement_one
    cuts = tree2_envelope(spec)
    both = chain_envelope(c1) + chain_envelope(c2)
    assert len(cuts) == len(both)
    for (a, c), (b, d) in zip(cuts, both):
        assert np.array_equal(a, b) and c == d


def test_tree_rejects_degenerate():
    c1 = ChainSpec([np.array(p, float) for p in [(1, 0, 0), (1, 1, 0)]])
    with pytest.raises(ValueError):
        TreeSpec(c1, ChainSpec(list(c1.points)), np.array([1.0, 1.0, 0.0]), 0)
    c2 = ChainSpec([np.array(p, float) for p in [(1, 0, 0), (1, 1, 0)]])
    with pytest.raises(ValueError):
        TreeSpec(c1, c2, np.array([1.0, 1.0, 0.0]), 1)


@pytest.mark.parametrize("n", range(2, 6))
def test_tree_envelopes_valid_and_exact_at_vertices(n, caplog):
    rng = np.random.default_rng(10 + n)
    count = 0
    for spec in all_two_trees(n, rng):
        count += 1
        with caplog.at_level(logging.WARNING, logger="gdd.envelope"):
            cuts = tree2_envelope(spec)
        for a_c in cuts:
            assert cut_is_valid(a_c, spec.points, n)
        for v in VERT[n]:
            assert envelope_value(cuts, v) == pytest.approx(envelope_oracle(spec.points, v), abs=1e-9)
    assert count > 0


def test_invalid_extra_cut_is_dropped_and_logged(caplog):
    # chain1 lacks the point junction - e_s below the junction
    c1 = ChainSpec([np.array(p, float) for p in [(1, 1, 0), (1, 1, 1)]])
    c2 = ChainSpec([np.array(p, float) for p in [(0, 1, 0), (1, 1, 0)]])
    spec = TreeSpec(c1, c2, np.array([1.0, 1.0, 0.0]), 0)
    with caplog.at_level(logging.WARNING, logger="gdd.envelope"):
        cuts = tree2_envelope(spec)
    base = chain_envelope(c1) + chain_envelope(c2)
    assert len(cuts) == len(base)
    assert "not a valid minorant" in caplog.text
    for a_c in cuts:
        assert cut_is_valid(a_c, spec.points, 3)


# ------------------------------------------------------------ MILP strengthening

def _tree_for(problem, oracle, rng, K):
    n1 = problem.n1
    tree = PartitionTree(n1, problem.N, (problem.first.lb, problem.first.ub))
    centers = []
    while len(centers) < K:
        x = rng.integers(0, 2, n1).astype(float)
        if any(np.array_equal(x, c) for c in centers):
            continue
        if np.all(np.isfinite(oracle.values(x))):
            centers.append(x)
    tree.rebuild_flat(centers, [oracle.gstar(c) for c in centers])
    return tree


def test_budget_zero_is_identity():
    p = small_knapsack(1, n=3, N=2)
    o = RecourseOracle(p)
    tree = _tree_for(p, o, np.random.default_rng(0), 2)
    m = lsc_milp_subproblem(p, 0, tree)
    assert inject_envelope_cuts(m, tree, 0) is m


@pytest.mark.parametrize("seed", range(20))
def test_injected_cuts_keep_milp_value(seed):
    rng = np.random.default_rng(seed)
    p = small_knapsack(seed, n=3, N=2)
    o = RecourseOracle(p)
    i = seed % 2
    if seed % 2 == 0:
        tree = _tree_for(p, o, rng, int(rng.integers(2, 5)))
        m = lsc_milp_subproblem(p, i, tree)
        src = tree
    else:
        src = PointwiseRegularizer(2, 3)
        for _ in range(3):
            j = src.index(rng.integers(0, 2, 3))
            src.values[j] = np.array([1.0, -1.0]) * rng.uniform(-200, 200)
        m = table_subproblem(scenario_model(p, i), src, i, 3)
    strong = inject_envelope_cuts(m, src, 5, i=i)
    assert solve_milp(strong).objective == pytest.approx(solve_milp(m).objective, abs=1e-6)
    assert solve_lp(strong).objective >= solve_lp(m).objective - 1e-7
