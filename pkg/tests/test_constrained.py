import itertools
import json
from dataclasses import replace

import numpy as np
import pytest

from gdd.constrained import (
    Block,
    ChanceInstance,
    ConstrainedProblem,
    RobustInstance,
    RobustScenario,
    chance_blocks,
    chance_value_bruteforce,
    constrained_from_dict,
    constrained_to_dict,
    random_chance,
    random_robust,
    robust_epigraph,
    robust_value_bruteforce,
    solve_cgdd,
)
from gdd.gdd import GddConfig
from gdd.milp import VarKind, solve_milp
from gdd.sp import VarSpec

TIGHT = GddConfig(gap_tol=1e-9, max_iters=200)


def binary_points(n):
    return [np.array(p) for p in itertools.product((0.0, 1.0), repeat=n)]


def robust_toy(seed, n=2, N=3):
    rng = np.random.default_rng(seed)
    x = VarSpec(np.zeros(n), np.ones(n), (VarKind.BINARY,) * n)
    return RobustInstance(x, [RobustScenario(rng.uniform(-5, 5, n), rng.uniform(-1, 1))
                              for _ in range(N)])


def test_single_block_is_plain_min():
    inst = robust_toy(0, N=1)
    r = solve_cgdd(robust_epigraph(inst), TIGHT)
    ref = robust_value_bruteforce(inst, binary_points(2))
    assert r.lb == pytest.approx(ref, abs=1e-6) and r.ub == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_robust_toy_matches_twelve_evaluations(seed):
    inst = robust_toy(seed)
    ref = robust_value_bruteforce(inst, binary_points(2))
    r = solve_cgdd(robust_epigraph(inst), TIGHT)
    assert r.lb == pytest.approx(ref, abs=1e-6)
    assert r.ub == pytest.approx(ref, abs=1e-6)


def test_identical_scenarios_reduce_to_one():
    inst = robust_toy(3, N=1)
    tripled = RobustInstance(inst.x, inst.scenarios * 3)
    a = solve_cgdd(robust_epigraph(inst), TIGHT)
    b = solve_cgdd(robust_epigraph(tripled), TIGHT)
    assert b.lb == pytest.approx(a.lb, abs=1e-6)


def test_identical_blocks_match_milp():
    x = VarSpec(np.zeros(3), np.full(3, 4.0), (VarKind.INTEGER,) * 3)
    blk = Block(np.array([[1.0, 2.0, 1.0], [3.0, -1.0, 2.0]]), ("<=", ">="), [5.0, 2.0])
    p = ConstrainedProblem(x, np.array([-1.0, -2.0, 0.5]), [blk, blk, blk])
    r = solve_cgdd(p, TIGHT)
    ref = solve_milp(p.monolithic()).objective
    assert r.lb == pytest.approx(ref, abs=1e-6) and r.ub == pytest.approx(ref, abs=1e-6)


def test_robust_with_recourse_auxiliaries():
    # f(x, xi) = c.x + min 2 y  s.t. y >= a.x - 1, y >= 0
    x = VarSpec(np.zeros(2), np.ones(2), (VarKind.BINARY,) * 2)
    aux = VarSpec(np.zeros(1), np.full(1, 10.0), (VarKind.CONTINUOUS,))
    scen = []
    data = [((1.0, -2.0), (3.0, 1.0)), ((-1.0, 1.0), (0.5, 2.5))]
    for c, a in data:
        scen.append(RobustScenario(np.array(c), 0.0, np.array([2.0]), np.array([a]),
                                   np.array([[1.0]]), (">=",), np.array([-1.0]), aux,
                                   value_range=(-10.0, 20.0)))
    inst = RobustInstance(x, scen)
    ref = min(max(np.dot(c, p) + 2 * max(np.dot(a, p) - 1, 0) for c, a in data)
              for p in binary_points(2))
    r = solve_cgdd(robust_epigraph(inst), TIGHT)
    assert r.lb == pytest.approx(ref, abs=1e-6) and r.ub == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_chance_matches_bruteforce(seed):
    inst = random_chance(seed)
    ref = chance_value_bruteforce(inst)
    p = chance_blocks(inst)
    r = solve_cgdd(p, TIGHT)
    assert solve_milp(p.monolithic()).objective == pytest.approx(ref, abs=1e-9)
    assert r.lb == pytest.approx(ref, abs=1e-6) and r.ub == pytest.approx(ref, abs=1e-6)
    for row in r.ledger.rows:
        assert row.lb <= ref + 1e-6


def test_chance_zero_budget_enforces_every_row():
    inst = replace(random_chance(7), beta=0.2)
    assert inst.budget == 0
    x = inst.x
    rows = np.vstack([np.atleast_2d(S) for S in inst.S])
    rhs = np.concatenate([np.reshape(s, -1) for s in inst.s])
    from gdd.milp import MilpModel
    m = MilpModel(inst.c, rows, ["<="] * len(rhs), rhs, x.lb, x.ub, list(x.kinds))
    r = solve_cgdd(chance_blocks(inst), TIGHT)
    assert r.ub == pytest.approx(solve_milp(m).objective, abs=1e-6)


def test_chance_infeasible_reports_status():
    x = VarSpec(np.zeros(1), np.full(1, 3.0), (VarKind.INTEGER,))
    inst = ChanceInstance(x, np.array([-1.0]), [np.array([[-1.0]])] * 4, [np.array([-5.0])] * 4,
                          0.2)
    r = solve_cgdd(chance_blocks(inst), GddConfig(max_iters=10))
    assert r.status == "Infeasible"
    assert r.ub == np.inf


def test_chance_beta_checked():
    with pytest.raises(ValueError):
        replace(random_chance(0), beta=1.0)
    with pytest.raises(ValueError):
        replace(random_chance(0), beta=0.0)


@pytest.mark.parametrize("const", [-7.5, 0.0, 12.0])
def test_shift_neutrality(const):
    base = robust_epigraph(robust_toy(1))
    moved = replace(base, offset=const)
    a = solve_cgdd(base, TIGHT)
    b = solve_cgdd(moved, TIGHT)
    assert b.lb == pytest.approx(a.lb + const, abs=1e-6)
    assert b.ub == pytest.approx(a.ub + const, abs=1e-6)


def test_weak_duality_and_zero_sum():
    inst = random_robust(4, 3, 3)
    p = robust_epigraph(inst)
    ref = solve_milp(p.monolithic()).objective
    r = solve_cgdd(p, GddConfig(gap_tol=1e-9, max_iters=15))
    for row in r.ledger.rows:
        assert row.lb <= ref + 1e-7
    for c in r.gdd.tree.leaves():
        assert abs(float(np.sum(c.gstar))) <= 1e-9


def test_shift_makes_objective_nonnegative():
    p = robust_epigraph(robust_toy(2))
    lo, _ = p.objective_range()
    assert lo < 0 and p.shift == pytest.approx(-lo)
    assert p.big_m > p.N * (p.objective_range()[1] + p.shift)


def test_json_round_trip():
    p = chance_blocks(random_chance(3))
    text = json.dumps(constrained_to_dict(p))
    back = constrained_from_dict(json.loads(text))
    assert json.dumps(constrained_to_dict(back)) == text
    assert solve_milp(back.monolithic()).objective == pytest.approx(
        solve_milp(p.monolithic()).objective)
