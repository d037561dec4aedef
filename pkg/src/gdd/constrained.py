"""GDD with constraints: min f(x) over the intersection of N sets X_i.

Each set becomes a "scenario" whose value is f(x)/N on X_i. At centers
outside X_j the value is extended by M/N with M = N sup f + 1, which is the
extension behind the constrained duality result; only points in every X_i
update the upper bound. Robust (finite uncertainty set) and chance-constrained
problems are built on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gdd import BoundLedger, GddConfig, GddResult, run_gdd
from .milp import MilpModel, Relation, SolverParams, Status, VarKind, get_backend
from .sp import RecourseOracle, RecourseValue, ScenarioTemplate, TwoStageProblem, VarSpec


@dataclass
class Block:
    """Rows A x + B y (rel) rhs over the shared variables x and block-local auxiliaries y."""

    A: np.ndarray
    relations: tuple
    rhs: np.ndarray
    B: Optional[np.ndarray] = None
    aux: VarSpec = field(default_factory=VarSpec.empty)

    def __post_init__(self):
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        m = self.rhs.size
        self.A = np.asarray(self.A, dtype=float).reshape(m, -1) if m else np.zeros((0, 0))
        self.relations = tuple(Relation.parse(r) for r in self.relations)
        if len(self.relations) != m:
            raise ValueError("block relations and rhs disagree")
        k = self.aux.size
        self.B = np.zeros((m, k)) if self.B is None else np.asarray(self.B, dtype=float).reshape(m, k)


@dataclass
class ConstrainedProblem:
    """min c.x + offset over the intersection of the blocks, x in a bounded box."""

    variables: VarSpec
    objective: np.ndarray
    blocks: list
    offset: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.variables.size
        if self.objective.size != n:
            raise ValueError("objective length differs from the variable count")
        if not self.blocks:
            raise ValueError("at least one block is required")
        for blk in self.blocks:
            if blk.rhs.size and blk.A.shape[1] != n:
                raise ValueError("block width differs from the variable count")
        if not (np.all(np.isfinite(self.variables.lb)) and np.all(np.isfinite(self.variables.ub))):
            raise ValueError("every set must be bounded: give finite variable bounds")

    @property
    def N(self) -> int:
        return len(self.blocks)

    def objective_range(self):
        """(inf, sup) of c.x + offset over the box."""
        c, lb, ub = self.objective, self.variables.lb, self.variables.ub
        lo = float(np.sum(np.minimum(c * lb, c * ub))) + self.offset
        hi = float(np.sum(np.maximum(c * lb, c * ub))) + self.offset
        return lo, hi

    @property
    def shift(self) -> float:
        """sigma >= 0 making the shifted objective nonnegative on the box."""
        return max(0.0, -self.objective_range()[0])

    @property
    def big_m(self) -> float:
        """M = N sup(f + sigma) + 1, the value of f outside a set in the extension."""
        return self.N * (self.objective_range()[1] + self.shift) + 1.0

    def as_two_stage(self) -> TwoStageProblem:
        """Scenario i: cost c/N on x, block i as its recourse rows."""
        n, N = self.variables.size, self.N
        scen = []
        for blk in self.blocks:
            m = blk.rhs.size
            A = blk.A if m else np.zeros((0, n))
            scen.append(ScenarioTemplate(self.objective / N, np.zeros(blk.aux.size), A, blk.B,
                                         blk.rhs, blk.relations, blk.aux))
        return TwoStageProblem(self.variables, tuple(scen), meta=dict(self.meta))

    def monolithic(self) -> MilpModel:
        """min c.x over all blocks at once, auxiliaries copied per block."""
        n = self.variables.size
        widths = [blk.aux.size for blk in self.blocks]
        nv = n + sum(widths)
        rows, rels, rhs = [], [], []
        off = n
        for blk, w in zip(self.blocks, widths):
            for r in range(blk.rhs.size):
                row = np.zeros(nv)
                row[:n] = blk.A[r]
                row[off: off + w] = blk.B[r]
                rows.append(row)
            rels += list(blk.relations)
            rhs += list(blk.rhs)
            off += w
        lb = np.concatenate([self.variables.lb] + [b.aux.lb for b in self.blocks])
        ub = np.concatenate([self.variables.ub] + [b.aux.ub for b in self.blocks])
        kinds = list(self.variables.kinds) + [k for b in self.blocks for k in b.aux.kinds]
        c = np.concatenate([self.objective, np.zeros(nv - n)])
        A = np.array(rows).reshape(len(rows), nv)
        return MilpModel(c, A, rels, np.array(rhs), lb, ub, kinds)


class ExtendedOracle(RecourseOracle):
    """f(x)/N on X_j and (M - sigma)/N outside, in unshifted units."""

    def __init__(self, problem: ConstrainedProblem, two_stage: TwoStageProblem, backend=None,
                 params: SolverParams | None = None):
        super().__init__(two_stage, backend, params)
        self.outside = (problem.big_m - problem.shift) / problem.N

    def value(self, i: int, x) -> float:
        rv: RecourseValue = self.recourse(i, x)
        return rv.value if rv.feasible else self.outside


@dataclass
class CgddResult:
    lb: float
    ub: float
    best_x: Optional[np.ndarray]
    status: str
    iterations: int
    shift: float
    gdd: GddResult

    @property
    def ledger(self):
        return self.gdd.ledger


def solve_cgdd(problem: ConstrainedProblem, config: GddConfig | None = None,
               backend=None) -> CgddResult:
    """Run the GDD iteration on the set blocks; bounds are returned in the original units."""
    cfg = config or GddConfig()
    backend = get_backend(backend)
    for blk in problem.blocks:
        # an empty X_i empties the intersection; no subproblem can be solved
        single = ConstrainedProblem(problem.variables, problem.objective, [blk])
        if backend.solve_milp(single.monolithic(), cfg.solver).status is Status.INFEASIBLE:
            res = GddResult(math.inf, math.inf, None, BoundLedger(), 0, "Infeasible")
            return CgddResult(math.inf, math.inf, None, "Infeasible", 0, problem.shift, res)
    ts = problem.as_two_stage()
    oracle = ExtendedOracle(problem, ts, backend, cfg.solver)
    res = run_gdd(ts, cfg, backend, oracle)
    status = res.status
    if not math.isfinite(res.ub):
        status = "Infeasible"
    off = problem.offset
    return CgddResult(res.lb + off, res.ub + off, res.best_x, status, res.iterations,
                      problem.shift, res)


# ------------------------------------------------------------ robust optimization

@dataclass
class RobustScenario:
    """f(x, xi) = c.x + const, optionally plus min q.y over rows T x + W y (rel) h."""

    c: np.ndarray
    const: float = 0.0
    q: Optional[np.ndarray] = None
    T: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None
    relations: tuple = ()
    h: Optional[np.ndarray] = None
    aux: VarSpec = field(default_factory=VarSpec.empty)
    value_range: Optional[tuple] = None  # bounds on f when auxiliaries are present


@dataclass
class RobustInstance:
    x: VarSpec
    scenarios: list
    A: Optional[np.ndarray] = None  # deterministic rows on x
    relations: tuple = ()
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("the uncertainty set must be nonempty")


def _scenario_range(sc: RobustScenario, lb, ub):
    c = np.asarray(sc.c, dtype=float)
    lo = float(np.sum(np.minimum(c * lb, c * ub))) + sc.const
    hi = float(np.sum(np.maximum(c * lb, c * ub))) + sc.const
    if sc.aux.size:
        if sc.value_range is None:
            raise ValueError("scenarios with auxiliaries need value_range bounds on f")
        return sc.value_range
    return lo, hi


def robust_epigraph(inst: RobustInstance) -> ConstrainedProblem:
    """Variables (x, theta); block i is {theta >= f(x, xi_i)} plus the rows on x."""
    n = inst.x.size
    rngs = [_scenario_range(sc, inst.x.lb, inst.x.ub) for sc in inst.scenarios]
    tlo, thi = min(r[0] for r in rngs), max(r[1] for r in rngs)
    variables = VarSpec(np.append(inst.x.lb, tlo), np.append(inst.x.ub, thi),
                        tuple(inst.x.kinds) + (VarKind.CONTINUOUS,),
                        tuple(inst.x.names) + ("theta",))
    obj = np.zeros(n + 1)
    obj[n] = 1.0
    base_A = np.zeros((0, n + 1))
    base_rels: list = []
    base_b = np.zeros(0)
    if inst.A is not None:
        A = np.atleast_2d(np.asarray(inst.A, dtype=float))
        base_A = np.hstack([A, np.zeros((A.shape[0], 1))])
        base_rels = list(inst.relations)
        base_b = np.asarray(inst.b, dtype=float).reshape(-1)
    blocks = []
    for sc in inst.scenarios:
        k = sc.aux.size
        rows = [np.append(-np.asarray(sc.c, dtype=float), 1.0)]
        aux_rows = [(-np.asarray(sc.q, dtype=float)) if k else np.zeros(0)]
        rels = [">="]
        rhs = [sc.const]
        if k:
            T = np.atleast_2d(np.asarray(sc.T, dtype=float))
            W = np.atleast_2d(np.asarray(sc.W, dtype=float))
            for r in range(T.shape[0]):
                rows.append(np.append(T[r], 0.0))
                aux_rows.append(W[r])
            rels += list(sc.relations)
            rhs += list(np.asarray(sc.h, dtype=float).reshape(-1))
        A = np.vstack([np.array(rows), base_A])
        B = np.vstack([np.array(aux_rows).reshape(len(rows), k), np.zeros((base_A.shape[0], k))])
        blocks.append(Block(A, tuple(rels) + tuple(base_rels), np.concatenate([rhs, base_b]),
                            B, sc.aux))
    return ConstrainedProblem(variables, obj, blocks, meta={"kind": "ro"})


def _holds(rel: Relation, lhs: float, rhs: float, tol: float = 1e-9) -> bool:
    if rel is Relation.LE:
        return lhs <= rhs + tol
    if rel is Relation.GE:
        return lhs >= rhs - tol
    return abs(lhs - rhs) <= tol


def robust_value_bruteforce(inst: RobustInstance, points: Sequence) -> float:
    """min over the given x of max_i f(x, xi_i); scenarios must have no auxiliaries."""
    best = math.inf
    for x in points:
        x = np.asarray(x, dtype=float)
        if inst.A is not None:
            lhs = np.atleast_2d(inst.A) @ x
            ok = all(_holds(Relation.parse(r), v, b) for r, v, b in
                     zip(inst.relations, lhs, np.asarray(inst.b).reshape(-1)))
            if not ok:
                continue
        val = max(float(np.asarray(sc.c) @ x) + sc.const for sc in inst.scenarios)
        best = min(best, val)
    return best


# ------------------------------------------------------------ chance constraints

@dataclass
class ChanceInstance:
    """min c.x s.t. base rows, and S_i x <= s_i for all but at most floor(beta N) scenarios."""

    x: VarSpec
    c: np.ndarray
    S: list  # per scenario matrix of safety rows
    s: list  # per scenario rhs
    beta: float
    A: Optional[np.ndarray] = None
    relations: tuple = ()
    b: Optional[np.ndarray] = None
    big_m: Optional[list] = None  # per scenario per row; derived from the box when None

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if len(self.S) != len(self.s) or not self.S:
            raise ValueError("need one safety system per scenario")

    @property
    def N(self) -> int:
        return len(self.S)

    @property
    def budget(self) -> int:
        return int(math.floor(self.beta * self.N + 1e-12))


def chance_blocks(inst: ChanceInstance) -> ConstrainedProblem:
    """Variables (x, z); block i holds S_i x - M z_i <= s_i, sum z <= floor(beta N) and the base rows."""
    n, N = inst.x.size, inst.N
    lb, ub = inst.x.lb, inst.x.ub
    variables = VarSpec(np.concatenate([lb, np.zeros(N)]), np.concatenate([ub, np.ones(N)]),
                        tuple(inst.x.kinds) + (VarKind.BINARY,) * N,
                        tuple(inst.x.names) + tuple(f"z{i}" for i in range(N)))
    obj = np.concatenate([np.asarray(inst.c, dtype=float), np.zeros(N)])
    card = np.concatenate([np.zeros(n), np.ones(N)])
    base_rows = [card]
    base_rels = ["<="]
    base_rhs = [float(inst.budget)]
    if inst.A is not None:
        A = np.atleast_2d(np.asarray(inst.A, dtype=float))
        for r in range(A.shape[0]):
            base_rows.append(np.concatenate([A[r], np.zeros(N)]))
        base_rels += list(inst.relations)
        base_rhs += list(np.asarray(inst.b, dtype=float).reshape(-1))
    blocks = []
    for i in range(N):
        S = np.atleast_2d(np.asarray(inst.S[i], dtype=float))
        s = np.asarray(inst.s[i], dtype=float).reshape(-1)
        if inst.big_m is not None:
            M = np.asarray(inst.big_m[i], dtype=float).reshape(-1)
        else:
            # box maximum of each safety row minus its rhs: the LP bound on the violation
            M = np.maximum(np.sum(np.maximum(S * lb, S * ub), axis=1) - s, 0.0)
        rows = []
        for r in range(S.shape[0]):
            row = np.concatenate([S[r], np.zeros(N)])
            row[n + i] = -M[r]
            rows.append(row)
        A = np.array(rows + base_rows)
        blocks.append(Block(A, ("<=",) * S.shape[0] + tuple(base_rels),
                            np.concatenate([s, base_rhs])))
    return ConstrainedProblem(variables, obj, blocks, meta={"kind": "cc", "beta": inst.beta})


# ------------------------------------------------------------ JSON and toy generators

def constrained_to_dict(problem: ConstrainedProblem) -> dict:
    from .sp import _mat, _spec_to_json

    blocks = [{"A": _mat(b.A), "B": _mat(b.B), "relations": [r.value for r in b.relations],
               "rhs": [float(v) for v in b.rhs], "aux": _spec_to_json(b.aux)}
              for b in problem.blocks]
    meta = dict(problem.meta)
    return {"constrained": {"kind": meta.pop("kind", "generic"),
                            "variables": _spec_to_json(problem.variables),
                            "objective": [float(v) for v in problem.objective],
                            "offset": float(problem.offset), "blocks": blocks,
                            "params": meta}}


def constrained_from_dict(data: dict) -> ConstrainedProblem:
    from .sp import _spec_from_json

    d = data["constrained"]
    variables = _spec_from_json(d["variables"])
    blocks = []
    for b in d["blocks"]:
        aux = _spec_from_json(b.get("aux", []))
        rhs = np.array(b["rhs"], dtype=float)
        A = np.array(b["A"], dtype=float).reshape(rhs.size, variables.size)
        B = np.array(b.get("B", []), dtype=float).reshape(rhs.size, aux.size)
        blocks.append(Block(A, tuple(b["relations"]), rhs, B, aux))
    meta = dict(d.get("params", {}))
    meta["kind"] = d.get("kind", "generic")
    return ConstrainedProblem(variables, np.array(d["objective"], dtype=float), blocks,
                              float(d.get("offset", 0.0)), meta)


def random_robust(seed: int, n: int = 2, N: int = 3) -> RobustInstance:
    """Binary x in {0,1}^n and N affine costs with coefficients in [-5, 5]."""
    from .instances import RngStream

    rng = RngStream(seed)
    x = VarSpec(np.zeros(n), np.ones(n), (VarKind.BINARY,) * n,
                tuple(f"x{j}" for j in range(n)))
    scen = []
    for _ in range(N):
        c = rng.uniform_array(-5.0, 5.0, (n,))
        scen.append(RobustScenario(c, rng.uniform(-1.0, 1.0)))
    return RobustInstance(x, scen)


def random_chance(seed: int, n: int = 2, N: int = 4, beta: float = 0.25, xmax: int = 3
                  ) -> ChanceInstance:
    """Integer x in [0, xmax]^n maximising a positive profit under one safety row per scenario."""
    from .instances import RngStream

    rng = RngStream(seed)
    x = VarSpec(np.zeros(n), np.full(n, float(xmax)), (VarKind.INTEGER,) * n,
                tuple(f"x{j}" for j in range(n)))
    c = -rng.uniform_array(0.5, 2.0, (n,))
    S = [rng.uniform_array(0.0, 2.0, (1, n)) for _ in range(N)]
    s = [rng.uniform_array(1.0, 4.0, (1,)) for _ in range(N)]
    return ChanceInstance(x, c, S, s, beta)


def chance_value_bruteforce(inst: ChanceInstance) -> float:
    """Enumerate integer x in the box; x is feasible when at most floor(beta N) scenarios fail."""
    import itertools

    if not all(k is not VarKind.CONTINUOUS for k in inst.x.kinds):
        raise ValueError("brute force needs integer x")
    ranges = [range(int(l), int(u) + 1) for l, u in zip(inst.x.lb, inst.x.ub)]
    best = math.inf
    for pt in itertools.product(*ranges):
        x = np.array(pt, dtype=float)
        if inst.A is not None:
            lhs = np.atleast_2d(inst.A) @ x
            if not all(_holds(Relation.parse(r), v, b) for r, v, b in
                       zip(inst.relations, lhs, np.asarray(inst.b).reshape(-1))):
                continue
        fails = sum(1 for S, s in zip(inst.S, inst.s)
                    if np.any(np.atleast_2d(S) @ x > np.asarray(s).reshape(-1) + 1e-9))
        if fails <= inst.budget:
            best = min(best, float(np.asarray(inst.c) @ x))
    return best
