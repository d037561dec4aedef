"""Two-stage stochastic MIP data model.

A problem has first-stage variables ``x`` (the tender variables shared by all
scenarios), optional pure first-stage auxiliaries ``z`` that appear only in
first-stage rows, and ``N`` scenario templates. Scenario ``i`` has value
function

    f_i(x) = c_i.x + min { d_i.z + q_i.y :  A_x x + A_z z (rel) b,
                                            T_i x + W_i y (rel) h_i,  z, y in specs }

so ``sum_i f_i`` is the two-stage objective. The auxiliaries are copied into
every scenario; the deterministic equivalent copies them too, which keeps both
sides exact for any split of the z-cost across scenarios.
"""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .milp import (
    MilpModel,
    ModelError,
    Relation,
    SolverParams,
    Status,
    VarKind,
    get_backend,
)


@dataclass(frozen=True)
class VarSpec:
    lb: np.ndarray
    ub: np.ndarray
    kinds: tuple
    names: tuple = ()

    def __post_init__(self):
        lb = np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.asarray(self.ub, dtype=float).reshape(-1)
        kinds = tuple(VarKind(k) for k in self.kinds)
        if not (lb.size == ub.size == len(kinds)):
            raise ModelError("variable spec lengths differ")
        names = tuple(self.names) if self.names else tuple(f"v{j}" for j in range(lb.size))
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "names", names)

    @property
    def size(self) -> int:
        return self.lb.size

    @property
    def integer_mask(self) -> np.ndarray:
        return np.array([k is not VarKind.CONTINUOUS for k in self.kinds], dtype=bool)

    @classmethod
    def uniform(cls, n, lb, ub, kind, prefix="v"):
        return cls(np.full(n, float(lb)), np.full(n, float(ub)), (kind,) * n,
                   tuple(f"{prefix}{j}" for j in range(n)))

    @staticmethod
    def empty():
        return VarSpec(np.zeros(0), np.zeros(0), ())


@dataclass(frozen=True)
class ScenarioTemplate:
    """One scenario: costs c (on x), d (on z), q (on y) and rows T x + W y (rel) h."""

    c: np.ndarray
    q: np.ndarray
    T: np.ndarray
    W: np.ndarray
    h: np.ndarray
    relations: tuple
    recourse: VarSpec
    d: Optional[np.ndarray] = None
    slack_start: Optional[int] = None  # first CCR slack column in y, when augmented
    penalty: Optional[float] = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        h = np.asarray(self.h, dtype=float).reshape(-1)
        m = h.size
        T = np.asarray(self.T, dtype=float).reshape(m, c.size)
        W = np.asarray(self.W, dtype=float).reshape(m, q.size)
        rels = tuple(Relation.parse(r) for r in self.relations)
        if len(rels) != m:
            raise ModelError("scenario relations length must equal rows of h")
        if self.recourse.size != q.size:
            raise ModelError("recourse spec does not match q")
        for name, val in (("c", c), ("q", q), ("T", T), ("W", W), ("h", h)):
            object.__setattr__(self, name, val)
            val.setflags(write=False)
        object.__setattr__(self, "relations", rels)
        if self.d is not None:
            d = np.asarray(self.d, dtype=float).reshape(-1)
            d.setflags(write=False)
            object.__setattr__(self, "d", d)
        mask = self.recourse.integer_mask
        if np.any(~np.isfinite(self.recourse.lb[mask])) or np.any(
                ~np.isfinite(self.recourse.ub[mask])):
            raise ModelError("integer recourse variables must be bounded")

    @property
    def num_rows(self) -> int:
        return self.h.size


@dataclass(frozen=True)
class TwoStageProblem:
    first: VarSpec
    scenarios: tuple
    aux: VarSpec = field(default_factory=VarSpec.empty)
    A: np.ndarray = None  # first-stage rows over [x, z]
    relations: tuple = ()
    b: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n1, nz = self.first.size, self.aux.size
        A = np.zeros((0, n1 + nz)) if self.A is None else np.asarray(self.A, dtype=float)
        A = A.reshape(-1, n1 + nz)
        b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        rels = tuple(Relation.parse(r) for r in self.relations)
        if A.shape[0] != b.size or len(rels) != b.size:
            raise ModelError("first-stage rows, relations and rhs disagree")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "relations", rels)
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise ModelError("a problem needs at least one scenario")
        for spec in (self.first, self.aux):
            if not (np.all(np.isfinite(spec.lb)) and np.all(np.isfinite(spec.ub))):
                raise ModelError("first-stage variables must have finite bounds")
        for k, sc in enumerate(self.scenarios):
            if sc.c.size != n1 or sc.T.shape[1] != n1:
                raise ModelError(f"scenario {k} does not match the first-stage dimension")
            if sc.d is not None and sc.d.size != nz:
                raise ModelError(f"scenario {k} aux cost has the wrong length")

    @property
    def n1(self) -> int:
        return self.first.size

    @property
    def N(self) -> int:
        return len(self.scenarios)

    @property
    def binary_tender(self) -> bool:
        return all(k is VarKind.BINARY for k in self.first.kinds)

    def aux_cost(self, i) -> np.ndarray:
        d = self.scenarios[i].d
        return np.zeros(self.aux.size) if d is None else d


@dataclass
class RecourseValue:
    value: float
    argmin: Optional[np.ndarray]
    feasible: bool


class CCRViolation(RuntimeError):
    """Raised when a recourse problem is infeasible where finiteness is required."""


# ---------------------------------------------------------------- models

def scenario_model(problem: TwoStageProblem, i: int) -> MilpModel:
    """MILP over [x, z, y] whose optimum is min over X of f_i."""
    sc = problem.scenarios[i]
    n1, nz, ny = problem.n1, problem.aux.size, sc.q.size
    n = n1 + nz + ny
    c = np.concatenate([sc.c, problem.aux_cost(i), sc.q])
    m0 = problem.b.size
    A = np.zeros((m0 + sc.num_rows, n))
    A[:m0, : n1 + nz] = problem.A
    A[m0:, :n1] = sc.T
    A[m0:, n1 + nz:] = sc.W
    rels = list(problem.relations) + list(sc.relations)
    rhs = np.concatenate([problem.b, sc.h])
    lb = np.concatenate([problem.first.lb, problem.aux.lb, sc.recourse.lb])
    ub = np.concatenate([problem.first.ub, problem.aux.ub, sc.recourse.ub])
    kinds = list(problem.first.kinds) + list(problem.aux.kinds) + list(sc.recourse.kinds)
    names = ([f"x{j}" for j in range(n1)] + [f"z{j}" for j in range(nz)]
             + [f"y{j}" for j in range(ny)])
    row_names = [f"fs{r}" for r in range(m0)] + [f"s{i}r{r}" for r in range(sc.num_rows)]
    return MilpModel(c, A, rels, rhs, lb, ub, kinds, names, row_names)


def first_stage_model(problem: TwoStageProblem) -> MilpModel:
    """Zero-objective MILP over [x, z] describing X."""
    n = problem.n1 + problem.aux.size
    return MilpModel(np.zeros(n), problem.A, list(problem.relations), problem.b,
                     np.concatenate([problem.first.lb, problem.aux.lb]),
                     np.concatenate([problem.first.ub, problem.aux.ub]),
                     list(problem.first.kinds) + list(problem.aux.kinds))


def build_def(problem: TwoStageProblem) -> MilpModel:
    """Deterministic equivalent: shared x, one (z, y) block per scenario."""
    n1 = problem.n1
    blocks = [scenario_model(problem, i) for i in range(problem.N)]
    widths = [b.num_vars - n1 for b in blocks]
    n = n1 + sum(widths)
    m = sum(b.num_rows for b in blocks)
    c = np.zeros(n)
    A = np.zeros((m, n))
    rels, rhs, lb, ub, kinds, names, row_names = [], [], [], [], [], [], []
    lb.extend(problem.first.lb)
    ub.extend(problem.first.ub)
    kinds.extend(problem.first.kinds)
    names.extend(f"x{j}" for j in range(n1))
    col, row = n1, 0
    for i, blk in enumerate(blocks):
        w = widths[i]
        c[:n1] += blk.objective[:n1]
        c[col:col + w] = blk.objective[n1:]
        A[row:row + blk.num_rows, :n1] = blk.A[:, :n1]
        A[row:row + blk.num_rows, col:col + w] = blk.A[:, n1:]
        rels.extend(blk.relations)
        rhs.extend(blk.rhs)
        lb.extend(blk.lb[n1:])
        ub.extend(blk.ub[n1:])
        kinds.extend(blk.kinds[n1:])
        names.extend(f"{nm}_{i}" for nm in blk.names[n1:])
        row_names.extend(f"{nm}_{i}" if nm.startswith("fs") else nm for nm in blk.row_names)
        col += w
        row += blk.num_rows
    return MilpModel(c, A, rels, np.array(rhs), np.array(lb), np.array(ub), kinds,
                     names, row_names)


def default_penalty(problem: TwoStageProblem) -> float:
    """10 x largest absolute objective coefficient x number of second-stage rows."""
    big = 0.0
    rows = 0
    for i, sc in enumerate(problem.scenarios):
        for arr in (sc.c, sc.q, problem.aux_cost(i)):
            if arr.size:
                big = max(big, float(np.max(np.abs(arr))))
        rows = max(rows, sc.num_rows)
    return 10.0 * max(big, 1.0) * max(rows, 1)


def augment_ccr(problem: TwoStageProblem, penalty: float | None = None) -> TwoStageProblem:
    """Add penalised slack/surplus columns to every second-stage row."""
    if penalty is None:
        penalty = default_penalty(problem)
    if not (penalty > 0 and math.isfinite(penalty)):
        raise ValueError("CCR penalty must be a positive finite number")
    out = []
    for sc in problem.scenarios:
        if sc.slack_start is not None:
            out.append(sc)
            continue
        cols, costs = [], []
        for r, rel in enumerate(sc.relations):
            if rel is not Relation.LE:  # surplus for >= and =
                e = np.zeros(sc.num_rows)
                e[r] = 1.0
                cols.append(e)
                costs.append(penalty)
            if rel is not Relation.GE:
                e = np.zeros(sc.num_rows)
                e[r] = -1.0
                cols.append(e)
                costs.append(penalty)
        k = len(cols)
        W = np.hstack([sc.W, np.array(cols).T.reshape(sc.num_rows, k)])
        rec = sc.recourse
        spec = VarSpec(np.concatenate([rec.lb, np.zeros(k)]),
                       np.concatenate([rec.ub, np.full(k, np.inf)]),
                       rec.kinds + (VarKind.CONTINUOUS,) * k,
                       rec.names + tuple(f"slack{j}" for j in range(k)))
        out.append(replace(sc, q=np.concatenate([sc.q, costs]), W=W, recourse=spec,
                           slack_start=sc.q.size, penalty=float(penalty)))
    return replace(problem, scenarios=tuple(out))


# ------------------------------------------------------------ evaluation

def snap_point(problem: TwoStageProblem, x, tol: float = 1e-6) -> np.ndarray:
    """Round integer coordinates and clip to the box; reject points far outside."""
    x = np.array(x, dtype=float).reshape(-1)
    if x.size != problem.n1:
        raise ValueError(f"point has {x.size} coordinates, expected {problem.n1}")
    spec = problem.first
    if np.any(x < spec.lb - tol) or np.any(x > spec.ub + tol):
        raise ValueError("point lies outside the first-stage box")
    mask = spec.integer_mask
    r = np.round(x[mask])
    if np.any(np.abs(r - x[mask]) > tol):
        raise ValueError("point violates first-stage integrality")
    x[mask] = r
    np.clip(x, spec.lb, spec.ub, out=x)
    return x + 0.0  # normalise -0.0 so memo keys agree


def eval_recourse(problem: TwoStageProblem, i: int, x, backend=None,
                  params: SolverParams | None = None, _base: MilpModel | None = None
                  ) -> RecourseValue:
    """f_i(x): first-stage cost of scenario i plus its optimal recourse cost."""
    x = snap_point(problem, x)
    base = _base if _base is not None else scenario_model(problem, i)
    n1 = problem.n1
    lb, ub = base.lb.copy(), base.ub.copy()
    lb[:n1] = x
    ub[:n1] = x
    sol = get_backend(backend).solve_milp(base.with_bounds(lb, ub), params)
    if sol.status is Status.OPTIMAL:
        return RecourseValue(sol.objective, sol.x[n1:], True)
    if sol.status is Status.INFEASIBLE:
        return RecourseValue(math.inf, None, False)
    raise RuntimeError(f"recourse solve for scenario {i} ended with status {sol.status.value}")


class RecourseOracle:
    """Memoised f_i(x) keyed by scenario and the exact bit pattern of x.

    Thread-safe: concurrent callers may race to compute the same entry, but the
    stored value is identical either way.
    """

    def __init__(self, problem: TwoStageProblem, backend=None,
                 params: SolverParams | None = None):
        self.problem = problem
        self.backend = get_backend(backend)
        self.params = params
        self._models = [scenario_model(problem, i) for i in range(problem.N)]
        self._memo: dict = {}
        self._lock = threading.Lock()
        self.solves = 0

    def key(self, x) -> bytes:
        return np.ascontiguousarray(x, dtype=float).tobytes()

    def recourse(self, i: int, x) -> RecourseValue:
        x = snap_point(self.problem, x)
        k = (i, self.key(x))
        with self._lock:
            hit = self._memo.get(k)
        if hit is not None:
            return hit
        val = eval_recourse(self.problem, i, x, self.backend, self.params, self._models[i])
        with self._lock:
            self._memo.setdefault(k, val)
            self.solves += 1
        return val

    def value(self, i: int, x) -> float:
        return self.recourse(i, x).value

    def values(self, x, executor: Executor | None = None) -> np.ndarray:
        """Vector (f_1(x), ..., f_N(x)); evaluated concurrently when an executor is given."""
        x = snap_point(self.problem, x)
        idx = range(self.problem.N)
        if executor is None:
            vals = [self.value(i, x) for i in idx]
        else:
            vals = list(executor.map(lambda i: self.value(i, x), idx))
        return np.array(vals)

    def total(self, x, executor: Executor | None = None) -> float:
        return float(np.sum(self.values(x, executor)))

    def gstar(self, x, executor: Executor | None = None) -> np.ndarray:
        """All optimal regularizer values g_i^*(x) = mean_j f_j(x) - f_i(x)."""
        f = self.values(x, executor)
        if not np.all(np.isfinite(f)):
            raise CCRViolation(f"CCR violated at x={np.array2string(np.asarray(x))}")
        return f.mean() - f


def eval_gstar(problem: TwoStageProblem, i: int, x, oracle: RecourseOracle | None = None,
               executor: Executor | None = None) -> float:
    oracle = oracle or RecourseOracle(problem)
    return float(oracle.gstar(x, executor)[i])


# ------------------------------------------------------------ bounds

def _box_range(coef, lb, ub):
    """(min, max) of coef.x over the box lb <= x <= ub (may be infinite)."""
    lo = hi = 0.0
    for a, l, u in zip(coef, lb, ub):
        if a == 0.0:
            continue
        p, q = a * l, a * u
        lo += min(p, q) if not (math.isnan(p) or math.isnan(q)) else 0.0
        hi += max(p, q)
    return lo, hi


def value_bound(problem: TwoStageProblem, oracle: RecourseOracle | None = None) -> float:
    """A number B with |f_i(x)| <= B for all i and all x in X, or inf if unknown.

    The lower side comes from the LP relaxation of each scenario model. The
    upper side needs a recourse point that is always completable: it is built
    from the CCR slacks, or from bounded recourse when every row can be met.
    """
    from .milp import solve_lp

    B = 0.0
    for i, sc in enumerate(problem.scenarios):
        lp = solve_lp(scenario_model(problem, i))
        if lp.status is not Status.OPTIMAL:
            return math.inf
        lower = lp.objective
        _, cx = _box_range(sc.c, problem.first.lb, problem.first.ub)
        _, dz = _box_range(problem.aux_cost(i), problem.aux.lb, problem.aux.ub)
        if sc.slack_start is None:
            return math.inf
        k = sc.slack_start
        y0 = np.where(np.isfinite(sc.recourse.lb[:k]), sc.recourse.lb[:k],
                      np.where(np.isfinite(sc.recourse.ub[:k]), sc.recourse.ub[:k], 0.0))
        resid = sc.h - sc.W[:, :k] @ y0
        viol = 0.0
        for r in range(sc.num_rows):
            tlo, thi = _box_range(sc.T[r], problem.first.lb, problem.first.ub)
            viol += max(abs(resid[r] - tlo), abs(resid[r] - thi))
        upper = cx + dz + float(sc.q[:k] @ y0) + sc.penalty * viol
        B = max(B, abs(lower), abs(upper))
    return B


# ------------------------------------------------------------ JSON I/O

def _enc(v):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _dec(v):
    if isinstance(v, str):
        return float(v)
    return float(v)


def _spec_to_json(spec: VarSpec) -> list:
    return [{"name": nm, "lb": _enc(l), "ub": _enc(u), "kind": k.value}
            for nm, l, u, k in zip(spec.names, spec.lb, spec.ub, spec.kinds)]


def _spec_from_json(items) -> VarSpec:
    if not items:
        return VarSpec.empty()
    return VarSpec(np.array([_dec(v["lb"]) for v in items]),
                   np.array([_dec(v["ub"]) for v in items]),
                   tuple(v["kind"] for v in items), tuple(v["name"] for v in items))


def _mat(a) -> list:
    return [[float(v) for v in row] for row in np.asarray(a)]


def problem_to_dict(problem: TwoStageProblem) -> dict:
    scen = []
    for sc in problem.scenarios:
        item = {"c": [float(v) for v in sc.c], "q": [float(v) for v in sc.q],
                "T": _mat(sc.T), "W": _mat(sc.W), "h": [float(v) for v in sc.h],
                "relations": [r.value for r in sc.relations],
                "recourse_vars": _spec_to_json(sc.recourse)}
        if sc.d is not None:
            item["d"] = [float(v) for v in sc.d]
        if sc.slack_start is not None:
            item["slack_start"] = sc.slack_start
            item["penalty"] = sc.penalty
        scen.append(item)
    return {
        "first_stage": {
            "vars": _spec_to_json(problem.first),
            "aux_vars": _spec_to_json(problem.aux),
            "constraints": {"A": _mat(problem.A),
                            "relations": [r.value for r in problem.relations],
                            "rhs": [float(v) for v in problem.b]},
        },
        "scenarios": scen,
        "meta": problem.meta,
    }


def problem_from_dict(data: dict) -> TwoStageProblem:
    fs = data["first_stage"]
    first = _spec_from_json(fs["vars"])
    aux = _spec_from_json(fs.get("aux_vars", []))
    cons = fs.get("constraints", {})
    rhs = np.array(cons.get("rhs", []), dtype=float)
    A = np.array(cons.get("A", []), dtype=float).reshape(rhs.size, first.size + aux.size)
    scen = []
    for item in data["scenarios"]:
        h = np.array(item["h"], dtype=float)
        rec = _spec_from_json(item["recourse_vars"])
        scen.append(ScenarioTemplate(
            np.array(item["c"], dtype=float), np.array(item["q"], dtype=float),
            np.array(item["T"], dtype=float).reshape(h.size, first.size),
            np.array(item["W"], dtype=float).reshape(h.size, rec.size), h,
            tuple(item["relations"]), rec,
            None if "d" not in item else np.array(item["d"], dtype=float),
            item.get("slack_start"), item.get("penalty")))
    return TwoStageProblem(first, tuple(scen), aux, A, tuple(cons.get("relations", [])),
                           rhs, dict(data.get("meta", {})))


def dumps(problem: TwoStageProblem) -> str:
    return json.dumps(problem_to_dict(problem), sort_keys=True, separators=(",", ":"))


def loads(text: str) -> TwoStageProblem:
    return problem_from_dict(json.loads(text))


def save_problem(problem: TwoStageProblem, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(problem))


def load_problem(path) -> TwoStageProblem:
    with open(path) as fh:
        return loads(fh.read())


def make_problem(first: VarSpec, scenarios: Sequence[ScenarioTemplate], **kw) -> TwoStageProblem:
    return TwoStageProblem(first, tuple(scenarios), **kw)
