"""Dual decomposition with linear multipliers and the binary-tender GDD-B method.

Both are projected supergradient ascent on a concave dual function. Steps are
``a / (b + t)`` by default; ``step="polyak"`` uses
``(target - value) / ||s||^2`` with the best known upper bound as target.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .milp import MilpModel, SolverParams, Status, VarKind, get_backend
from .parallel import WorkerPool
from .sp import RecourseOracle, TwoStageProblem, scenario_model


class SubproblemError(RuntimeError):
    """A scenario subproblem did not solve to optimality."""


@dataclass
class StepRule:
    a: float = 1.0
    b: float = 10.0
    kind: str = "diminishing"  # or "polyak"
    target: Optional[float] = None  # fixed Polyak target; None uses the running ub

    def __post_init__(self):
        if self.kind not in ("diminishing", "polyak"):
            raise ValueError(f"unknown step rule {self.kind!r}")
        if self.a <= 0 or self.b < 0:
            raise ValueError("step parameters must satisfy a > 0, b >= 0")

    def size(self, t: int, value: float, ub: float, norm2: float) -> float:
        if self.kind == "polyak":
            target = self.target if self.target is not None else ub
            if math.isfinite(target) and norm2 > 0:
                return max(target - value, 0.0) / norm2
        return self.a / (self.b + t)


@dataclass
class DdParams:
    max_iters: int = 200
    gap_tol: float = 1e-6
    time_limit: float = math.inf
    step: StepRule = field(default_factory=StepRule)
    workers: int = 1
    solver: SolverParams = field(default_factory=SolverParams)


@dataclass
class DdState:
    multipliers: np.ndarray  # (N, n1), rows sum to zero
    best_lb: float = -math.inf
    t: int = 0
    a: float = 1.0
    b: float = 10.0
    trace: list = field(default_factory=list)


def project_zero_sum(M: np.ndarray) -> np.ndarray:
    """Euclidean projection of the rows of M onto {sum_i M_i = 0}."""
    M = np.asarray(M, dtype=float)
    return M - M.mean(axis=0, keepdims=True)


@dataclass
class DualResult:
    lb: float
    ub: float
    best_x: Optional[np.ndarray]
    iterations: int
    trace: list  # rows (iter, seconds, lb, ub)
    argmins: list  # distinct subproblem argmins in order of discovery
    status: str
    state: Optional[DdState] = None
    table: Optional["PointwiseRegularizer"] = None

    @property
    def gap(self) -> float:
        return rel_gap(self.lb, self.ub)


def rel_gap(lb: float, ub: float) -> float:
    if not (math.isfinite(lb) and math.isfinite(ub)):
        return math.inf
    return (ub - lb) / max(1.0, abs(ub))


def _solve_sub(model: MilpModel, backend, params, n1: int, label: str):
    sol = backend.solve_milp(model, params)
    if sol.status is not Status.OPTIMAL:
        raise SubproblemError(f"{label}: status {sol.status.value}")
    x = sol.x[:n1].copy()
    # the MILP bound, not the incumbent, keeps the dual value valid
    return min(sol.objective, sol.bound), x


class _Tracker:
    """Shared bookkeeping of lb/ub, argmins and the recovery oracle."""

    def __init__(self, problem, oracle, pool):
        self.problem = problem
        self.oracle = oracle
        self.pool = pool
        self.lb = -math.inf
        self.ub = math.inf
        self.best_x = None
        self.argmins: list = []
        self._seen: set = set()
        self.trace: list = []
        self.start = time.perf_counter()

    def note_points(self, xs):
        for x in xs:
            x = self.oracle_snap(x)
            key = x.tobytes()
            if key in self._seen:
                continue
            self._seen.add(key)
            self.argmins.append(x)
            total = self.oracle.total(x, self.pool.executor)
            if total < self.ub:
                self.ub, self.best_x = total, x

    def oracle_snap(self, x):
        from .sp import snap_point
        return snap_point(self.problem, x)

    def row(self, t):
        self.trace.append((t, time.perf_counter() - self.start, self.lb, self.ub))

    @property
    def elapsed(self):
        return time.perf_counter() - self.start


def solve_dd(problem: TwoStageProblem, params: DdParams | None = None, backend=None,
             oracle: RecourseOracle | None = None, lam0: np.ndarray | None = None) -> DualResult:
    """Projected supergradient ascent on the linear-multiplier dual."""
    params = params or DdParams()
    backend = get_backend(backend)
    oracle = oracle or RecourseOracle(problem, backend, params.solver)
    N, n1 = problem.N, problem.n1
    lam = np.zeros((N, n1)) if lam0 is None else project_zero_sum(lam0)
    state = DdState(lam, a=params.step.a, b=params.step.b)
    bases = [scenario_model(problem, i) for i in range(N)]
    with WorkerPool(params.workers) as pool:
        tr = _Tracker(problem, oracle, pool)
        status = "IterLimit"
        for t in range(params.max_iters):
            def task(i, lam=lam):
                m = bases[i].copy()
                m.objective[:n1] += lam[i]
                return _solve_sub(m, backend, params.solver, n1, f"dd iter {t} scenario {i}")
            out = pool.map(task, range(N))
            value = float(sum(v for v, _ in out))
            xs = np.array([x for _, x in out])
            tr.note_points(xs)
            tr.lb = max(tr.lb, value)
            state.best_lb = tr.lb
            state.t = t + 1
            state.trace.append((t, tr.lb))
            tr.row(t)
            s = project_zero_sum(xs)
            norm2 = float(np.sum(s * s))
            if rel_gap(tr.lb, tr.ub) <= params.gap_tol or norm2 == 0.0:
                status = "Optimal" if rel_gap(tr.lb, tr.ub) <= params.gap_tol else "Stalled"
                break
            if tr.elapsed > params.time_limit:
                status = "TimeLimit"
                break
            alpha = params.step.size(t, value, tr.ub, norm2)
            lam = project_zero_sum(lam + alpha * s)
            state.multipliers = lam
    return DualResult(tr.lb, tr.ub, tr.best_x, state.t, tr.trace, tr.argmins, status,
                      state=state)


# ----------------------------------------------------------------- GDD-B

class PointwiseRegularizer:
    """Sparse table x^(j) -> (g_1^j, ..., g_N^j); absent points read as 0."""

    def __init__(self, N: int, n1: int):
        self.N = N
        self.n1 = n1
        self.points: list = []
        self.values: list = []
        self._index: dict = {}

    def __len__(self):
        return len(self.points)

    def key(self, x) -> bytes:
        return np.asarray(np.round(x), dtype=float).tobytes()

    def index(self, x) -> int:
        k = self.key(x)
        if k not in self._index:
            self._index[k] = len(self.points)
            self.points.append(np.round(np.asarray(x, dtype=float)) + 0.0)
            self.values.append(np.zeros(self.N))
        return self._index[k]

    def value(self, i: int, x) -> float:
        j = self._index.get(self.key(x))
        return 0.0 if j is None else float(self.values[j][i])

    def matrix(self) -> np.ndarray:
        return np.array(self.values).reshape(len(self.values), self.N)

    def max_imbalance(self) -> float:
        if not self.values:
            return 0.0
        return float(np.max(np.abs(self.matrix().sum(axis=1))))


def table_subproblem(base: MilpModel, table: PointwiseRegularizer, i: int, n1: int
                     ) -> MilpModel:
    """min f_i(x) + g_i(x) with one selector binary per stored point.

    s_j = 1 forces x = x^(j) and charges g_i^j; x = x^(j) forces s_j = 1 via
    sum_{k in I} x_k - sum_{k not in I} x_k <= |I| - 1 + s_j.
    """
    J = len(table)
    if J == 0:
        return base
    n = base.num_vars
    costs = np.array([table.values[j][i] for j in range(J)])
    model = base.add_columns(costs, np.zeros((base.num_rows, J)), np.zeros(J), np.ones(J),
                             [VarKind.BINARY] * J, [f"sel{j}" for j in range(J)])
    rows, rels, rhs = [], [], []
    for j, p in enumerate(table.points):
        ones = p > 0.5
        for k in range(n1):
            r = np.zeros(n + J)
            r[k] = 1.0
            if ones[k]:  # x_k >= s_j
                r[n + j] = -1.0
                rows.append(r), rels.append(">="), rhs.append(0.0)
            else:  # x_k <= 1 - s_j
                r[n + j] = 1.0
                rows.append(r), rels.append("<="), rhs.append(1.0)
        r = np.zeros(n + J)
        r[:n1] = np.where(ones, 1.0, -1.0)
        r[n + j] = -1.0
        rows.append(r), rels.append("<="), rhs.append(float(ones.sum()) - 1.0)
    r = np.zeros(n + J)
    r[n:] = 1.0
    rows.append(r), rels.append("<="), rhs.append(1.0)
    return model.add_rows(np.array(rows), rels, rhs)


def solve_gddb(problem: TwoStageProblem, params: DdParams | None = None, backend=None,
               oracle: RecourseOracle | None = None) -> DualResult:
    """Supergradient ascent on the pointwise (V-Lagrangian) dual for binary x."""
    if not problem.binary_tender:
        raise ValueError("GDD-B requires every first-stage variable to be binary")
    params = params or DdParams()
    backend = get_backend(backend)
    oracle = oracle or RecourseOracle(problem, backend, params.solver)
    N, n1 = problem.N, problem.n1
    table = PointwiseRegularizer(N, n1)
    bases = [scenario_model(problem, i) for i in range(N)]
    it = 0
    with WorkerPool(params.workers) as pool:
        tr = _Tracker(problem, oracle, pool)
        status = "IterLimit"
        for t in range(params.max_iters):
            snapshot = table

            def task(i):
                m = table_subproblem(bases[i], snapshot, i, n1)
                return _solve_sub(m, backend, params.solver, n1, f"gddb iter {t} scenario {i}")
            out = pool.map(task, range(N))
            it = t + 1
            value = float(sum(v for v, _ in out))
            xs = [np.round(x) + 0.0 for _, x in out]
            tr.note_points(xs)
            tr.lb = max(tr.lb, value)
            tr.row(t)
            # supergradient: indicator of each visited point, centred over scenarios
            idx = [table.index(x) for x in xs]
            grads = {}
            for i, j in enumerate(idx):
                grads.setdefault(j, np.zeros(N))[i] += 1.0
            for j in grads:
                grads[j] -= grads[j].mean()
            norm2 = float(sum(np.sum(g * g) for g in grads.values()))
            if rel_gap(tr.lb, tr.ub) <= params.gap_tol or norm2 == 0.0:
                status = "Optimal" if rel_gap(tr.lb, tr.ub) <= params.gap_tol else "Stalled"
                break
            if tr.elapsed > params.time_limit:
                status = "TimeLimit"
                break
            alpha = params.step.size(t, value, tr.ub, norm2)
            for j, g in grads.items():
                v = table.values[j] + alpha * g
                table.values[j] = v - v.mean()
    return DualResult(tr.lb, tr.ub, tr.best_x, it, tr.trace, tr.argmins, status, table=table)
