"""The iterative GDD algorithm.

Regularizers are either piecewise constant over a (possibly nested) Voronoi
partition of the first-stage domain, or a max of reverse-norm cuts. Scenario
subproblems are solved through a lower-semicontinuous big-M MILP encoding or
by enumerating the cells one at a time.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dd import DdParams, StepRule, SubproblemError, rel_gap, solve_dd
from .instances import RngStream
from .milp import MilpModel, SolverParams, Status, VarKind, get_backend
from .parallel import WorkerPool
from .sp import (CCRViolation, RecourseOracle, TwoStageProblem, scenario_model, snap_point,
                 value_bound)

DUP_TOL = 1e-9
MEMBER_TOL = 1e-6  # above the LP feasibility tolerance on unit-normal rows


# ------------------------------------------------------------ partitions

@dataclass
class PartitionCell:
    id: int
    center: Optional[np.ndarray]
    A: np.ndarray  # rows A x <= b
    b: np.ndarray
    gstar: Optional[np.ndarray] = None  # g_i^*(center) for every scenario
    parent: Optional[int] = None
    children: list = field(default_factory=list)
    values: Optional[np.ndarray] = None  # cached restricted optima v_k^i
    argmins: Optional[list] = None
    pruned: Optional[np.ndarray] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def contains(self, x, tol: float = MEMBER_TOL) -> bool:
        if self.A.shape[0] == 0:
            return True
        scale = 1.0 + np.abs(self.b)
        return bool(np.all(self.A @ x - self.b <= tol * scale))


def voronoi_rows(centers: Sequence[np.ndarray], k: int, normalize: bool = True):
    """Rows 2(x_j - x_k).x <= |x_j|^2 - |x_k|^2 for every j != k.

    With ``normalize`` each row is divided by 2|x_j - x_k| and its rhs taken at
    the midpoint, the same halfspace but well scaled for nearby centers.
    """
    ck = centers[k]
    rows, rhs = [], []
    for j, cj in enumerate(centers):
        if j == k:
            continue
        diff = cj - ck
        if normalize:
            unit = diff / np.linalg.norm(diff)
            rows.append(unit)
            rhs.append(float(unit @ (0.5 * (cj + ck))))
        else:
            rows.append(2.0 * diff)
            rhs.append(float(cj @ cj - ck @ ck))
    n = len(ck)
    return np.array(rows).reshape(len(rows), n), np.array(rhs)


def voronoi_cells(centers, domain=None, parent_rows=None, start_id: int = 0):
    """One cell per center: the pairwise Voronoi rows, plus ``parent_rows`` if given."""
    centers = [np.asarray(c, dtype=float) for c in centers]
    if not centers:
        raise ValueError("at least one center is required")
    for a, b in itertools.combinations(range(len(centers)), 2):
        if np.max(np.abs(centers[a] - centers[b])) <= DUP_TOL:
            raise ValueError(f"duplicate centers {a} and {b}")
    if domain is not None:
        lb, ub = domain
        for c in centers:
            if np.any(c < lb - MEMBER_TOL) or np.any(c > ub + MEMBER_TOL):
                raise ValueError("center lies outside the domain")
    cells = []
    for k, c in enumerate(centers):
        A, b = voronoi_rows(centers, k)
        if parent_rows is not None and parent_rows[0].shape[0]:
            A = np.vstack([A, parent_rows[0]])
            b = np.concatenate([b, parent_rows[1]])
        cell = PartitionCell(start_id + k, c, A, b)
        if parent_rows is not None and not cell.contains(c):
            raise ValueError("center lies outside the parent cell")
        cells.append(cell)
    return cells


def compute_bigM(cell: PartitionCell, domain) -> np.ndarray:
    """max over the box of each row's violation a.x - b, clamped at 0.

    The box maximum is the LP relaxation of the max over X, hence valid.
    """
    lb, ub = domain
    if cell.A.shape[0] == 0:
        return np.zeros(0)
    hi = np.where(cell.A > 0, cell.A * ub, cell.A * lb).sum(axis=1)
    return np.maximum(hi - cell.b, 0.0)


class PartitionTree:
    """Nested Voronoi cells. The root covers X and carries zero constants."""

    def __init__(self, n1: int, N: int, domain):
        self.n1 = n1
        self.N = N
        self.domain = (np.asarray(domain[0], dtype=float), np.asarray(domain[1], dtype=float))
        root = PartitionCell(0, None, np.zeros((0, n1)), np.zeros(0), np.zeros(N),
                             pruned=np.zeros(N, dtype=bool))
        self.cells: list = [root]
        self.generation = 0
        self.centers: list = []

    @property
    def root(self) -> PartitionCell:
        return self.cells[0]

    def leaves(self) -> list:
        return [c for c in self.cells if c.is_leaf]

    def active_leaves(self, i: int) -> list:
        return [c for c in self.leaves() if not c.pruned[i]]

    @property
    def num_leaves(self) -> int:
        return len(self.leaves())

    @property
    def num_pruned(self) -> int:
        return sum(1 for c in self.leaves() if c.pruned.all())

    def leaf_of(self, x) -> PartitionCell:
        """Descend by nearest child center; ties go to the lowest id."""
        cell = self.root
        x = np.asarray(x, dtype=float)
        while cell.children:
            kids = [self.cells[k] for k in cell.children]
            dist = [float(np.sum((x - k.center) ** 2)) for k in kids]
            cell = kids[int(np.argmin(dist))]
        return cell

    def _attach(self, parent: PartitionCell, centers, gstars) -> list:
        rows = (parent.A, parent.b)
        kids = voronoi_cells(centers, self.domain, rows, start_id=len(self.cells))
        for k, g in zip(kids, gstars):
            k.parent = parent.id
            k.gstar = None if g is None else np.asarray(g, dtype=float)
            k.pruned = np.zeros(self.N, dtype=bool)
            self.cells.append(k)
            parent.children.append(k.id)
        parent.values = None
        parent.argmins = None
        return kids

    def rebuild_flat(self, centers, gstars) -> None:
        """Replace everything below the root by the Voronoi partition of ``centers``."""
        root = self.root
        root.children = []
        root.values = None
        root.argmins = None
        self.cells = [root]
        self.centers = [np.asarray(c, dtype=float) for c in centers]
        if centers:
            self._attach(root, self.centers, gstars)
        self.generation += 1

    def has_center(self, x) -> bool:
        return any(np.max(np.abs(c - x)) <= DUP_TOL for c in self.centers)


def refine_nested(tree: PartitionTree, new_points, owners, gstar_of) -> PartitionTree:
    """Split each owning leaf by the Voronoi partition of its center and its new points.

    ``owners[p]`` is the id of the leaf that produced ``new_points[p]``;
    ``gstar_of(x)`` returns the constants for a new center. Leaves without new
    points keep their cached values.
    """
    groups: dict = {}
    for x, k in zip(new_points, owners):
        x = np.asarray(x, dtype=float)
        cell = tree.cells[k]
        if not cell.is_leaf:
            raise ValueError(f"cell {k} is not a leaf")
        if not cell.contains(x):
            raise ValueError(f"point {x} lies outside its claimed cell {k}")
        pts = groups.setdefault(k, [])
        if cell.center is not None and np.max(np.abs(cell.center - x)) <= DUP_TOL:
            continue
        if any(np.max(np.abs(p - x)) <= DUP_TOL for p in pts):
            continue
        pts.append(x)
    for k in sorted(groups):
        pts = groups[k]
        if not pts:
            continue
        cell = tree.cells[k]
        centers = ([cell.center] if cell.center is not None else []) + pts
        gstars = ([cell.gstar] if cell.center is not None else []) + [gstar_of(p) for p in pts]
        tree._attach(cell, centers, gstars)
        for p in pts:
            if not tree.has_center(p):
                tree.centers.append(p)
    if any(groups.values()):
        tree.generation += 1
    return tree


def prune(tree: PartitionTree, ub: float, incumbent=None) -> int:
    """Mark leaves with sum_i v_k^i > ub + 1e-9 as pruned; returns the number newly pruned."""
    if not math.isfinite(ub):
        return 0
    count = 0
    for cell in tree.leaves():
        if cell.pruned.all() or cell.values is None:
            continue
        if incumbent is not None and cell.contains(incumbent):
            continue
        if float(np.sum(cell.values)) > ub + 1e-9:
            cell.pruned[:] = True
            count += 1
    return count


# ------------------------------------------------------------ subproblems

def restricted_model(base: MilpModel, cell: PartitionCell, i: int, n1: int):
    """min f_i(x) + g_i^*(x_k) over the closure of cell k."""
    m = base
    if cell.A.shape[0]:
        A = np.zeros((cell.A.shape[0], base.num_vars))
        A[:, :n1] = cell.A
        m = base.add_rows(A, ["<="] * cell.A.shape[0], cell.b)
    else:
        m = base.copy()
    return m, float(cell.gstar[i])


def lsc_milp_subproblem(problem: TwoStageProblem, i: int, tree: PartitionTree,
                        base: MilpModel | None = None) -> MilpModel:
    """Selector MILP: sum_k w_k = 1, A_k x <= b_k + M_k (1 - w_k), objective + sum_k g_k w_k.

    Selector columns follow the base model in the order of ``tree.active_leaves(i)``.
    """
    base = base if base is not None else scenario_model(problem, i)
    n1 = problem.n1
    leaves = tree.active_leaves(i)
    if not leaves:
        raise ValueError(f"every cell is pruned for scenario {i}")
    for c in leaves:
        if c.gstar is None:
            raise ValueError(f"cell {c.id} has no regularizer constants")
    K = len(leaves)
    n = base.num_vars
    g = np.array([c.gstar[i] for c in leaves])
    model = base.add_columns(g, np.zeros((base.num_rows, K)), np.zeros(K), np.ones(K),
                             [VarKind.BINARY] * K, [f"w{c.id}" for c in leaves])
    rows, rhs = [], []
    for k, c in enumerate(leaves):
        M = compute_bigM(c, tree.domain)
        for r in range(c.A.shape[0]):
            row = np.zeros(n + K)
            row[:n1] = c.A[r]
            row[n + k] = M[r]
            rows.append(row)
            rhs.append(c.b[r] + M[r])
    row = np.zeros(n + K)
    row[n:] = 1.0
    rows.append(row)
    rels = ["<="] * (len(rows) - 1) + ["="]
    rhs.append(1.0)
    return model.add_rows(np.array(rows), rels, rhs)


@dataclass
class EnumResult:
    value: float
    argmin: Optional[np.ndarray]
    cell: int
    cell_values: dict  # leaf id -> v_k^i (inf when the restricted problem is infeasible)


def _solve_value(backend, model, params, label):
    sol = backend.solve_milp(model, params)
    if sol.status is Status.INFEASIBLE:
        return math.inf, None
    if sol.status is not Status.OPTIMAL:
        raise SubproblemError(f"{label}: status {sol.status.value}")
    return min(sol.objective, sol.bound), sol.x


def solve_cell(problem, i, cell, base, backend=None, params=None):
    """(v_k^i, argmin x) for the restricted problem of one leaf."""
    backend = get_backend(backend)
    model, const = restricted_model(base, cell, i, problem.n1)
    val, x = _solve_value(backend, model, params, f"scenario {i} cell {cell.id}")
    if x is None:
        return math.inf, None
    return val + const, x[: problem.n1].copy()


def enumerate_subproblem(problem: TwoStageProblem, i: int, tree: PartitionTree,
                         base: MilpModel | None = None, backend=None, params=None,
                         pool: WorkerPool | None = None) -> EnumResult:
    """min over active leaves of the restricted optimum; ties go to the lowest cell id."""
    base = base if base is not None else scenario_model(problem, i)
    leaves = tree.active_leaves(i)
    if not leaves:
        raise ValueError(f"every cell is pruned for scenario {i}")
    pool = pool or WorkerPool(1)
    out = pool.map(lambda c: solve_cell(problem, i, c, base, backend, params), leaves)
    best = EnumResult(math.inf, None, -1, {})
    for c, (v, x) in zip(leaves, out):
        best.cell_values[c.id] = v
        if v < best.value:
            best.value, best.argmin, best.cell = v, x, c.id
    if best.argmin is None:
        raise SubproblemError(f"scenario {i}: every cell is infeasible")
    return best


# ------------------------------------------------------------ cut families

@dataclass
class Cut:
    anchor: np.ndarray
    value: float  # g_i^*(anchor)


@dataclass
class CutFamily:
    """Per scenario: cuts g_i^*(x^) - rho_i ||x - x^||_1 sharing the slope rho_i."""

    N: int
    rho: np.ndarray
    cuts: list = field(default_factory=list)  # per scenario list of Cut

    def __post_init__(self):
        self.rho = np.broadcast_to(np.asarray(self.rho, dtype=float), (self.N,)).copy()
        if np.any(self.rho < 0):
            raise ValueError("cut slopes must be nonnegative")
        if not self.cuts:
            self.cuts = [[] for _ in range(self.N)]

    def add(self, x, gstar) -> None:
        for i in range(self.N):
            self.cuts[i].append(Cut(np.asarray(x, dtype=float).copy(), float(gstar[i])))

    def evaluate(self, i: int, x, floor: float | None = None) -> float:
        x = np.asarray(x, dtype=float)
        vals = [c.value - self.rho[i] * float(np.sum(np.abs(x - c.anchor)))
                for c in self.cuts[i]]
        if floor is not None:
            vals.append(floor)
        return max(vals) if vals else 0.0

    def __len__(self):
        return len(self.cuts[0]) if self.cuts else 0


def cut_subproblem_milp(problem: TwoStageProblem, i: int, cuts: CutFamily,
                        floor: float | None = None, base: MilpModel | None = None
                        ) -> MilpModel:
    """min f_i(x) + theta, theta >= each cut, theta >= floor.

    Distances to binary anchors coordinates are linear. Other coordinates use
    x_j - a_j = d+ - d-, with a binary z forcing d+ <= R z and d- <= R (1 - z)
    so the split is exact. With no cuts and no floor theta is fixed at 0.
    """
    base = base if base is not None else scenario_model(problem, i)
    n1 = problem.n1
    lb, ub = problem.first.lb, problem.first.ub
    kinds = problem.first.kinds
    rho = float(cuts.rho[i])
    fam = cuts.cuts[i]
    n0 = base.num_vars
    if not fam and floor is None:
        theta_lb, theta_ub = 0.0, 0.0
    else:
        theta_lb, theta_ub = (-math.inf if floor is None else floor), math.inf
    obj, lbs, ubs, kk, names = [1.0], [theta_lb], [theta_ub], [VarKind.CONTINUOUS], ["theta"]
    split = []  # (cut index, coordinate, column of d+)
    for k, cut in enumerate(fam):
        for j in range(n1):
            binary_lin = kinds[j] is VarKind.BINARY and cut.anchor[j] in (0.0, 1.0)
            if binary_lin or rho == 0.0:
                continue
            col = n0 + len(obj)
            R = float(ub[j] - lb[j])
            obj += [0.0, 0.0, 0.0]
            lbs += [0.0, 0.0, 0.0]
            ubs += [R, R, 1.0]
            kk += [VarKind.CONTINUOUS, VarKind.CONTINUOUS, VarKind.BINARY]
            names += [f"dp{k}_{j}", f"dm{k}_{j}", f"zs{k}_{j}"]
            split.append((k, j, col))
    extra = len(obj)
    model = base.add_columns(obj, np.zeros((base.num_rows, extra)), lbs, ubs, kk, names)
    n = model.num_vars
    rows, rels, rhs = [], [], []
    theta = n0
    for k, cut in enumerate(fam):
        row = np.zeros(n)
        row[theta] = 1.0
        const = cut.value
        if rho != 0.0:
            for j in range(n1):
                if kinds[j] is VarKind.BINARY and cut.anchor[j] in (0.0, 1.0):
                    if cut.anchor[j] == 0.0:
                        row[j] += rho  # |x_j - 0| = x_j
                    else:
                        row[j] -= rho  # |x_j - 1| = 1 - x_j
                        const -= rho
        for (kc, j, col) in split:
            if kc == k:
                row[col] += rho
                row[col + 1] += rho
        rows.append(row), rels.append(">="), rhs.append(const)
    for (k, j, col) in split:
        R = float(ub[j] - lb[j])
        row = np.zeros(n)
        row[j], row[col], row[col + 1] = 1.0, -1.0, 1.0
        rows.append(row), rels.append("="), rhs.append(float(fam[k].anchor[j]))
        row = np.zeros(n)
        row[col], row[col + 2] = 1.0, -R
        rows.append(row), rels.append("<="), rhs.append(0.0)
        row = np.zeros(n)
        row[col + 1], row[col + 2] = 1.0, R
        rows.append(row), rels.append("<="), rhs.append(R)
    if not rows:
        return model
    return model.add_rows(np.array(rows), rels, rhs)


def corner_points(problem: TwoStageProblem, limit: int = 1024, seed: int = 0):
    """Box corners of X: all of them when few enough, otherwise a seeded sample."""
    lb, ub = problem.first.lb, problem.first.ub
    n1 = problem.n1
    if 2 ** n1 <= limit:
        for bits in itertools.product((0, 1), repeat=n1):
            yield np.where(np.array(bits) == 1, ub, lb).astype(float)
        return
    rng = RngStream(seed)
    for _ in range(limit):
        bits = np.array([rng.next_u64() >> 63 for _ in range(n1)])
        yield np.where(bits == 1, ub, lb).astype(float)


def default_rho(problem: TwoStageProblem, oracle: RecourseOracle, mode="spread",
                safety: float = 10.0, pool: WorkerPool | None = None) -> np.ndarray:
    """Slopes for reverse-norm cuts.

    ``spread``: safety x (max - min of g_i^* over feasible box corners) /
    (smallest positive coordinate range); a heuristic.
    ``bound``: 4 B where |f_i| <= B on X; provably valid when every
    first-stage coordinate is integer, since distinct points are then at
    l1-distance at least 1 and g_i^* lies in [-2B, 2B].
    """
    N = problem.N
    if mode == "bound":
        B = value_bound(problem, oracle)
        if not math.isfinite(B):
            raise ValueError("no finite value bound; use another rho mode")
        return np.full(N, 4.0 * B)
    if mode != "spread":
        raise ValueError(f"unknown rho mode {mode!r}")
    vals = []
    for x in corner_points(problem):
        f = oracle.values(x, pool.executor if pool else None)
        if np.all(np.isfinite(f)):
            vals.append(f.mean() - f)
    rng = problem.first.ub - problem.first.lb
    rmin = float(np.min(rng[rng > 0])) if np.any(rng > 0) else 1.0
    if not vals:
        return np.full(N, safety / rmin)
    G = np.array(vals)
    spread = G.max(axis=0) - G.min(axis=0)
    return safety * np.maximum(spread, 1e-12) / rmin


# ------------------------------------------------------------ ledger

@dataclass
class LedgerRow:
    iter: int
    seconds: float
    lb: float
    ub: float
    gap: float
    leaves: int
    pruned: int


class BoundLedger:
    HEADER = ["iter", "seconds", "lb", "ub", "gap", "leaves", "pruned"]

    def __init__(self):
        self.rows: list = []

    def append(self, it, seconds, lb, ub, leaves, pruned) -> LedgerRow:
        if self.rows:
            last = self.rows[-1]
            lb, ub = max(lb, last.lb), min(ub, last.ub)
        row = LedgerRow(it, seconds, lb, ub, rel_gap(lb, ub), leaves, pruned)
        self.rows.append(row)
        return row

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, k):
        return self.rows[k]

    def is_monotone(self) -> bool:
        for a, b in zip(self.rows, self.rows[1:]):
            if b.lb < a.lb or b.ub > a.ub:
                return False
        return all(r.lb <= r.ub + 1e-9 * max(1.0, abs(r.ub)) for r in self.rows)

    def bounds(self) -> list:
        """(iter, lb, ub, gap, leaves, pruned) per row: the ledger minus wall time."""
        return [(r.iter, r.lb, r.ub, r.gap, r.leaves, r.pruned) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([r.iter] + [f"{v:.9g}" for v in (r.seconds, r.lb, r.ub, r.gap)]
                       + [r.leaves, r.pruned])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


# ------------------------------------------------------------ driver

@dataclass
class GddConfig:
    regularizer: str = "pwc"  # or "cuts"
    encoding: str = "enum"  # or "bigm"
    nested: bool = False
    pruning: bool = False
    workers: int = 1
    max_iters: int = 100
    gap_tol: float = 1e-4
    time_limit: float = math.inf
    dd_warmstart: int = 0
    dd_step: StepRule = field(default_factory=StepRule)
    rho: object = "spread"  # "spread", "bound", "adaptive" or a number
    solver: SolverParams = field(default_factory=SolverParams)

    def __post_init__(self):
        if self.regularizer not in ("pwc", "cuts"):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.encoding not in ("enum", "bigm"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.pruning and self.encoding != "enum":
            raise ValueError("pruning requires the enumeration encoding")
        if self.pruning and not self.nested:
            raise ValueError("pruning requires nested partitions (flat cells are rebuilt)")
        if self.nested and self.regularizer != "pwc":
            raise ValueError("nested partitions require piecewise-constant regularizers")
        if self.workers < 1 or self.max_iters < 1 or self.gap_tol < 0:
            raise ValueError("invalid worker count, iteration cap or gap tolerance")


@dataclass
class GddResult:
    lb: float
    ub: float
    best_x: Optional[np.ndarray]
    ledger: BoundLedger
    iterations: int
    status: str
    tree: Optional[PartitionTree] = None
    cuts: Optional[CutFamily] = None
    dd: object = None

    @property
    def gap(self) -> float:
        return rel_gap(self.lb, self.ub)


class _Run:
    def __init__(self, problem, config, backend, oracle, pool):
        self.problem = problem
        self.cfg = config
        self.backend = backend
        self.oracle = oracle
        self.pool = pool
        self.bases = [scenario_model(problem, i) for i in range(problem.N)]
        self.lb = -math.inf
        self.ub = math.inf
        self.best_x = None
        self.evaluated: set = set()

    def snap(self, x):
        return snap_point(self.problem, x)

    def f_matrix(self, points) -> np.ndarray:
        """f_j(x) for each point (rows) and scenario (columns), in parallel."""
        N = self.problem.N
        pairs = [(p, j) for p in range(len(points)) for j in range(N)]
        vals = self.pool.map(lambda pj: self.oracle.value(pj[1], points[pj[0]]), pairs)
        return np.array(vals, dtype=float).reshape(len(points), N)

    def gstar_rows(self, points) -> np.ndarray:
        F = self.f_matrix(points)
        bad = ~np.all(np.isfinite(F), axis=1)
        if np.any(bad):
            p = points[int(np.argmax(bad))]
            raise CCRViolation(f"CCR violated at x={p}: augment the problem first")
        return F.mean(axis=1, keepdims=True) - F

    def update_ub(self, points) -> None:
        fresh = []
        for p in points:
            key = p.tobytes()
            if key not in self.evaluated:
                self.evaluated.add(key)
                fresh.append(p)
        if not fresh:
            return
        F = self.f_matrix(fresh)
        for p, row in zip(fresh, F):
            # only points feasible for every scenario certify an upper bound
            if not all(self.oracle.recourse(j, p).feasible for j in range(len(row))):
                continue
            tot = float(np.sum(row))
            if tot < self.ub:
                self.ub, self.best_x = tot, p


def _dedupe(points) -> list:
    out = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= DUP_TOL for q in out):
            out.append(p)
    return out


def run_gdd(problem: TwoStageProblem, config: GddConfig | None = None, backend=None,
            oracle: RecourseOracle | None = None) -> GddResult:
    """Iterate: solve regularized scenario subproblems, update bounds, refine regularizers."""
    cfg = config or GddConfig()
    backend = get_backend(backend)
    oracle = oracle or RecourseOracle(problem, backend, cfg.solver)
    N, n1 = problem.N, problem.n1
    domain = (problem.first.lb, problem.first.ub)
    ledger = BoundLedger()
    start = time.perf_counter()
    with WorkerPool(cfg.workers) as pool:
        run = _Run(problem, cfg, backend, oracle, pool)
        tree = PartitionTree(n1, N, domain) if cfg.regularizer == "pwc" else None
        cuts = None
        floor = None
        dd_res = None
        seeds: list = []
        if cfg.dd_warmstart > 0:
            dd_res = solve_dd(problem, DdParams(max_iters=cfg.dd_warmstart, gap_tol=cfg.gap_tol,
                                                step=cfg.dd_step, workers=cfg.workers,
                                                solver=cfg.solver), backend, oracle)
            run.lb = dd_res.lb
            if dd_res.best_x is not None:
                run.ub, run.best_x = dd_res.ub, dd_res.best_x
            seeds = _dedupe([run.snap(x) for x in dd_res.argmins])
            for p in seeds:
                run.evaluated.add(p.tobytes())
        if cfg.regularizer == "cuts":
            rho = cfg.rho
            if isinstance(rho, str):
                rho = (np.zeros(N) if rho == "adaptive"
                       else default_rho(problem, oracle, rho, pool=pool))
            cuts = CutFamily(N, rho)
            B = value_bound(problem, oracle)
            floor = -N * B if math.isfinite(B) else None
        if seeds:
            G = run.gstar_rows(seeds)
            _insert(run, tree, cuts, seeds, G, [0] * len(seeds))
        status = "IterLimit"
        it = 0
        for t in range(cfg.max_iters):
            it = t + 1
            try:
                values, xs, owners = _solve_all(run, tree, cuts, floor)
            except SubproblemError as exc:
                raise SubproblemError(f"iteration {it}: {exc}") from exc
            run.lb = max(run.lb, float(np.sum(values)))
            pts = [run.snap(x) for x in xs]
            run.update_ub(pts)
            pruned = 0
            if tree is not None and cfg.pruning:
                prune(tree, run.ub, run.best_x)
            leaves = tree.num_leaves if tree is not None else len(cuts)
            pruned = tree.num_pruned if tree is not None else 0
            ledger.append(it, time.perf_counter() - start, run.lb, run.ub, leaves, pruned)
            if rel_gap(run.lb, run.ub) <= cfg.gap_tol:
                status = "Optimal"
                break
            if time.perf_counter() - start > cfg.time_limit:
                status = "TimeLimit"
                break
            added = _refine(run, tree, cuts, pts, owners)
            if not added:
                status = "Stalled"
                break
    return GddResult(ledger[-1].lb if len(ledger) else run.lb,
                     ledger[-1].ub if len(ledger) else run.ub, run.best_x, ledger, it, status,
                     tree, cuts, dd_res)


def _solve_all(run: _Run, tree, cuts, floor):
    """Scenario values, argmins and owning leaves under the current regularizers."""
    problem, cfg = run.problem, run.cfg
    N, n1 = problem.N, problem.n1
    if cuts is not None:
        def task(i):
            if len(cuts) == 0:
                model = run.bases[i]
            else:
                model = cut_subproblem_milp(problem, i, cuts, floor, run.bases[i])
            v, x = _solve_value(run.backend, model, cfg.solver, f"cut subproblem {i}")
            if x is None:
                raise SubproblemError(f"cut subproblem {i} is infeasible")
            return v, x[:n1].copy(), -1
        out = run.pool.map(task, range(N))
    elif cfg.encoding == "bigm":
        def task(i):
            leaves = tree.active_leaves(i)
            if len(leaves) == 1 and leaves[0].A.shape[0] == 0:
                model = run.bases[i]
                v, x = _solve_value(run.backend, model, cfg.solver, f"scenario {i}")
                if x is None:
                    raise SubproblemError(f"scenario {i} is infeasible")
                return v + float(leaves[0].gstar[i]), x[:n1].copy(), leaves[0].id
            model = lsc_milp_subproblem(problem, i, tree, run.bases[i])
            v, x = _solve_value(run.backend, model, cfg.solver, f"lsc subproblem {i}")
            if x is None:
                raise SubproblemError(f"lsc subproblem {i} is infeasible")
            w = x[run.bases[i].num_vars:]
            return v, x[:n1].copy(), leaves[int(np.argmax(w))].id
        out = run.pool.map(task, range(N))
    else:
        leaves = tree.leaves()
        todo = [(i, c) for i in range(N) for c in leaves
                if not c.pruned[i] and c.values is None]
        res = run.pool.map(lambda ic: solve_cell(problem, ic[0], ic[1], run.bases[ic[0]],
                                                 run.backend, cfg.solver), todo)
        fresh: dict = {}
        for (i, c), r in zip(todo, res):
            fresh.setdefault(c.id, [None] * N)[i] = r
        for cid, rs in fresh.items():
            c = tree.cells[cid]
            c.values = np.array([r[0] if r is not None else math.inf for r in rs])
            c.argmins = [r[1] if r is not None else None for r in rs]
        out = []
        for i in range(N):
            best = (math.inf, None, -1)
            for c in leaves:
                if c.pruned[i]:
                    continue
                v = c.values[i]
                if v < best[0]:
                    best = (v, c.argmins[i], c.id)
            if best[1] is None:
                raise SubproblemError(f"scenario {i}: no feasible active cell")
            out.append(best)
    values = np.array([o[0] for o in out])
    xs = [o[1] for o in out]
    owners = [o[2] for o in out]
    return values, xs, owners


def _insert(run: _Run, tree, cuts, points, G, owners) -> None:
    if cuts is not None:
        for p, g in zip(points, G):
            cuts.add(p, g)
        return
    if run.cfg.nested:
        lookup = {p.tobytes(): g for p, g in zip(points, G)}
        refine_nested(tree, points, owners, lambda x: lookup[np.asarray(x).tobytes()])
    else:
        centers = list(tree.centers)
        gst = [tree_cell_g(tree, c) for c in centers]
        for p, g in zip(points, G):
            centers.append(p)
            gst.append(g)
        tree.rebuild_flat(centers, gst)


def tree_cell_g(tree: PartitionTree, center) -> np.ndarray:
    for c in tree.cells:
        if c.center is not None and np.max(np.abs(c.center - center)) <= DUP_TOL:
            return c.gstar
    raise KeyError("center not found")


def _refine(run: _Run, tree, cuts, pts, owners) -> bool:
    """Insert the new argmins; returns False when nothing changed."""
    new, own = [], []
    for p, k in zip(pts, owners):
        if cuts is not None:
            known = any(np.max(np.abs(c.anchor - p)) <= DUP_TOL for c in cuts.cuts[0])
        elif run.cfg.nested:
            cell = tree.cells[k]
            known = cell.center is not None and np.max(np.abs(cell.center - p)) <= DUP_TOL
        else:
            known = tree.has_center(p)
        if known or any(np.max(np.abs(p - q)) <= DUP_TOL and k == o for q, o in zip(new, own)):
            continue
        if cuts is not None or not run.cfg.nested:
            if any(np.max(np.abs(p - q)) <= DUP_TOL for q in new):
                continue
        new.append(p)
        own.append(k)
    if not new:
        return False
    G = run.gstar_rows(new)
    if cuts is not None and isinstance(run.cfg.rho, str) and run.cfg.rho == "adaptive":
        _adapt_rho(cuts, new, G)
    _insert(run, tree, cuts, new, G, own)
    return True


def _adapt_rho(cuts: CutFamily, points, G) -> None:
    """Heuristic slope: largest observed drop of g_i^* per unit l1 distance."""
    anchors = [(c.anchor, np.array([cuts.cuts[i][k].value for i in range(cuts.N)]))
               for k, c in enumerate(cuts.cuts[0])]
    anchors += list(zip(points, G))
    for (p, gp), (q, gq) in itertools.combinations(anchors, 2):
        d = float(np.sum(np.abs(p - q)))
        if d > 0:
            cuts.rho = np.maximum(cuts.rho, np.abs(gp - gq) / d)
