"""Convex envelopes of piecewise-constant regularizers.

Separation over the polyhedron E of affine minorants, closed-form envelopes
of indicator functions for chains and 2-trees, and a brute-force oracle that
solves the convex-combination LP over all binary vertices.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .milp import MilpModel, Status, VarKind, solve_lp

log = logging.getLogger(__name__)

INSIDE_TOL = 1e-8
ORACLE_MAX_DIM = 12


# ------------------------------------------------------------ separation

@dataclass
class EnvelopeLpSpec:
    """Cells (A_k, b_k, g_k): g equals g_k on {x : A_k x <= b_k}."""

    cells: list

    def __post_init__(self):
        if not self.cells:
            raise ValueError("at least one cell is required")
        n = None
        cells = []
        for A, b, g in self.cells:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape[0] != b.size:
                raise ValueError("row count of A_k and b_k differ")
            if n is None:
                n = A.shape[1]
            elif A.shape[1] != n:
                raise ValueError("cells have different dimensions")
            cells.append((A, b, float(g)))
        self.cells = cells
        self.n = n

    @classmethod
    def from_tree(cls, tree, i: int) -> "EnvelopeLpSpec":
        """Active leaves of a partition tree for scenario i, each clipped to the domain box."""
        lb, ub = tree.domain
        n = len(lb)
        box_A = np.vstack([np.eye(n), -np.eye(n)])
        box_b = np.concatenate([ub, -lb])
        cells = []
        for c in tree.active_leaves(i):
            A = np.vstack([c.A, box_A]) if c.A.shape[0] else box_A
            b = np.concatenate([c.b, box_b])
            cells.append((A, b, c.gstar[i]))
        return cls(cells)


@dataclass
class Separation:
    inside: bool
    theta_star: float
    alpha: Optional[float] = None
    beta: Optional[np.ndarray] = None

    def cut_value(self, x) -> float:
        return self.alpha + float(self.beta @ np.asarray(x, dtype=float))


def envelope_separate(spec: EnvelopeLpSpec, x_hat, theta_hat: float) -> Separation:
    """max alpha + x_hat.beta over E; the maximiser is a violated cut when theta_hat is below it.

    E = {(alpha, beta, eta): alpha + b_k.eta_k <= g_k, A_k^T eta_k = beta, eta >= 0}.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    n = spec.n
    if x_hat.size != n:
        raise ValueError("query point has the wrong dimension")
    sizes = [A.shape[0] for A, _, _ in spec.cells]
    nv = 1 + n + sum(sizes)
    K = len(spec.cells)
    rows = np.zeros((K + K * n, nv))
    rels, rhs = [], []
    off = 1 + n
    for k, (A, b, g) in enumerate(spec.cells):
        r = sizes[k]
        rows[k, 0] = 1.0
        rows[k, off: off + r] = b
        rels.append("<=")
        rhs.append(g)
        blk = K + k * n
        rows[blk: blk + n, 1: 1 + n] = -np.eye(n)
        rows[blk: blk + n, off: off + r] = A.T
        off += r
    rels += ["="] * (K * n)
    rhs += [0.0] * (K * n)
    c = np.zeros(nv)
    c[0] = -1.0
    c[1: 1 + n] = -x_hat
    lb = np.concatenate([np.full(1 + n, -math.inf), np.zeros(nv - 1 - n)])
    ub = np.full(nv, math.inf)
    model = MilpModel(c, rows, rels, np.array(rhs), lb, ub, [VarKind.CONTINUOUS] * nv)
    sol = solve_lp(model)
    if sol.status is Status.UNBOUNDED:
        raise ValueError("separation LP is unbounded; the cells must be bounded")
    if sol.status is not Status.OPTIMAL:
        raise RuntimeError(f"separation LP failed: {sol.status.value}")
    theta_star = -sol.objective
    alpha, beta = float(sol.x[0]), sol.x[1: 1 + n].copy()
    if theta_hat >= theta_star - INSIDE_TOL:
        return Separation(True, theta_star)
    return Separation(False, theta_star, alpha, beta)


def vertex_separate(values: dict, n1: int, x_hat, theta_hat: float) -> Separation:
    """Separation for a function on {0,1}^n1 given as {vertex bytes: value}, 0 elsewhere.

    Solves max alpha + x_hat.beta s.t. alpha + beta.v <= g(v) for every vertex v.
    """
    if n1 > ORACLE_MAX_DIM:
        raise ValueError(f"vertex separation is limited to n1 <= {ORACLE_MAX_DIM}")
    x_hat = np.asarray(x_hat, dtype=float)
    V = _vertices(n1)
    g = np.array([values.get(v.tobytes(), 0.0) for v in V])
    A = np.hstack([np.ones((len(V), 1)), V])
    c = -np.concatenate([[1.0], x_hat])
    model = MilpModel(c, A, ["<="] * len(V), g, np.full(n1 + 1, -math.inf),
                      np.full(n1 + 1, math.inf), [VarKind.CONTINUOUS] * (n1 + 1))
    sol = solve_lp(model)
    if sol.status is not Status.OPTIMAL:
        raise RuntimeError(f"vertex separation LP failed: {sol.status.value}")
    theta_star = -sol.objective
    if theta_hat >= theta_star - INSIDE_TOL:
        return Separation(True, theta_star)
    return Separation(False, theta_star, float(sol.x[0]), sol.x[1:].copy())


# ------------------------------------------------------------ oracle

def _vertices(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(2 ** n, n)


def indicator(A: Sequence, n1: int):
    """The set of vertex keys of A, for fast membership tests."""
    return {np.asarray(v, dtype=float).tobytes() for v in A}


def envelope_oracle(A: Sequence, x) -> float:
    """conv-env(I_A)(x) as min sum_v lambda_v I_A(v) over convex weights with sum lambda_v v = x."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n > ORACLE_MAX_DIM:
        raise ValueError(f"envelope oracle refuses n1 > {ORACLE_MAX_DIM}")
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise ValueError("x must lie in the unit cube")
    V = _vertices(n)
    keys = indicator(A, n)
    cost = np.array([1.0 if v.tobytes() in keys else 0.0 for v in V])
    rows = np.vstack([V.T, np.ones((1, len(V)))])
    model = MilpModel(cost, rows, ["="] * (n + 1), np.concatenate([x, [1.0]]),
                      np.zeros(len(V)), np.full(len(V), math.inf),
                      [VarKind.CONTINUOUS] * len(V))
    sol = solve_lp(model)
    if sol.status is not Status.OPTIMAL:
        raise RuntimeError(f"envelope oracle LP failed: {sol.status.value}")
    return max(sol.objective, 0.0)


# ------------------------------------------------------------ chains and 2-trees

def _support(v) -> frozenset:
    return frozenset(int(j) for j in np.flatnonzero(np.asarray(v) > 0.5))


@dataclass
class ChainSpec:
    """Binary points whose supports are nested; any input order is accepted."""

    points: list
    n1: int = 0
    perm: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        pts = [np.asarray(p, dtype=float) for p in self.points]
        if not pts:
            raise ValueError("a chain needs at least one point")
        if self.n1 == 0:
            self.n1 = pts[0].size
        for p in pts:
            if p.size != self.n1 or not np.all((p == 0) | (p == 1)):
                raise ValueError("chain points must be binary vectors of equal length")
        pts.sort(key=lambda p: int(p.sum()))
        sup = [_support(p) for p in pts]
        for a, b in zip(sup, sup[1:]):
            if not a < b:
                raise ValueError("supports are not strictly nested")
        order: list = []
        for s in sup:
            order += sorted(s - set(order))
        order += [j for j in range(self.n1) if j not in order]
        self.points = pts
        self.supports = sup
        self.perm = np.array(order)  # normal-form coordinate r is original coordinate perm[r]

    @property
    def continuous(self) -> bool:
        return all(len(b) == len(a) + 1 for a, b in zip(self.supports, self.supports[1:]))

    def sizes(self) -> list:
        return [len(s) for s in self.supports]


def _unpermute(perm: np.ndarray, coef_perm: np.ndarray) -> np.ndarray:
    out = np.zeros_like(coef_perm)
    out[perm] = coef_perm
    return out


def chain_envelope(spec: ChainSpec) -> list:
    """Cuts theta >= a.x + c whose max with 0 over [0,1]^n1 is conv-env(I_A)."""
    n = spec.n1
    sizes = set(spec.sizes())
    cuts = []
    for s in spec.sizes():
        a = -np.ones(n)
        a[:s] = 1.0
        if s + 1 in sizes:
            a[s] = 0.0  # x_bar + e_{s+1} is in the chain
        cuts.append((_unpermute(spec.perm, a), 1.0 - s))
    return cuts


@dataclass
class TreeSpec:
    chain1: ChainSpec
    chain2: ChainSpec
    junction: np.ndarray
    istar: int  # 0-based coordinate with x(I(x_bar) minus istar) in chain2

    def __post_init__(self):
        self.junction = np.asarray(self.junction, dtype=float)
        n = self.chain1.n1
        if self.chain2.n1 != n or self.junction.size != n:
            raise ValueError("chains and junction differ in dimension")
        s1 = {p.tobytes() for p in self.chain1.points}
        s2 = {p.tobytes() for p in self.chain2.points}
        if s1 == s2:
            raise ValueError("identical chains do not form a 2-tree")
        if self.junction.tobytes() not in s1 & s2:
            raise ValueError("the junction must belong to both chains")
        if not (self.chain1.continuous and self.chain2.continuous):
            raise ValueError("2-tree chains must be continuous")
        J = _support(self.junction)
        if self.istar not in J:
            raise ValueError("istar must be in the junction support")
        below = np.array(self.junction)
        below[self.istar] = 0.0
        if below.tobytes() not in s2:
            raise ValueError("junction minus istar must belong to chain2")
        low1 = [_support(p) for p in self.chain1.points if _support(p) < J]
        low2 = [_support(p) for p in self.chain2.points if _support(p) < J]
        for a in low1:
            for b in low2:
                if a <= b or b <= a:
                    raise ValueError("chains below the junction are comparable: not a 2-tree")

    @property
    def points(self) -> list:
        seen, out = set(), []
        for p in self.chain1.points + self.chain2.points:
            if p.tobytes() not in seen:
                seen.add(p.tobytes())
                out.append(p)
        return out

    @property
    def statement_one(self) -> bool:
        J = _support(self.junction)
        return all(_support(p) <= J for p in self.points)


def cut_is_valid(cut, A: Sequence, n1: int, tol: float = 1e-12) -> bool:
    """An affine minorant is below conv-env(I_A) iff it is below I_A at every vertex."""
    a, c = cut
    keys = indicator(A, n1)
    V = _vertices(n1)
    vals = V @ a + c
    ind = np.array([1.0 if v.tobytes() in keys else 0.0 for v in V])
    return bool(np.all(vals <= ind + tol))


def tree2_envelope(spec: TreeSpec, validate_upto: int = 10) -> list:
    """Chain cuts of both chains, plus the half-coefficient cut when some point lies above the junction.

    The extra cut is checked at every vertex when n1 <= ``validate_upto`` and
    dropped with a warning when it is not a valid minorant.
    """
    cuts = chain_envelope(spec.chain1) + chain_envelope(spec.chain2)
    if spec.statement_one:
        return cuts
    n = spec.chain1.n1
    perm = spec.chain1.perm
    pos = {int(j): r for r, j in enumerate(perm)}
    s = int(spec.junction.sum())
    J = _support(spec.junction)
    a = np.zeros(n)
    for r in range(n):
        j = int(perm[r])
        if j in J:
            a[r] = 1.0
        elif r != s:
            a[r] = -1.0
    # halves on x_{|I|} and x_{i*}; they merge into a unit coefficient when equal
    a[s - 1] = 0.5
    a[pos[spec.istar]] = 0.5 if pos[spec.istar] != s - 1 else 1.0
    if s < n:
        a[s] = -0.5
    extra = (_unpermute(perm, a), 2.0 - s)
    if n <= validate_upto:
        if not cut_is_valid(extra, spec.points, n):
            log.warning("2-tree extra cut is not a valid minorant here; using chain cuts only")
            return cuts
    else:
        log.warning("2-tree extra cut not validated for n1 = %d", n)
    return cuts + [extra]


def envelope_value(cuts: list, x) -> float:
    """max(0, max over cuts of a.x + c)."""
    x = np.asarray(x, dtype=float)
    return max([0.0] + [float(a @ x) + c for a, c in cuts])


# ------------------------------------------------------------ MILP strengthening

def inject_envelope_cuts(model: MilpModel, source, budget: int, i: int = 0,
                         n1: int | None = None) -> MilpModel:
    """Add up to ``budget`` envelope cuts sum_k g_k w_k - beta.x >= alpha.

    ``source`` is the partition tree behind :func:`gdd.gdd.lsc_milp_subproblem`
    or the table behind :func:`gdd.dd.table_subproblem`; in both models the
    selector columns are the trailing ones. Each round separates the
    LP-relaxation point.
    """
    if budget <= 0:
        return model
    if hasattr(source, "active_leaves"):
        leaves = source.active_leaves(i)
        n1 = len(source.domain[0])
        g = np.array([c.gstar[i] for c in leaves])
        spec = EnvelopeLpSpec.from_tree(source, i)

        def separate(x, theta):
            return envelope_separate(spec, x, theta)
    else:
        if n1 is None:
            n1 = source.n1
        g = np.array([v[i] for v in source.values])
        if n1 > ORACLE_MAX_DIM:
            log.warning("table too wide for vertex separation; no cuts added")
            return model
        table = {p.tobytes(): v[i] for p, v in zip(source.points, source.values)}

        def separate(x, theta):
            return vertex_separate(table, n1, x, theta)
    K = g.size
    if K == 0:
        return model
    nv = model.num_vars
    sel = slice(nv - K, nv)
    out = model
    for _ in range(budget):
        sol = solve_lp(out)
        if sol.status is not Status.OPTIMAL:
            break
        x = np.clip(sol.x[:n1], model.lb[:n1], model.ub[:n1])
        theta = float(g @ sol.x[sel])
        sep = separate(x, theta)
        if sep.inside:
            break
        row = np.zeros(nv)
        row[sel] = g
        row[:n1] -= sep.beta
        out = out.add_rows(row[None, :], [">="], [sep.alpha])
    return out
