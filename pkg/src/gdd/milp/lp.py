"""Linear programming on top of the dense simplex kernel."""

from __future__ import annotations

import math

import numpy as np

from . import _kernel
from .model import MilpModel, MilpSolution, ModelError, Relation, SolverParams, Status

_STATUS = {
    _kernel.OPTIMAL: Status.OPTIMAL,
    _kernel.INFEASIBLE: Status.INFEASIBLE,
    _kernel.UNBOUNDED: Status.UNBOUNDED,
    _kernel.ITER_LIMIT: Status.ITER_LIMIT,
}


class PreparedLP:
    """A model translated once into kernel form so only bounds change between solves.

    Variables with a finite lower bound map to one kernel column. Variables
    bounded only from above are negated; free variables are split in two.
    """

    def __init__(self, model: MilpModel, params: SolverParams | None = None):
        self.model = model
        self.params = params or SolverParams()
        n = model.num_vars
        cols = []
        self._map = []  # (kind, first internal column)
        for j in range(n):
            lo, up = model.lb[j], model.ub[j]
            if math.isfinite(lo):
                self._map.append((0, len(cols)))
                cols.append((j, 1.0))
            elif math.isfinite(up):
                self._map.append((1, len(cols)))
                cols.append((j, -1.0))
            else:
                self._map.append((2, len(cols)))
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        self._cols = cols
        ni = len(cols)
        sign = np.array([s for _, s in cols])
        src = np.array([j for j, _ in cols], dtype=np.int64)
        m = model.num_rows
        row_sign = np.array([-1.0 if r is Relation.GE else 1.0 for r in model.relations])
        self.is_eq = np.array([r is Relation.EQ for r in model.relations], dtype=np.bool_)
        if m:
            self.A = np.ascontiguousarray(model.A[:, src] * sign[None, :] * row_sign[:, None])
        else:
            self.A = np.zeros((0, ni))
        self.b = np.ascontiguousarray(model.rhs * row_sign) if m else np.zeros(0)
        self.c = np.ascontiguousarray(model.objective[src] * sign)
        self.max_iter = 200 * (m + ni) + 2000

    def internal_bounds(self, lb, ub):
        lo = np.zeros(len(self._cols))
        up = np.full(len(self._cols), np.inf)
        for j, (kind, k) in enumerate(self._map):
            if kind == 0:
                lo[k], up[k] = lb[j], ub[j]
            elif kind == 1:
                lo[k], up[k] = -ub[j], -lb[j]
        return lo, up

    def to_original(self, xi):
        x = np.empty(self.model.num_vars)
        for j, (kind, k) in enumerate(self._map):
            if kind == 0:
                x[j] = xi[k]
            elif kind == 1:
                x[j] = -xi[k]
            else:
                x[j] = xi[k] - xi[k + 1]
        return x

    def _residual(self, xi, lo, up) -> float:
        worst = float(np.max(np.maximum(lo - xi, xi - up), initial=0.0))
        if len(self.b):
            r = self.A @ xi - self.b
            r = np.where(self.is_eq, np.abs(r), r)
            worst = max(worst, float(np.max(r)))
        return worst

    def solve(self, lb=None, ub=None) -> MilpSolution:
        return self.solve_warm(lb, ub)[0]

    def solve_warm(self, lb=None, ub=None, warm=None):
        """Solve with the given bounds; returns (solution, basis state).

        ``warm`` is a basis state from an earlier call on the same model. The
        dual simplex restarts from it and falls back to a cold solve when the
        basis is unusable.
        """
        lb = self.model.lb if lb is None else lb
        ub = self.model.ub if ub is None else ub
        if np.any(lb > ub + 1e-12):
            return MilpSolution(Status.INFEASIBLE, math.nan, None), None
        lo, up = self.internal_bounds(lb, ub)
        up = np.maximum(up, lo)
        out = None
        extra = 0
        if warm is not None:
            out = _kernel.simplex_warm(self.A, self.b, self.is_eq, self.c, lo, up,
                                       self.max_iter, self.params.feas_tol, *warm)
            if out[0] < 0:
                extra = int(out[3])
                out = None
            elif out[0] == _kernel.OPTIMAL and self._residual(out[1], lo, up) > self.params.feas_tol:
                # drift in the updated factors; start over from a clean basis
                extra = int(out[3])
                out = None
        if out is None:
            out = _kernel.simplex(self.A, self.b, self.is_eq, self.c, lo, up,
                                  self.max_iter, self.params.feas_tol)
        code, xi, _, iters, basis, vstat, art_sign = out
        status = _STATUS[int(code)]
        iters = int(iters) + extra
        if status is not Status.OPTIMAL:
            return MilpSolution(status, math.nan, None, iterations=iters), None
        x = self.to_original(xi)
        value = float(self.model.objective @ x)
        sol = MilpSolution(status, value, x, iterations=iters, bound=value)
        return sol, (basis, vstat, art_sign)


def solve_lp(model: MilpModel, params: SolverParams | None = None) -> MilpSolution:
    """Solve the continuous relaxation of ``model``.

    Integrality markers are ignored. Raises :class:`ModelError` on structural
    problems; infeasibility and unboundedness are reported through the status.
    """
    if not isinstance(model, MilpModel):
        raise ModelError("solve_lp expects a MilpModel")
    model.validate()
    return PreparedLP(model, params).solve()
