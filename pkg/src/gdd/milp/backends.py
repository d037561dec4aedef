"""Pluggable MILP backends.

Everything in the package talks to a backend object exposing ``solve_milp``
and ``solve_lp``. The built-in engine is the reference; ``HighsBackend`` routes
through ``scipy.optimize.milp`` for users who want an external solver.
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from .bnb import solve_milp as _builtin_milp
from .lp import solve_lp as _builtin_lp
from .model import MilpModel, MilpSolution, Relation, SolverParams, Status


class MilpBackend(Protocol):
    name: str

    def solve_milp(self, model: MilpModel, params: SolverParams | None = None) -> MilpSolution:
        ...

    def solve_lp(self, model: MilpModel, params: SolverParams | None = None) -> MilpSolution:
        ...


class BuiltinBackend:
    name = "builtin"

    def solve_milp(self, model, params=None):
        return _builtin_milp(model, params)

    def solve_lp(self, model, params=None):
        return _builtin_lp(model, params)


class HighsBackend:
    name = "highs"

    def _run(self, model: MilpModel, params, integral: bool) -> MilpSolution:
        from scipy.optimize import Bounds, LinearConstraint, milp

        params = params or SolverParams()
        lo = np.full(model.num_rows, -np.inf)
        hi = np.full(model.num_rows, np.inf)
        for i, rel in enumerate(model.relations):
            if rel is not Relation.GE:
                hi[i] = model.rhs[i]
            if rel is not Relation.LE:
                lo[i] = model.rhs[i]
        cons = [LinearConstraint(model.A, lo, hi)] if model.num_rows else []
        integrality = model.integer_mask.astype(int) if integral else None
        options = {"mip_rel_gap": params.mip_gap}
        if math.isfinite(params.time_limit):
            options["time_limit"] = params.time_limit
        res = milp(model.objective, constraints=cons, integrality=integrality,
                   bounds=Bounds(model.lb, model.ub), options=options)
        if res.status == 0:
            x = np.asarray(res.x, dtype=float)
            if integral:
                mask = model.integer_mask
                x[mask] = np.round(x[mask])
            val = float(model.objective @ x)
            return MilpSolution(Status.OPTIMAL, val, x, bound=val)
        if res.status == 2:
            return MilpSolution(Status.INFEASIBLE, math.nan, None)
        if res.status == 3:
            return MilpSolution(Status.UNBOUNDED, -math.inf, None)
        x = None if res.x is None else np.asarray(res.x, dtype=float)
        val = math.nan if x is None else float(model.objective @ x)
        return MilpSolution(Status.ITER_LIMIT, val, x)

    def solve_milp(self, model, params=None):
        return self._run(model, params, True)

    def solve_lp(self, model, params=None):
        return self._run(model, params, False)


_BACKENDS = {"builtin": BuiltinBackend, "highs": HighsBackend}


def get_backend(name_or_backend=None) -> MilpBackend:
    if name_or_backend is None:
        return BuiltinBackend()
    if isinstance(name_or_backend, str):
        try:
            return _BACKENDS[name_or_backend]()
        except KeyError:
            raise ValueError(f"unknown backend {name_or_backend!r}") from None
    return name_or_backend
