"""Best-bound branch-and-bound over the dense simplex."""

from __future__ import annotations

import heapq
import math
import time

import numpy as np

from .lp import PreparedLP
from .model import MilpModel, MilpSolution, ModelError, SolverParams, Status


def _most_fractional(x, int_idx, tol):
    best_j, best_f = -1, tol
    for j in int_idx:
        f = x[j] - math.floor(x[j])
        f = min(f, 1.0 - f)
        if f > best_f + 1e-12:
            best_j, best_f = j, f
    return best_j


def solve_milp(model: MilpModel, params: SolverParams | None = None) -> MilpSolution:
    """Solve ``model`` to global optimality within the relative MIP gap.

    Node selection is best-bound with ties broken by node id; branching picks
    the most fractional integer variable, ties going to the lowest index. The
    search is fully deterministic.
    """
    if not isinstance(model, MilpModel):
        raise ModelError("solve_milp expects a MilpModel")
    params = params or SolverParams()
    model.validate()
    start = time.perf_counter()
    lp = PreparedLP(model, params)
    int_idx = np.flatnonzero(model.integer_mask)
    lb0 = model.lb.copy()
    ub0 = model.ub.copy()
    if int_idx.size:
        lb0[int_idx] = np.ceil(lb0[int_idx] - params.int_tol)
        ub0[int_idx] = np.floor(ub0[int_idx] + params.int_tol)

    root, root_basis = lp.solve_warm(lb0, ub0)
    nodes, iters = 1, root.iterations
    if root.status is not Status.OPTIMAL:
        return MilpSolution(root.status, math.nan, None, nodes, iters)
    if int_idx.size == 0:
        return MilpSolution(Status.OPTIMAL, root.objective, root.x, nodes, iters, root.objective)

    inc_val, inc_x = math.inf, None

    def close_enough(bound):
        return inc_x is not None and inc_val - bound <= params.mip_gap * max(1.0, abs(inc_val))

    def try_incumbent(x, lb, ub, warm):
        """Polish a near-integral point; False when its rounding is infeasible."""
        nonlocal inc_val, inc_x, iters, nodes
        fixed_lb, fixed_ub = lb.copy(), ub.copy()
        r = np.round(x[int_idx])
        fixed_lb[int_idx] = r
        fixed_ub[int_idx] = r
        polished, _ = lp.solve_warm(fixed_lb, fixed_ub, warm)
        nodes += 1
        iters += polished.iterations
        if polished.status is Status.OPTIMAL:
            cand = polished.x
        else:
            cand = x.copy()
            cand[int_idx] = r
            if model.max_violation(cand) > params.feas_tol:
                return False
        val = float(model.objective @ cand)
        if val < inc_val:
            inc_val, inc_x = val, cand
        return True

    def rounding_branch(x, lb, ub):
        # free integer variable furthest from its rounded value
        best_j, best_f = -1, -1.0
        for j in int_idx:
            if lb[j] < ub[j]:
                f = abs(x[j] - round(x[j]))
                if f > best_f:
                    best_j, best_f = j, f
        return best_j

    heap = []
    next_id = 0
    heapq.heappush(heap, (root.objective, next_id, lb0, ub0, root.x, root_basis))
    next_id += 1
    hit_limit = False
    lost_bound = math.inf
    while heap:
        bound, _, lb, ub, x, basis = heap[0]
        if close_enough(bound):
            break
        if nodes >= params.node_limit or time.perf_counter() - start > params.time_limit:
            hit_limit = True
            break
        heapq.heappop(heap)
        j = _most_fractional(x, int_idx, params.int_tol)
        if j < 0:
            if try_incumbent(x, lb, ub, basis):
                continue
            # rounding broke a row: split off the rounded value explicitly
            j = rounding_branch(x, lb, ub)
            if j < 0:
                continue
            r = float(round(x[j]))
            children = []
            if lb[j] <= r - 1:
                cub = ub.copy()
                cub[j] = r - 1
                children.append((lb, cub))
            flb, fub = lb.copy(), ub.copy()
            flb[j] = fub[j] = r
            children.append((flb, fub))
            if ub[j] >= r + 1:
                clb = lb.copy()
                clb[j] = r + 1
                children.append((clb, ub))
        else:
            v = x[j]
            down_ub = ub.copy()
            down_ub[j] = math.floor(v)
            up_lb = lb.copy()
            up_lb[j] = math.ceil(v)
            children = [(lb, down_ub), (up_lb, ub)]
        for clb, cub in children:
            child, cbasis = lp.solve_warm(clb, cub, basis)
            nodes += 1
            iters += child.iterations
            if child.status is Status.OPTIMAL:
                if not close_enough(child.objective):
                    heapq.heappush(heap, (child.objective, next_id, clb, cub, child.x, cbasis))
            elif child.status is Status.UNBOUNDED:
                return MilpSolution(Status.UNBOUNDED, -math.inf, None, nodes, iters)
            elif child.status is Status.ITER_LIMIT:
                # an unresolved node leaves the bound uncertified
                hit_limit = True
                lost_bound = min(lost_bound, bound)
            next_id += 1

    best_bound = heap[0][0] if heap else inc_val
    best_bound = min(best_bound, inc_val, lost_bound)
    if hit_limit:
        return MilpSolution(Status.ITER_LIMIT, inc_val if inc_x is not None else math.nan,
                            inc_x, nodes, iters, best_bound)
    if inc_x is None:
        return MilpSolution(Status.INFEASIBLE, math.nan, None, nodes, iters)
    return MilpSolution(Status.OPTIMAL, inc_val, inc_x, nodes, iters, best_bound)
