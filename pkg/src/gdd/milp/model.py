"""Generic mixed-integer linear model, solver parameters and results."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ModelError(ValueError):
    """Structural problem with a model (dimensions, bounds, kinds)."""


class VarKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    INTEGER = "integer"


class Relation(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="

    @classmethod
    def parse(cls, value) -> "Relation":
        if isinstance(value, Relation):
            return value
        aliases = {"<=": cls.LE, "=<": cls.LE, "L": cls.LE, "le": cls.LE,
                   "=": cls.EQ, "==": cls.EQ, "E": cls.EQ, "eq": cls.EQ,
                   ">=": cls.GE, "=>": cls.GE, "G": cls.GE, "ge": cls.GE}
        try:
            return aliases[value]
        except KeyError:
            raise ModelError(f"unknown relation {value!r}") from None


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class SolverParams:
    feas_tol: float = 1e-7
    int_tol: float = 1e-6
    mip_gap: float = 1e-9
    node_limit: int = 1_000_000
    time_limit: float = math.inf

    def __post_init__(self):
        for name in ("feas_tol", "int_tol", "mip_gap", "time_limit"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be strictly positive")
        if self.node_limit < 1:
            raise ModelError("node_limit must be at least 1")


@dataclass
class MilpModel:
    """min c^T x  s.t.  A x (rel) b,  lb <= x <= ub,  x_j integral for j in integer kinds.

    Continuous variables may carry infinite bounds; integer and binary
    variables must be bounded.
    """

    objective: np.ndarray
    A: np.ndarray
    relations: list
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    kinds: list
    names: list = field(default_factory=list)
    row_names: list = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.objective.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if n else \
            np.zeros((len(self.relations), 0))
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        self.relations = [Relation.parse(r) for r in self.relations]
        self.kinds = [VarKind(k) for k in self.kinds]
        if not self.names:
            self.names = [f"x{j}" for j in range(n)]
        if not self.row_names:
            self.row_names = [f"c{i}" for i in range(self.A.shape[0])]
        self.validate()

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def integer_mask(self) -> np.ndarray:
        return np.array([k is not VarKind.CONTINUOUS for k in self.kinds], dtype=bool)

    def validate(self) -> None:
        n, m = self.num_vars, self.A.shape[0]
        if self.A.shape != (m, n):
            raise ModelError(f"constraint matrix has shape {self.A.shape}, expected ({m}, {n})")
        if len(self.relations) != m or self.rhs.size != m:
            raise ModelError("relations/rhs length must equal the number of rows")
        if self.lb.size != n or self.ub.size != n or len(self.kinds) != n:
            raise ModelError("bounds/kinds length must equal the number of variables")
        if len(self.names) != n or len(self.row_names) != m:
            raise ModelError("name lists must match model dimensions")
        if not (np.all(np.isfinite(self.objective)) and np.all(np.isfinite(self.A))
                and np.all(np.isfinite(self.rhs))):
            raise ModelError("objective, coefficients and rhs must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ModelError("bounds must not be NaN")
        if np.any(self.lb > self.ub):
            j = int(np.argmax(self.lb > self.ub))
            raise ModelError(f"variable {self.names[j]} has lb > ub")
        for j, kind in enumerate(self.kinds):
            if kind is VarKind.CONTINUOUS:
                continue
            if not (math.isfinite(self.lb[j]) and math.isfinite(self.ub[j])):
                raise ModelError(f"integer variable {self.names[j]} must be bounded")
            if kind is VarKind.BINARY and (self.lb[j] < 0 or self.ub[j] > 1):
                raise ModelError(f"binary variable {self.names[j]} has bounds outside [0, 1]")

    def copy(self) -> "MilpModel":
        return MilpModel(self.objective.copy(), self.A.copy(), list(self.relations),
                         self.rhs.copy(), self.lb.copy(), self.ub.copy(), list(self.kinds),
                         list(self.names), list(self.row_names))

    def relaxed(self) -> "MilpModel":
        """Same model with every variable continuous."""
        out = self.copy()
        out.kinds = [VarKind.CONTINUOUS] * self.num_vars
        return out

    def with_bounds(self, lb=None, ub=None) -> "MilpModel":
        out = self.copy()
        if lb is not None:
            out.lb = np.asarray(lb, dtype=float).copy()
        if ub is not None:
            out.ub = np.asarray(ub, dtype=float).copy()
        out.validate()
        return out

    def add_rows(self, A, relations, rhs, names=None) -> "MilpModel":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.size == 0:
            return self.copy()
        out = self.copy()
        out.A = np.vstack([self.A, A])
        out.relations = list(self.relations) + [Relation.parse(r) for r in relations]
        out.rhs = np.concatenate([self.rhs, np.asarray(rhs, dtype=float).reshape(-1)])
        start = self.num_rows
        out.row_names = list(self.row_names) + (
            list(names) if names else [f"c{start + i}" for i in range(A.shape[0])])
        out.validate()
        return out

    def add_columns(self, objective, A_cols, lb, ub, kinds, names=None) -> "MilpModel":
        objective = np.asarray(objective, dtype=float).reshape(-1)
        k = objective.size
        A_cols = np.asarray(A_cols, dtype=float).reshape(self.num_rows, k)
        out = self.copy()
        out.objective = np.concatenate([self.objective, objective])
        out.A = np.hstack([self.A, A_cols])
        out.lb = np.concatenate([self.lb, np.asarray(lb, dtype=float).reshape(-1)])
        out.ub = np.concatenate([self.ub, np.asarray(ub, dtype=float).reshape(-1)])
        out.kinds = list(self.kinds) + [VarKind(x) for x in kinds]
        start = self.num_vars
        out.names = list(self.names) + (
            list(names) if names else [f"x{start + j}" for j in range(k)])
        out.validate()
        return out

    def evaluate(self, x) -> float:
        return float(self.objective @ np.asarray(x, dtype=float))

    def max_violation(self, x) -> float:
        """Largest violation of any row or bound at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.num_rows:
            act = self.A @ x
            for i, rel in enumerate(self.relations):
                if rel is Relation.LE:
                    worst = max(worst, act[i] - self.rhs[i])
                elif rel is Relation.GE:
                    worst = max(worst, self.rhs[i] - act[i])
                else:
                    worst = max(worst, abs(act[i] - self.rhs[i]))
        if x.size:
            worst = max(worst, float(np.max(self.lb - x)), float(np.max(x - self.ub)))
        return worst


def empty_model() -> MilpModel:
    return MilpModel(np.zeros(0), np.zeros((0, 0)), [], np.zeros(0),
                     np.zeros(0), np.zeros(0), [])


class ModelBuilder:
    """Incremental construction of a :class:`MilpModel`."""

    def __init__(self):
        self._obj: list[float] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._kinds: list[VarKind] = []
        self._names: list[str] = []
        self._rows: list[dict] = []
        self._rels: list[Relation] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []

    @property
    def num_vars(self) -> int:
        return len(self._obj)

    def add_var(self, lb=0.0, ub=math.inf, kind=VarKind.CONTINUOUS, cost=0.0, name=None) -> int:
        j = len(self._obj)
        self._obj.append(float(cost))
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._kinds.append(VarKind(kind))
        self._names.append(name or f"x{j}")
        return j

    def add_vars(self, count, lb=0.0, ub=math.inf, kind=VarKind.CONTINUOUS, cost=0.0,
                 prefix="x") -> list[int]:
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), (count,))
        ubs = np.broadcast_to(np.asarray(ub, dtype=float), (count,))
        costs = np.broadcast_to(np.asarray(cost, dtype=float), (count,))
        kinds = [kind] * count if isinstance(kind, (str, VarKind)) else list(kind)
        return [self.add_var(lbs[k], ubs[k], kinds[k], costs[k], f"{prefix}{k}")
                for k in range(count)]

    def set_cost(self, j: int, cost: float) -> None:
        self._obj[j] = float(cost)

    def add_row(self, coefs: dict, relation, rhs: float, name=None) -> int:
        i = len(self._rows)
        self._rows.append({int(j): float(v) for j, v in coefs.items() if v != 0.0})
        self._rels.append(Relation.parse(relation))
        self._rhs.append(float(rhs))
        self._row_names.append(name or f"c{i}")
        return i

    def add_dense_row(self, cols: Sequence[int], values, relation, rhs, name=None) -> int:
        return self.add_row(dict(zip(cols, np.asarray(values, dtype=float))), relation, rhs, name)

    def build(self) -> MilpModel:
        n, m = len(self._obj), len(self._rows)
        A = np.zeros((m, n))
        for i, row in enumerate(self._rows):
            for j, v in row.items():
                A[i, j] += v
        return MilpModel(np.array(self._obj), A, list(self._rels), np.array(self._rhs),
                         np.array(self._lb), np.array(self._ub), list(self._kinds),
                         list(self._names), list(self._row_names))


@dataclass
class MilpSolution:
    status: Status
    objective: float
    x: Optional[np.ndarray]
    nodes: int = 0
    iterations: int = 0
    bound: float = -math.inf

    @property
    def is_optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def has_solution(self) -> bool:
        return self.x is not None
