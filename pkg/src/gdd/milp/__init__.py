from .backends import BuiltinBackend, HighsBackend, MilpBackend, get_backend
from .bnb import solve_milp
from .lp import PreparedLP, solve_lp
from .lpfile import format_lp, parse_lp, read_lp_file, write_lp_file
from .model import (
    MilpModel,
    MilpSolution,
    ModelBuilder,
    ModelError,
    Relation,
    SolverParams,
    Status,
    VarKind,
)

__all__ = [
    "BuiltinBackend", "HighsBackend", "MilpBackend", "MilpModel", "MilpSolution",
    "ModelBuilder", "ModelError", "PreparedLP", "Relation", "SolverParams", "Status",
    "VarKind", "format_lp", "get_backend", "parse_lp", "read_lp_file", "solve_lp",
    "solve_milp", "write_lp_file",
]
