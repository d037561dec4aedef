"""Command-line front end: ``gdd generate``, ``gdd solve`` and ``gdd bench``.

Exit codes: 0 when the run closed its gap (or the MILP solved to optimality),
3 when an iteration, time or node limit stopped it first, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .constrained import (chance_blocks, constrained_from_dict, constrained_to_dict,
                          random_chance, random_robust, robust_epigraph, solve_cgdd)
from .dd import DdParams, StepRule, rel_gap, solve_dd, solve_gddb
from .gdd import BoundLedger, GddConfig, run_gdd
from .instances import GenParams, generate
from .milp import SolverParams, Status, get_backend
from .sp import CCRViolation, augment_ccr, build_def, dumps, problem_from_dict

EXIT_OK, EXIT_USAGE, EXIT_LIMIT = 0, 2, 3
SUMMARY_HEADER = ["method", "instance", "lb", "ub", "gap", "iters", "seconds", "workers", "status"]


class UsageError(Exception):
    pass


@dataclass
class RunSummary:
    method: str
    instance: str
    lb: float
    ub: float
    iters: int
    seconds: float
    workers: int
    status: str

    @property
    def gap(self) -> float:
        return rel_gap(self.lb, self.ub)

    def row(self) -> list:
        return [self.method, self.instance, f"{self.lb:.9g}", f"{self.ub:.9g}",
                f"{self.gap:.9g}", self.iters, f"{self.seconds:.6f}", self.workers, self.status]


def summary_csv(rows, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


# ------------------------------------------------------------ generate

def _gen_data(args) -> dict:
    fam = args.family
    if fam == "ro":
        return constrained_to_dict(robust_epigraph(random_robust(args.seed, args.n, args.N)))
    if fam == "cc":
        return constrained_to_dict(chance_blocks(random_chance(args.seed, args.n, args.N,
                                                               args.beta)))
    p = GenParams(fam, seed=args.seed, n=args.n, m1=args.m1, m2=args.m2, N=args.N, m=args.m,
                  tasks=args.tasks, T=args.T, S=args.S, safe_cap=args.safe_cap, delta=args.delta)
    prob = generate(p)
    if args.ccr:
        prob = augment_ccr(prob, args.penalty)
    return json.loads(dumps(prob))


def cmd_generate(args) -> int:
    try:
        data = _gen_data(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(text.encode()).hexdigest()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"{args.out} sha256:{digest}")
    else:
        sys.stdout.write(text + "\n")
        print(f"sha256:{digest}", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------ solve

def _load(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read instance {path}: {exc}") from exc
    if "constrained" in data:
        return "constrained", constrained_from_dict(data)
    return "sp", problem_from_dict(data)


def _step(args) -> StepRule:
    return StepRule(a=args.step_a, b=args.step_b, kind=args.step)


def _solver(args) -> SolverParams:
    return SolverParams(time_limit=args.time_limit)


def _config(args) -> GddConfig:
    rho = args.rho
    try:
        rho = float(rho)
    except ValueError:
        pass
    try:
        return GddConfig(regularizer=args.regularizer, encoding=args.encoding, nested=args.nested,
                         pruning=args.prune, workers=args.workers, max_iters=args.max_iters,
                         gap_tol=args.gap_tol, time_limit=args.time_limit,
                         dd_warmstart=args.dd_warmstart, dd_step=_step(args), rho=rho)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _trace_from_dual(res) -> BoundLedger:
    led = BoundLedger()
    for t, sec, lb, ub in res.trace:
        led.append(t + 1, sec, lb, ub, 0, 0)
    return led


def run_method(method: str, kind: str, problem, args, instance_id: str):
    """Dispatch one solve; returns (RunSummary, BoundLedger or None, converged flag)."""
    backend = get_backend(args.backend)
    t0 = time.perf_counter()
    if kind == "constrained" and method not in ("cgdd", "def"):
        raise UsageError(f"method {method} needs a two-stage instance; use cgdd")
    if kind == "sp" and method == "cgdd":
        raise UsageError("method cgdd needs a constrained instance")
    if kind == "sp" and args.ccr:
        problem = augment_ccr(problem, args.penalty)
    ledger = None
    if method == "def":
        model = build_def(problem) if kind == "sp" else problem.monolithic()
        sol = backend.solve_milp(model, _solver(args))
        secs = time.perf_counter() - t0
        if sol.status is Status.INFEASIBLE:
            s = RunSummary(method, instance_id, math.inf, math.inf, sol.nodes, secs, 1,
                           "Infeasible")
            return s, None, True
        lb = sol.bound if sol.bound is not None else -math.inf
        ub = sol.objective if sol.x is not None else math.inf
        s = RunSummary(method, instance_id, min(lb, ub), ub, sol.nodes, secs, 1,
                       sol.status.value)
        return s, None, sol.status is Status.OPTIMAL
    if method in ("dd", "gddb"):
        params = DdParams(max_iters=args.max_iters, gap_tol=args.gap_tol,
                          time_limit=args.time_limit, step=_step(args), workers=args.workers)
        if method == "gddb" and not problem.binary_tender:
            raise UsageError("gddb requires every first-stage variable to be binary")
        fn = solve_dd if method == "dd" else solve_gddb
        res = fn(problem, params, backend)
        ledger = _trace_from_dual(res)
        s = RunSummary(method, instance_id, res.lb, res.ub, res.iterations,
                       time.perf_counter() - t0, args.workers, res.status)
        return s, ledger, res.gap <= args.gap_tol
    cfg = _config(args)
    if method == "gdd":
        res = run_gdd(problem, cfg, backend)
        s = RunSummary(method, instance_id, res.lb, res.ub, res.iterations,
                       time.perf_counter() - t0, args.workers, res.status)
        return s, res.ledger, res.gap <= args.gap_tol
    res = solve_cgdd(problem, cfg, backend)
    s = RunSummary(method, instance_id, res.lb, res.ub, res.iterations,
                   time.perf_counter() - t0, args.workers, res.status)
    return s, res.ledger, rel_gap(res.lb, res.ub) <= args.gap_tol


def cmd_solve(args) -> int:
    kind, problem = _load(args.instance)
    inst = args.instance_id or os.path.splitext(os.path.basename(args.instance))[0]
    try:
        summary, ledger, ok = run_method(args.method, kind, problem, args, inst)
    except CCRViolation as exc:
        raise UsageError(f"{exc}; rerun with --ccr to add penalised slacks") from exc
    if args.trace and ledger is not None:
        ledger.write_csv(args.trace)
    text = summary_csv([summary])
    sys.stdout.write(text)
    if args.summary:
        new = not os.path.exists(args.summary) or os.path.getsize(args.summary) == 0
        with open(args.summary, "a") as fh:
            fh.write(summary_csv([summary], header=new))
    return EXIT_OK if ok else EXIT_LIMIT


# ------------------------------------------------------------ bench

def _seed_range(text: str) -> list:
    try:
        if ":" in text:
            a, b = text.split(":")
            seeds = list(range(int(a), int(b) + 1))
        else:
            seeds = [int(s) for s in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad seed range {text!r}") from exc
    if not seeds:
        raise UsageError("empty seed range")
    return seeds


def speedup_table(rows) -> list:
    """(workers, mean seconds, mean time at 1 worker / mean time at p workers)."""
    by: dict = {}
    for r in rows:
        by.setdefault(r.workers, []).append(r.seconds)
    base = by.get(1)
    out = []
    for w in sorted(by):
        mean = float(np.mean(by[w]))
        sp = float(np.mean(base)) / mean if base and mean > 0 else math.nan
        if w == 1:
            sp = 1.0
        out.append((w, mean, sp))
    return out


def cmd_bench(args) -> int:
    seeds = _seed_range(args.seeds)
    try:
        workers = [int(w) for w in args.workers_list.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad worker list {args.workers_list!r}") from exc
    if any(w < 1 for w in workers):
        raise UsageError("worker counts must be positive")
    rows = []
    for seed in seeds:
        args.seed = seed
        data = _gen_data(args)
        kind = "constrained" if "constrained" in data else "sp"
        prob = constrained_from_dict(data) if kind == "constrained" else problem_from_dict(data)
        for w in workers:
            args.workers = w
            s, _, _ = run_method(args.method, kind, prob, args, f"{args.family}-{seed}")
            rows.append(s)
    out = io.StringIO()
    out.write(summary_csv(rows))
    out.write("\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["workers", "mean_seconds", "speedup"])
    for wk, mean, sp in speedup_table(rows):
        w.writerow([wk, f"{mean:.6f}", f"{sp:.6f}"])
    text = out.getvalue()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------ parser

def _add_gen_flags(p):
    p.add_argument("--family", required=True,
                   choices=["smbk", "smkp", "dcap", "example1", "ro", "cc"])
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--m1", type=int, default=50)
    p.add_argument("--m2", type=int, default=20)
    p.add_argument("--N", type=int, default=5)
    p.add_argument("--m", type=int, default=3, help="dcap resources")
    p.add_argument("--tasks", type=int, default=6, help="dcap tasks")
    p.add_argument("--T", type=int, default=2, help="dcap periods")
    p.add_argument("--S", type=int, default=4, help="dcap scenarios")
    p.add_argument("--safe-cap", action="store_true", help="dcap acquisition cap 0.5 n T")
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--beta", type=float, default=0.25, help="cc risk level")
    p.add_argument("--ccr", action="store_true", help="add penalised CCR slacks")
    p.add_argument("--penalty", type=float, default=None)


def _add_solve_flags(p):
    p.add_argument("--method", required=True, choices=["def", "dd", "gddb", "gdd", "cgdd"])
    p.add_argument("--regularizer", default="pwc", choices=["pwc", "cuts"])
    p.add_argument("--encoding", default="enum", choices=["bigm", "enum"])
    p.add_argument("--nested", action="store_true")
    p.add_argument("--prune", action="store_true")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--gap-tol", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=math.inf)
    p.add_argument("--dd-warmstart", type=int, default=0)
    p.add_argument("--step", default="diminishing", choices=["diminishing", "polyak"])
    p.add_argument("--step-a", type=float, default=1.0)
    p.add_argument("--step-b", type=float, default=10.0)
    p.add_argument("--rho", default="spread", help="spread, bound, adaptive or a number")
    p.add_argument("--backend", default="builtin", choices=["builtin", "highs"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gdd", description="Generalized dual decomposition")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded instance as JSON")
    _add_gen_flags(g)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve an instance file")
    s.add_argument("instance")
    _add_solve_flags(s)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--ccr", action="store_true", help="augment with CCR slacks before solving")
    s.add_argument("--penalty", type=float, default=None)
    s.add_argument("--trace", help="ledger CSV path")
    s.add_argument("--summary", help="append the summary row to this CSV")
    s.add_argument("--instance-id")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="batch over seeds and worker counts")
    _add_gen_flags(b)
    _add_solve_flags(b)
    b.add_argument("--seeds", default="1:1", help="a:b inclusive or a comma list")
    b.add_argument("--workers-list", default="1", help="comma list of worker counts")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        ap.error("--workers must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gdd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
