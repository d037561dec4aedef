"""Seeded instance generators: SM(b)K, mixed-tender SMKP, DCAP and Example 1.

All randomness flows through :class:`RngStream`, a splitmix64 generator whose
uniform doubles use the top 53 bits, so any language can reproduce the data.

Sampling orders
---------------
smbk / smkp
    A (row-major), C, T^s for each scenario, W, b, h^s for each scenario,
    c, d, q^s for each scenario.
dcap
    alpha (i, t row-major), beta (i, t), then for each scenario s:
    c_{ijt} for i = 1..m (i, j, t row-major), c_{0jt} (j, t), d_{jt} (j, t).

Probabilities are folded into the costs: every scenario carries c/N, d/N and
q^s/N so the sum of the scenario value functions is the expected objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .milp import VarKind
from .sp import ScenarioTemplate, TwoStageProblem, VarSpec

_MASK = (1 << 64) - 1


class RngStream:
    """splitmix64 stream."""

    GOLDEN = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + self.GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)
        return lo + (hi - lo) * u

    def uniform_array(self, lo, hi, shape) -> np.ndarray:
        """Fill ``shape`` in C order; ``lo``/``hi`` broadcast against it."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), shape)
        out = np.empty(shape)
        for idx in np.ndindex(*shape):
            out[idx] = self.uniform(lo[idx], hi[idx])
        return out


@dataclass
class GenParams:
    family: str
    seed: int = 1
    n: int = 10
    m1: int = 50
    m2: int = 20
    N: int = 5
    # dcap dimensions
    m: int = 3
    tasks: int = 6
    T: int = 2
    S: int = 4
    safe_cap: bool = False
    delta: float = 0.3
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in ("smbk", "smkp", "dcap", "example1"):
            raise ValueError(f"unknown family {self.family!r}")
        dims = (self.n, self.m1, self.m2, self.N, self.m, self.tasks, self.T, self.S)
        if min(dims) < 1:
            raise ValueError("all dimensions must be at least 1")
        if not 0 <= self.seed <= _MASK:
            raise ValueError("seed must fit in 64 bits")


def _knapsack_data(p: GenParams):
    rng = RngStream(p.seed)
    n, m1, m2, N = p.n, p.m1, p.m2, p.N
    A = rng.uniform_array(0, 100, (m1, n))
    C = rng.uniform_array(0, 100, (m1, n))
    Ts = [rng.uniform_array(-50, 100, (m2, n)) for _ in range(N)]
    W = rng.uniform_array(20, 80, (m2, n))
    s = A.sum(axis=1) + C.sum(axis=1)
    b = rng.uniform_array(0.5 * s, 0.75 * s, (m1,))
    hs = []
    for T in Ts:
        tot = W.sum(axis=1) + T.sum(axis=1)
        lo = np.where(tot >= 0, 0.5 * tot, 1.5 * tot)
        hi = np.where(tot >= 0, 0.75 * tot, 1.25 * tot)
        hs.append(rng.uniform_array(lo, hi, (m2,)))
    c = rng.uniform_array(150, 250, (n,))
    d = rng.uniform_array(0, 100, (n,))
    qs = [rng.uniform_array(50, 150, (n,)) for _ in range(N)]
    return A, C, Ts, W, b, hs, c, d, qs


def _knapsack_problem(p: GenParams, x_kinds) -> TwoStageProblem:
    A, C, Ts, W, b, hs, c, d, qs = _knapsack_data(p)
    n, N = p.n, p.N
    first = VarSpec(np.zeros(n), np.ones(n), tuple(x_kinds), tuple(f"x{j}" for j in range(n)))
    aux = VarSpec.uniform(n, 0, 1, VarKind.BINARY, "z")
    rec = VarSpec.uniform(n, 0, 1, VarKind.BINARY, "y")
    scen = [ScenarioTemplate(c / N, qs[s] / N, Ts[s], W, hs[s], (">=",) * p.m2, rec, d=d / N)
            for s in range(N)]
    meta = {"family": p.family, "seed": p.seed,
            "params": {"n": n, "m1": p.m1, "m2": p.m2, "N": N}}
    return TwoStageProblem(first, tuple(scen), aux, np.hstack([A, C]), (">=",) * p.m1, b, meta)


def gen_smbk(params: GenParams) -> TwoStageProblem:
    """Stochastic multiple binary knapsack with constraint uncertainty."""
    return _knapsack_problem(params, (VarKind.BINARY,) * params.n)


def gen_smkp(params: GenParams) -> TwoStageProblem:
    """As :func:`gen_smbk` but x_{ceil(n/2)+1..n} are continuous in [0, 1]."""
    half = math.ceil(params.n / 2)
    kinds = (VarKind.BINARY,) * half + (VarKind.CONTINUOUS,) * (params.n - half)
    return _knapsack_problem(params, kinds)


def gen_dcap(params: GenParams) -> TwoStageProblem:
    """Dynamic capacity acquisition and assignment.

    Tender variables are the acquisitions x_{it} in [0, U]; the acquisition
    flags u_{it} are pure first-stage auxiliaries linked by x_{it} <= U u_{it}.
    U = 1 transcribes the model literally; ``safe_cap`` uses U = 0.5 n T, which
    bounds any useful acquisition since demands are at most 0.5.
    A dummy resource 0 with no capacity row gives complete recourse.
    """
    p = params
    rng = RngStream(p.seed)
    m, n, T, S = p.m, p.tasks, p.T, p.S
    U = 0.5 * n * T if p.safe_cap else 1.0
    alpha = rng.uniform_array(1, 6, (m, T))
    beta = rng.uniform_array(6, 41, (m, T))
    cost, cost0, dem = [], [], []
    for _ in range(S):
        cost.append(rng.uniform_array(1, 6, (m, n, T)))
        cost0.append(rng.uniform_array(30, 180, (n, T)))
        dem.append(rng.uniform_array(0.1, 0.5, (n, T)))
    n1 = m * T
    xi = lambda i, t: i * T + t  # noqa: E731
    first = VarSpec(np.zeros(n1), np.full(n1, U), (VarKind.CONTINUOUS,) * n1,
                    tuple(f"x{i + 1}_{t + 1}" for i in range(m) for t in range(T)))
    aux = VarSpec(np.zeros(n1), np.ones(n1), (VarKind.BINARY,) * n1,
                  tuple(f"u{i + 1}_{t + 1}" for i in range(m) for t in range(T)))
    link = np.zeros((n1, 2 * n1))
    for k in range(n1):
        link[k, k] = 1.0
        link[k, n1 + k] = -U
    # recourse y_{ijt} for i = 0..m, index ((t * (m+1)) + i) * n + j
    ny = T * (m + 1) * n
    yi = lambda i, j, t: (t * (m + 1) + i) * n + j  # noqa: E731
    rec = VarSpec(np.zeros(ny), np.ones(ny), (VarKind.BINARY,) * ny,
                  tuple(f"y{i}_{j + 1}_{t + 1}" for t in range(T) for i in range(m + 1)
                        for j in range(n)))
    scen = []
    for s in range(S):
        q = np.zeros(ny)
        rows_T, rows_W, h, rels = [], [], [], []
        for t in range(T):
            for j in range(n):
                q[yi(0, j, t)] = cost0[s][j, t] / S
                for i in range(m):
                    q[yi(i + 1, j, t)] = cost[s][i, j, t] / S
            for i in range(m):
                tr = np.zeros(n1)
                wr = np.zeros(ny)
                for j in range(n):
                    wr[yi(i + 1, j, t)] = dem[s][j, t]
                for tau in range(t + 1):
                    tr[xi(i, tau)] = -1.0
                rows_T.append(tr)
                rows_W.append(wr)
                h.append(0.0)
                rels.append("<=")
            for j in range(n):
                wr = np.zeros(ny)
                for i in range(m + 1):
                    wr[yi(i, j, t)] = 1.0
                rows_T.append(np.zeros(n1))
                rows_W.append(wr)
                h.append(1.0)
                rels.append("=")
        c = np.array([alpha[i, t] for i in range(m) for t in range(T)]) / S
        d = np.array([beta[i, t] for i in range(m) for t in range(T)]) / S
        scen.append(ScenarioTemplate(c, q, np.array(rows_T), np.array(rows_W), np.array(h),
                                     tuple(rels), rec, d=d))
    meta = {"family": "dcap", "seed": p.seed,
            "params": {"m": m, "n": n, "T": T, "S": S, "U": U}}
    return TwoStageProblem(first, tuple(scen), aux, link, ("<=",) * n1, np.zeros(n1), meta)


def gen_example1(delta: float = 0.3) -> TwoStageProblem:
    """The two-scenario instance on X = {0,1} x [0,1] where linear duals fail for delta < 2."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    first = VarSpec(np.zeros(2), np.ones(2), (VarKind.BINARY, VarKind.CONTINUOUS), ("x1", "x2"))
    # f1: min 2 y1 + 4 y2  s.t. y1 + y2 >= x1 + x2 - 1,  y1 binary, y2 >= 0
    s1 = ScenarioTemplate(
        c=np.zeros(2), q=np.array([2.0, 4.0]), T=np.array([[-1.0, -1.0]]),
        W=np.array([[1.0, 1.0]]), h=np.array([-1.0]), relations=(">=",),
        recourse=VarSpec(np.zeros(2), np.array([1.0, np.inf]),
                         (VarKind.BINARY, VarKind.CONTINUOUS), ("y1", "y2")))
    # f2: min d y1 + 2 y2 + 2d y3 + 4 y4 + (d-2) x1
    #     s.t. y1 + y3 >= x2 - x1,  y2 + y4 >= x1 - x2
    s2 = ScenarioTemplate(
        c=np.array([delta - 2.0, 0.0]), q=np.array([delta, 2.0, 2 * delta, 4.0]),
        T=np.array([[1.0, -1.0], [-1.0, 1.0]]),
        W=np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]), h=np.zeros(2),
        relations=(">=", ">="),
        recourse=VarSpec(np.zeros(4), np.array([1.0, 1.0, np.inf, np.inf]),
                         (VarKind.BINARY, VarKind.BINARY, VarKind.CONTINUOUS,
                          VarKind.CONTINUOUS), ("y1", "y2", "y3", "y4")))
    return TwoStageProblem(first, (s1, s2), meta={"family": "example1", "seed": 0,
                                                  "params": {"delta": delta}})


def generate(params: GenParams) -> TwoStageProblem:
    if params.family == "smbk":
        return gen_smbk(params)
    if params.family == "smkp":
        return gen_smkp(params)
    if params.family == "dcap":
        return gen_dcap(params)
    return gen_example1(params.delta)
