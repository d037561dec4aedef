import itertools

import numpy as np

from gdd.instances import GenParams, generate
from gdd.sp import RecourseOracle, augment_ccr

# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def small_knapsack(seed, n=4, N=2, m1=4, m2=3, family="smbk"):
    """Tiny augmented knapsack instance for exhaustive checks."""
    return augment_ccr(generate(GenParams(family, seed=seed, n=n, m1=m1, m2=m2, N=N)))


def enumerate_binary_optimum(problem, oracle=None):
    """min over {0,1}^n1 of sum_i f_i(x), skipping points outside X."""
    oracle = oracle or RecourseOracle(problem)
    best, arg = np.inf, None
    for p in itertools.product((0.0, 1.0), repeat=problem.n1):
        x = np.array(p)
        vals = [oracle.recourse(i, x) for i in range(problem.N)]
        if not all(v.feasible for v in vals):
            continue
        tot = float(sum(v.value for v in vals))
        if tot < best:
            best, arg = tot, x
    return best, arg


# ------------------------------------------------------------ envelope fixtures

def all_chains(n, rng):
    """Every chain shape on n coordinates (each nonempty set of support sizes),
    under a random coordinate permutation."""
    from gdd.envelope import ChainSpec

    for k in range(1, n + 2):
        for sizes in itertools.combinations(range(n + 1), k):
            perm = rng.permutation(n)
            pts = []
            for s in sizes:
                v = np.zeros(n)
                v[perm[:s]] = 1.0
                pts.append(v)
            yield ChainSpec(pts)


def all_two_trees(n, rng):
    """2-trees in canonical position: junction support {0..s-1}, istar = 0,
    chain2 descending from J - {0} in index order, chain1 descending in any
    order that keeps istar, chain1 optionally extended above J. Coordinates
    are then permuted at random. Incomparability failures are skipped."""
    from gdd.envelope import ChainSpec, TreeSpec

    for s in range(1, n + 1):
        J = list(range(s))
        rest = J[1:]
        for L2 in range(1, s + 1):
            c2 = [set(J), set(rest)]
            cur = set(rest)
            for k in range(L2 - 1):
                cur = cur - {rest[k]}
                c2.append(set(cur))
            for L1 in range(s):
                for order in itertools.permutations(rest, L1):
                    c1, cur = [set(J)], set(J)
                    for j in order:
                        cur = cur - {j}
                        c1.append(set(cur))
                    for U in range(n - s + 1):
                        up = [set(J) | set(range(s, s + u)) for u in range(1, U + 1)]
                        perm = rng.permutation(n)

                        def vec(S):
                            v = np.zeros(n)
                            v[perm[sorted(S)]] = 1.0
                            return v
                        try:
                            yield TreeSpec(ChainSpec([vec(S) for S in c1 + up]),
                                           ChainSpec([vec(S) for S in c2]), vec(J), int(perm[0]))
                        except ValueError:
                            continue


def polytope_vertices(A, b, tol=1e-9):
    """Vertices of {x : A x <= b} by brute force over n-row subsets."""
    n = A.shape[1]
    out = []
    for rows in itertools.combinations(range(A.shape[0]), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + tol * (1 + np.abs(b))):
            if not any(np.allclose(x, y, atol=1e-9) for y in out):
                out.append(x)
    return out


def envelope_by_vertices(cells, x):
    """min sum lambda g over convex combinations of cell vertices equal to x."""
    from scipy.optimize import linprog

    pts, costs = [], []
    for A, b, g in cells:
        for v in polytope_vertices(np.asarray(A, float), np.asarray(b, float)):
            pts.append(v)
            costs.append(g)
    P = np.array(pts).T
    A_eq = np.vstack([P, np.ones((1, P.shape[1]))])
    b_eq = np.concatenate([np.asarray(x, float), [1.0]])
    res = linprog(costs, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun, pts, costs


def random_cells(rng, K, n):
    """Voronoi cells of K random centers in the unit box, with box rows and random values."""
    from gdd.gdd import voronoi_cells

    centers = list(rng.uniform(0, 1, (K, n)))
    box_A = np.vstack([np.eye(n), -np.eye(n)])
    box_b = np.concatenate([np.ones(n), np.zeros(n)])
    cells = []
    for c in voronoi_cells(centers, (np.zeros(n), np.ones(n))):
        A = np.vstack([c.A, box_A]) if c.A.shape[0] else box_A
        cells.append((A, np.concatenate([c.b, box_b]), float(rng.uniform(-3, 3))))
    return centers, cells
