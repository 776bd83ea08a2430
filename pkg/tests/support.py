"""Shared builders and independent oracles for the test suite.

Oracles here deliberately avoid the code paths they check: LP outcomes are
cross-checked by vertex enumeration or scipy, sparse-recovery objectives by
support/sign enumeration with a scalar root-find, and scenario quantities by
direct dense algebra.
"""
from __future__ import annotations

import itertools

import numpy as np

from gridfault.attack import AttackScenario, generate_scenario
from gridfault.errors import GridFaultError, TooFewLinks
from gridfault.grid import Grid, Link

# Guard for generated suites: reject scenarios whose area links carry
# post-attack angle gaps below this (zero-flow links are unidentifiable
# and excluded from localization).
MIN_FLOW_GAP = 1e-5


def make_grid(edges, injections=None, reference=0, balance_at=None) -> Grid:
    """Grid from (s, t, r) triples; links are renumbered by sorted endpoint
    pair. Injections are balanced by adjusting `balance_at` (default: the
    reference node)."""
    norm = sorted((min(s, t), max(s, t), r) for s, t, r in edges)
    links = tuple(Link(i, s, t, float(r)) for i, (s, t, r) in enumerate(norm))
    n = 1 + max(max(s, t) for s, t, _ in norm)
    p = np.zeros(n) if injections is None else np.asarray(injections, dtype=float).copy()
    fix = reference if balance_at is None else balance_at
    p[fix] -= p.sum()
    return Grid(injections=tuple(p), links=links, reference=reference)


def path_grid(n, r=1.0, p=None, reference=None) -> Grid:
    edges = [(i, i + 1, r) for i in range(n - 1)]
    if reference is None:
        reference = n - 1
    return make_grid(edges, injections=p, reference=reference)


def random_grid(rng, n_nodes, extra_links=2, gen_frac=0.3, zero_frac=0.15,
                p_scale=1.0, r_low=0.1, r_high=1.5) -> Grid:
    """Random connected grid: attachment tree plus chords, with generator,
    load, and zero-injection buses; balanced at the reference."""
    edges = set()
    for i in range(1, n_nodes):
        j = int(rng.integers(i))
        edges.add((j, i))
    added = 0
    guard = 0
    while added < extra_links and guard < 50 * (extra_links + 1):
        guard += 1
        a, b = rng.integers(n_nodes), rng.integers(n_nodes)
        a, b = int(min(a, b)), int(max(a, b))
        if a != b and (a, b) not in edges:
            edges.add((a, b))
            added += 1
    p = np.zeros(n_nodes)
    for v in range(n_nodes):
        u = rng.random()
        if u < zero_frac:
            p[v] = 0.0
        elif u < zero_frac + gen_frac:
            p[v] = rng.uniform(0.5, 2.0) * p_scale
        else:
            p[v] = -rng.uniform(0.2, 1.5) * p_scale
    reference = int(rng.integers(n_nodes))
    r_edges = [(a, b, float(rng.uniform(r_low, r_high))) for a, b in sorted(edges)]
    return make_grid(r_edges, injections=p, reference=reference)


def min_area_gap(s: AttackScenario) -> float:
    theta = s.post.theta
    gaps = [
        abs(theta[s.grid.links[e].s] - theta[s.grid.links[e].t]) for e in s.e_h
    ]
    return min(gaps) if gaps else np.inf


def random_scenario(rng, grid, vh_size, nf, *, min_gap=MIN_FLOW_GAP,
                    predicate=None, attempts=300):
    """Seeded rejection sampler: skips degenerate or near-degenerate flows and
    scenarios failing the predicate. Returns None when attempts run out."""
    for _ in range(attempts):
        seed = int(rng.integers(2**31))
        try:
            s = generate_scenario(grid, vh_size, nf, seed)
        except TooFewLinks:
            continue
        except GridFaultError:
            continue
        if s.degenerate or min_area_gap(s) < min_gap:
            continue
        if predicate is not None and not predicate(s):
            continue
        return s
    return None


def scenario_stream(rng, n, *, node_range=(8, 18), vh_range=(3, 7), nf_range=(1, 3),
                    grid_kwargs=None, predicate=None, min_gap=MIN_FLOW_GAP):
    """Up to n accepted scenarios over freshly sampled random grids."""
    grid_kwargs = grid_kwargs or {}
    out = []
    guard = 0
    while len(out) < n and guard < 60 * n:
        guard += 1
        nodes = int(rng.integers(node_range[0], node_range[1] + 1))
        grid = random_grid(rng, nodes, extra_links=int(rng.integers(0, 4)), **grid_kwargs)
        vh = int(rng.integers(vh_range[0], min(vh_range[1], nodes - 1) + 1))
        nf = int(rng.integers(nf_range[0], nf_range[1] + 1))
        s = random_scenario(rng, grid, vh, nf, predicate=predicate,
                            min_gap=min_gap, attempts=8)
        if s is not None:
            out.append(s)
    return out


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def lp_vertex_oracle(problem, tol=1e-9):
    """Enumerate basic solutions of an LP with finite boxes: every choice of
    active constraints completing the equality rows to a square system. Valid
    as a complete oracle when the feasible set is a polytope (finite bounds).
    Returns (status, objective)."""
    n = problem.n
    rows = [(problem.a_eq[i], problem.b_eq[i]) for i in range(problem.a_eq.shape[0])]
    cands = []
    for i in range(problem.a_le.shape[0]):
        cands.append((problem.a_le[i], problem.b_le[i]))
    for j in range(n):
        ej = np.zeros(n)
        ej[j] = 1.0
        if np.isfinite(problem.upper[j]):
            cands.append((ej, problem.upper[j]))
        if np.isfinite(problem.lower[j]):
            cands.append((-ej, -problem.lower[j]))

    need = n - len(rows)
    best = None
    feasible_found = False
    for combo in itertools.combinations(range(len(cands)), need):
        A = np.array([r[0] for r in rows] + [cands[i][0] for i in combo])
        b = np.array([r[1] for r in rows] + [cands[i][1] for i in combo])
        if A.shape[0] != n:
            continue
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            continue
        if problem.a_eq.shape[0] and np.abs(problem.a_eq @ x - problem.b_eq).max() > tol:
            continue
        if problem.a_le.shape[0] and (problem.a_le @ x - problem.b_le).max() > tol:
            continue
        if (problem.lower - x).max() > tol or (x - problem.upper).max() > tol:
            continue
        feasible_found = True
        obj = float(problem.c @ x)
        if best is None or obj < best:
            best = obj
    if not feasible_found:
        return "infeasible", None
    return "optimal", best


def bpdn_oracle(A, y, eps, tol=1e-10):
    """min ||x||_1 s.t. ||A x - y||_2 <= eps by support + sign enumeration.

    For each support S and sign vector s the boundary minimizer solves
    (A_S^T A_S) x = A_S^T y - s/(2 nu) with nu chosen so the constraint is
    active (scalar bisection); candidates must be sign-consistent. The
    unconstrained zero candidate covers ||y|| <= eps.
    """
    m, n = A.shape
    best = np.inf
    if np.linalg.norm(y) <= eps + tol:
        return 0.0
    for k in range(1, n + 1):
        for support in itertools.combinations(range(n), k):
            As = A[:, support]
            G = As.T @ As
            if np.linalg.matrix_rank(G) < k:
                continue
            Aty = As.T @ y
            resid_min = np.linalg.norm(As @ np.linalg.solve(G, Aty) - y)
            if resid_min > eps + 1e-8:
                continue  # this support cannot reach the ball
            for signs in itertools.product([-1.0, 1.0], repeat=k):
                s = np.array(signs)

                def x_of(nu):
                    return np.linalg.solve(G, Aty - s / (2.0 * nu))

                def resid(nu):
                    return float(np.linalg.norm(As @ x_of(nu) - y))

                lo_nu, hi_nu = 1e-12, 1.0
                grow = 0
                while resid(hi_nu) > eps and grow < 200:
                    hi_nu *= 4.0
                    grow += 1
                if resid(hi_nu) > eps:
                    continue
                for _ in range(200):
                    mid = 0.5 * (lo_nu + hi_nu)
                    if resid(mid) > eps:
                        lo_nu = mid
                    else:
                        hi_nu = mid
                x = x_of(hi_nu)
                if np.all(x * s >= -1e-9):
                    best = min(best, float(np.abs(x).sum()))
    return best


def scipy_primal_feasible(A, g):
    """Feasibility of { c : A^T c <= g } via scipy's LP (independent path)."""
    from scipy.optimize import linprog

    M = np.asarray(A).T
    res = linprog(
        c=np.zeros(M.shape[1]),
        A_ub=M,
        b_ub=np.asarray(g, dtype=float),
        bounds=[(None, None)] * M.shape[1],
        method="highs",
    )
    return bool(res.status == 0)


# ---------------------------------------------------------------------------
# acceptance-criterion scenario factories
# ---------------------------------------------------------------------------


def corollary1_scenario(rng):
    """All-load acyclic area whose nodes each tie to an external hub, so any
    area failure leaves the grid connected (zero injection change)."""
    from gridfault.attack import apply_attack
    from gridfault.errors import GridFaultError

    k = int(rng.integers(3, 8))
    edges = []
    for i in range(1, k):
        edges.append((int(rng.integers(i)), i, float(rng.uniform(0.3, 1.5))))
    hub = k
    for i in range(k):
        edges.append((i, hub, float(rng.uniform(0.3, 1.5))))
    p = [-float(rng.uniform(0.2, 1.5)) for _ in range(k)] + [0.0]
    grid = make_grid(edges, injections=p, reference=hub, balance_at=hub)
    e_h = [lk.id for lk in grid.links if lk.s < k and lk.t < k]
    n_f = int(rng.integers(1, min(3, len(e_h)) + 1))
    f = set(int(e_h[i]) for i in rng.choice(len(e_h), size=n_f, replace=False))
    try:
        s = apply_attack(grid, tuple(range(k)), f, seed=int(rng.integers(2**31)))
    except GridFaultError:
        return None
    if s.degenerate or min_area_gap(s) < MIN_FLOW_GAP:
        return None
    if len(s.post.islands) != 1:
        return None
    return s


def corollary2_scenario(rng):
    """Generator-fed backbone with zero-injection gateway nodes holding
    single-load pockets behind the links that fail (the full-islanding
    special case); callers filter on the exact premise check."""
    from gridfault.attack import apply_attack
    from gridfault.errors import GridFaultError

    n_back = int(rng.integers(2, 5))
    n_pockets = int(rng.integers(1, 3))
    edges = []
    node = 0
    backbone = list(range(1, n_back + 1))
    for i, b in enumerate(backbone):
        prev = 0 if i == 0 else backbone[i - 1]
        edges.append((prev, b, float(rng.uniform(0.5, 1.2))))
    next_id = n_back + 1
    p = [0.0] * (n_back + 1)
    cut_pairs = []
    for _ in range(n_pockets):
        gw = next_id
        pocket = next_id + 1
        sibling = next_id + 2
        next_id += 3
        attach = int(backbone[int(rng.integers(len(backbone)))])
        edges.append((attach, gw, float(rng.uniform(0.5, 1.2))))
        edges.append((gw, pocket, float(rng.uniform(0.6, 1.4))))
        edges.append((gw, sibling, float(rng.uniform(0.5, 1.2))))
        p.extend([0.0,
                  -float(rng.uniform(0.6, 1.2)),
                  -float(rng.uniform(0.1, 0.35))])
        cut_pairs.append((gw, pocket))
    for b in backbone:
        p[b] = -float(rng.uniform(0.2, 0.6))
    grid = make_grid(edges, injections=p, reference=0, balance_at=0)
    links = {(lk.s, lk.t): lk.id for lk in grid.links}
    f = {links[(min(a, b), max(a, b))] for a, b in cut_pairs}
    v_h = tuple(range(1, next_id))
    try:
        s = apply_attack(grid, v_h, f, seed=int(rng.integers(2**31)))
    except GridFaultError:
        return None
    if s.degenerate or min_area_gap(s) < MIN_FLOW_GAP:
        return None
    return s


def rank_ok_scenario(rng):
    """Scenario on a dense small grid whose area satisfies the full-column-
    rank condition (every area node keeps an outside neighbor)."""
    from gridfault.attack import make_observation
    from gridfault.recovery import rank_condition

    n = int(rng.integers(7, 14))
    grid = random_grid(rng, n, extra_links=int(rng.integers(n // 2, n)))
    s = random_scenario(
        rng, grid, int(rng.integers(2, 5)), 1,
        predicate=lambda sc: rank_condition(make_observation(sc)),
        attempts=12,
    )
    return s
