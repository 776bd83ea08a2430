"""Graph and linear-algebra substrate: incidence/admittance construction,
DC power-flow solves, island detection, and hypothetical-flow matrices.

All angles are radians, injections and flows are per-unit MW, reactances
per-unit ohm. Matrices are scipy.sparse; vectors are numpy float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from .errors import SingularSystem, UnbalancedComponent

BALANCE_TOL = 1e-9     # per-component injection balance required by the solver
FLOW_TOL = 1e-8        # nodal conservation tolerance on solved states
SYMMETRY_TOL = 1e-10   # ||B - B^T||_inf bound for constructed admittance
_DENSE_CUTOFF = 64     # below this many free nodes, solve dense


class Link(NamedTuple):
    id: int
    s: int
    t: int
    r: float


@dataclass(frozen=True)
class Grid:
    """Immutable topology, electrical parameters, and reference node.

    Invariants (checked at construction): connected as an undirected graph,
    strictly positive reactances, no self-loops or parallel links, link ids
    equal to their position, and injections summing to ~0.
    """

    injections: tuple[float, ...]
    links: tuple[Link, ...]
    reference: int = 0

    def __post_init__(self):
        n = len(self.injections)
        if n == 0:
            raise ValueError("grid must have at least one node")
        if not (0 <= self.reference < n):
            raise ValueError("reference node out of range")
        seen = set()
        for pos, lk in enumerate(self.links):
            if lk.id != pos:
                raise ValueError(f"link ids must be contiguous; got {lk.id} at {pos}")
            if lk.s == lk.t:
                raise ValueError(f"self-loop at node {lk.s}")
            if not (0 <= lk.s < n and 0 <= lk.t < n):
                raise ValueError(f"link {lk.id} endpoint out of range")
            if not (lk.r > 0.0 and np.isfinite(lk.r)):
                raise ValueError(f"link {lk.id} has nonpositive reactance {lk.r}")
            key = (min(lk.s, lk.t), max(lk.s, lk.t))
            if key in seen:
                raise ValueError(f"parallel link {key}; merge before constructing Grid")
            seen.add(key)
        if abs(sum(self.injections)) > BALANCE_TOL:
            raise ValueError("injections must sum to 0 (pre-balance in case_io)")
        if n > 1 and len(islands(self, ())) != 1:
            raise ValueError("grid must be connected")

    @property
    def n_nodes(self) -> int:
        return len(self.injections)

    @property
    def n_links(self) -> int:
        return len(self.links)

    def p_vector(self) -> np.ndarray:
        return np.asarray(self.injections, dtype=float)

    def neighbors(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per-node tuple of (neighbor, link id) sorted by neighbor id."""
        return _neighbors(self)


@lru_cache(maxsize=32)
def _neighbors(grid: Grid):
    adj: list[list[tuple[int, int]]] = [[] for _ in range(grid.n_nodes)]
    for lk in grid.links:
        adj[lk.s].append((lk.t, lk.id))
        adj[lk.t].append((lk.s, lk.id))
    return tuple(tuple(sorted(a)) for a in adj)


@dataclass(frozen=True)
class SteadyState:
    """Phase angles, per-link real power flows, and the island partition.

    Flow on link (s, t) is (theta_s - theta_t) / r, positive s->t under the
    stored orientation; failed links carry exactly 0.0.
    """

    theta: np.ndarray
    flows: np.ndarray
    islands: tuple[tuple[int, ...], ...]

    def __eq__(self, other):
        if not isinstance(other, SteadyState):
            return NotImplemented
        return (
            np.array_equal(self.theta, other.theta)
            and np.array_equal(self.flows, other.flows)
            and self.islands == other.islands
        )


def build_incidence(grid: Grid) -> sp.csc_matrix:
    """Signed node-link incidence matrix D: +1 at the source endpoint of each
    column, -1 at the target, under the stored (fixed) orientation."""
    m = grid.n_links
    rows = np.empty(2 * m, dtype=np.int64)
    cols = np.empty(2 * m, dtype=np.int64)
    data = np.empty(2 * m, dtype=float)
    for lk in grid.links:
        rows[2 * lk.id] = lk.s
        rows[2 * lk.id + 1] = lk.t
        cols[2 * lk.id] = lk.id
        cols[2 * lk.id + 1] = lk.id
        data[2 * lk.id] = 1.0
        data[2 * lk.id + 1] = -1.0
    return sp.csc_matrix((data, (rows, cols)), shape=(grid.n_nodes, m))


@lru_cache(maxsize=32)
def _base_admittance(grid: Grid) -> sp.csr_matrix:
    rows, cols, data = [], [], []
    for lk in grid.links:
        w = 1.0 / lk.r
        rows += [lk.s, lk.t, lk.s, lk.t]
        cols += [lk.t, lk.s, lk.s, lk.t]
        data += [-w, -w, w, w]
    n = grid.n_nodes
    return sp.csr_matrix(
        (np.asarray(data, dtype=float), (np.asarray(rows), np.asarray(cols))),
        shape=(n, n),
    )


def build_admittance(grid: Grid, removed: Iterable[int] = ()) -> sp.csr_matrix:
    """Weighted Laplacian B with off-diagonals -1/r; equals D @ Gamma @ D^T.

    `removed` drops the named links, giving the post-attack matrix
    B' = B - D Gamma diag{x} D^T without constructing a (possibly
    disconnected) Grid. The no-removal matrix is cached per Grid and shared;
    callers must treat it as read-only.
    """
    removed = frozenset(removed)
    B = _base_admittance(grid)
    if not removed:
        return B
    rows, cols, data = [], [], []
    for e in sorted(removed):
        lk = grid.links[e]
        w = 1.0 / lk.r
        rows += [lk.s, lk.t, lk.s, lk.t]
        cols += [lk.t, lk.s, lk.s, lk.t]
        data += [w, w, -w, -w]
    corr = sp.csr_matrix(
        (np.asarray(data, dtype=float), (np.asarray(rows), np.asarray(cols))),
        shape=B.shape,
    )
    return (B + corr).tocsr()


def islands(grid: Grid, removed: Iterable[int]) -> tuple[tuple[int, ...], ...]:
    """Connected components of (V, E \\ removed), ordered by smallest member
    node id; nodes within a component are sorted."""
    removed = frozenset(removed)
    n = grid.n_nodes
    adj: list[list[int]] = [[] for _ in range(n)]
    for lk in grid.links:
        if lk.id in removed:
            continue
        adj[lk.s].append(lk.t)
        adj[lk.t].append(lk.s)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        comps.append(tuple(sorted(comp)))
    return tuple(comps)


def flow_matrix(grid: Grid, theta_post: np.ndarray) -> sp.csc_matrix:
    """Hypothetical post-attack flow matrix D @ Gamma @ diag{D^T theta'}.

    Column for link e = (i, j) holds +(theta'_i - theta'_j)/r_ij at row i and
    the negation at row j: the flow e would carry if operational. Column sums
    are zero by construction.
    """
    theta_post = np.asarray(theta_post, dtype=float)
    if theta_post.shape != (grid.n_nodes,):
        raise ValueError("theta_post must cover all nodes")
    m = grid.n_links
    rows = np.empty(2 * m, dtype=np.int64)
    cols = np.empty(2 * m, dtype=np.int64)
    data = np.empty(2 * m, dtype=float)
    for lk in grid.links:
        f = (theta_post[lk.s] - theta_post[lk.t]) / lk.r
        rows[2 * lk.id] = lk.s
        rows[2 * lk.id + 1] = lk.t
        cols[2 * lk.id] = lk.id
        cols[2 * lk.id + 1] = lk.id
        data[2 * lk.id] = f
        data[2 * lk.id + 1] = -f
    return sp.csc_matrix((data, (rows, cols)), shape=(grid.n_nodes, m))


def _structure_components(B: sp.spmatrix) -> np.ndarray:
    """Component labels from the off-diagonal sparsity structure of B."""
    G = sp.csr_matrix(B, copy=True)
    G.setdiag(0.0)
    G.eliminate_zeros()
    _, labels = csgraph.connected_components(G, directed=False)
    return labels


def dc_power_flow(
    B: sp.spmatrix,
    p: np.ndarray,
    references: Mapping[int, float],
) -> np.ndarray:
    """Solve B theta = p with pinned reference angles.

    `references` maps one node per connected component of B's graph to its
    pinned angle. Raises UnbalancedComponent if any component's injections
    do not sum to ~0, SingularSystem if some component has no pin.
    """
    B = sp.csr_matrix(B)
    n = B.shape[0]
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValueError("injection vector shape mismatch")

    labels = _structure_components(B)
    n_comp = labels.max() + 1 if n else 0
    sums = np.zeros(n_comp)
    np.add.at(sums, labels, p)
    for k in range(n_comp):
        if abs(sums[k]) > BALANCE_TOL:
            raise UnbalancedComponent(
                f"component {k} injections sum to {sums[k]:.3e} (tolerance {BALANCE_TOL})"
            )
    pinned_comps = {labels[v] for v in references}
    if len(pinned_comps) < n_comp:
        missing = sorted(set(range(n_comp)) - pinned_comps)
        raise SingularSystem(f"components without a pinned angle: {missing}")

    theta = np.zeros(n)
    pin_nodes = np.fromiter(sorted(references), dtype=np.int64, count=len(references))
    for v in pin_nodes:
        theta[v] = references[v]
    free = np.setdiff1d(np.arange(n), pin_nodes, assume_unique=False)
    if free.size:
        B_ff = B[free][:, free]
        rhs = p[free] - B[free][:, pin_nodes] @ theta[pin_nodes]
        if free.size < _DENSE_CUTOFF:
            try:
                theta[free] = np.linalg.solve(B_ff.toarray(), rhs)
            except np.linalg.LinAlgError as exc:
                raise SingularSystem(str(exc)) from exc
        else:
            try:
                lu = spla.splu(sp.csc_matrix(B_ff))
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from exc
            theta[free] = lu.solve(rhs)

    residual = np.abs(B @ theta - p).max() if n else 0.0
    if not np.isfinite(residual) or residual > FLOW_TOL:
        raise SingularSystem(f"power-flow residual {residual:.3e} exceeds {FLOW_TOL}")
    return theta


def link_flows(grid: Grid, theta: np.ndarray, failed: Iterable[int] = ()) -> np.ndarray:
    """Per-link flows (theta_s - theta_t)/r; exactly 0.0 on failed links."""
    failed = frozenset(failed)
    flows = np.zeros(grid.n_links)
    for lk in grid.links:
        if lk.id in failed:
            continue
        flows[lk.id] = (theta[lk.s] - theta[lk.t]) / lk.r
    return flows


@lru_cache(maxsize=32)
def solve_pre_attack(grid: Grid) -> SteadyState:
    """Pre-attack steady state with the grid reference pinned at angle 0.

    Cached per Grid (pure function of it); the returned state is shared and
    must be treated as read-only.
    """
    B = build_admittance(grid)
    theta = dc_power_flow(B, grid.p_vector(), {grid.reference: 0.0})
    return SteadyState(
        theta=theta,
        flows=link_flows(grid, theta),
        islands=islands(grid, ()),
    )


def check_conservation(grid: Grid, state: SteadyState, p: np.ndarray | None = None) -> float:
    """Max nodal imbalance |sum_out - sum_in - p_v| over nodes."""
    if p is None:
        p = grid.p_vector()
    D = build_incidence(grid)
    return float(np.abs(D @ state.flows - p).max())
