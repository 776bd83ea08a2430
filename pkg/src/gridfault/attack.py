"""Attack scenario generation and ground truth: attacked-area sampling,
failure injection, islanding, the proportional load-shedding / generation-
reduction policy, and the post-attack steady state."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import TooFewLinks
from .grid import (
    Grid,
    SteadyState,
    build_admittance,
    dc_power_flow,
    islands,
    link_flows,
    solve_pre_attack,
)

SUPPORT_TOL = 1e-8        # leakage of B(theta-theta')-delta outside the attacked area
SIGN_TOL = 1e-9           # slack on the delta sign boxes
DEGENERATE_GAP = 1e-9     # |theta'_s - theta'_t| below this tags the scenario


def induced_links(grid: Grid, v_h: Iterable[int]) -> tuple[int, ...]:
    """Link ids with both endpoints in v_h, sorted."""
    inside = set(v_h)
    return tuple(lk.id for lk in grid.links if lk.s in inside and lk.t in inside)


@dataclass(frozen=True)
class AttackScenario:
    """Ground truth for one attack: area, failed set, pre/post states, and
    the injection changes delta = p - p'."""

    grid: Grid
    v_h: tuple[int, ...]
    f: frozenset[int]
    pre: SteadyState
    post: SteadyState
    delta: np.ndarray
    seed: int
    degenerate: bool = False

    @cached_property
    def e_h(self) -> tuple[int, ...]:
        return induced_links(self.grid, self.v_h)

    @cached_property
    def x_star(self) -> np.ndarray:
        """Binary failure indicator over e_h (sorted)."""
        return np.array([1.0 if e in self.f else 0.0 for e in self.e_h])

    def delta_h(self) -> np.ndarray:
        return self.delta[list(self.v_h)]

    def p_post(self) -> np.ndarray:
        return self.grid.p_vector() - self.delta

    def __eq__(self, other):
        if not isinstance(other, AttackScenario):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.v_h == other.v_h
            and self.f == other.f
            and self.pre == other.pre
            and self.post == other.post
            and np.array_equal(self.delta, other.delta)
            and self.seed == other.seed
            and self.degenerate == other.degenerate
        )

    def validate(self) -> None:
        """Check the ground-truth invariants; raises AssertionError on a bug."""
        g = self.grid
        p = g.p_vector()
        assert self.f and self.f <= set(self.e_h), "failed set must be nonempty within E_H"
        gen = p > 0
        assert np.all(self.delta[gen] >= -SIGN_TOL), "generator delta must be >= 0"
        assert np.all(self.delta[~gen] <= SIGN_TOL), "load delta must be <= 0"
        assert np.all(self.delta[gen] <= p[gen] + SIGN_TOL)
        assert np.all(self.delta[~gen] >= p[~gen] - SIGN_TOL)
        p_post = p - self.delta
        for comp in self.post.islands:
            assert abs(p_post[list(comp)].sum()) <= 1e-7, "island must balance"
        # supp(B(theta - theta') - delta) inside V_H
        B = build_admittance(g)
        r = B @ (self.pre.theta - self.post.theta) - self.delta
        outside = np.setdiff1d(np.arange(g.n_nodes), np.asarray(self.v_h))
        if outside.size:
            assert np.abs(r[outside]).max() <= SUPPORT_TOL, "support leaks outside V_H"
        # delta_H = B_{H|G}(theta - theta') + Dtilde_H x*  (failure indicator algebra)
        from .grid import flow_matrix

        dt = flow_matrix(g, self.post.theta)
        vh = list(self.v_h)
        lhs = self.delta[vh]
        rhs = r[vh] + self.delta[vh]  # B_{H|G}(theta-theta') rows
        x_full = np.zeros(g.n_links)
        x_full[list(self.f)] = 1.0
        rhs = rhs + (dt @ x_full)[vh]
        assert np.abs(lhs - rhs).max() <= SUPPORT_TOL, "indicator identity violated"
        # post-attack flows: zero on F, conservation with p'
        assert all(self.post.flows[e] == 0.0 for e in self.f)
        from .grid import build_incidence

        D = build_incidence(g)
        assert np.abs(D @ self.post.flows - p_post).max() <= 1e-7


@dataclass(frozen=True)
class Observation:
    """Exactly what the control center sees: public topology and pre-attack
    state, post-attack quantities outside the attacked area, and (in PMU mode)
    the post-attack angles inside. Never carries F or delta inside the area.
    """

    grid: Grid
    v_h: tuple[int, ...]
    theta_pre: np.ndarray
    delta_outside: np.ndarray        # over sorted V \ V_H
    theta_post_outside: np.ndarray   # over sorted V \ V_H
    theta_post_inside: np.ndarray | None
    pmu_mode: bool

    @cached_property
    def v_out(self) -> tuple[int, ...]:
        inside = set(self.v_h)
        return tuple(v for v in range(self.grid.n_nodes) if v not in inside)

    @cached_property
    def e_h(self) -> tuple[int, ...]:
        return induced_links(self.grid, self.v_h)

    def full_theta_post(self, theta_h: np.ndarray) -> np.ndarray:
        theta = np.empty(self.grid.n_nodes)
        theta[list(self.v_out)] = self.theta_post_outside
        theta[list(self.v_h)] = theta_h
        return theta

    def delta_full_outside(self) -> np.ndarray:
        """Delta over all nodes with zeros inside V_H (inside values unknown)."""
        d = np.zeros(self.grid.n_nodes)
        d[list(self.v_out)] = self.delta_outside
        return d


def sample_attack_area(grid: Grid, size: int, rng: np.random.Generator) -> tuple[int, ...]:
    """First `size` nodes of a BFS from a uniformly random start (FIFO order,
    neighbor ties by node id); the induced subgraph is connected."""
    if not (1 <= size <= grid.n_nodes):
        raise ValueError("area size out of range")
    start = int(rng.integers(grid.n_nodes))
    adj = grid.neighbors()
    order = [start]
    seen = {start}
    head = 0
    while len(order) < size and head < len(order):
        v = order[head]
        head += 1
        for u, _ in adj[v]:
            if u not in seen:
                seen.add(u)
                order.append(u)
                if len(order) == size:
                    break
    return tuple(sorted(order[:size]))


def sample_failures(e_h: Sequence[int], k: int, rng: np.random.Generator) -> frozenset[int]:
    """Uniform k-subset of the area's links, without replacement."""
    if k < 1 or k > len(e_h):
        raise TooFewLinks(f"cannot choose {k} failures from {len(e_h)} links")
    chosen = rng.choice(len(e_h), size=k, replace=False)
    return frozenset(e_h[i] for i in chosen)


def proportional_balance(p_island: np.ndarray) -> np.ndarray:
    """Scale one side of an island to balance it.

    If generation exceeds load, all generators are scaled by load/generation;
    if load exceeds generation, all loads are scaled by generation/load;
    a balanced island is returned unchanged. Pure-load or pure-generation
    islands shed everything.
    """
    p_island = np.asarray(p_island, dtype=float)
    gen_mask = p_island > 0
    gen = p_island[gen_mask].sum()
    load = -p_island[~gen_mask].sum()
    out = p_island.copy()
    if gen > load:
        out[gen_mask] *= 0.0 if gen == 0 else load / gen
    elif load > gen:
        out[~gen_mask] *= 0.0 if load == 0 else gen / load
    return out


def apply_attack(grid: Grid, v_h: Iterable[int], f: Iterable[int], seed: int = 0) -> AttackScenario:
    """Compute the ground-truth scenario for failing links `f` inside area
    `v_h`: islands, proportional rebalancing, post-attack power flow with each
    island pinned at its smallest node's pre-attack angle."""
    v_h = tuple(sorted(set(v_h)))
    f = frozenset(f)
    e_h = set(induced_links(grid, v_h))
    if not f:
        raise ValueError("failed set must be nonempty")
    if not f <= e_h:
        raise ValueError("failed links must lie within the attacked area")

    pre = solve_pre_attack(grid)
    post_islands = islands(grid, f)

    p = grid.p_vector()
    p_post = p.copy()
    for comp in post_islands:
        idx = list(comp)
        p_post[idx] = proportional_balance(p[idx])

    B_post = build_admittance(grid, removed=f)
    pins = {comp[0]: float(pre.theta[comp[0]]) for comp in post_islands}
    theta_post = dc_power_flow(B_post, p_post, pins)

    post = SteadyState(
        theta=theta_post,
        flows=link_flows(grid, theta_post, failed=f),
        islands=post_islands,
    )
    degenerate = any(
        abs(theta_post[grid.links[e].s] - theta_post[grid.links[e].t]) < DEGENERATE_GAP
        for e in sorted(e_h)
    )
    scenario = AttackScenario(
        grid=grid,
        v_h=v_h,
        f=f,
        pre=pre,
        post=post,
        delta=p - p_post,
        seed=seed,
        degenerate=degenerate,
    )
    scenario.validate()
    return scenario


def make_observation(s: AttackScenario, pmu_mode: bool = False) -> Observation:
    """Project a scenario onto what the control center can see."""
    inside = set(s.v_h)
    v_out = [v for v in range(s.grid.n_nodes) if v not in inside]
    return Observation(
        grid=s.grid,
        v_h=s.v_h,
        theta_pre=s.pre.theta.copy(),
        delta_outside=s.delta[v_out].copy(),
        theta_post_outside=s.post.theta[v_out].copy(),
        theta_post_inside=s.post.theta[list(s.v_h)].copy() if pmu_mode else None,
        pmu_mode=pmu_mode,
    )


def generate_scenario(
    grid: Grid,
    vh_size: int,
    n_failures: int,
    seed: int,
) -> AttackScenario:
    """Sample an area and a failure set with a named seeded generator, then
    apply the attack. Same seed, same grid => identical scenario bytes."""
    rng = np.random.Generator(np.random.PCG64(seed))
    v_h = sample_attack_area(grid, vh_size, rng)
    e_h = induced_links(grid, v_h)
    if not e_h:
        raise TooFewLinks("attacked area induces no links")
    f = sample_failures(e_h, min(n_failures, len(e_h)), rng)
    return apply_attack(grid, v_h, f, seed=seed)
