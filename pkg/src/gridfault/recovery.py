"""Estimation pipeline: phase-angle recovery, injection-change recovery at
the boundary, failed-link localization with known and unknown injection
changes, the exhaustive binary oracle, and the two evaluation benchmarks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import Observation
from .errors import InfeasibleP1, InfeasibleSystem, TooLarge
from .grid import build_admittance
from .lp import LpProblem, solve

RANK_RTOL = 1e-9          # singular values above rtol * sigma_max count
PHASE_RESIDUAL_TOL = 1e-6
SUPPORT_TOL = 1e-6        # |x_e| above this counts as a detected failure
RANGE_TOL = 1e-7          # right-hand side must lie in range(D_H) this tightly
BOX_TOL = 1e-8            # slack on the delta sign boxes in enumeration
P0_MAX_LINKS = 24
DELTA_SAME_TOL = 1e-12    # |delta_u| below this counts as "no adjustment"


@dataclass
class PhaseRecovery:
    rank_ok: bool
    theta_h: np.ndarray | None
    residual: float


@dataclass
class LocalizationResult:
    """Per-link indicator values over the area's links and the rounded set.

    `x` holds fractional indicators in [0, 1] for the LP relaxation route and
    raw solution values (flow differences) for the known-delta and sparse
    recovery routes; `f_hat` is derived via the threshold `eta` when set, and
    via the support cutoff otherwise.
    """

    links: tuple[int, ...]
    x: np.ndarray
    f_hat: frozenset[int]
    eta: float | None
    delta_hat: np.ndarray | None
    status: str
    objective: float | None
    converged: bool = True


@dataclass
class P0Result:
    links: tuple[int, ...]
    optima: list[np.ndarray]        # boolean vectors over links
    n_feasible: int
    feasible: list[np.ndarray] | None  # materialized only for small problems


@dataclass
class _AreaSystem:
    """Dense restriction of the grid system to the attacked area."""

    v_h: tuple[int, ...]
    e_h: tuple[int, ...]
    q: np.ndarray        # B_{H|G} (theta - theta')
    dtilde: np.ndarray   # |V_H| x |E_H| hypothetical flows
    d_h: np.ndarray      # |V_H| x |E_H| incidence
    lo: np.ndarray       # per-node delta box
    hi: np.ndarray
    p_h: np.ndarray


def _area_system(obs: Observation, theta_post: np.ndarray) -> _AreaSystem:
    grid = obs.grid
    v_h = obs.v_h
    e_h = obs.e_h
    pos = {v: i for i, v in enumerate(v_h)}
    B = build_admittance(grid)
    q = np.asarray((B[list(v_h)] @ (obs.theta_pre - theta_post))).ravel()

    nh, mh = len(v_h), len(e_h)
    dtilde = np.zeros((nh, mh))
    d_h = np.zeros((nh, mh))
    for k, e in enumerate(e_h):
        lk = grid.links[e]
        f = (theta_post[lk.s] - theta_post[lk.t]) / lk.r
        dtilde[pos[lk.s], k] = f
        dtilde[pos[lk.t], k] = -f
        d_h[pos[lk.s], k] = 1.0
        d_h[pos[lk.t], k] = -1.0

    p_h = grid.p_vector()[list(v_h)]
    gen = p_h > 0
    lo = np.where(gen, 0.0, p_h)
    hi = np.where(gen, p_h, 0.0)
    return _AreaSystem(v_h=v_h, e_h=e_h, q=q, dtilde=dtilde, d_h=d_h, lo=lo, hi=hi, p_h=p_h)


def _h_bar_system(obs: Observation):
    """B_{Hbar|H} (dense) and the known right-hand side of the phase-angle
    recovery equation."""
    grid = obs.grid
    v_h = list(obs.v_h)
    v_out = list(obs.v_out)
    B = build_admittance(grid)
    B_oh = B[v_out][:, v_h].toarray()
    theta = obs.theta_pre
    rhs = (
        B_oh @ theta[v_h]
        + np.asarray(B[v_out][:, v_out] @ (theta[v_out] - obs.theta_post_outside)).ravel()
        - obs.delta_outside
    )
    return B_oh, rhs


def rank_condition(obs: Observation) -> bool:
    """True iff B_{Hbar|H} has full column rank (numerically)."""
    B_oh, _ = _h_bar_system(obs)
    if B_oh.shape[0] < B_oh.shape[1]:
        return False
    sv = np.linalg.svd(B_oh, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return False
    return int((sv > RANK_RTOL * sv[0]).sum()) == len(obs.v_h)


def recover_phase_angles(obs: Observation) -> PhaseRecovery:
    """Least-squares recovery of the area's post-attack angles from the
    unattacked side; exact (to tolerance) when the rank condition holds.
    PMU-mode observations return the measured angles directly."""
    if obs.pmu_mode and obs.theta_post_inside is not None:
        return PhaseRecovery(rank_ok=True, theta_h=obs.theta_post_inside.copy(), residual=0.0)
    B_oh, rhs = _h_bar_system(obs)
    ok = rank_condition(obs)
    if not ok:
        return PhaseRecovery(rank_ok=False, theta_h=None, residual=float("inf"))
    theta_h, *_ = np.linalg.lstsq(B_oh, rhs, rcond=None)
    residual = float(np.linalg.norm(B_oh @ theta_h - rhs))
    return PhaseRecovery(rank_ok=True, theta_h=theta_h, residual=residual)


def recover_delta_boundary(obs: Observation) -> dict[int, float | None]:
    """Per-node injection change for the attacked area, recovered through
    boundary neighbors under the proportional policy; None marks nodes the
    policy cannot pin down.

    A neighbor of the same type (load/generator) with nonzero pre-attack
    injection fixes the common scaling ratio; a neighbor of the other type
    that was itself adjusted proves this node's type was not adjusted. If the
    area is single-type and the outside changes sum to zero, everything
    inside is unchanged.
    """
    grid = obs.grid
    p = grid.p_vector()
    inside = set(obs.v_h)
    delta_out = {v: obs.delta_outside[i] for i, v in enumerate(obs.v_out)}
    adj = grid.neighbors()

    result: dict[int, float | None] = {}
    for v in obs.v_h:
        neighbors = [u for u, e in adj[v] if u not in inside]
        v_is_gen = p[v] > 0
        value: float | None = None
        for u in neighbors:
            if (p[u] > 0) == v_is_gen and p[u] != 0.0:
                value = p[v] * delta_out[u] / p[u]
                break
        if value is None:
            for u in neighbors:
                if (p[u] > 0) != v_is_gen and abs(delta_out[u]) > DELTA_SAME_TOL:
                    value = 0.0
                    break
        result[v] = value

    p_h = p[list(obs.v_h)]
    single_type = bool(np.all(p_h > 0) or np.all(p_h <= 0))
    if single_type and abs(obs.delta_outside.sum()) <= 1e-9:
        result = {v: 0.0 for v in obs.v_h}
    return result


def _result_from_support(sys_: _AreaSystem, x: np.ndarray, status: str,
                         objective: float | None, converged: bool = True) -> LocalizationResult:
    f_hat = frozenset(e for k, e in enumerate(sys_.e_h) if abs(x[k]) > SUPPORT_TOL)
    return LocalizationResult(
        links=sys_.e_h, x=x, f_hat=f_hat, eta=None, delta_hat=None,
        status=status, objective=objective, converged=converged,
    )


def _is_acyclic(obs: Observation) -> bool:
    # forest check on the induced subgraph: |E_H| = |V_H| - #components
    parent = {v: v for v in obs.v_h}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    comps = len(obs.v_h)
    for e in obs.e_h:
        lk = obs.grid.links[e]
        ra, rb = find(lk.s), find(lk.t)
        if ra == rb:
            return False
        parent[ra] = rb
        comps -= 1
    return True


def localize_known_delta(
    obs: Observation,
    delta_h: np.ndarray,
    theta_post: np.ndarray,
) -> LocalizationResult:
    """Localization with known area injection changes: exact solve on acyclic
    areas (full column rank), minimum-l1 LP otherwise."""
    sys_ = _area_system(obs, theta_post)
    y = sys_.q - np.asarray(delta_h, dtype=float)
    mh = len(sys_.e_h)
    if mh == 0:
        raise InfeasibleSystem("attacked area induces no links")

    if _is_acyclic(obs):
        x, *_ = np.linalg.lstsq(sys_.d_h, y, rcond=None)
        resid = float(np.abs(sys_.d_h @ x - y).max())
        if resid > RANGE_TOL:
            raise InfeasibleSystem(f"rhs outside range of D_H (residual {resid:.3e})")
        return _result_from_support(sys_, x, "optimal", float(np.abs(x).sum()))

    # min ||x||_1 via the positive-part split
    problem = LpProblem(
        c=np.ones(2 * mh),
        a_eq=np.hstack([sys_.d_h, -sys_.d_h]),
        b_eq=y,
        lower=np.zeros(2 * mh),
    )
    out = solve(problem)
    if out.status != "optimal":
        raise InfeasibleSystem(f"l1 system status: {out.status}")
    x = out.x[:mh] - out.x[mh:]
    return _result_from_support(sys_, x, "optimal", out.objective)


def algorithm1(obs: Observation, theta_post_h: np.ndarray, eta: float = 0.5) -> LocalizationResult:
    """LP-relaxation localization with unknown injection changes, rounded at
    `eta`.

    The injection-change variables are eliminated through the flow identity,
    leaving box-constrained link indicators; the per-node boxes become range
    constraints carried by bounded slack variables.
    """
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must lie in (0, 1)")
    theta_post = obs.full_theta_post(np.asarray(theta_post_h, dtype=float))
    sys_ = _area_system(obs, theta_post)
    nh, mh = sys_.dtilde.shape
    if mh == 0:
        raise InfeasibleP1("attacked area induces no links")

    # lo - q <= Dtilde x <= hi - q  rewritten as  Dtilde x + s = hi - q
    a_eq = np.hstack([sys_.dtilde, np.eye(nh)])
    b_eq = sys_.hi - sys_.q
    lower = np.concatenate([np.zeros(mh), np.zeros(nh)])
    upper = np.concatenate([np.ones(mh), sys_.hi - sys_.lo])
    c = np.concatenate([np.ones(mh), np.zeros(nh)])
    out = solve(LpProblem(c=c, a_eq=a_eq, b_eq=b_eq, lower=lower, upper=upper))
    if out.status != "optimal":
        raise InfeasibleP1(
            "relaxation infeasible; ground truth is always feasible, input is corrupted"
        )
    x = np.clip(out.x[:mh], 0.0, 1.0)
    f_hat = frozenset(e for k, e in enumerate(sys_.e_h) if x[k] >= eta)
    return LocalizationResult(
        links=sys_.e_h,
        x=x,
        f_hat=f_hat,
        eta=eta,
        delta_hat=sys_.q + sys_.dtilde @ x,
        status="optimal",
        objective=out.objective,
    )


def brute_force_p0(
    obs: Observation,
    theta_post_h: np.ndarray,
    max_links: int = P0_MAX_LINKS,
) -> P0Result:
    """Exhaustive binary enumeration of the failure indicator.

    For each candidate x the injection change is determined by the flow
    identity; x is feasible when the induced change satisfies the sign boxes.
    Returns all minimum-cardinality feasible vectors (the integral reference
    for the LP relaxation).
    """
    theta_post = obs.full_theta_post(np.asarray(theta_post_h, dtype=float))
    sys_ = _area_system(obs, theta_post)
    mh = len(sys_.e_h)
    if mh > max_links:
        raise TooLarge(f"{mh} links exceeds the enumeration guard ({max_links})")

    keep_feasible = mh <= 16
    best = mh + 1
    optima: list[np.ndarray] = []
    feasible: list[np.ndarray] | None = [] if keep_feasible else None
    n_feasible = 0

    chunk = 1 << min(mh, 16)
    total = 1 << mh
    bits = np.arange(min(chunk, total), dtype=np.uint32)
    shifts = np.arange(mh, dtype=np.uint32)
    for base in range(0, total, chunk):
        codes = base + bits[: min(chunk, total - base)]
        X = ((codes[:, None] >> shifts[None, :]) & 1).astype(float)
        delta = sys_.q[None, :] + X @ sys_.dtilde.T
        ok = np.all(delta >= sys_.lo[None, :] - BOX_TOL, axis=1) & np.all(
            delta <= sys_.hi[None, :] + BOX_TOL, axis=1
        )
        n_feasible += int(ok.sum())
        if not ok.any():
            continue
        Xok = X[ok].astype(bool)
        if keep_feasible:
            feasible.extend(list(Xok))
        card = Xok.sum(axis=1)
        cmin = int(card.min())
        if cmin < best:
            best = cmin
            optima = [row for row in Xok[card == cmin]]
        elif cmin == best:
            optima.extend(row for row in Xok[card == best])

    return P0Result(links=sys_.e_h, optima=optima, n_feasible=n_feasible, feasible=feasible)


def _project_ball(v, svd, y_hat, y_perp_sq, eps):
    """Projection of v onto {x : ||A x - y||_2 <= eps} using a precomputed SVD
    of A (scalar root-find on the regularization multiplier)."""
    U, sig, Vt = svd
    w = Vt @ v
    r = sig.size
    res_sq = float(np.sum((sig * w[:r] - y_hat) ** 2) + y_perp_sq)
    if res_sq <= eps * eps:
        return v.copy()

    num = sig * w[:r] - y_hat  # residual components at mu = 0 scale as 1/(1+mu s^2)

    def resid_sq(mu):
        return float(np.sum((num / (1.0 + mu * sig**2)) ** 2) + y_perp_sq)

    lo_mu, hi_mu = 0.0, 1.0
    for _ in range(200):
        if resid_sq(hi_mu) <= eps * eps:
            break
        hi_mu *= 4.0
    for _ in range(200):
        mid = 0.5 * (lo_mu + hi_mu)
        if resid_sq(mid) > eps * eps:
            lo_mu = mid
        else:
            hi_mu = mid
    mu = hi_mu
    w_new = w.copy()
    w_new[:r] = (w[:r] + mu * sig * y_hat) / (1.0 + mu * sig**2)
    return Vt.T @ w_new


def benchmark_bpdn(
    obs: Observation,
    theta_post_h: np.ndarray,
    epsilon: float | None = None,
    rho: float = 1.0,
    max_iter: int = 2000,
    tol: float = 1e-6,
) -> LocalizationResult:
    """Sparse-recovery benchmark: min ||x||_1 s.t. ||y - D_H x||_2 <= eps with
    eps defaulting to ||p_H||_2, solved by ADMM with an augmented-Lagrangian
    split between the constraint set and the l1 term."""
    theta_post = obs.full_theta_post(np.asarray(theta_post_h, dtype=float))
    sys_ = _area_system(obs, theta_post)
    y = sys_.q
    A = sys_.d_h
    mh = A.shape[1]
    if epsilon is None:
        epsilon = float(np.linalg.norm(sys_.p_h))

    U, sig, Vt = np.linalg.svd(A, full_matrices=False)
    keep = sig > max(A.shape) * np.finfo(float).eps * (sig[0] if sig.size else 1.0)
    U, sig, Vt = U[:, keep], sig[keep], Vt[keep]
    y_hat = U.T @ y
    y_perp_sq = float(np.linalg.norm(y) ** 2 - np.linalg.norm(y_hat) ** 2)
    y_perp_sq = max(y_perp_sq, 0.0)
    svd = (U, sig, Vt)

    if epsilon == 0.0:
        # constraint collapses to the affine system; project onto {A x = y}
        def project(v):
            return v - Vt.T @ (Vt @ v - y_hat / sig)
    else:
        def project(v):
            return _project_ball(v, svd, y_hat, y_perp_sq, epsilon)

    x = np.zeros(mh)
    z = np.zeros(mh)
    u = np.zeros(mh)
    converged = False
    for _ in range(max_iter):
        x = project(z - u)
        z_old = z
        z = np.sign(x + u) * np.maximum(np.abs(x + u) - 1.0 / rho, 0.0)
        u = u + x - z
        r_primal = float(np.linalg.norm(x - z))
        r_dual = float(rho * np.linalg.norm(z - z_old))
        if r_primal <= tol and r_dual <= tol:
            converged = True
            break

    result = _result_from_support(sys_, z, "optimal" if converged else "non-convergence",
                                  float(np.abs(z).sum()), converged=converged)
    return result


def delta_zero_feasible(obs: Observation, theta_post_h: np.ndarray) -> bool:
    """True iff the no-islanding formulation D_H x = B_{H|G}(theta - theta')
    is consistent, i.e. assuming zero injection change is feasible."""
    theta_post = obs.full_theta_post(np.asarray(theta_post_h, dtype=float))
    sys_ = _area_system(obs, theta_post)
    x, *_ = np.linalg.lstsq(sys_.d_h, sys_.q, rcond=None)
    return bool(np.abs(sys_.d_h @ x - sys_.q).max() <= RANGE_TOL)
