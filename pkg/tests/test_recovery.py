import numpy as np
import pytest

from gridfault.attack import Observation, apply_attack, make_observation
from gridfault.errors import InfeasibleSystem, TooLarge
from gridfault.grid import solve_pre_attack
from gridfault.recovery import (
    algorithm1,
    benchmark_bpdn,
    brute_force_p0,
    delta_zero_feasible,
    localize_known_delta,
    rank_condition,
    recover_delta_boundary,
    recover_phase_angles,
)
from support import bpdn_oracle, make_grid, path_grid, random_grid, random_scenario, scenario_stream


# --- phase angles ---


def test_rank_condition_single_node_area(rng):
    # a single-node area always has an outside neighbor in a connected grid
    g = random_grid(rng, 8, extra_links=2)
    theta = np.zeros(8)
    obs = Observation(
        grid=g, v_h=(3,), theta_pre=theta,
        delta_outside=np.zeros(7), theta_post_outside=theta[[v for v in range(8) if v != 3]],
        theta_post_inside=None, pmu_mode=False,
    )
    assert rank_condition(obs) is True


def test_rank_condition_interior_node_fails():
    g = path_grid(5, p=[1.0, 0.0, 0.0, 0.0, -1.0])
    s = apply_attack(g, v_h=(1, 2, 3), f={1}, seed=0)
    obs = make_observation(s)
    # node 2 has no neighbor outside the area -> zero column
    assert rank_condition(obs) is False
    pr = recover_phase_angles(obs)
    assert pr.rank_ok is False and pr.theta_h is None


def test_phase_recovery_no_failure_consistency(rng):
    # rank-ok area, chord failure keeps grid connected: theta' inside = exact
    g = make_grid([(0, 1, 1.0), (1, 2, 0.7), (0, 2, 1.3), (1, 3, 0.9), (2, 4, 1.1),
                   (3, 4, 0.8)],
                  injections=[2.0, -0.5, -0.5, -0.4, -0.6], reference=0)
    links = {(lk.s, lk.t): lk.id for lk in g.links}
    s = apply_attack(g, v_h=(1, 2), f={links[(1, 2)]}, seed=3)
    obs = make_observation(s, pmu_mode=False)
    assert rank_condition(obs)
    pr = recover_phase_angles(obs)
    assert pr.rank_ok
    assert np.abs(pr.theta_h - s.post.theta[[1, 2]]).max() <= 1e-6
    assert pr.residual <= 1e-6


def test_phase_recovery_exactness_random(rng):
    done = 0
    while done < 30:
        g = random_grid(rng, int(rng.integers(8, 16)), extra_links=3)
        s = random_scenario(rng, g, int(rng.integers(2, 4)), 1, min_gap=0.0,
                            predicate=lambda sc: rank_condition(make_observation(sc)))
        if s is None:
            continue
        pr = recover_phase_angles(make_observation(s, pmu_mode=False))
        assert pr.rank_ok
        assert np.abs(pr.theta_h - s.post.theta[list(s.v_h)]).max() <= 1e-6
        done += 1


def test_phase_recovery_pmu_identity(rng):
    g = random_grid(rng, 10, extra_links=2)
    s = random_scenario(rng, g, 4, 1, min_gap=0.0)
    obs = make_observation(s, pmu_mode=True)
    pr = recover_phase_angles(obs)
    assert pr.rank_ok and pr.residual == 0.0
    assert np.array_equal(pr.theta_h, s.post.theta[list(s.v_h)])


# --- delta recovery at the boundary ---


def _manual_obs(grid, v_h, delta, theta_pre=None, theta_post=None, pmu=False):
    v_out = [v for v in range(grid.n_nodes) if v not in set(v_h)]
    theta_pre = np.zeros(grid.n_nodes) if theta_pre is None else theta_pre
    theta_post = theta_pre if theta_post is None else theta_post
    return Observation(
        grid=grid, v_h=tuple(sorted(v_h)), theta_pre=theta_pre,
        delta_outside=np.asarray(delta, dtype=float)[v_out],
        theta_post_outside=theta_post[v_out],
        theta_post_inside=theta_post[list(sorted(v_h))] if pmu else None,
        pmu_mode=pmu,
    )


def test_delta_boundary_same_type_zero_ratio():
    # v load, boundary neighbor u load with delta_u = 0 -> delta_v = 0
    g = make_grid([(0, 1, 1.0), (1, 2, 1.0)], injections=[-2.0, -4.0, 6.0], reference=2)
    out = recover_delta_boundary(_manual_obs(g, (0,), [0.0, 0.0, 0.0]))
    assert out[0] == 0.0


def test_delta_boundary_same_type_proportional():
    # v load p=-2, neighbor u load p=-4 with delta_u=-1 -> delta_v = -0.5
    g = make_grid([(0, 1, 1.0), (1, 2, 1.0)], injections=[-2.0, -4.0, 6.0], reference=2)
    out = recover_delta_boundary(_manual_obs(g, (0,), [0.0, -1.0, 0.0]))
    assert out[0] == pytest.approx(-0.5)


def test_delta_boundary_interior_unknown():
    # mixed-type area so the single-type shortcut stays out of the way
    g = path_grid(5, p=[1.0, -0.3, 0.4, -0.3, -0.8])
    s = apply_attack(g, v_h=(1, 2, 3), f={1}, seed=0)
    out = recover_delta_boundary(make_observation(s))
    assert out[2] is None  # interior node, no boundary neighbor


def test_delta_boundary_different_type_adjusted():
    # v generator next to an outside load that shed -> generator unchanged
    g = make_grid([(0, 1, 1.0), (1, 2, 1.0)], injections=[3.0, -5.0, 2.0], reference=1)
    out = recover_delta_boundary(_manual_obs(g, (0,), [0.0, -2.0, 0.0]))
    assert out[0] == 0.0


def test_delta_boundary_single_type_remark(rng):
    # all-load area, outside deltas sum to zero -> whole area pinned at 0
    g = make_grid([(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0)],
                  injections=[2.0, -0.5, -0.5, -0.5, -0.5], reference=0)
    out = recover_delta_boundary(_manual_obs(g, (2, 3), [0.0] * 5))
    assert out == {2: 0.0, 3: 0.0}


def test_delta_boundary_never_wrong(rng):
    # correct-or-unknown over generated ground truth
    for s in scenario_stream(rng, 40, min_gap=0.0):
        out = recover_delta_boundary(make_observation(s))
        for v, val in out.items():
            if val is not None:
                assert val == pytest.approx(s.delta[v], abs=1e-8)


# --- localization with known delta ---


def test_known_delta_acyclic_exact(rng):
    count = 0
    while count < 40:
        g = random_grid(rng, int(rng.integers(7, 15)), extra_links=2)
        s = random_scenario(rng, g, int(rng.integers(3, 6)), int(rng.integers(1, 3)))
        if s is None:
            continue
        obs = make_observation(s, pmu_mode=True)
        from gridfault.recovery import _is_acyclic

        if not _is_acyclic(obs):
            continue
        res = localize_known_delta(obs, s.delta_h(), s.post.theta)
        assert res.f_hat == s.f
        count += 1


def test_known_delta_zero_rhs_gives_empty(rng):
    g = path_grid(4, p=[1.0, 0.0, 0.0, -1.0])
    s = apply_attack(g, (1, 2), {1}, seed=0)
    obs = make_observation(s, pmu_mode=True)
    # hypothetical F = empty: rhs = 0 with theta' = theta and delta = 0
    res = localize_known_delta(obs, np.zeros(2), s.pre.theta)
    assert res.f_hat == frozenset()
    assert np.abs(res.x).max() <= 1e-9


def test_known_delta_cycle_minority_failures(rng):
    # 6-cycle area: with fewer failed than operational links on the cycle the
    # l1 solution is unique at the ground truth (checked by the kink oracle)
    edges = [(i, (i + 1) % 6, 1.0) for i in range(6)] + [(0, 6, 1.0)]
    p = [-0.4, -0.3, -0.5, -0.2, -0.35, -0.25, 2.0]
    g = make_grid(edges, injections=p, reference=6)
    s = random_scenario(rng, g, 6, 2, min_gap=1e-4,
                        predicate=lambda sc: sc.v_h == tuple(range(6)))
    assert s is not None
    obs = make_observation(s, pmu_mode=True)
    res = localize_known_delta(obs, s.delta_h(), s.post.theta)
    assert res.f_hat == s.f

    # oracle: solutions form x* + t z (z spans the cycle space); the l1
    # minimum over all kink points must sit at t = 0
    from gridfault.recovery import _area_system

    sys_ = _area_system(obs, s.post.theta)
    _, _, vt = np.linalg.svd(sys_.d_h)
    z = vt[-1]
    assert np.abs(sys_.d_h @ z).max() <= 1e-9
    x_star = res.x
    candidates = [0.0] + [-x_star[k] / z[k] for k in range(len(z)) if abs(z[k]) > 1e-12]
    vals = [np.abs(x_star + t * z).sum() for t in candidates]
    assert min(vals) >= np.abs(x_star).sum() - 1e-9


def test_known_delta_infeasible_rhs(rng):
    g = path_grid(4, p=[1.0, 0.0, 0.0, -1.0])
    s = apply_attack(g, (1, 2), {1}, seed=0)
    obs = make_observation(s, pmu_mode=True)
    with pytest.raises(InfeasibleSystem):
        localize_known_delta(obs, np.array([5.0, -5.0]) + 3.33, s.post.theta)


# --- algorithm 1 (unknown delta) ---


def test_algorithm1_recovers_on_islanding_path():
    g = path_grid(4, p=[1.0, 0.0, 0.0, -1.0])
    s = apply_attack(g, (1, 2), {1}, seed=0)
    obs = make_observation(s, pmu_mode=True)
    res = algorithm1(obs, s.post.theta[[1, 2]], 0.5)
    assert res.f_hat == s.f
    assert res.delta_hat is not None
    # recovered delta obeys the sign boxes
    p_h = g.p_vector()[[1, 2]]
    assert np.all(res.delta_hat <= np.maximum(p_h, 0.0) + 1e-9)
    assert np.all(res.delta_hat >= np.minimum(p_h, 0.0) - 1e-9)


def test_algorithm1_objective_sandwich_with_p0(rng):
    # ground truth is P0-feasible; LP objective <= P0 optimum cardinality
    checked = 0
    for s in scenario_stream(rng, 60, vh_range=(3, 6), nf_range=(1, 2)):
        if len(s.e_h) > 12:
            continue
        obs = make_observation(s, pmu_mode=True)
        theta_h = s.post.theta[list(s.v_h)]
        res = algorithm1(obs, theta_h, 0.5)
        p0 = brute_force_p0(obs, theta_h)
        truth = s.x_star.astype(bool)
        assert any(np.array_equal(truth, fx) for fx in p0.feasible)
        best_card = int(p0.optima[0].sum())
        assert res.objective <= best_card + 1e-7
        checked += 1
    assert checked >= 25


def test_algorithm1_eta_monotone(rng):
    s = None
    while s is None:
        g = random_grid(rng, 12, extra_links=3)
        s = random_scenario(rng, g, 6, 2)
    obs = make_observation(s, pmu_mode=True)
    theta_h = s.post.theta[list(s.v_h)]
    sets = [algorithm1(obs, theta_h, eta).f_hat for eta in (0.2, 0.5, 0.8)]
    assert sets[0] >= sets[1] >= sets[2]


# --- P0 oracle ---


def test_p0_too_large_guard(rng):
    g = random_grid(rng, 40, extra_links=12)
    s = None
    while s is None:
        s = random_scenario(rng, g, 30, 1, min_gap=0.0)
    obs = make_observation(s, pmu_mode=True)
    if len(s.e_h) <= 24:
        pytest.skip("area too small to trip the guard")
    with pytest.raises(TooLarge):
        brute_force_p0(obs, s.post.theta[list(s.v_h)])


def test_p0_subset_sum_gadget():
    # star with spoke weights (2, 3, 5) and target 8: feasible failure
    # patterns are exactly the subsets summing to 8, i.e. {3, 5}
    f = np.array([2.0, 3.0, 5.0])
    T = 8.0
    n = len(f)
    hub, spokes, boundary = 0, [1, 2, 3], 4
    edges = [(hub, i, 1.0) for i in spokes] + [(hub, boundary, 1.0)]
    p = [0.0, -2.0, -3.0, -5.0, 10.0]
    g = make_grid(edges, injections=p, reference=boundary)
    theta_pre = solve_pre_attack(g).theta
    theta_post = np.array([0.0, -2.0, -3.0, -5.0, f.sum() - T])
    v_h = (0, 1, 2, 3)
    obs = Observation(
        grid=g, v_h=v_h, theta_pre=theta_pre,
        delta_outside=np.zeros(1),
        theta_post_outside=theta_post[[boundary]],
        theta_post_inside=None, pmu_mode=False,
    )
    p0 = brute_force_p0(obs, theta_post[list(v_h)])
    assert p0.n_feasible == 1
    (sol,) = p0.feasible
    # area links sorted by endpoints: (0,1)->w2, (0,2)->w3, (0,3)->w5
    assert sol.tolist() == [False, True, True]
    assert [o.tolist() for o in p0.optima] == [[False, True, True]]


# --- sparse-recovery benchmark ---


def test_bpdn_zero_when_ball_contains_origin(rng):
    g = random_grid(rng, 10, extra_links=2)
    s = random_scenario(rng, g, 5, 1)
    obs = make_observation(s, pmu_mode=True)
    theta_h = s.post.theta[list(s.v_h)]
    res = benchmark_bpdn(obs, theta_h, epsilon=1e9)
    assert np.abs(res.x).max() == 0.0
    assert res.f_hat == frozenset()


def test_bpdn_epsilon_zero_matches_known_delta_zero(rng):
    done = 0
    while done < 10:
        g = random_grid(rng, 10, extra_links=2)
        s = random_scenario(rng, g, 5, 1)
        if s is None:
            continue
        obs = make_observation(s, pmu_mode=True)
        theta_h = s.post.theta[list(s.v_h)]
        if not delta_zero_feasible(obs, theta_h):
            continue
        res = benchmark_bpdn(obs, theta_h, epsilon=0.0)
        ref = localize_known_delta(obs, np.zeros(len(s.v_h)), s.post.theta)
        assert res.objective == pytest.approx(ref.objective, abs=1e-4)
        done += 1


def test_bpdn_matches_support_enumeration_oracle(rng):
    from gridfault.recovery import _area_system

    done = 0
    while done < 12:
        g = random_grid(rng, 9, extra_links=1)
        s = random_scenario(rng, g, int(rng.integers(3, 5)), 1)
        if s is None or not (1 <= len(s.e_h) <= 5):
            continue
        obs = make_observation(s, pmu_mode=True)
        theta_h = s.post.theta[list(s.v_h)]
        res = benchmark_bpdn(obs, theta_h)
        sys_ = _area_system(obs, s.post.theta)
        oracle = bpdn_oracle(sys_.d_h, sys_.q, float(np.linalg.norm(sys_.p_h)))
        assert res.converged
        assert res.objective == pytest.approx(oracle, abs=1e-4)
        done += 1


# --- delta = 0 feasibility probe ---


def test_delta_zero_feasible_connected_post(rng):
    done = 0
    while done < 10:
        g = random_grid(rng, 10, extra_links=3)
        s = random_scenario(rng, g, 5, 1,
                            predicate=lambda sc: len(sc.post.islands) == 1)
        if s is None:
            continue
        obs = make_observation(s, pmu_mode=True)
        assert delta_zero_feasible(obs, s.post.theta[list(s.v_h)]) is True
        done += 1


def test_delta_zero_infeasible_after_shedding():
    # pocket fully shed: the zero-delta system loses consistency
    g = make_grid(
        [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (1, 3, 1.2), (3, 4, 0.9)],
        injections=[3.0, -0.7, -0.8, -0.6, -0.9], reference=0,
    )
    links = {(lk.s, lk.t): lk.id for lk in g.links}
    s = apply_attack(g, (2, 3, 4), {links[(3, 4)]}, seed=1)
    assert len(s.post.islands) == 2
    obs = make_observation(s, pmu_mode=True)
    assert delta_zero_feasible(obs, s.post.theta[[2, 3, 4]]) is False


def test_bpdn_nonconvergence_flag(rng):
    g = random_grid(rng, 10, extra_links=2)
    s = random_scenario(rng, g, 5, 1)
    obs = make_observation(s, pmu_mode=True)
    res = benchmark_bpdn(obs, s.post.theta[list(s.v_h)], epsilon=1e-3, max_iter=1)
    assert not res.converged
    assert res.status == "non-convergence"
    assert res.x is not None  # iterate still reported
