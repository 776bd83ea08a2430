"""Per-link correctness certificates for the LP localization: alternative-
system (Gale) witnesses, hyper-node no-miss / no-false-alarm conditions, the
fail-cover-set condition, the special-case guarantees, and the BFS heuristic
that searches for witnesses.

Certificates are evaluated against ground truth (the evaluation-time view)
and are sound but incomplete: a Certified verdict implies the localization
classifies the link correctly at the same threshold; NotCertified implies
nothing. Strict certificate inequalities carry a 1e-9 margin, and a condition
holding only inside the margin is reported NotCertified.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

from .attack import AttackScenario
from .errors import NotConnected, PreconditionViolated
from .lp import alternative_feasible

SIGN_MARGIN = 1e-9

MECH_GALE = "Gale"
MECH_NO_MISS = "HyperNodeNoMiss"
MECH_NO_FA = "HyperNodeNoFA"
MECH_FAILCOVER = "FailCover"
MECH_COR_CONNECTED = "CorollaryConnected"
MECH_COR_ISLANDING = "CorollaryIslanding"


@dataclass(frozen=True)
class Certificate:
    link: int
    hypothesis: str        # "failed" | "operational"
    mechanism: str
    certified: bool
    witness: Any = None
    value: float | None = None  # the tested strict-inequality value, when scalar

    @property
    def verdict(self) -> str:
        return "Certified" if self.certified else "NotCertified"


@dataclass
class TruthView:
    """Ground-truth quantities the certificate conditions read.

    Kept separate from Observation on purpose: certificates are computed from
    truth during evaluation and never feed back into localization.
    """

    scenario: AttackScenario
    v_h: tuple[int, ...]
    e_h: tuple[int, ...]
    f: frozenset[int]
    node_pos: dict[int, int]
    link_pos: dict[int, int]
    dtilde: np.ndarray    # |V_H| x |E_H| hypothetical post-attack flows
    g_plus: np.ndarray    # per node u: multiplier value paired with +row(u)
    g_minus: np.ndarray   # per node u: multiplier value paired with -row(u)
    x_star: np.ndarray

    @classmethod
    def from_scenario(cls, s: AttackScenario) -> "TruthView":
        grid = s.grid
        v_h, e_h = s.v_h, s.e_h
        node_pos = {v: i for i, v in enumerate(v_h)}
        link_pos = {e: k for k, e in enumerate(e_h)}
        theta = s.post.theta
        dtilde = np.zeros((len(v_h), len(e_h)))
        for k, e in enumerate(e_h):
            lk = grid.links[e]
            fl = (theta[lk.s] - theta[lk.t]) / lk.r
            dtilde[node_pos[lk.s], k] = fl
            dtilde[node_pos[lk.t], k] = -fl
        p = grid.p_vector()[list(v_h)]
        delta = s.delta[list(v_h)]
        p_post = p - delta
        gen = p > 0
        # load u: (+row: -delta_u, -row: -p'_u); generator u: (+row: p'_u, -row: delta_u)
        g_plus = np.where(gen, p_post, -delta)
        g_minus = np.where(gen, delta, -p_post)
        return cls(
            scenario=s, v_h=v_h, e_h=e_h, f=s.f, node_pos=node_pos, link_pos=link_pos,
            dtilde=dtilde, g_plus=g_plus, g_minus=g_minus, x_star=s.x_star,
        )

    def link_endpoints(self, e: int) -> tuple[int, int]:
        lk = self.scenario.grid.links[e]
        return lk.s, lk.t


@dataclass(frozen=True)
class HyperNode:
    """A connected node subset of the attacked area with its aggregated
    boundary flows and the certificate quantities derived from them."""

    nodes: frozenset[int]
    e_u: tuple[int, ...]          # links with exactly one endpoint inside
    dtilde_u: np.ndarray          # aggregated flows over E_H (0 off E_U)
    s_u: frozenset[int]           # operational boundary links aligned with failures
    f_u0: float
    f_u1: float                   # inf when no failed boundary link
    f_ug: float


def _connected_in_h(tv: TruthView, nodes: frozenset[int]) -> bool:
    if not nodes:
        return False
    adj: dict[int, list[int]] = {v: [] for v in nodes}
    for e in tv.e_h:
        a, b = tv.link_endpoints(e)
        if a in nodes and b in nodes:
            adj[a].append(b)
            adj[b].append(a)
    start = min(nodes)
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for u in adj[v]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return seen == set(nodes)


def hypernode_props(u_nodes: Iterable[int], tv: TruthView) -> HyperNode:
    """Aggregated flows, the aligned-operational set S_U, and the extrema
    f_U0 / f_U1 / f_Ug for a candidate hyper-node."""
    nodes = frozenset(u_nodes)
    if not nodes <= set(tv.v_h):
        raise NotConnected("hyper-node must lie inside the attacked area")
    if not _connected_in_h(tv, nodes):
        raise NotConnected("node set does not induce a connected subgraph")

    rows = [tv.node_pos[v] for v in sorted(nodes)]
    dtilde_u = tv.dtilde[rows].sum(axis=0)

    e_u = []
    for k, e in enumerate(tv.e_h):
        a, b = tv.link_endpoints(e)
        if (a in nodes) != (b in nodes):
            e_u.append(e)
        else:
            dtilde_u[k] = 0.0  # internal/external links aggregate to 0; pin exactly
    e_u = tuple(e_u)

    failed_b = [e for e in e_u if e in tv.f]
    oper_b = [e for e in e_u if e not in tv.f]
    fvals = np.array([dtilde_u[tv.link_pos[e]] for e in failed_b])
    s_u = frozenset(
        e for e in oper_b
        if any(dtilde_u[tv.link_pos[e]] * fv > 0.0 for fv in fvals)
    )
    f_u0 = max((abs(dtilde_u[tv.link_pos[e]]) for e in s_u), default=0.0)
    f_u1 = min((abs(fv) for fv in fvals), default=float("inf"))

    if failed_b:
        use_plus = bool(np.any(fvals < 0.0))
    else:
        ovals = [dtilde_u[tv.link_pos[e]] for e in oper_b]
        use_plus = any(v > 0.0 for v in ovals)
    g = tv.g_plus if use_plus else tv.g_minus
    f_ug = float(sum(g[tv.node_pos[v]] for v in nodes))

    return HyperNode(
        nodes=nodes, e_u=e_u, dtilde_u=dtilde_u, s_u=s_u,
        f_u0=float(f_u0), f_u1=float(f_u1), f_ug=f_ug,
    )


def _uniform_sign(values: np.ndarray) -> bool:
    if values.size == 0:
        return True
    if np.abs(values).min() <= SIGN_MARGIN:
        return False
    return bool(np.all(values > 0.0) or np.all(values < 0.0))


def certify_no_miss(u_nodes: Iterable[int], link: int, tv: TruthView, eta: float) -> bool:
    """Hyper-node condition guaranteeing a failed link is detected."""
    hn = u_nodes if isinstance(u_nodes, HyperNode) else hypernode_props(u_nodes, tv)
    if link not in hn.e_u or link not in tv.f:
        return False
    fvals = np.array([hn.dtilde_u[tv.link_pos[e]] for e in hn.e_u if e in tv.f])
    if not _uniform_sign(fvals):
        return False
    if hn.s_u:
        return False
    value = hn.f_ug + (eta - 1.0) * abs(hn.dtilde_u[tv.link_pos[link]])
    return value < -SIGN_MARGIN


def certify_no_false_alarm(u_nodes: Iterable[int], link: int, tv: TruthView, eta: float) -> bool:
    """Hyper-node condition guaranteeing an operational link is not flagged."""
    hn = u_nodes if isinstance(u_nodes, HyperNode) else hypernode_props(u_nodes, tv)
    if link not in hn.e_u or link in tv.f:
        return False
    ovals = np.array([hn.dtilde_u[tv.link_pos[e]] for e in hn.e_u if e not in tv.f])
    if not _uniform_sign(ovals):
        return False
    has_failed_boundary = any(e in tv.f for e in hn.e_u)
    if has_failed_boundary and hn.s_u:
        return False
    value = hn.f_ug - eta * abs(hn.dtilde_u[tv.link_pos[link]])
    return value < -SIGN_MARGIN


def _grow_step(tv: TruthView, nodes: frozenset[int], violators: Iterable[int]) -> frozenset[int]:
    added = set(nodes)
    for e in sorted(violators):
        a, b = tv.link_endpoints(e)
        added.add(a if a not in nodes else b)
    return frozenset(added)


def bfs_witness_search(link: int, hypothesis: str, tv: TruthView, eta: float) -> Certificate:
    """Grow a hyper-node by BFS from each endpoint of the target link,
    absorbing the outside endpoints of links that violate the sign conditions,
    and test the magnitude condition once the sign conditions hold.

    Sound but incomplete: the certified fraction it reports is a lower bound.
    """
    target_failed = hypothesis == "failed"
    mechanism = MECH_NO_MISS if target_failed else MECH_NO_FA
    vh = set(tv.v_h)

    for start in tv.link_endpoints(link):
        nodes = frozenset([start])
        while True:
            hn = hypernode_props(nodes, tv)
            kpos = tv.link_pos[link]
            if link not in hn.e_u:
                break
            ref = hn.dtilde_u[kpos]
            if abs(ref) <= SIGN_MARGIN:
                break
            violators = []
            for e in hn.e_u:
                if e == link:
                    continue
                val = hn.dtilde_u[tv.link_pos[e]]
                same_status = (e in tv.f) == target_failed
                if same_status and val * ref <= 0.0:
                    violators.append(e)  # same-status flow misaligned with target
                elif not same_status and val * ref > 0.0:
                    violators.append(e)  # opposite-status flow aligned with target
            if not violators:
                ok = (
                    certify_no_miss(hn, link, tv, eta)
                    if target_failed
                    else certify_no_false_alarm(hn, link, tv, eta)
                )
                if ok:
                    return Certificate(
                        link=link, hypothesis=hypothesis, mechanism=mechanism,
                        certified=True, witness=nodes,
                    )
                break
            grown = _grow_step(tv, nodes, violators)
            if grown == nodes or not grown <= vh:
                break
            nodes = grown
            if nodes == vh:
                hn = hypernode_props(nodes, tv)
                ok = (
                    certify_no_miss(hn, link, tv, eta)
                    if target_failed
                    else certify_no_false_alarm(hn, link, tv, eta)
                )
                if ok:
                    return Certificate(
                        link=link, hypothesis=hypothesis, mechanism=mechanism,
                        certified=True, witness=nodes,
                    )
                break
    return Certificate(link=link, hypothesis=hypothesis, mechanism=mechanism, certified=False)


@dataclass
class FailCoverSet:
    """Weighted family of fail-cover hyper-nodes and its aggregate flows."""

    members: tuple[HyperNode, ...]
    weights: np.ndarray
    dtilde_t: np.ndarray   # over E_H
    s_t: frozenset[int]
    f_t0: float
    f_t1: float
    f_tg: float
    covers_f: bool
    magnitude_ok: bool     # f_T1 >= f_T0

    @property
    def valid(self) -> bool:
        return self.covers_f and self.magnitude_ok


def _member_sign(hn: HyperNode, tv: TruthView) -> float:
    vals = [hn.dtilde_u[tv.link_pos[e]] for e in hn.e_u if e in tv.f]
    return float(np.sign(vals[np.argmax(np.abs(vals))])) if vals else 0.0


def assemble_failcover(members: Iterable[HyperNode], tv: TruthView) -> FailCoverSet:
    members = tuple(members)
    f_u1s = np.array([hn.f_u1 for hn in members])
    top = f_u1s.max() if members else 0.0
    weights = top / f_u1s if members else np.zeros(0)

    dtilde_t = np.zeros(len(tv.e_h))
    for hn, w in zip(members, weights):
        sign = _member_sign(hn, tv)
        # negative-flow members enter with +weight, positive-flow with -weight
        dtilde_t += (w if sign < 0 else -w) * hn.dtilde_u

    f_idx = [tv.link_pos[e] for e in sorted(tv.f)]
    fvals = dtilde_t[f_idx]
    s_t = frozenset(
        e for e in tv.e_h
        if e not in tv.f and any(dtilde_t[tv.link_pos[e]] * fv > 0.0 for fv in fvals)
    )
    f_t0 = max((abs(dtilde_t[tv.link_pos[e]]) for e in s_t), default=0.0)
    f_t1 = float(np.abs(fvals).min()) if f_idx else float("inf")
    f_tg = float(sum(w * hn.f_ug for hn, w in zip(members, weights)))
    covered = set().union(*(hn.e_u for hn in members)) if members else set()
    return FailCoverSet(
        members=members, weights=weights, dtilde_t=dtilde_t, s_t=s_t,
        f_t0=float(f_t0), f_t1=f_t1, f_tg=f_tg,
        covers_f=tv.f <= covered,
        magnitude_ok=f_t1 >= f_t0 - 1e-12,
    )


def _repair_candidate(tv: TruthView, seed: int) -> HyperNode | None:
    """Grow a hyper-node from one node until its failed boundary links share
    one flow direction and no aligned operational link matches their
    magnitude; None when the failed boundary empties out."""
    vh = set(tv.v_h)
    nodes = frozenset([seed])
    while True:
        hn = hypernode_props(nodes, tv)
        fvals = {e: hn.dtilde_u[tv.link_pos[e]] for e in hn.e_u if e in tv.f}
        if not fvals:
            return None
        ref_link = max(fvals, key=lambda e: (abs(fvals[e]), -e))
        ref = fvals[ref_link]
        if abs(ref) <= SIGN_MARGIN:
            return None
        violators = [e for e, v in fvals.items() if e != ref_link and v * ref <= 0.0]
        f_u1 = min(abs(v) for v in fvals.values())
        violators += [
            e for e in hn.s_u
            if abs(hn.dtilde_u[tv.link_pos[e]]) >= f_u1 - 1e-12
        ]
        if not violators:
            return hn
        grown = _grow_step(tv, nodes, violators)
        if grown == nodes or not grown <= vh or grown == vh:
            hn = hypernode_props(grown if grown <= vh else nodes, tv)
            fvals2 = np.array([hn.dtilde_u[tv.link_pos[e]] for e in hn.e_u if e in tv.f])
            return hn if fvals2.size and _uniform_sign(fvals2) else None
        nodes = grown


def build_failcover_set(tv: TruthView) -> FailCoverSet | None:
    """Greedy construction: seed single-node fail-cover hyper-nodes at the
    endpoints of failed links, repair them by BFS growth, then pick a
    deterministic cover of the failed set preferring zero-adjustment members.
    """
    if not tv.f:
        return None
    seeds = sorted({v for e in sorted(tv.f) for v in tv.link_endpoints(e)})
    candidates: dict[frozenset[int], HyperNode] = {}
    for v in seeds:
        hn = _repair_candidate(tv, v)
        if hn is not None and hn.f_u1 > SIGN_MARGIN:
            candidates.setdefault(hn.nodes, hn)
    if not candidates:
        return None

    ordered = sorted(
        candidates.values(),
        key=lambda hn: (
            hn.f_ug > SIGN_MARGIN,
            not (hn.f_u0 < hn.f_u1 - SIGN_MARGIN),
            hn.f_ug,
            min(hn.nodes),
        ),
    )
    chosen: list[HyperNode] = []
    covered: set[int] = set()
    for e in sorted(tv.f):
        if e in covered:
            continue
        for hn in ordered:
            if e in hn.e_u:
                if hn not in chosen:
                    chosen.append(hn)
                    covered.update(hn.e_u)
                break
    fcs = assemble_failcover(chosen, tv)
    return fcs if fcs.valid else None


def failcover_certify(fcs: FailCoverSet, link: int, hypothesis: str, tv: TruthView,
                      eta: float) -> bool:
    """Evaluate the fail-cover-set inequalities for one link."""
    if not fcs.valid:
        raise PreconditionViolated("fail-cover set violates its base conditions")
    k = tv.link_pos[link]
    mag = abs(fcs.dtilde_t[k])
    if hypothesis == "failed":
        if link not in tv.f:
            raise PreconditionViolated("failed-hypothesis link is operational")
        value = fcs.f_tg + (eta - 1.0) * (mag - fcs.f_t0)
        return value < -SIGN_MARGIN
    if link in tv.f:
        raise PreconditionViolated("operational-hypothesis link is failed")
    if link in fcs.s_t:
        value = fcs.f_tg - eta * (fcs.f_t1 - mag)
    else:
        value = fcs.f_tg - eta * (fcs.f_t1 + mag)
    return value < -SIGN_MARGIN


def gale_system(tv: TruthView, link: int, hypothesis: str, eta: float):
    """Assemble the alternative system (A, g) whose nonnegative solution with
    g@z < 0 certifies the link under the given hypothesis.

    Columns: per node u a +row(u)/-row(u) pair of aggregated-flow columns with
    multipliers g_plus/g_minus; per link the two box columns with multipliers
    x*_e and 1 - x*_e; one misclassification column for the target link; one
    all-ones column for the optimality row.
    """
    nh, mh = tv.dtilde.shape
    ncols = 2 * nh + 2 * mh + 2
    A = np.zeros((mh, ncols))
    g = np.zeros(ncols)
    for i in range(nh):
        A[:, 2 * i] = tv.dtilde[i]
        A[:, 2 * i + 1] = -tv.dtilde[i]
        g[2 * i] = tv.g_plus[i]
        g[2 * i + 1] = tv.g_minus[i]
    base = 2 * nh
    for k in range(mh):
        A[k, base + 2 * k] = -1.0       # lower box  -c <= x*
        A[k, base + 2 * k + 1] = 1.0    # upper box   c <= 1 - x*
        g[base + 2 * k] = tv.x_star[k]
        g[base + 2 * k + 1] = 1.0 - tv.x_star[k]
    wcol = base + 2 * mh
    kpos = tv.link_pos[link]
    if hypothesis == "failed":
        A[kpos, wcol] = 1.0
        g[wcol] = eta - 1.0
    else:
        A[kpos, wcol] = -1.0
        g[wcol] = -eta
    A[:, wcol + 1] = 1.0  # optimality row 1^T c <= 0
    g[wcol + 1] = 0.0
    return A, g


def gale_certify(tv: TruthView, link: int, hypothesis: str, eta: float = 0.5) -> Certificate:
    """Alternative-system certificate: a nonnegative witness proving the LP
    cannot be optimal while misclassifying this link. The hypothesis must
    match ground truth (certificates are evaluated against truth only)."""
    truly_failed = link in tv.f
    assert (hypothesis == "failed") == truly_failed, "hypothesis must follow ground truth"
    A, g = gale_system(tv, link, hypothesis, eta)
    exists, z = alternative_feasible(A, g)
    return Certificate(
        link=link, hypothesis=hypothesis, mechanism=MECH_GALE,
        certified=exists, witness=z,
        value=float(g @ z) if z is not None else None,
    )


@dataclass(frozen=True)
class CorollaryFlags:
    connected_case: bool
    islanding_case: bool
    acyclic_h: bool


def _h_components(tv: TruthView, removed: frozenset[int]) -> list[tuple[int, ...]]:
    adj: dict[int, list[int]] = {v: [] for v in tv.v_h}
    for e in tv.e_h:
        if e in removed:
            continue
        a, b = tv.link_endpoints(e)
        adj[a].append(b)
        adj[b].append(a)
    seen: set[int] = set()
    comps = []
    for start in tv.v_h:
        if start in seen:
            continue
        stack = [start]
        seen.add(start)
        comp = []
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        comps.append(tuple(sorted(comp)))
    return comps


def _acyclic_h(tv: TruthView) -> bool:
    return len(tv.e_h) == len(tv.v_h) - len(_h_components(tv, frozenset()))


def corollary_checks(s: AttackScenario) -> CorollaryFlags:
    """Exact evaluation of the special-case premises: the connected-grid
    single-type acyclic case, and the full-islanding case (failed set equal to
    the inter-island cut, with a valid island cover)."""
    tv = TruthView.from_scenario(s)
    p_h = s.grid.p_vector()[list(s.v_h)]
    single_type = bool(np.all(p_h > 0) or np.all(p_h <= 0))
    acyclic = _acyclic_h(tv)
    connected_case = len(s.post.islands) == 1 and acyclic and single_type

    islanding_case = False
    comps = _h_components(tv, s.f)
    comp_of = {v: i for i, comp in enumerate(comps) for v in comp}
    e_c = frozenset(
        e for e in tv.e_h
        if comp_of[tv.link_endpoints(e)[0]] != comp_of[tv.link_endpoints(e)[1]]
    )
    if e_c and s.f == e_c:
        covered: set[int] = set()
        for i, comp in enumerate(comps):
            e_ci = [e for e in sorted(s.f) if any(v in comp for v in tv.link_endpoints(e))]
            if not e_ci:
                continue
            island_nodes = set(comp)
            vals = []
            for e in e_ci:
                a, b = tv.link_endpoints(e)
                v_in = a if a in island_nodes else b
                vals.append(tv.dtilde[tv.node_pos[v_in], tv.link_pos[e]])
            vals = np.array(vals)
            if not _uniform_sign(vals):
                continue
            ok = True
            for e in e_ci:
                a, b = tv.link_endpoints(e)
                v_in = a if a in island_nodes else b
                hn = hypernode_props([v_in], tv)
                if not (hn.f_u0 < hn.f_u1 - SIGN_MARGIN):
                    ok = False
                    break
                flow = tv.dtilde[tv.node_pos[v_in], tv.link_pos[e]]
                g = tv.g_plus[tv.node_pos[v_in]] if flow < 0 else tv.g_minus[tv.node_pos[v_in]]
                if abs(g) > SIGN_MARGIN:
                    ok = False
                    break
            if ok:
                covered.update(e_ci)
        islanding_case = covered == set(s.f)

    return CorollaryFlags(
        connected_case=connected_case, islanding_case=islanding_case, acyclic_h=acyclic
    )


def certify_links(
    s: AttackScenario,
    eta: float = 0.5,
    mechanisms: Iterable[str] = ("gale", "hypernode", "failcover", "corollary"),
) -> list[Certificate]:
    """Run every requested mechanism for every link of the attacked area,
    with the hypothesis fixed by ground truth."""
    mechanisms = set(mechanisms)
    tv = TruthView.from_scenario(s)
    certs: list[Certificate] = []

    fcs = build_failcover_set(tv) if "failcover" in mechanisms else None
    flags = corollary_checks(s) if "corollary" in mechanisms else None

    for e in tv.e_h:
        hyp = "failed" if e in tv.f else "operational"
        if "gale" in mechanisms:
            certs.append(gale_certify(tv, e, hyp, eta))
        if "hypernode" in mechanisms:
            certs.append(bfs_witness_search(e, hyp, tv, eta))
        if "failcover" in mechanisms:
            if fcs is None:
                certs.append(Certificate(link=e, hypothesis=hyp,
                                         mechanism=MECH_FAILCOVER, certified=False))
            else:
                certs.append(Certificate(
                    link=e, hypothesis=hyp, mechanism=MECH_FAILCOVER,
                    certified=failcover_certify(fcs, e, hyp, tv, eta), witness=fcs,
                ))
        if "corollary" in mechanisms:
            if flags.connected_case:
                certs.append(Certificate(link=e, hypothesis=hyp,
                                         mechanism=MECH_COR_CONNECTED, certified=True,
                                         witness=flags))
            if flags.islanding_case:
                certs.append(Certificate(link=e, hypothesis=hyp,
                                         mechanism=MECH_COR_ISLANDING, certified=True,
                                         witness=flags))
    return certs


def certificate_dump(certs: Iterable[Certificate]) -> str:
    """Structured per-scenario audit text, one line per certificate."""
    lines = []
    for c in sorted(certs, key=lambda c: (c.link, c.mechanism)):
        if isinstance(c.witness, frozenset):
            witness = "U=" + ",".join(str(v) for v in sorted(c.witness))
        elif isinstance(c.witness, FailCoverSet):
            witness = "T=" + "|".join(
                ",".join(str(v) for v in sorted(hn.nodes)) for hn in c.witness.members
            )
        elif isinstance(c.witness, np.ndarray):
            witness = "z_nnz=" + str(int((np.abs(c.witness) > 1e-12).sum()))
        else:
            witness = "-"
        value = "-" if c.value is None else f"{c.value:.6g}"
        lines.append(
            f"link={c.link} hypothesis={c.hypothesis} mechanism={c.mechanism} "
            f"verdict={c.verdict} value={value} witness={witness}"
        )
    return "\n".join(lines) + ("\n" if lines else "")
