"""Deterministic synthetic MATPOWER-style cases.

Used for protocol-scale runs when a real case file is not available: planar-
leaning topologies built from a spatial attachment tree plus short chords,
with a transmission-like generator/load split. Emitted as case text so runs
exercise the same parse path as real files.
"""
from __future__ import annotations

import numpy as np


def synthetic_case(
    n_buses: int,
    n_extra_links: int,
    seed: int = 7,
    gen_fraction: float = 0.135,
    avg_load_mw: float = 10.0,
    n_parallel_rows: int = 0,
) -> str:
    """MATPOWER case text for a connected grid with n_buses nodes and
    (n_buses - 1 + n_extra_links) distinct links.

    `n_parallel_rows` appends duplicate branch rows (same endpoints) so the
    parallel-merge path is exercised; they do not add distinct links.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    pos = rng.random((n_buses, 2))

    edges: list[tuple[int, int]] = []
    edge_set: set[tuple[int, int]] = set()

    def add(a: int, b: int) -> bool:
        key = (min(a, b), max(a, b))
        if a == b or key in edge_set:
            return False
        edge_set.add(key)
        edges.append(key)
        return True

    # spatial attachment tree: each node joins its nearest predecessor
    for i in range(1, n_buses):
        d = np.linalg.norm(pos[:i] - pos[i], axis=1)
        add(i, int(np.argmin(d)))

    # short chords between spatially close non-adjacent pairs
    from scipy.spatial import cKDTree

    tree = cKDTree(pos)
    _, nbrs = tree.query(pos, k=min(9, n_buses))
    cand = []
    for a in range(n_buses):
        for b in nbrs[a][1:]:
            b = int(b)
            key = (min(a, b), max(a, b))
            if key not in edge_set:
                cand.append((float(np.linalg.norm(pos[a] - pos[b])), key))
    cand.sort()
    added = 0
    seen = set()
    for _, key in cand:
        if added >= n_extra_links:
            break
        if key in seen:
            continue
        seen.add(key)
        if add(*key):
            added += 1

    n_gen = max(1, int(round(gen_fraction * n_buses)))
    gen_buses = np.sort(rng.choice(n_buses, size=n_gen, replace=False))
    gen_set = set(int(b) for b in gen_buses)

    degree = np.zeros(n_buses, dtype=int)
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1

    pd = np.zeros(n_buses)
    for v in range(n_buses):
        if v not in gen_set:
            # a minority of through-buses carry no load; leaves always do,
            # otherwise their link would never see flow
            if degree[v] >= 2 and rng.random() < 0.15:
                pd[v] = 0.0
            else:
                pd[v] = rng.gamma(2.0, avg_load_mw / 2.0)
    total_load = pd.sum()

    pg_share = rng.gamma(2.0, 1.0, size=n_gen)
    pg = pg_share / pg_share.sum() * total_load
    pg[0] += total_load - pg.sum()  # exact float balance

    lines = ["function mpc = synthetic_case", "mpc.version = '2';", "mpc.baseMVA = 100;"]
    lines.append("%% bus data")
    lines.append("mpc.bus = [")
    slack = int(gen_buses[0])
    for v in range(n_buses):
        btype = 3 if v == slack else (2 if v in gen_set else 1)
        lines.append(f"\t{v + 1}\t{btype}\t{'%.17g' % pd[v]}\t0\t0\t0\t1\t1\t0\t110\t1\t1.1\t0.9;")
    lines.append("];")
    lines.append("mpc.gen = [")
    for i, v in enumerate(gen_buses):
        lines.append(f"\t{int(v) + 1}\t{'%.17g' % pg[i]}\t0\t0\t0\t1\t100\t1\t0\t0;")
    lines.append("];")
    lines.append("mpc.branch = [")
    x_vals = rng.uniform(0.02, 0.3, size=len(edges))
    for (a, b), x in zip(edges, x_vals):
        lines.append(f"\t{a + 1}\t{b + 1}\t0\t{'%.17g' % x}\t0\t0\t0\t0\t0\t0\t1\t-360\t360;")
    dup_idx = rng.choice(len(edges), size=min(n_parallel_rows, len(edges)), replace=False)
    for i in np.sort(dup_idx):
        a, b = edges[int(i)]
        lines.append(
            f"\t{a + 1}\t{b + 1}\t0\t{'%.17g' % x_vals[int(i)]}\t0\t0\t0\t0\t0\t0\t1\t-360\t360;"
        )
    lines.append("];")
    return "\n".join(lines) + "\n"


def polish_scale_case(seed: int = 7) -> str:
    """Stand-in at the scale of the winter-peak Polish system: 2383 buses and
    2886 distinct links (10 extra parallel rows merge away during parsing)."""
    return synthetic_case(
        n_buses=2383,
        n_extra_links=2886 - 2382,
        seed=seed,
        gen_fraction=0.137,
        avg_load_mw=10.3,
        n_parallel_rows=10,
    )
