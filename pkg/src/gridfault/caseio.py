"""Parsing of MATPOWER-style case files into Grid, plus the line-oriented
scenario file format (lossless round-trip, human-diffable)."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import attack as _attack
from .errors import (
    DisconnectedCase,
    MissingTable,
    NonpositiveReactance,
    ParseError,
    SchemaError,
    UnbalancedCase,
    VersionMismatch,
)
from .grid import Grid, Link, SteadyState, islands

SCENARIO_VERSION = 1
MAX_IMBALANCE = 1e-6  # raw-case residual attributable to rounding

# MATPOWER column positions (1-indexed in the format spec)
_BUS_MIN_COLS = 3      # bus_i, type, Pd
_GEN_STATUS_COL = 7    # 0-indexed; present in full-width gen tables
_BRANCH_X_COL = 3      # 0-indexed
_BRANCH_STATUS_COL = 10


class BusRow(NamedTuple):
    bus_id: int
    bus_type: int
    pd: float


class GenRow(NamedTuple):
    bus_id: int
    pg: float
    status: int


class BranchRow(NamedTuple):
    from_bus: int
    to_bus: int
    x: float


@dataclass(frozen=True)
class RawCase:
    base_mva: float
    buses: tuple[BusRow, ...]
    gens: tuple[GenRow, ...]
    branches: tuple[BranchRow, ...]


def _strip_comment(line: str) -> str:
    idx = line.find("%")
    return line if idx < 0 else line[:idx]


def _find_block(lines: list[str], name: str) -> tuple[list[tuple[int, list[str]]], bool]:
    """Rows of the bracketed matrix `mpc.<name> = [ ... ];` as
    (line_number, tokens) pairs. Returns (rows, found)."""
    open_re = re.compile(rf"mpc\.{name}\s*=\s*\[")
    rows: list[tuple[int, list[str]]] = []
    i = 0
    while i < len(lines):
        text = _strip_comment(lines[i])
        m = open_re.search(text)
        if not m:
            i += 1
            continue
        rest = text[m.end():]
        lineno = i
        while True:
            closed = "]" in rest
            body = rest.split("]")[0]
            for chunk in body.split(";"):
                toks = chunk.split()
                if toks:
                    rows.append((lineno + 1, toks))
            if closed:
                return rows, True
            lineno += 1
            if lineno >= len(lines):
                raise ParseError(f"unterminated mpc.{name} block", line=i + 1)
            rest = _strip_comment(lines[lineno])
    return rows, False


def _to_float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError as exc:
        raise ParseError(f"not a number: {tok!r}", line=lineno) from exc


def _table(lines, name, min_cols):
    rows, found = _find_block(lines, name)
    if not found:
        raise MissingTable(name)
    width = None
    out = []
    for lineno, toks in rows:
        if width is None:
            width = len(toks)
        if len(toks) != width:
            raise ParseError(
                f"mpc.{name} row has {len(toks)} columns, expected {width}", line=lineno
            )
        if width < min_cols:
            raise ParseError(
                f"mpc.{name} rows need at least {min_cols} columns", line=lineno
            )
        out.append((lineno, [_to_float(t, lineno) for t in toks]))
    return out


def parse_matpower(text: str) -> RawCase:
    """Extract baseMVA, bus, gen, and branch tables from MATLAB-struct syntax.

    Only the DC-model fields are read. Out-of-service branches (status 0) are
    dropped here; out-of-service generators contribute zero later.
    """
    lines = text.splitlines()

    base = None
    base_re = re.compile(r"mpc\.baseMVA\s*=\s*([^;%]+);")
    for i, line in enumerate(lines):
        m = base_re.search(_strip_comment(line))
        if m:
            base = _to_float(m.group(1).strip(), i + 1)
            break
    if base is None:
        raise MissingTable("baseMVA")
    if base <= 0:
        raise ParseError("baseMVA must be positive")

    buses = []
    bus_ids = set()
    for lineno, vals in _table(lines, "bus", _BUS_MIN_COLS):
        row = BusRow(bus_id=int(vals[0]), bus_type=int(vals[1]), pd=vals[2])
        if row.bus_id in bus_ids:
            raise ParseError(f"duplicate bus id {row.bus_id}", line=lineno)
        bus_ids.add(row.bus_id)
        buses.append(row)

    gens = []
    for lineno, vals in _table(lines, "gen", 2):
        status = int(vals[_GEN_STATUS_COL]) if len(vals) > _GEN_STATUS_COL else 1
        row = GenRow(bus_id=int(vals[0]), pg=vals[1], status=status)
        if row.bus_id not in bus_ids:
            raise ParseError(f"generator at unknown bus {row.bus_id}", line=lineno)
        gens.append(row)

    branches = []
    for lineno, vals in _table(lines, "branch", _BRANCH_X_COL + 1):
        status = int(vals[_BRANCH_STATUS_COL]) if len(vals) > _BRANCH_STATUS_COL else 1
        if status == 0:
            continue
        f, t = int(vals[0]), int(vals[1])
        if f not in bus_ids or t not in bus_ids:
            raise ParseError(f"branch endpoint not in bus table: {f}-{t}", line=lineno)
        branches.append(BranchRow(from_bus=f, to_bus=t, x=vals[_BRANCH_X_COL]))

    return RawCase(base_mva=base, buses=tuple(buses), gens=tuple(gens), branches=tuple(branches))


def to_grid(case: RawCase, max_imbalance: float = MAX_IMBALANCE) -> Grid:
    """Build a Grid: per-unit net injections, parallel branches merged by
    1/r = sum 1/x_i, links oriented low id -> high id and numbered by sorted
    endpoint pair.

    The residual sum of injections is absorbed at the reference node; a
    residual above `max_imbalance` raises UnbalancedCase (pass a larger bound
    explicitly to load cases that dispatch losses to the slack).
    """
    order = sorted(b.bus_id for b in case.buses)
    index = {bus_id: i for i, bus_id in enumerate(order)}
    n = len(order)

    p = np.zeros(n)
    for b in case.buses:
        p[index[b.bus_id]] -= b.pd
    for g in case.gens:
        if g.status != 0:
            p[index[g.bus_id]] += g.pg
    p /= case.base_mva

    susceptance: dict[tuple[int, int], float] = {}
    for br in case.branches:
        if br.x <= 0:
            raise NonpositiveReactance(f"branch {br.from_bus}-{br.to_bus} has x={br.x}")
        a, b = index[br.from_bus], index[br.to_bus]
        if a == b:
            raise ParseError(f"self-loop branch at bus {br.from_bus}")
        key = (min(a, b), max(a, b))
        susceptance[key] = susceptance.get(key, 0.0) + 1.0 / br.x

    links = tuple(
        Link(id=i, s=st[0], t=st[1], r=1.0 / susceptance[st])
        for i, st in enumerate(sorted(susceptance))
    )

    reference = 0
    ref_buses = sorted(b.bus_id for b in case.buses if b.bus_type == 3)
    if ref_buses:
        reference = index[ref_buses[0]]

    residual = p.sum()
    if abs(residual) > max_imbalance:
        raise UnbalancedCase(
            f"injections sum to {residual:.3e} (limit {max_imbalance:.1e}); "
            "pass max_imbalance explicitly to absorb at the reference bus"
        )
    p[reference] -= residual

    try:
        return Grid(injections=tuple(p), links=links, reference=reference)
    except ValueError as exc:
        if "connected" in str(exc):
            raise DisconnectedCase(str(exc)) from exc
        raise


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioDocument:
    """One attack scenario plus the rounding threshold it was generated for."""

    scenario: "_attack.AttackScenario"
    eta: float = 0.5
    version: int = SCENARIO_VERSION

    def __eq__(self, other):
        if not isinstance(other, ScenarioDocument):
            return NotImplemented
        return (
            self.version == other.version
            and self.eta == other.eta
            and self.scenario == other.scenario
        )


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def _ints(xs) -> str:
    return " ".join(str(int(x)) for x in xs)


def serialize_scenario(doc: "ScenarioDocument | _attack.AttackScenario", eta: float = 0.5) -> str:
    if not isinstance(doc, ScenarioDocument):
        doc = ScenarioDocument(scenario=doc, eta=eta)
    s = doc.scenario
    g = s.grid
    out = []
    out.append(f"gridfault-scenario {doc.version}")
    out.append(f"seed {s.seed}")
    out.append(f"eta {_fmt(doc.eta)}")
    out.append(f"degenerate {int(s.degenerate)}")
    out.append("section grid")
    out.append(f"reference {g.reference}")
    for v, pv in enumerate(g.injections):
        out.append(f"node {v} {_fmt(pv)}")
    for lk in g.links:
        out.append(f"link {lk.id} {lk.s} {lk.t} {_fmt(lk.r)}")
    out.append("section attack")
    out.append("area " + _ints(s.v_h))
    out.append(("failed " + _ints(sorted(s.f))).rstrip())
    out.append("section pre")
    out.append("theta " + " ".join(_fmt(x) for x in s.pre.theta))
    out.append("section post")
    out.append("theta " + " ".join(_fmt(x) for x in s.post.theta))
    out.append("delta " + " ".join(_fmt(x) for x in s.delta))
    out.append(f"islands {len(s.post.islands)}")
    for comp in s.post.islands:
        out.append("island " + _ints(comp))
    return "\n".join(out) + "\n"


def load_scenario(text: str) -> ScenarioDocument:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SchemaError("empty scenario file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "gridfault-scenario":
        raise SchemaError("missing scenario header")
    try:
        version = int(head[1])
    except ValueError as exc:
        raise SchemaError("bad version field") from exc
    if version != SCENARIO_VERSION:
        raise VersionMismatch(f"scenario version {version}, supported {SCENARIO_VERSION}")

    fields: dict[str, list[list[str]]] = {}
    for ln in lines[1:]:
        toks = ln.split()
        fields.setdefault(toks[0], []).append(toks[1:])

    def one(key, count=None):
        if key not in fields or len(fields[key]) != 1:
            raise SchemaError(f"expected exactly one '{key}' line")
        toks = fields[key][0]
        if count is not None and len(toks) != count:
            raise SchemaError(f"'{key}' expects {count} fields")
        return toks

    try:
        seed = int(one("seed", 1)[0])
        eta = float(one("eta", 1)[0])
        degenerate = bool(int(one("degenerate", 1)[0]))
        reference = int(one("reference", 1)[0])
        node_rows = sorted((int(r[0]), float(r[1])) for r in fields.get("node", []))
        link_rows = sorted(
            (int(r[0]), int(r[1]), int(r[2]), float(r[3])) for r in fields.get("link", [])
        )
        v_h = tuple(int(x) for x in one("area"))
        failed = tuple(int(x) for x in one("failed"))
        thetas = fields.get("theta", [])
        if len(thetas) != 2:
            raise SchemaError("expected pre and post 'theta' lines")
        theta_pre = np.array([float(x) for x in thetas[0]])
        theta_post = np.array([float(x) for x in thetas[1]])
        delta = np.array([float(x) for x in one("delta")])
        n_islands = int(one("islands", 1)[0])
        island_rows = [tuple(int(x) for x in r) for r in fields.get("island", [])]
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"malformed scenario field: {exc}") from exc

    if [i for i, _ in node_rows] != list(range(len(node_rows))):
        raise SchemaError("node ids must be contiguous from 0")
    if len(island_rows) != n_islands:
        raise SchemaError("island count mismatch")

    try:
        grid = Grid(
            injections=tuple(pv for _, pv in node_rows),
            links=tuple(Link(*row) for row in link_rows),
            reference=reference,
        )
    except ValueError as exc:
        raise SchemaError(f"invalid grid: {exc}") from exc

    n, m = grid.n_nodes, grid.n_links
    if theta_pre.shape != (n,) or theta_post.shape != (n,) or delta.shape != (n,):
        raise SchemaError("theta/delta length must equal node count")
    if not set(v_h) <= set(range(n)):
        raise SchemaError("attacked area contains unknown nodes")
    e_h = _attack.induced_links(grid, v_h)
    if not set(failed) <= set(e_h):
        raise SchemaError("failed set is not within the attacked area's links")
    if islands(grid, failed) != tuple(island_rows):
        raise SchemaError("stored islands do not match the topology")

    from .grid import link_flows

    pre = SteadyState(theta=theta_pre, flows=link_flows(grid, theta_pre), islands=islands(grid, ()))
    post = SteadyState(
        theta=theta_post,
        flows=link_flows(grid, theta_post, failed),
        islands=tuple(island_rows),
    )
    scenario = _attack.AttackScenario(
        grid=grid,
        v_h=tuple(sorted(v_h)),
        f=frozenset(failed),
        pre=pre,
        post=post,
        delta=delta,
        seed=seed,
        degenerate=degenerate,
    )
    return ScenarioDocument(scenario=scenario, eta=eta, version=version)
