"""Experiment harness: seeded scenario sweeps, per-method metrics, and CSV
emission for plotting. Aggregates are recomputed from the serialized raw log,
so the summary is reproducible from the audit trail by construction."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .attack import (
    apply_attack,
    induced_links,
    make_observation,
    sample_attack_area,
    sample_failures,
)
from .caseio import parse_matpower, to_grid
from .certify import MECH_FAILCOVER, MECH_GALE, MECH_NO_FA, MECH_NO_MISS, certify_links
from .errors import GridFaultError
from .grid import Grid
from .recovery import (
    _is_acyclic,
    algorithm1,
    benchmark_bpdn,
    delta_zero_feasible,
    localize_known_delta,
    rank_condition,
    recover_phase_angles,
)

SCHEMA_VERSION = 1
METHODS = ("algorithm1", "known-delta", "bpdn")
FULL_PROTOCOL_AREAS = 70
FULL_PROTOCOL_FAILSETS = 300

RAW_FIELDS = [
    "schema_version", "scenario_id", "vh", "nf", "area", "failset", "seed",
    "status", "degenerate", "n_f", "n_eh", "n_islands",
    "rank_ok", "acyclic", "delta0_feasible",
    "cert_gale_failed", "cert_gale_oper", "cert_hyper_failed", "cert_hyper_oper",
    "cert_failcover_failed", "cert_failcover_oper",
    "method", "n_miss", "n_fa", "miss_rate", "fa_rate", "objective",
]

SUMMARY_FIELDS = [
    "schema_version", "vh", "nf", "method", "n_scenarios", "n_degenerate",
    "n_theta_unavailable", "n_error",
    "miss_rate_mean", "miss_rate_p25", "miss_rate_p75",
    "fa_rate_mean", "fa_rate_p25", "fa_rate_p75",
    "p_no_miss", "p_no_fa",
    "rank_ok_rate", "acyclic_rate", "delta0_feasible_rate",
    "cert_gale_failed_mean", "cert_gale_oper_mean",
    "cert_hyper_failed_mean", "cert_hyper_oper_mean",
    "cert_failcover_failed_mean", "cert_failcover_oper_mean",
]

HISTOGRAM_FIELDS = ["schema_version", "vh", "nf", "method", "kind", "count", "n_cases"]


@dataclass
class ExperimentConfig:
    case_path: str
    vh_sizes: tuple[int, ...] = (40,)
    failure_counts: tuple[int, ...] = (1, 2, 3)
    areas: int = 10
    failsets: int = 30
    eta: float = 0.5
    seed: int = 1
    pmu: bool = True
    methods: tuple[str, ...] = METHODS
    certify: bool = False
    out_dir: str = "gridfault-out"
    full_protocol: bool = False
    max_imbalance: float = 1e-6
    workers: int = 1

    def __post_init__(self):
        self.vh_sizes = tuple(int(v) for v in self.vh_sizes)
        self.failure_counts = tuple(int(v) for v in self.failure_counts)
        self.methods = tuple(self.methods)
        if self.full_protocol:
            self.areas = FULL_PROTOCOL_AREAS
            self.failsets = FULL_PROTOCOL_FAILSETS
        if not self.vh_sizes or min(self.vh_sizes) < 1:
            raise ValueError("vh_sizes must be positive")
        if not self.failure_counts or min(self.failure_counts) < 1:
            raise ValueError("failure_counts must be positive")
        if self.areas < 1 or self.failsets < 1:
            raise ValueError("areas and failsets must be positive")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass
class ExperimentResult:
    raw_rows: list[dict]
    summary_rows: list[dict]
    histogram_rows: list[dict]
    csv_paths: dict[str, str] = field(default_factory=dict)
    timing_rows: list[dict] = field(default_factory=list)


def load_case(path: str, max_imbalance: float = 1e-6) -> Grid:
    text = Path(path).read_text()
    return to_grid(parse_matpower(text), max_imbalance=max_imbalance)


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "%.10g" % v
    return str(v)


def _rows_to_csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt_cell(r.get(k)) for k in fields])
    return buf.getvalue()


def _parse_cell(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_csv(text: str) -> list[dict]:
    rdr = csv.reader(io.StringIO(text))
    header = next(rdr)
    return [{k: _parse_cell(v) for k, v in zip(header, row)} for row in rdr]


def _cert_fractions(certs, failed: frozenset[int], e_h) -> dict[str, float | None]:
    groups = {
        "cert_gale": MECH_GALE,
        "cert_hyper": (MECH_NO_MISS, MECH_NO_FA),
        "cert_failcover": MECH_FAILCOVER,
    }
    out: dict[str, float | None] = {}
    failed_links = [e for e in e_h if e in failed]
    oper_links = [e for e in e_h if e not in failed]
    for prefix, mechs in groups.items():
        mechs = (mechs,) if isinstance(mechs, str) else mechs
        ok = {c.link for c in certs if c.mechanism in mechs and c.certified}
        out[prefix + "_failed"] = (
            sum(1 for e in failed_links if e in ok) / len(failed_links) if failed_links else None
        )
        out[prefix + "_oper"] = (
            sum(1 for e in oper_links if e in ok) / len(oper_links) if oper_links else None
        )
    return out


def _evaluate(f_hat: frozenset[int], f: frozenset[int], e_h) -> dict:
    n_miss = len(f - f_hat)
    n_fa = len(f_hat - f)
    n_oper = len(e_h) - len(f)
    return {
        "n_miss": n_miss,
        "n_fa": n_fa,
        "miss_rate": n_miss / len(f) if f else 0.0,
        "fa_rate": n_fa / n_oper if n_oper else 0.0,
    }


def _run_area_block(args) -> tuple[list[dict], dict[tuple, list[float]]]:
    """All scenarios for one sampled area: one task id seeds the area draw,
    the following ids seed the failure draws, so blocks are independent and
    the seed layout matches the sequential enumeration."""
    grid, cfg, vh_size, area_idx, base_task = args
    raw: list[dict] = []
    timings: dict[tuple, list[float]] = {}
    rng_area = np.random.Generator(np.random.PCG64(cfg.seed ^ base_task))
    v_h = sample_attack_area(grid, vh_size, rng_area)
    e_h = induced_links(grid, v_h)
    offset = 1
    for nf in cfg.failure_counts:
        for failset_idx in range(cfg.failsets):
            seed_f = cfg.seed ^ (base_task + offset)
            offset += 1
            base = {
                "schema_version": SCHEMA_VERSION,
                "scenario_id": f"vh{vh_size}-a{area_idx}-n{nf}-f{failset_idx}",
                "vh": vh_size, "nf": nf, "area": area_idx,
                "failset": failset_idx, "seed": seed_f,
                "method": "-",
            }
            try:
                rng_f = np.random.Generator(np.random.PCG64(seed_f))
                f = sample_failures(e_h, nf, rng_f)
                scenario = apply_attack(grid, v_h, f, seed=seed_f)
            except GridFaultError as exc:
                raw.append({**base, "status": f"error:{type(exc).__name__}"})
                continue

            base.update({
                "degenerate": scenario.degenerate,
                "n_f": len(f), "n_eh": len(e_h),
                "n_islands": len(scenario.post.islands),
            })
            if scenario.degenerate:
                raw.append({**base, "status": "degenerate"})
                continue

            obs = make_observation(scenario, pmu_mode=cfg.pmu)
            t0 = time.perf_counter()
            base["rank_ok"] = rank_condition(obs)
            timings.setdefault((vh_size, nf, "rank"), []).append(time.perf_counter() - t0)
            base["acyclic"] = _is_acyclic(obs)

            if cfg.pmu:
                theta_h = scenario.post.theta[list(v_h)]
            else:
                pr = recover_phase_angles(obs)
                theta_h = pr.theta_h if pr.rank_ok else None
            if theta_h is None:
                raw.append({**base, "status": "theta-unavailable"})
                continue

            base["delta0_feasible"] = delta_zero_feasible(obs, theta_h)
            if cfg.certify:
                t0 = time.perf_counter()
                certs = certify_links(
                    scenario, cfg.eta,
                    mechanisms=("gale", "hypernode", "failcover"),
                )
                timings.setdefault((vh_size, nf, "certify"), []).append(
                    time.perf_counter() - t0
                )
                base.update(_cert_fractions(certs, f, e_h))

            theta_full = obs.full_theta_post(theta_h)
            for method in cfg.methods:
                row = {**base, "status": "ok", "method": method}
                t0 = time.perf_counter()
                try:
                    if method == "algorithm1":
                        res = algorithm1(obs, theta_h, cfg.eta)
                    elif method == "known-delta":
                        res = localize_known_delta(obs, scenario.delta_h(), theta_full)
                    else:
                        res = benchmark_bpdn(obs, theta_h)
                except GridFaultError as exc:
                    row["status"] = f"error:{type(exc).__name__}"
                    raw.append(row)
                    continue
                timings.setdefault((vh_size, nf, method), []).append(
                    time.perf_counter() - t0
                )
                row.update(_evaluate(res.f_hat, f, e_h))
                row["objective"] = res.objective
                raw.append(row)
    return raw, timings


def run_experiment(cfg: ExperimentConfig, grid: Grid | None = None) -> ExperimentResult:
    """Full pipeline per scenario: generate, observe, recover angles (or take
    PMU readings), localize with every configured method, optionally certify;
    per-scenario failures are logged, never fatal. Deterministic under a fixed
    seed, and worker-pool parallelism never changes output bytes (blocks carry
    their own seed ranges and are concatenated in a fixed order); wall-clock
    timings go to a separate non-deterministic file."""
    t_start = time.perf_counter()
    if grid is None:
        grid = load_case(cfg.case_path, cfg.max_imbalance)

    block_size = 1 + len(cfg.failure_counts) * cfg.failsets
    blocks = []
    for vh_idx, vh_size in enumerate(cfg.vh_sizes):
        for area_idx in range(cfg.areas):
            base_task = (vh_idx * cfg.areas + area_idx) * block_size
            blocks.append((grid, cfg, vh_size, area_idx, base_task))

    raw: list[dict] = []
    timings: dict[tuple, list[float]] = {}
    if cfg.workers > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(cfg.workers) as pool:
            results = pool.map(_run_area_block, blocks, chunksize=1)
    else:
        results = map(_run_area_block, blocks)
    for block_raw, block_timings in results:
        raw.extend(block_raw)
        for k, v in block_timings.items():
            timings.setdefault(k, []).extend(v)

    # audit-trail identity: aggregate what the CSV says, not in-memory floats
    raw_csv = _rows_to_csv(raw, RAW_FIELDS)
    parsed = parse_csv(raw_csv)
    summary_rows = aggregate(parsed)
    histogram_rows = compare_methods(parsed)["histogram"]

    timing_rows = [
        {
            "vh": k[0], "nf": k[1], "stage": k[2],
            "n": len(v), "mean_s": float(np.mean(v)), "total_s": float(np.sum(v)),
        }
        for k, v in sorted(timings.items())
    ]
    timing_rows.append({
        "vh": "-", "nf": "-", "stage": "wall", "n": 1,
        "mean_s": time.perf_counter() - t_start, "total_s": time.perf_counter() - t_start,
    })

    result = ExperimentResult(
        raw_rows=parsed, summary_rows=summary_rows,
        histogram_rows=histogram_rows, timing_rows=timing_rows,
    )
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "raw": out / "raw.csv",
            "summary": out / "summary.csv",
            "histogram": out / "histogram.csv",
            "timings": out / "timings.csv",
            "meta": out / "meta.json",
        }
        paths["raw"].write_text(raw_csv)
        paths["summary"].write_text(_rows_to_csv(summary_rows, SUMMARY_FIELDS))
        paths["histogram"].write_text(_rows_to_csv(histogram_rows, HISTOGRAM_FIELDS))
        paths["timings"].write_text(
            _rows_to_csv(timing_rows, ["vh", "nf", "stage", "n", "mean_s", "total_s"])
        )
        paths["meta"].write_text(json.dumps({
            "schema_version": SCHEMA_VERSION, "config": asdict(cfg),
        }, indent=2, sort_keys=True) + "\n")
        result.csv_paths = {k: str(v) for k, v in paths.items()}
    return result


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(raw_rows: list[dict]) -> list[dict]:
    """Summary rows (one per vh/nf/method) from raw per-scenario rows.

    Degenerate and errored scenarios are excluded from every rate denominator
    and reported as counts; quartiles follow the evaluation convention
    (25th/75th percentiles of per-scenario rates).
    """
    settings = sorted({(r["vh"], r["nf"]) for r in raw_rows if r.get("vh") is not None})
    methods = sorted({r["method"] for r in raw_rows if r.get("method") not in (None, "-")})
    out = []
    for vh, nf in settings:
        cell = [r for r in raw_rows if r.get("vh") == vh and r.get("nf") == nf]
        n_degenerate = sum(1 for r in cell if r.get("status") == "degenerate")
        n_theta = sum(1 for r in cell if r.get("status") == "theta-unavailable")
        n_error = sum(
            1 for r in cell if isinstance(r.get("status"), str) and r["status"].startswith("error")
        )
        scen_rows = [r for r in cell if r.get("status") == "ok"]
        seen = set()
        scen_unique = []
        for r in scen_rows:
            if r["scenario_id"] not in seen:
                seen.add(r["scenario_id"])
                scen_unique.append(r)
        for method in methods:
            rows = [r for r in scen_rows if r["method"] == method]
            miss = [r["miss_rate"] for r in rows if r.get("miss_rate") is not None]
            fa = [r["fa_rate"] for r in rows if r.get("fa_rate") is not None]
            row = {
                "schema_version": SCHEMA_VERSION, "vh": vh, "nf": nf, "method": method,
                "n_scenarios": len(rows), "n_degenerate": n_degenerate,
                "n_theta_unavailable": n_theta, "n_error": n_error,
                "miss_rate_mean": _mean(miss),
                "miss_rate_p25": float(np.percentile(miss, 25)) if miss else None,
                "miss_rate_p75": float(np.percentile(miss, 75)) if miss else None,
                "fa_rate_mean": _mean(fa),
                "fa_rate_p25": float(np.percentile(fa, 25)) if fa else None,
                "fa_rate_p75": float(np.percentile(fa, 75)) if fa else None,
                "p_no_miss": _mean([1.0 if r["n_miss"] == 0 else 0.0 for r in rows]),
                "p_no_fa": _mean([1.0 if r["n_fa"] == 0 else 0.0 for r in rows]),
                "rank_ok_rate": _mean([float(r["rank_ok"]) for r in scen_unique
                                       if r.get("rank_ok") is not None]),
                "acyclic_rate": _mean([float(r["acyclic"]) for r in scen_unique
                                       if r.get("acyclic") is not None]),
                "delta0_feasible_rate": _mean([float(r["delta0_feasible"]) for r in scen_unique
                                               if r.get("delta0_feasible") is not None]),
            }
            for key in ("cert_gale_failed", "cert_gale_oper", "cert_hyper_failed",
                        "cert_hyper_oper", "cert_failcover_failed", "cert_failcover_oper"):
                row[key + "_mean"] = _mean([r.get(key) for r in scen_unique])
            out.append(row)
    return out


def compare_methods(raw_rows: list[dict]) -> dict:
    """Pivot raw rows into the method-comparison quantities, including the
    per-case histogram of miss / false-alarm counts."""
    ok = [r for r in raw_rows if r.get("status") == "ok" and r.get("method") not in (None, "-")]
    hist: dict[tuple, int] = {}
    for r in ok:
        for kind, key in (("miss", "n_miss"), ("fa", "n_fa")):
            k = (r["vh"], r["nf"], r["method"], kind, r[key])
            hist[k] = hist.get(k, 0) + 1
    histogram = [
        {
            "schema_version": SCHEMA_VERSION,
            "vh": vh, "nf": nf, "method": method, "kind": kind,
            "count": count, "n_cases": n,
        }
        for (vh, nf, method, kind, count), n in sorted(hist.items())
    ]
    table: dict[tuple, dict] = {}
    for r in ok:
        key = (r["vh"], r["nf"], r["method"])
        entry = table.setdefault(key, {"n": 0, "miss": 0.0, "fa": 0.0,
                                       "no_miss": 0, "no_fa": 0})
        entry["n"] += 1
        entry["miss"] += r["miss_rate"]
        entry["fa"] += r["fa_rate"]
        entry["no_miss"] += 1 if r["n_miss"] == 0 else 0
        entry["no_fa"] += 1 if r["n_fa"] == 0 else 0
    summary = {
        key: {
            "n": e["n"],
            "miss_rate": e["miss"] / e["n"],
            "fa_rate": e["fa"] / e["n"],
            "p_no_miss": e["no_miss"] / e["n"],
            "p_no_fa": e["no_fa"] / e["n"],
        }
        for key, e in sorted(table.items())
    }
    return {"table": summary, "histogram": histogram}
