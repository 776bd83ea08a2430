"""HTTP service wrapping the toolkit: load cases once, then simulate,
localize, certify, and run experiment sweeps against them."""
from __future__ import annotations

from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .attack import generate_scenario, make_observation
from .caseio import load_scenario, parse_matpower, serialize_scenario, to_grid
from .certify import certificate_dump, certify_links
from .errors import (
    DisconnectedCase,
    GridFaultError,
    MissingTable,
    NonpositiveReactance,
    ParseError,
    SchemaError,
    UnbalancedCase,
    VersionMismatch,
)
from .experiment import ExperimentConfig, run_experiment
from .grid import Grid
from .recovery import algorithm1, benchmark_bpdn, localize_known_delta, recover_phase_angles

_CASE_ERRORS = (
    ParseError, MissingTable, DisconnectedCase, NonpositiveReactance,
    UnbalancedCase, SchemaError, VersionMismatch,
)


class CaseSource(BaseModel):
    """Where to get a case from: a registered name, a server-side path, or
    inline case text."""

    name: str | None = None
    path: str | None = None
    text: str | None = None


class CaseInfo(BaseModel):
    name: str
    nodes: int
    links: int
    reference: int


class SimulateRequest(BaseModel):
    case: CaseSource
    vh_size: int = Field(gt=0)
    n_failures: int = Field(gt=0)
    seed: int = 0
    eta: float = Field(default=0.5, gt=0.0, lt=1.0)


class SimulateResponse(BaseModel):
    scenario_text: str
    v_h: list[int]
    failed: list[int]
    n_islands: int
    degenerate: bool


class LocalizeRequest(BaseModel):
    scenario_text: str
    method: Literal["algorithm1", "known-delta", "bpdn"] = "algorithm1"
    eta: float = Field(default=0.5, gt=0.0, lt=1.0)
    pmu: bool = True


class Evaluation(BaseModel):
    true_failed: list[int]
    misses: list[int]
    false_alarms: list[int]


class LocalizeResponse(BaseModel):
    links: list[int]
    x: list[float]
    f_hat: list[int]
    status: str
    objective: float | None
    delta_hat: list[float] | None = None
    evaluation: Evaluation


class CertifyRequest(BaseModel):
    scenario_text: str
    eta: float = Field(default=0.5, gt=0.0, lt=1.0)
    mechanisms: list[str] = ["gale", "hypernode", "failcover", "corollary"]


class CertificateModel(BaseModel):
    link: int
    hypothesis: str
    mechanism: str
    verdict: str


class CertifyResponse(BaseModel):
    certificates: list[CertificateModel]
    audit: str


class ExperimentRequest(BaseModel):
    case_path: str
    vh: list[int] = [40]
    nf: list[int] = [1, 2, 3]
    areas: int = Field(default=10, gt=0)
    failsets: int = Field(default=30, gt=0)
    eta: float = Field(default=0.5, gt=0.0, lt=1.0)
    seed: int = 1
    pmu: bool = True
    methods: list[str] = ["algorithm1", "known-delta", "bpdn"]
    certify: bool = False
    out_dir: str = "gridfault-out"
    full_protocol: bool = False
    max_imbalance: float = 1e-6
    workers: int = Field(default=1, ge=1)


class ExperimentResponse(BaseModel):
    summary_rows: list[dict]
    csv_paths: dict[str, str]
    n_raw_rows: int


def create_app() -> FastAPI:
    app = FastAPI(title="gridfault", version=__version__)
    cases: dict[str, Grid] = {}

    @app.exception_handler(GridFaultError)
    async def _grid_error(request: Request, exc: GridFaultError):
        kind = "case" if isinstance(exc, _CASE_ERRORS) else "config"
        return JSONResponse(
            status_code=400,
            content={"error_kind": kind, "detail": f"{type(exc).__name__}: {exc}"},
        )

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(
            status_code=400,
            content={"error_kind": "config", "detail": str(exc)},
        )

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request: Request, exc: FileNotFoundError):
        return JSONResponse(
            status_code=400,
            content={"error_kind": "case", "detail": f"no such case file: {exc.filename}"},
        )

    def resolve_case(src: CaseSource) -> Grid:
        if src.name and src.name in cases:
            return cases[src.name]
        if src.text is not None:
            grid = to_grid(parse_matpower(src.text))
        elif src.path is not None:
            grid = to_grid(parse_matpower(Path(src.path).read_text()))
        else:
            raise HTTPException(
                status_code=400,
                detail={"error_kind": "config", "detail": f"unknown case {src.name!r}"},
            )
        if src.name:
            cases[src.name] = grid
        return grid

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/cases", response_model=CaseInfo)
    def register_case(src: CaseSource):
        name = src.name or (Path(src.path).stem if src.path else "case")
        grid = resolve_case(CaseSource(path=src.path, text=src.text))
        cases[name] = grid
        return CaseInfo(name=name, nodes=grid.n_nodes, links=grid.n_links,
                        reference=grid.reference)

    @app.get("/cases")
    def list_cases():
        return [
            CaseInfo(name=k, nodes=g.n_nodes, links=g.n_links, reference=g.reference)
            for k, g in sorted(cases.items())
        ]

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest):
        grid = resolve_case(req.case)
        scenario = generate_scenario(grid, req.vh_size, req.n_failures, req.seed)
        return SimulateResponse(
            scenario_text=serialize_scenario(scenario, eta=req.eta),
            v_h=list(scenario.v_h),
            failed=sorted(scenario.f),
            n_islands=len(scenario.post.islands),
            degenerate=scenario.degenerate,
        )

    @app.post("/localize", response_model=LocalizeResponse)
    def localize(req: LocalizeRequest):
        doc = load_scenario(req.scenario_text)
        s = doc.scenario
        obs = make_observation(s, pmu_mode=req.pmu)
        pr = recover_phase_angles(obs)
        if not pr.rank_ok:
            raise HTTPException(
                status_code=409,
                detail={
                    "error_kind": "config",
                    "detail": "post-attack angles unavailable: rank condition fails "
                              "and PMU mode is off",
                },
            )
        theta_full = obs.full_theta_post(pr.theta_h)
        if req.method == "algorithm1":
            res = algorithm1(obs, pr.theta_h, req.eta)
        elif req.method == "known-delta":
            res = localize_known_delta(obs, s.delta_h(), theta_full)
        else:
            res = benchmark_bpdn(obs, pr.theta_h)
        f_hat = sorted(res.f_hat)
        return LocalizeResponse(
            links=list(res.links),
            x=[float(v) for v in res.x],
            f_hat=f_hat,
            status=res.status,
            objective=res.objective,
            delta_hat=None if res.delta_hat is None else [float(v) for v in res.delta_hat],
            evaluation=Evaluation(
                true_failed=sorted(s.f),
                misses=sorted(s.f - res.f_hat),
                false_alarms=sorted(res.f_hat - s.f),
            ),
        )

    @app.post("/certify", response_model=CertifyResponse)
    def certify(req: CertifyRequest):
        doc = load_scenario(req.scenario_text)
        certs = certify_links(doc.scenario, req.eta, mechanisms=req.mechanisms)
        return CertifyResponse(
            certificates=[
                CertificateModel(link=c.link, hypothesis=c.hypothesis,
                                 mechanism=c.mechanism, verdict=c.verdict)
                for c in certs
            ],
            audit=certificate_dump(certs),
        )

    @app.post("/experiment", response_model=ExperimentResponse)
    def experiment(req: ExperimentRequest):
        cfg = ExperimentConfig(
            case_path=req.case_path,
            vh_sizes=tuple(req.vh),
            failure_counts=tuple(req.nf),
            areas=req.areas,
            failsets=req.failsets,
            eta=req.eta,
            seed=req.seed,
            pmu=req.pmu,
            methods=tuple(req.methods),
            certify=req.certify,
            out_dir=req.out_dir,
            full_protocol=req.full_protocol,
            max_imbalance=req.max_imbalance,
            workers=req.workers,
        )
        result = run_experiment(cfg)
        return ExperimentResponse(
            summary_rows=result.summary_rows,
            csv_paths=result.csv_paths,
            n_raw_rows=len(result.raw_rows),
        )

    return app


app = create_app()
