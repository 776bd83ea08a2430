"""Command-line client for the service. Talks to a running server when
--server is given; otherwise drives the app in-process over an ASGI
transport, so no server is needed for one-shot use.

Exit codes: 0 success, 2 configuration error, 3 case error.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

EXIT_CONFIG = 2
EXIT_CASE = 3


def _request(server: str | None, method: str, path: str, payload: dict | None):
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.request(method, path, json=payload)

    import asyncio

    from .service import create_app

    async def go():
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://gridfault.local", timeout=None
        ) as client:
            return await client.request(method, path, json=payload)

    return asyncio.run(go())


def _call(ctx, method: str, path: str, payload: dict | None = None) -> dict:
    try:
        resp = _request(ctx.obj["server"], method, path, payload)
    except httpx.HTTPError as exc:
        click.echo(f"transport error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
        detail = body.get("detail", body)
        if isinstance(detail, dict):
            body = detail
        kind = body.get("error_kind", "config")
        message = body.get("detail", str(body))
    except Exception:
        kind, message = "config", resp.text
    click.echo(f"error ({kind}): {message}", err=True)
    sys.exit(EXIT_CASE if kind == "case" else EXIT_CONFIG)


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Base URL of a running gridfault service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Cyber-physical attack simulation and failed-link localization."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--case", "case_path", required=True, type=click.Path(), help="MATPOWER case file.")
@click.option("--vh", type=int, required=True, help="Attacked-area size |V_H|.")
@click.option("--nf", type=int, required=True, help="Number of failed links |F|.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--eta", type=float, default=0.5, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the scenario file here (default: stdout).")
@click.pass_context
def simulate(ctx, case_path, vh, nf, seed, eta, out_path):
    """Generate one attack scenario and emit its scenario file."""
    if not Path(case_path).exists():
        click.echo(f"error (case): no such case file: {case_path}", err=True)
        sys.exit(EXIT_CASE)
    body = _call(ctx, "POST", "/simulate", {
        "case": {"path": str(Path(case_path).resolve())},
        "vh_size": vh, "n_failures": nf, "seed": seed, "eta": eta,
    })
    if out_path:
        Path(out_path).write_text(body["scenario_text"])
        click.echo(f"wrote {out_path}: |V_H|={len(body['v_h'])} failed={body['failed']} "
                   f"islands={body['n_islands']}")
    else:
        click.echo(body["scenario_text"], nl=False)


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["algorithm1", "known-delta", "bpdn"]),
              default="algorithm1", show_default=True)
@click.option("--eta", type=float, default=0.5, show_default=True)
@click.option("--pmu/--no-pmu", default=True, show_default=True,
              help="Use in-area PMU angles; otherwise recover angles from outside.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the JSON result here as well.")
@click.pass_context
def localize(ctx, scenario_path, method, eta, pmu, out_path):
    """Localize failed links for one scenario file."""
    body = _call(ctx, "POST", "/localize", {
        "scenario_text": Path(scenario_path).read_text(),
        "method": method, "eta": eta, "pmu": pmu,
    })
    if out_path:
        Path(out_path).write_text(json.dumps(body, indent=2) + "\n")
    ev = body["evaluation"]
    click.echo(f"method={method} f_hat={body['f_hat']} true={ev['true_failed']} "
               f"misses={ev['misses']} false_alarms={ev['false_alarms']}")


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--eta", type=float, default=0.5, show_default=True)
@click.option("--mechanisms", default="gale,hypernode,failcover,corollary", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the audit text here as well.")
@click.pass_context
def certify(ctx, scenario_path, eta, mechanisms, out_path):
    """Per-link correctness certificates for one scenario file."""
    body = _call(ctx, "POST", "/certify", {
        "scenario_text": Path(scenario_path).read_text(),
        "eta": eta, "mechanisms": [m.strip() for m in mechanisms.split(",") if m.strip()],
    })
    if out_path:
        Path(out_path).write_text(body["audit"])
    n_cert = sum(1 for c in body["certificates"] if c["verdict"] == "Certified")
    click.echo(f"{n_cert}/{len(body['certificates'])} certificates issued")
    click.echo(body["audit"], nl=False)


@main.command()
@click.option("--case", "case_path", required=True, type=click.Path())
@click.option("--vh", type=int, multiple=True, default=(40,), show_default=True)
@click.option("--nf", type=int, multiple=True, default=(1, 2, 3), show_default=True)
@click.option("--areas", type=int, default=10, show_default=True)
@click.option("--failsets", type=int, default=30, show_default=True)
@click.option("--eta", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--pmu/--no-pmu", default=True, show_default=True)
@click.option("--certify", "do_certify", is_flag=True, default=False,
              help="Also run the certificate mechanisms per scenario.")
@click.option("--out", "out_dir", type=click.Path(), default="gridfault-out", show_default=True)
@click.option("--full-protocol", is_flag=True, default=False,
              help="70 areas x 300 failure sets per setting instead of desk scale.")
@click.option("--max-imbalance", type=float, default=1e-6, show_default=True,
              help="Raw-case imbalance absorbed at the reference bus.")
@click.option("--workers", type=int, default=1, show_default=True,
              help="Worker processes for the sweep (output bytes are identical).")
@click.pass_context
def experiment(ctx, case_path, vh, nf, areas, failsets, eta, seed, pmu, do_certify,
               out_dir, full_protocol, max_imbalance, workers):
    """Scenario sweep: metrics per (|V_H|, |F|, method) to CSV files."""
    if not Path(case_path).exists():
        click.echo(f"error (case): no such case file: {case_path}", err=True)
        sys.exit(EXIT_CASE)
    body = _call(ctx, "POST", "/experiment", {
        "case_path": str(Path(case_path).resolve()),
        "vh": list(vh), "nf": list(nf), "areas": areas, "failsets": failsets,
        "eta": eta, "seed": seed, "pmu": pmu, "certify": do_certify,
        "out_dir": str(Path(out_dir).resolve()), "full_protocol": full_protocol,
        "max_imbalance": max_imbalance, "workers": workers,
    })
    click.echo(f"wrote {len(body['summary_rows'])} summary rows")
    for name, path in sorted(body["csv_paths"].items()):
        click.echo(f"  {name}: {path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8712, show_default=True)
def serve(host, port):
    """Run the HTTP service (the other subcommands can then use --server)."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
