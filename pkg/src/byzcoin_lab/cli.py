"""Command-line front door.

Every command is a thin client of the service API: without --server the
requests run against the app in-process, with --server they go to a
remote `byzcoin-lab serve` instance.  Exit codes: 0 clean, 1 when a
scenario's safety audit fails, 2 for configuration or usage errors.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import httpx

from .service.app import app as service_app


class InProcessTransport(httpx.BaseTransport):
    """Serve requests straight from the ASGI app, no sockets involved."""

    def __init__(self, app) -> None:
        self._asgi = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        import asyncio

        request.read()

        async def _dispatch() -> tuple[int, list, bytes]:
            response = await self._asgi.handle_async_request(request)
            body = await response.aread()
            await response.aclose()
            return response.status_code, list(response.headers.raw), body

        status, headers, body = asyncio.run(_dispatch())
        return httpx.Response(status_code=status, headers=headers, content=body)


class ConfigCliError(click.ClickException):
    exit_code = 2


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    return httpx.Client(transport=InProcessTransport(service_app),
                        base_url="http://byzcoin-lab", timeout=None)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code == 400 or response.status_code == 422:
        detail = response.json().get("detail", response.text)
        raise ConfigCliError(f"config error: {detail}")
    response.raise_for_status()
    return response.json()


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; default runs the service in-process.")
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Consensus laboratory: scenario runs, sweeps, and security calculators."""
    level = os.environ.get("BYZCOIN_LAB_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    ctx.obj = {"server": server}


def _load_config(path: str) -> dict:
    import yaml

    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigCliError(f"config error: no such file {path!r}")
    except yaml.YAMLError as exc:
        raise ConfigCliError(f"config error: {exc}")
    if not isinstance(data, dict):
        raise ConfigCliError("config error: top level must be a mapping")
    return data


def _write_outputs(out_dir: str | None, name: str, payload: dict) -> None:
    if out_dir is None:
        return
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}-report.json").write_text(
        json.dumps(payload["report"], indent=2, sort_keys=True) + "\n"
    )
    (directory / f"{name}-trace.csv").write_text(payload["trace_csv"])
    (directory / f"{name}-blocks.csv").write_text(payload["blocks_csv"])
    (directory / f"{name}-config.yaml").write_text(payload["config_yaml"])


def _print_report_summary(report: dict) -> None:
    click.echo(f"scenario          : {report['scenario']} (seed {report['seed']})")
    click.echo(f"committed blocks  : {report['committed_blocks']} of {report['proposed_blocks']} proposed")
    latency = report["mean_commit_latency_s"]
    click.echo(f"mean commit delay : {'n/a' if latency is None else f'{latency:.3f} s'}")
    click.echo(f"throughput        : {report['throughput_tps']:.1f} tx/s")
    click.echo(f"view changes      : {report['view_changes']}; tree fallbacks: {report['tree_fallbacks']}")
    click.echo(f"stalled           : {report['stalled']}")
    click.echo(f"safety audit      : {'PASS' if report['safety_ok'] else 'FAIL'}")
    for violation in report["safety_violations"]:
        click.echo(f"  violation: {violation}")


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out-dir", type=click.Path(), default=None, help="Write report and trace files here.")
@click.pass_context
def run(ctx: click.Context, config_path: str, seed: int | None, out_dir: str | None) -> None:
    """Run one scenario from a YAML config file."""
    config = _load_config(config_path)
    with make_client(ctx.obj["server"]) as client:
        payload = _post(client, "/scenarios/run", {"config": config, "seed": seed})
    _write_outputs(out_dir, payload["report"]["scenario"], payload)
    _print_report_summary(payload["report"])
    if not payload["report"]["safety_ok"]:
        sys.exit(1)


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--axis", type=click.Choice(["hosts", "blocksize"]), required=True)
@click.option("--values", required=True, help="Comma-separated ascending values.")
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(), default=None)
@click.pass_context
def sweep(ctx: click.Context, config_path: str, axis: str, values: str,
          seed: int | None, out_dir: str | None) -> None:
    """Run the scenario once per axis value and emit a latency series."""
    config = _load_config(config_path)
    try:
        parsed_values = [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ConfigCliError("config error: --values must be integers")
    with make_client(ctx.obj["server"]) as client:
        payload = _post(client, "/scenarios/sweep", {
            "config": config, "axis": axis, "values": parsed_values, "seed": seed,
        })
    if out_dir is not None:
        directory = Path(out_dir)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"sweep-{axis}.csv").write_text(payload["latency_csv"])
        for point in payload["points"]:
            if point["report"] is not None:
                name = point["report"]["scenario"]
                (directory / f"{name}-report.json").write_text(
                    json.dumps(point["report"], indent=2, sort_keys=True) + "\n"
                )
    click.echo(payload["latency_csv"].rstrip())
    failed_audit = False
    for point in payload["points"]:
        if point["error"] is not None:
            click.echo(f"{axis}={point['value']}: FAILED ({point['error']})")
        elif not point["report"]["safety_ok"]:
            failed_audit = True
            click.echo(f"{axis}={point['value']}: SAFETY AUDIT FAILED")
    if failed_audit:
        sys.exit(1)


@main.group()
def analyze() -> None:
    """Closed-form security calculators."""


@analyze.command()
@click.option("-q", "--attacker-share", type=float, required=True,
              help="Attacker fraction of total hash power.")
@click.option("-z", "--confirmations", type=int, required=True,
              help="Blocks the merchant waits for.")
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV instead of aligned text.")
@click.pass_context
def doublespend(ctx: click.Context, attacker_share: float, confirmations: int, as_csv: bool) -> None:
    """Probability that a double spend succeeds after z confirmations."""
    with make_client(ctx.obj["server"]) as client:
        payload = _post(client, "/analyze/doublespend", {
            "attacker_share": attacker_share, "confirmations": confirmations,
        })
    if as_csv:
        click.echo("attacker_share,confirmations,probability,attacker_dominant")
        click.echo(f"{attacker_share},{confirmations},{payload['probability']:.10g},{payload['attacker_dominant']}")
    else:
        click.echo(f"P(double spend | q={attacker_share}, z={confirmations}) = {payload['probability']:.6g}")
        if payload["attacker_dominant"]:
            click.echo("attacker controls at least half the hash power: success is certain")


@analyze.command()
@click.option("-w", "--window", type=int, default=144, show_default=True,
              help="Membership window size in shares.")
@click.option("-p", "--byzantine-prob", type=float, default=0.25, show_default=True,
              help="Per-share chance of a Byzantine holder.")
@click.option("--paper-table", is_flag=True,
              help="Print the published window-security grid instead.")
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV instead of aligned text.")
@click.pass_context
def membership(ctx: click.Context, window: int, byzantine_prob: float,
               paper_table: bool, as_csv: bool) -> None:
    """Chance the window stays below its Byzantine fault threshold."""
    with make_client(ctx.obj["server"]) as client:
        if paper_table:
            response = client.get("/analyze/membership/table")
            response.raise_for_status()
            payload = response.json()
            windows = payload["windows"]
            if as_csv:
                click.echo("p," + ",".join(str(w) for w in windows))
                for p_key, row in payload["formatted"].items():
                    click.echo(f"{p_key}," + ",".join(row))
            else:
                header = "p \\ w " + "".join(f"{w:>8d}" for w in windows)
                click.echo(header)
                for p_key, row in payload["formatted"].items():
                    click.echo(f"{p_key:6s}" + "".join(f"{cell:>8s}" for cell in row))
            return
        payload = _post(client, "/analyze/membership", {
            "window": window, "byzantine_prob": byzantine_prob,
        })
    if as_csv:
        click.echo("window,byzantine_prob,tolerated,probability")
        click.echo(f"{window},{byzantine_prob},{payload['tolerated']},{payload['probability']:.10g}")
    else:
        click.echo(
            f"P(at most {payload['tolerated']} Byzantine of {window} shares at p={byzantine_prob}) "
            f"= {payload['probability']:.6g}"
        )


@analyze.command()
@click.option("-c", "--power", type=float, required=True,
              help="Withholding miner's fraction of hash power.")
@click.option("-n", "--extra-bits", type=int, required=True,
              help="Extra leading zero bits that trigger withholding.")
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV instead of aligned text.")
@click.pass_context
def selfish(ctx: click.Context, power: float, extra_bits: int, as_csv: bool) -> None:
    """Revenue fraction of a block-withholding miner."""
    with make_client(ctx.obj["server"]) as client:
        payload = _post(client, "/analyze/selfish", {"power": power, "extra_bits": extra_bits})
    if as_csv:
        click.echo("power,extra_bits,gain,profitable")
        click.echo(f"{power},{extra_bits},{payload['gain']:.10g},{payload['profitable']}")
    else:
        click.echo(f"G(c={power}, n={extra_bits}) = {payload['gain']:.4f}")
        click.echo("profitable" if payload["profitable"] else "not profitable (gain <= honest share)")


@analyze.command("wait")
@click.option("-q", "--attacker-share", type=float, required=True)
@click.option("--target", type=float, default=0.001, show_default=True,
              help="Acceptable double-spend probability.")
@click.pass_context
def wait(ctx: click.Context, attacker_share: float, target: float) -> None:
    """Smallest confirmation depth meeting a double-spend risk target."""
    with make_client(ctx.obj["server"]) as client:
        payload = _post(client, "/analyze/required-wait", {
            "attacker_share": attacker_share, "target": target,
        })
    click.echo(f"required confirmations: {payload['confirmations']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Serve the lab API over HTTP."""
    import uvicorn

    uvicorn.run(service_app, host=host, port=port)


if __name__ == "__main__":
    main()
