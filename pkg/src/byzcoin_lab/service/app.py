"""FastAPI service exposing the analysis calculators and scenario runner.

The CLI drives this app in-process by default; `byzcoin-lab serve` makes
the same API available to remote clients.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__, analysis
from ..scenario import ScenarioConfig, run_scenario, sweep, sweep_latency_csv
from ..simnet import ConfigError
from . import models

app = FastAPI(
    title="byzcoin-lab",
    description="Consensus laboratory: security calculators and deterministic scenario runs",
    version=__version__,
)


@app.get("/healthz", response_model=models.HealthResponse)
def healthz() -> models.HealthResponse:
    return models.HealthResponse(status="ok", version=__version__)


@app.post("/analyze/doublespend", response_model=models.DoubleSpendResponse)
def doublespend(req: models.DoubleSpendRequest) -> models.DoubleSpendResponse:
    result = analysis.double_spend_probability(
        analysis.AttackerParams(hash_share=req.attacker_share, confirmations=req.confirmations)
    )
    return models.DoubleSpendResponse(
        attacker_share=req.attacker_share,
        confirmations=req.confirmations,
        probability=result.probability,
        attacker_dominant=result.attacker_dominant,
    )


@app.post("/analyze/membership", response_model=models.MembershipResponse)
def membership(req: models.MembershipRequest) -> models.MembershipResponse:
    params = analysis.MembershipParams(window=req.window, byzantine_prob=req.byzantine_prob)
    return models.MembershipResponse(
        window=req.window,
        byzantine_prob=req.byzantine_prob,
        tolerated=params.tolerated,
        probability=analysis.membership_safety(params),
    )


@app.get("/analyze/membership/table", response_model=models.MembershipTableResponse)
def membership_table() -> models.MembershipTableResponse:
    table = analysis.membership_table()
    cells: dict[str, list[float]] = {}
    formatted: dict[str, list[str]] = {}
    for p in analysis.TABLE_PROBS:
        row = [table[(w, p)] for w in analysis.TABLE_WINDOWS]
        cells[f"{p:.2f}"] = row
        formatted[f"{p:.2f}"] = [analysis.format_table_cell(v) for v in row]
    return models.MembershipTableResponse(
        windows=list(analysis.TABLE_WINDOWS),
        probs=list(analysis.TABLE_PROBS),
        cells=cells,
        formatted=formatted,
    )


@app.post("/analyze/selfish", response_model=models.SelfishResponse)
def selfish(req: models.SelfishRequest) -> models.SelfishResponse:
    try:
        result = analysis.selfish_mining_gain(
            analysis.SelfishParams(power=req.power, extra_bits=req.extra_bits)
        )
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return models.SelfishResponse(
        power=req.power, extra_bits=req.extra_bits,
        gain=result.gain, profitable=result.profitable,
    )


@app.post("/analyze/required-wait", response_model=models.RequiredWaitResponse)
def required_wait(req: models.RequiredWaitRequest) -> models.RequiredWaitResponse:
    try:
        z = analysis.required_wait(req.attacker_share, req.target)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return models.RequiredWaitResponse(
        attacker_share=req.attacker_share, target=req.target, confirmations=z
    )


@app.post("/scenarios/run", response_model=models.RunScenarioResponse)
def scenarios_run(req: models.RunScenarioRequest) -> models.RunScenarioResponse:
    data = dict(req.config)
    if req.seed is not None:
        data["seed"] = req.seed
    try:
        config = ScenarioConfig.from_dict(data)
        result = run_scenario(config)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return models.RunScenarioResponse(
        report=result.report.to_dict(),
        trace_csv=result.trace.to_csv(),
        blocks_csv=result.report.block_metrics_csv(),
        config_yaml=config.to_yaml(),
    )


@app.post("/scenarios/sweep", response_model=models.SweepResponse)
def scenarios_sweep(req: models.SweepRequest) -> models.SweepResponse:
    data = dict(req.config)
    if req.seed is not None:
        data["seed"] = req.seed
    try:
        config = ScenarioConfig.from_dict(data)
        points = sweep(config, req.axis, req.values)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return models.SweepResponse(
        axis=req.axis,
        points=[
            models.SweepPointModel(
                value=p.value,
                report=p.report.to_dict() if p.report else None,
                error=p.error,
            )
            for p in points
        ],
        latency_csv=sweep_latency_csv(req.axis, points),
    )
