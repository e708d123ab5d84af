"""Request and response schemas for the lab service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class DoubleSpendRequest(BaseModel):
    attacker_share: float = Field(ge=0.0, lt=1.0, description="attacker fraction of total hash power")
    confirmations: int = Field(ge=0, description="blocks the merchant waits for")


class DoubleSpendResponse(BaseModel):
    attacker_share: float
    confirmations: int
    probability: float
    attacker_dominant: bool


class MembershipRequest(BaseModel):
    window: int = Field(ge=1, description="membership window size in shares")
    byzantine_prob: float = Field(ge=0.0, le=1.0, description="per-share chance of a Byzantine holder")


class MembershipResponse(BaseModel):
    window: int
    byzantine_prob: float
    tolerated: int
    probability: float


class MembershipTableResponse(BaseModel):
    windows: list[int]
    probs: list[float]
    cells: dict[str, list[float]]
    formatted: dict[str, list[str]]


class SelfishRequest(BaseModel):
    power: float = Field(gt=0.0, lt=1.0, description="withholding miner's fraction of hash power")
    extra_bits: int = Field(ge=0, description="extra leading zero bits that trigger withholding")


class SelfishResponse(BaseModel):
    power: float
    extra_bits: int
    gain: float
    profitable: bool


class RequiredWaitRequest(BaseModel):
    attacker_share: float = Field(ge=0.0, lt=1.0)
    target: float = Field(gt=0.0, description="acceptable double-spend probability")


class RequiredWaitResponse(BaseModel):
    attacker_share: float
    target: float
    confirmations: int


class RunScenarioRequest(BaseModel):
    config: dict
    seed: int | None = None


class RunScenarioResponse(BaseModel):
    report: dict
    trace_csv: str
    blocks_csv: str
    config_yaml: str


class SweepRequest(BaseModel):
    config: dict
    axis: str
    values: list[int]
    seed: int | None = None


class SweepPointModel(BaseModel):
    value: int
    report: dict | None = None
    error: str | None = None


class SweepResponse(BaseModel):
    axis: str
    points: list[SweepPointModel]
    latency_csv: str
