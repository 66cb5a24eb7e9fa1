"""Request and response bodies for the HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    group: Literal["easy", "almostzero", "overlap"] = "easy"
    seed: int = 0
    rank: int = Field(default=3, ge=1)
    eta: float = Field(default=0.5, ge=0.0)
    fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    n_low_concepts: int = Field(default=1, ge=1, le=2)
    paper_scale: bool = False
    dataset_id: Optional[str] = None


class DatasetInfo(BaseModel):
    id: str
    path: str
    I: int
    J: int
    K: int
    R_true: Optional[int] = None
    seed: Optional[int] = None
    eta: Optional[float] = None
    has_truth: bool = False


class FitRequest(BaseModel):
    dataset_id: str
    method: Literal["parafac2", "tparafac2", "tcmf", "nntcmf"] = "tparafac2"
    lambda_b: float = Field(default=1.0, ge=0.0)
    lambda_a: float = Field(default=1e-3, ge=0.0)
    lambda_d: float = Field(default=1e-3, ge=0.0)
    rank: Optional[int] = Field(default=None, ge=1)
    n_inits: int = Field(default=1, ge=1)
    base_seed: int = 0
    max_outer: int = Field(default=2000, ge=1)


class RunRecordModel(BaseModel):
    dataset_id: str
    group: str
    method: str
    lambda_b: float
    eta: Optional[float] = None
    fraction: Optional[float] = None
    init_seed: int
    final_loss: float
    outer_iters: int
    exit_reason: str
    degenerate: bool
    fms: Optional[float] = None
    feas_gap_b_z: Optional[float] = None
    feas_gap_b_y: Optional[float] = None
    feas_gap_d: Optional[float] = None
    feas_gap_a: Optional[float] = None
    wall_time_seconds: float
    discarded_reason: Optional[str] = None


class FitResponse(BaseModel):
    fit_id: str
    dataset_id: str
    method: str
    records: list[RunRecordModel]
    best_init_seed: int
    best_final_loss: float
    best_fms: Optional[float] = None
    discarded_reason: Optional[str] = None


class FitInfo(BaseModel):
    fit_id: str
    dataset_id: str
    method: str
    lambda_b: float
    n_inits: int


class MatchReportModel(BaseModel):
    fms: float
    permutation: Optional[list[int]] = None
    per_component_scores: Optional[list[float]] = None
    degenerate: Optional[bool] = None
    mode: str


class SummarizeRequest(BaseModel):
    records: list[RunRecordModel]


class SummaryRowModel(BaseModel):
    group: str
    method: str
    lambda_b: float
    eta: float
    fraction: Optional[float] = None
    n_datasets: int
    n_discarded: int
    fms_min: Optional[float] = None
    fms_q1: Optional[float] = None
    fms_median: Optional[float] = None
    fms_q3: Optional[float] = None
    fms_max: Optional[float] = None


class SummarizeResponse(BaseModel):
    rows: list[SummaryRowModel]
