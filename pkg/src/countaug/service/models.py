"""Request/response bodies for the orchestration endpoints.

All file paths are interpreted on the machine running the service; the
CLI talks to a service it started in-process unless pointed elsewhere.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class IngestRequest(BaseModel):
    annotations: str
    dims: str
    out: str
    schema_name: str = Field(default="fsc147", alias="schema")
    splits: str | None = None
    captions: str | None = None

    model_config = {"populate_by_name": True}


class IngestSummary(BaseModel):
    out: str
    n_records: int
    split_sizes: dict[str, int]
    clamped_points: int
    ignored_captions: int


class DensitiesRequest(BaseModel):
    dataset: str
    out_dir: str
    sigma: float = 2.0
    split: str | None = None
    png: bool = False


class DensitiesSummary(BaseModel):
    out_dir: str
    n_maps: int
    total_mass: float


class PairsRequest(BaseModel):
    dataset: str
    out: str
    tc: float = 0.7
    encoder: str = "builtin"


class PairsSummary(BaseModel):
    out: str
    tc: float
    n_images: int
    n_isolated: int
    mean_candidates: float


class PlanRequest(BaseModel):
    dataset: str
    pairs: str
    out: str
    m: int = 10
    pc: float = 0.5
    seed: int = 42
    tc: float = 0.7


class PlanSummary(BaseModel):
    out: str
    n_items: int
    n_diverse: int
    n_baseline: int
    n_downgraded: int
    plan_hash: str


class FeedRequest(BaseModel):
    dataset: str
    plan: str
    out_dir: str
    p0: float = 0.5
    epochs: int = 1
    store: str | None = None
    densities_root: str = "densities"
    require_store: bool = True


class FeedSummary(BaseModel):
    out_dir: str
    epochs: int
    n_entries: int
    synthetic_fraction: float


class EvalCountsRequest(BaseModel):
    dataset: str
    predictions: str
    split: str = "val"
    drop_top_k: int = 0


class EvalFidelityRequest(BaseModel):
    plan: str
    store: str
    densities: str
    limit: int | None = None


class EvalSummary(BaseModel):
    split: str
    mae: float
    rmse: float
    n: int


class SweepRequest(BaseModel):
    dataset: str
    axis: str
    values: list[float]
    out: str
    tc: float = 0.7
    pc: float = 0.5
    m: int = 10
    p0: float = 0.5
    seed: int = 42
    limit: int | None = None
    workers: int = 1


class SweepSummary(BaseModel):
    out: str
    axis: str
    n_rows: int
    n_failed: int
