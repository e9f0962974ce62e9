"""Pydantic request/response models for the service API.

Request fields default to None; only explicitly set values override the
pipeline defaults, so the documented defaults live in one place
(latentrom.pipeline.DEFAULTS).
"""

from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, Field


class CommandRequest(BaseModel):
    seed: Optional[int] = None
    workers: Optional[int] = None
    out: Optional[str] = None

    def overrides(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class GenerateRequest(CommandRequest):
    box: Optional[list] = Field(default=None, description="[[a_min,a_max],[w_min,w_max]]")
    n_samples: Optional[int] = None
    sampling: Optional[str] = Field(default=None, description="random | uniform-grid")
    segments: Optional[Union[int, list]] = Field(
        default=None, description="nodes per edge; a list splits trajectories across grids"
    )
    reynolds: Optional[float] = None
    time_horizon: Optional[float] = None
    n_steps: Optional[int] = None
    picard_tol: Optional[float] = None
    picard_max_sweeps: Optional[int] = None


class TrainRequest(CommandRequest):
    dataset: str
    n_latent: Optional[Union[int, str, list]] = Field(
        default=None, description="an int, a list, or a range like '2..7'"
    )
    taylor_order: Optional[int] = None
    library_terms: Optional[list] = None
    iterations: Optional[int] = None
    check_every: Optional[int] = None
    tol_latent: Optional[float] = None
    tol_loss: Optional[float] = None
    weight_id: Optional[float] = None
    weight_z0: Optional[float] = None
    weight_coef: Optional[float] = None
    learning_rate: Optional[float] = None
    lr_decay: Optional[float] = None
    lr_decay_every: Optional[int] = None
    spatial_subsample: Optional[Union[int, str]] = Field(
        default=None, description="points per trajectory per iteration, or 'all'"
    )
    l_range: Optional[float] = None


class KnnFields(BaseModel):
    knn_k: Optional[int] = None
    knn_power: Optional[float] = None
    knn_space: Optional[str] = None
    match_tol: Optional[float] = None


class PredictRequest(CommandRequest, KnnFields):
    bundle: str
    mu: list
    coords: Optional[Union[str, list]] = Field(
        default=None, description="'grid:<n>', 'dataset:<path>[:i]', a file path, or inline rows"
    )


class EvaluateRequest(CommandRequest, KnnFields):
    bundle: str
    truth: str
    save_predictions: Optional[bool] = None


class IngestRequest(BaseModel):
    coords_file: str
    fields_file: str
    mu: list
    times: Optional[list] = None
    archive: Optional[str] = Field(default=None, description="existing dataset to extend")
    out: Optional[str] = None


class JobInfo(BaseModel):
    id: str
    command: str
    status: str
    created: float
    started: Optional[float] = None
    finished: Optional[float] = None
    result: Optional[dict] = None
    error: Optional[dict] = None


class HealthInfo(BaseModel):
    status: str
    version: str
