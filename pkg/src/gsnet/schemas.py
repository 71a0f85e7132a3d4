"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

Variant = Literal["baseline", "cam_only", "sam_only", "full_gsam"]
Split = Literal["train", "val", "test"]


class HealthResponse(BaseModel):
    status: str = "ok"
    service: str = "gsnet"
    version: str


class GenDataRequest(BaseModel):
    out_dir: str
    seed: int = 0
    per_class: int = Field(200, ge=1)
    image_hw: int = Field(64, ge=8)
    noise_std: float = Field(0.05, ge=0.0)
    fractions: tuple[float, float, float] = (0.49, 0.21, 0.30)


class GenDataResponse(BaseModel):
    manifest: str
    total: int
    counts: dict[str, dict[str, int]]  # split -> class name -> count


class TrainRequest(BaseModel):
    manifest: str
    out_dir: str
    variant: Variant = "full_gsam"
    epochs: int = Field(50, ge=1)
    lr: float = Field(0.005, gt=0.0)
    batch_size: int = Field(16, ge=1)
    seed: int = 0
    augment: bool = True
    input_hw: int = Field(64, ge=16)


class TrainResponse(BaseModel):
    variant: Variant
    checkpoint_dir: str
    log_path: str
    epochs: int
    best_epoch: int
    best_val_accuracy: float


class EvalRequest(BaseModel):
    checkpoint: str
    manifest: str
    split: Split = "test"
    out_dir: str | None = None
    dump_attention: bool = False


class MetricsOut(BaseModel):
    accuracy: float
    macro_f1: float
    macro_auc: float


class EvalResponse(BaseModel):
    variant: Variant
    split: Split
    metrics: MetricsOut
    confusion: list[list[int]]
    auc_skipped: list[int]
    report_text: str
    report_path: str | None = None
    attention_paths: list[str] = []


class GradcheckRequest(BaseModel):
    tol: float = Field(1e-6, gt=0.0)
    step: float = Field(1e-5, gt=0.0)
    samples: int = Field(32, ge=1)
    seed: int = 0
    out_dir: str | None = None


class GradcheckRowOut(BaseModel):
    variant: Variant
    parameter: str
    elements_checked: int
    max_rel_error: float
    passed: bool


class GradcheckResponse(BaseModel):
    passed: bool
    worst: float
    tol: float
    rows: list[GradcheckRowOut]
    report_text: str


class AblateRequest(BaseModel):
    manifest: str
    out_dir: str
    seeds: list[int] = Field(default=[7, 8, 9], min_length=1)
    epochs: int = Field(50, ge=1)
    lr: float = Field(0.005, gt=0.0)
    batch_size: int = Field(16, ge=1)
    augment: bool = True
    input_hw: int = Field(64, ge=16)


class AblateRowOut(BaseModel):
    variant: Variant
    display_name: str
    accuracy: float
    macro_f1: float
    macro_auc: float


class AblateResponse(BaseModel):
    seeds: list[int]
    rows: list[AblateRowOut]
    table_text: str
    csv_path: str
    runs_csv_path: str
