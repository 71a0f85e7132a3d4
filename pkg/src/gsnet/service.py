"""FastAPI service exposing dataset generation, training, evaluation,
gradient checking, and the four-variant ablation protocol.

The handlers wrap the core package; all artifacts (datasets, checkpoints,
logs, reports) are written under the request's out_dir on the server's
filesystem, and responses carry the resulting paths plus summary numbers.
Long requests (train, ablate) run synchronously; at desk scale they finish
in minutes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from . import __version__
from .data import LABEL_NAMES, SyntheticConfig, generate_synthetic, load_dataset, split_manifest
from .gradcheck import gradcheck_csv, gradcheck_text, run_gradcheck
from .gsam import attention_as_tensor
from .metrics import report_csv, report_text
from .network import VARIANTS, gsnet_forward, load_checkpoint, save_checkpoint
from .schemas import (
    AblateRequest,
    AblateResponse,
    AblateRowOut,
    EvalRequest,
    EvalResponse,
    GenDataRequest,
    GenDataResponse,
    GradcheckRequest,
    GradcheckResponse,
    GradcheckRowOut,
    HealthResponse,
    MetricsOut,
    TrainRequest,
    TrainResponse,
)
from .tensor import T4BError, write_t4b
from .training import TrainConfig, evaluate_model, fit
from .autodiff import Tape

VARIANT_DISPLAY = {
    "baseline": "Baseline",
    "cam_only": "Baseline + CAM",
    "sam_only": "Baseline + SAM",
    "full_gsam": "Full GSAM",
}


def handle_gen_data(req: GenDataRequest) -> GenDataResponse:
    cfg = SyntheticConfig(
        image_hw=req.image_hw,
        per_class=req.per_class,
        noise_std=req.noise_std,
        seed=req.seed,
    )
    out_dir = Path(req.out_dir)
    manifest = generate_synthetic(cfg, out_dir)
    manifest = split_manifest(manifest, req.fractions, seed=req.seed)
    manifest_path = out_dir / "manifest.csv"
    manifest.save(manifest_path)
    counts = {
        split: {LABEL_NAMES[label]: count for label, count in sorted(by_label.items())}
        for split, by_label in sorted(manifest.counts().items())
    }
    return GenDataResponse(manifest=str(manifest_path), total=len(manifest.rows), counts=counts)


def handle_train(req: TrainRequest) -> TrainResponse:
    splits = load_dataset(req.manifest, input_hw=req.input_hw)
    cfg = TrainConfig(epochs=req.epochs, lr=req.lr, batch_size=req.batch_size,
                      seed=req.seed, augment=req.augment, input_hw=req.input_hw)
    result = fit(cfg, splits, req.variant)
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "training_log.csv"
    log_path.write_text(result.log_csv(), encoding="utf-8")
    checkpoint_dir = save_checkpoint(out_dir / "checkpoint", result.params,
                                     req.variant, req.seed, result.best_epoch)
    return TrainResponse(
        variant=req.variant,
        checkpoint_dir=str(checkpoint_dir),
        log_path=str(log_path),
        epochs=req.epochs,
        best_epoch=result.best_epoch,
        best_val_accuracy=result.best_val_acc,
    )


def handle_eval(req: EvalRequest) -> EvalResponse:
    params, meta = load_checkpoint(req.checkpoint)
    variant = meta["variant"]
    splits = load_dataset(req.manifest, input_hw=params.config.input_hw)
    samples = splits[req.split]
    if not samples:
        raise ValueError(f"split {req.split!r} is empty in {req.manifest}")
    result = evaluate_model(params, variant, samples)
    text = report_text(result)
    report_path = None
    attention_paths: list[str] = []
    if req.out_dir is not None:
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / f"eval_{req.split}.csv"
        report_path.write_text(report_csv(result), encoding="utf-8")
        (out_dir / f"eval_{req.split}.txt").write_text(text + "\n", encoding="utf-8")
    if req.dump_attention:
        if req.out_dir is None:
            raise ValueError("dump_attention requires out_dir")
        if variant == "baseline":
            raise ValueError("the baseline variant computes no attention maps")
        batch = np.concatenate([s.image.data for s in samples[:16]], axis=0)
        tape = Tape()
        _, diagnostics = gsnet_forward(tape, tape.input(batch), params, variant)
        for name, node in diagnostics.items():
            path = Path(req.out_dir) / f"{name}.t4b"
            write_t4b(path, attention_as_tensor(node.value))
            attention_paths.append(str(path))
    return EvalResponse(
        variant=variant,
        split=req.split,
        metrics=MetricsOut(accuracy=result.accuracy, macro_f1=result.macro_f1,
                           macro_auc=result.macro_auc),
        confusion=[[int(v) for v in row] for row in result.confusion],
        auc_skipped=list(result.auc_skipped),
        report_text=text,
        report_path=str(report_path) if report_path else None,
        attention_paths=attention_paths,
    )


def handle_gradcheck(req: GradcheckRequest) -> GradcheckResponse:
    results = run_gradcheck(tol=req.tol, h=req.step, samples=req.samples, seed=req.seed)
    text = gradcheck_text(results)
    if req.out_dir is not None:
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "gradcheck.csv").write_text(gradcheck_csv(results), encoding="utf-8")
        (out_dir / "gradcheck.txt").write_text(text + "\n", encoding="utf-8")
    rows = [
        GradcheckRowOut(variant=item.variant, parameter=row.param_id,
                        elements_checked=row.checked, max_rel_error=row.max_rel_err,
                        passed=row.passed)
        for item in results for row in item.report.rows
    ]
    return GradcheckResponse(
        passed=all(item.report.all_passed for item in results),
        worst=max(item.report.worst for item in results),
        tol=req.tol,
        rows=rows,
        report_text=text,
    )


def handle_ablate(req: AblateRequest) -> AblateResponse:
    splits = load_dataset(req.manifest, input_hw=req.input_hw)
    if not splits["test"]:
        raise ValueError(f"test split is empty in {req.manifest}")
    out_dir = Path(req.out_dir)
    logs_dir = out_dir / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    run_lines = ["variant,seed,acc,macro_f1,macro_auc"]
    scores: dict[str, list[tuple[float, float, float]]] = {v: [] for v in VARIANTS}
    for seed in req.seeds:
        for variant in VARIANTS:
            cfg = TrainConfig(epochs=req.epochs, lr=req.lr, batch_size=req.batch_size,
                              seed=seed, augment=req.augment, input_hw=req.input_hw)
            result = fit(cfg, splits, variant)
            (logs_dir / f"{variant}_seed{seed}.csv").write_text(result.log_csv(),
                                                                encoding="utf-8")
            ev = evaluate_model(result.params, variant, splits["test"])
            scores[variant].append((ev.accuracy, ev.macro_f1, ev.macro_auc))
            run_lines.append(f"{variant},{seed},{ev.accuracy:.4f},"
                             f"{ev.macro_f1:.4f},{ev.macro_auc:.4f}")
    rows = []
    for variant in VARIANTS:
        acc, f1, auc = (float(np.mean([s[i] for s in scores[variant]])) for i in range(3))
        rows.append(AblateRowOut(variant=variant, display_name=VARIANT_DISPLAY[variant],
                                 accuracy=acc, macro_f1=f1, macro_auc=auc))
    table_lines = [f"{'Method':<16}  {'Acc':>7}  {'F1':>7}  {'AUC':>7}"]
    for row in rows:
        table_lines.append(f"{row.display_name:<16}  {row.accuracy:7.4f}  "
                           f"{row.macro_f1:7.4f}  {row.macro_auc:7.4f}")
    table_text = "\n".join(table_lines)
    csv_path = out_dir / "ablation.csv"
    csv_lines = ["variant,acc,macro_f1,macro_auc"]
    for row in rows:
        csv_lines.append(f"{row.variant},{row.accuracy:.4f},{row.macro_f1:.4f},"
                         f"{row.macro_auc:.4f}")
    csv_path.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    runs_csv_path = out_dir / "ablation_runs.csv"
    runs_csv_path.write_text("\n".join(run_lines) + "\n", encoding="utf-8")
    return AblateResponse(seeds=req.seeds, rows=rows, table_text=table_text,
                          csv_path=str(csv_path), runs_csv_path=str(runs_csv_path))


def create_app() -> FastAPI:
    app = FastAPI(title="gsnet", version=__version__,
                  description="Attention-CNN staging pipeline service")

    def run(handler, request):
        try:
            return handler(request)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (ValueError, T4BError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.post("/gen-data", response_model=GenDataResponse)
    def gen_data(request: GenDataRequest):
        return run(handle_gen_data, request)

    @app.post("/train", response_model=TrainResponse)
    def train(request: TrainRequest):
        return run(handle_train, request)

    @app.post("/eval", response_model=EvalResponse)
    def eval_split(request: EvalRequest):
        return run(handle_eval, request)

    @app.post("/gradcheck", response_model=GradcheckResponse)
    def gradcheck(request: GradcheckRequest):
        return run(handle_gradcheck, request)

    @app.post("/ablate", response_model=AblateResponse)
    def ablate(request: AblateRequest):
        return run(handle_ablate, request)

    return app


app = create_app()
