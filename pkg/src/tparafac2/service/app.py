"""HTTP API over the library: generate datasets, run fits, score results.

State lives in a workspace directory (slab dataset dirs plus per-fit record
files); the app itself holds no caches, so restarts see the same workspace.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__, experiments, slab, synth
from ..cmf import CmfFactors, fms_cmf
from ..core import Parafac2Factors
from ..evaluation import fms as fms_report
from ..evaluation import select_best
from .schemas import (
    DatasetInfo,
    FitInfo,
    FitRequest,
    FitResponse,
    GenerateRequest,
    HealthResponse,
    MatchReportModel,
    RunRecordModel,
    SummarizeRequest,
    SummarizeResponse,
    SummaryRowModel,
)

PAPER_DIMS = {"I": 150, "J": 100, "K": 20}
DESK_DIMS = {"I": 60, "J": 40, "K": 15}


def _dataset_info(path: Path) -> DatasetInfo:
    meta = json.loads((path / "meta.json").read_text())
    gc = meta.get("generator_config") or {}
    return DatasetInfo(
        id=path.name,
        path=str(path),
        I=meta["I"],
        J=meta["J"],
        K=meta["K"],
        R_true=meta.get("R_true"),
        seed=meta.get("seed"),
        eta=gc.get("eta"),
        has_truth=(path / "truth" / "A.bin").is_file(),
    )


def create_app(workspace=None) -> FastAPI:
    if workspace is None:
        workspace = os.environ.get("TPARAFAC2_WORKSPACE", "tparafac2-workspace")
    ws = Path(workspace)
    datasets_dir = ws / "datasets"
    fits_dir = ws / "fits"

    app = FastAPI(title="tparafac2", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/datasets", response_model=list[DatasetInfo])
    def list_datasets():
        if not datasets_dir.is_dir():
            return []
        return [
            _dataset_info(p)
            for p in sorted(datasets_dir.iterdir())
            if (p / "meta.json").is_file()
        ]

    def _dataset_path(dataset_id: str) -> Path:
        path = datasets_dir / dataset_id
        if not (path / "meta.json").is_file():
            raise HTTPException(status_code=404,
                                detail=f"dataset {dataset_id!r} not found")
        return path

    @app.get("/datasets/{dataset_id}", response_model=DatasetInfo)
    def get_dataset(dataset_id: str):
        return _dataset_info(_dataset_path(dataset_id))

    @app.post("/datasets", response_model=DatasetInfo, status_code=201)
    def generate_dataset(req: GenerateRequest):
        dims = PAPER_DIMS if req.paper_scale else DESK_DIMS
        kwargs = dict(I=dims["I"], J=dims["J"], K=dims["K"], R=req.rank,
                      eta=req.eta)
        if req.group == "easy":
            cfg = synth.easy_preset(req.seed, **kwargs)
        elif req.group == "almostzero":
            cfg = synth.almostzero_preset(req.seed, req.n_low_concepts, **kwargs)
        else:
            cfg = synth.overlap_preset(req.seed, req.fraction, **kwargs)
        ds_id = req.dataset_id or (
            f"{req.group}-seed{req.seed}-eta{req.eta:g}"
            + (f"-frac{req.fraction:g}" if req.group == "overlap" else ""))
        path = datasets_dir / ds_id
        if path.exists():
            raise HTTPException(status_code=409,
                                detail=f"dataset {ds_id!r} already exists")
        synth.generate_to_dir(cfg, path)
        return _dataset_info(path)

    @app.post("/fits", response_model=FitResponse, status_code=201)
    def run_fits(req: FitRequest):
        ds_path = _dataset_path(req.dataset_id)
        fit_id = f"{req.dataset_id}--{req.method}"
        if req.method != "parafac2":
            fit_id += f"-lam{req.lambda_b:g}"
        fit_id += f"-s{req.base_seed}x{req.n_inits}"
        records, factors = experiments.fit_dataset(
            ds_path, method=req.method, lambda_B=req.lambda_b,
            n_inits=req.n_inits, base_seed=req.base_seed, R=req.rank,
            max_outer=req.max_outer, lambda_A=req.lambda_a,
            lambda_D=req.lambda_d, keep_factors=True,
        )
        best = select_best(records)
        out = fits_dir / fit_id
        out.mkdir(parents=True, exist_ok=True)
        rows = [r.as_row() | {"discarded_reason": r.discarded_reason}
                for r in records]
        (out / "records.json").write_text(
            json.dumps({"fit_id": fit_id, "dataset_id": req.dataset_id,
                        "method": req.method, "lambda_b": req.lambda_b,
                        "n_inits": req.n_inits, "best_init_seed": best.init_seed,
                        "records": rows}, indent=2, sort_keys=True) + "\n")
        slab.write_factor_dir(out / "factors", factors[best.init_seed])
        return FitResponse(
            fit_id=fit_id,
            dataset_id=req.dataset_id,
            method=req.method,
            records=[RunRecordModel(**r) for r in rows],
            best_init_seed=best.init_seed,
            best_final_loss=best.final_loss,
            best_fms=best.fms,
            discarded_reason=best.discarded_reason,
        )

    @app.get("/fits", response_model=list[FitInfo])
    def list_fits():
        if not fits_dir.is_dir():
            return []
        out = []
        for p in sorted(fits_dir.iterdir()):
            rec = p / "records.json"
            if rec.is_file():
                info = json.loads(rec.read_text())
                out.append(FitInfo(
                    fit_id=info["fit_id"], dataset_id=info["dataset_id"],
                    method=info["method"], lambda_b=info["lambda_b"],
                    n_inits=info["n_inits"]))
        return out

    @app.get("/fits/{fit_id}", response_model=FitResponse)
    def get_fit(fit_id: str):
        rec = fits_dir / fit_id / "records.json"
        if not rec.is_file():
            raise HTTPException(status_code=404, detail=f"fit {fit_id!r} not found")
        info = json.loads(rec.read_text())
        records = [RunRecordModel(**r) for r in info["records"]]
        best = next(r for r in info["records"]
                    if r["init_seed"] == info["best_init_seed"])
        return FitResponse(
            fit_id=info["fit_id"], dataset_id=info["dataset_id"],
            method=info["method"], records=records,
            best_init_seed=info["best_init_seed"],
            best_final_loss=best["final_loss"], best_fms=best.get("fms"),
            discarded_reason=best.get("discarded_reason"),
        )

    @app.post("/fits/{fit_id}/evaluate", response_model=MatchReportModel)
    def evaluate_fit(fit_id: str):
        rec = fits_dir / fit_id / "records.json"
        if not rec.is_file():
            raise HTTPException(status_code=404, detail=f"fit {fit_id!r} not found")
        info = json.loads(rec.read_text())
        ds = slab.read_dataset(_dataset_path(info["dataset_id"]))
        if ds.truth is None:
            raise HTTPException(status_code=409,
                                detail="dataset carries no ground truth")
        est = slab.read_factor_dir(fits_dir / fit_id / "factors",
                                   ds.data.I, ds.data.J, ds.data.K)
        if "D" in est:
            report = fms_report(
                Parafac2Factors(est["A"], est["B"], est["D"]), ds.truth)
            return MatchReportModel(
                fms=report.fms, permutation=list(report.permutation),
                per_component_scores=list(report.per_component_scores),
                degenerate=report.degenerate, mode="three-factor")
        score = fms_cmf(CmfFactors(est["A"], est["B"]), ds.truth)
        return MatchReportModel(fms=score, mode="two-factor")

    @app.post("/summarize", response_model=SummarizeResponse)
    def summarize_records(req: SummarizeRequest):
        records = [
            experiments.RunRecord(
                dataset_id=r.dataset_id, group=r.group, method=r.method,
                lambda_B=r.lambda_b, eta=r.eta if r.eta is not None else float("nan"),
                fraction=r.fraction, init_seed=r.init_seed,
                final_loss=r.final_loss, outer_iters=r.outer_iters,
                exit_reason=r.exit_reason, degenerate=r.degenerate, fms=r.fms,
                feas_gap_B_Z=r.feas_gap_b_z, feas_gap_B_Y=r.feas_gap_b_y,
                feas_gap_D=r.feas_gap_d, feas_gap_A=r.feas_gap_a,
                wall_time_seconds=r.wall_time_seconds,
            )
            for r in req.records
        ]
        rows, _ = experiments.summarize(records)
        return SummarizeResponse(rows=[SummaryRowModel(**row) for row in rows])

    return app


app = create_app()
