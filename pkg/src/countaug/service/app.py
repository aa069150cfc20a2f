"""HTTP service bundling the mock generation backend and the pipeline.

POST /generate and GET /healthz implement the generation wire contract
with the built-in mock backend, so the service doubles as a reference
implementation of that protocol.  The remaining endpoints drive the
pipeline stages (ingest, densities, pairs, plan, feed, eval, sweep) on
files local to the service process; the command-line tool is a thin
client that either targets a remote service or starts one in-process.

Malformed request bodies answer 400, not the framework default 422: the
wire contract pins 400 for anything the backend cannot parse.
"""

from __future__ import annotations

import functools
import json
import threading
import time
from contextlib import contextmanager
from pathlib import Path

import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..captions import build_compatible_sets, load_pairs, resolve_embeddings, save_pairs
from ..dataset import (
    CountingDataset,
    LoadStats,
    SPLITS,
    attach_captions,
    load_annotations,
    load_dataset,
    load_splits,
    save_dataset,
)
from ..density import density_count, density_to_png, encode_dmap, render_density
from ..errors import CountaugError, ProtocolError
from ..feed import epoch_manifest, manifest_to_jsonl
from ..fidelity import make_mock_evaluator, plan_fidelity
from ..metrics import SWEEP_AXES, evaluate_counts, run_sweep, write_sweep_csv
from ..mockgen import MOCK_BACKEND_ID, mock_render
from ..planning import build_plan, plan_hash, read_plan, write_plan, KIND_DIVERSE
from ..protocol import GenerationRequest, GenerationResponse
from . import models

STARTUP_TIMEOUT = 10.0


def _guard(fn):
    """Why: pipeline errors are caller mistakes, so they answer 400."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HTTPException:
            raise
        except (CountaugError, ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    return wrapper


def create_app(backend_id: str = MOCK_BACKEND_ID) -> FastAPI:
    app = FastAPI(title="countaug", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def _validation_to_400(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "backend_id": backend_id}

    @app.post("/generate", response_model=GenerationResponse)
    @_guard
    def generate(request: GenerationRequest):
        try:
            return mock_render(request, backend_id=backend_id)
        except ProtocolError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/ingest", response_model=models.IngestSummary)
    @_guard
    def ingest(req: models.IngestRequest):
        stats = LoadStats()
        records = load_annotations(req.annotations, req.dims, schema=req.schema_name, stats=stats)
        if req.splits:
            dataset = load_splits(req.splits, records)
        else:
            dataset = CountingDataset(records=records, split_lists={s: [] for s in SPLITS})
        if req.captions:
            attach_captions(dataset, req.captions, stats=stats)
        save_dataset(dataset, req.out)
        return models.IngestSummary(
            out=req.out,
            n_records=len(dataset.records),
            split_sizes={s: len(ids) for s, ids in dataset.split_lists.items()},
            clamped_points=stats.clamped_points,
            ignored_captions=stats.ignored_captions,
        )

    @app.post("/densities", response_model=models.DensitiesSummary)
    @_guard
    def densities(req: models.DensitiesRequest):
        dataset = load_dataset(req.dataset)
        ids = dataset.split_ids(req.split) if req.split else sorted(dataset.records)
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        total = 0.0
        for image_id in ids:
            record = dataset.records[image_id]
            dmap = render_density(record.points, record.width, record.height, sigma=req.sigma)
            (out_dir / f"{image_id}.dmap").write_bytes(encode_dmap(dmap))
            if req.png:
                density_to_png(dmap, out_dir / f"{image_id}.png")
            total += density_count(dmap)
        return models.DensitiesSummary(out_dir=str(out_dir), n_maps=len(ids), total_mass=total)

    @app.post("/pairs", response_model=models.PairsSummary)
    @_guard
    def pairs(req: models.PairsRequest):
        dataset = load_dataset(req.dataset)
        train_ids = dataset.split_ids("train")
        if not train_ids:
            raise ValueError("dataset has no train split")
        captions = {i: dataset.records[i].caption for i in train_ids}
        embeddings = resolve_embeddings(captions, req.encoder)
        compat = build_compatible_sets(embeddings, req.tc)
        save_pairs(compat, req.out)
        sizes = [len(compat.candidates[i]) for i in train_ids]
        return models.PairsSummary(
            out=req.out,
            tc=req.tc,
            n_images=len(train_ids),
            n_isolated=sum(1 for s in sizes if s == 0),
            mean_candidates=sum(sizes) / len(sizes),
        )

    @app.post("/plan", response_model=models.PlanSummary)
    @_guard
    def plan_endpoint(req: models.PlanRequest):
        dataset = load_dataset(req.dataset)
        compat = load_pairs(req.pairs, req.tc)
        plan = build_plan(dataset, compat, m=req.m, pc=req.pc, global_seed=req.seed)
        write_plan(plan, req.out)
        n_diverse = sum(1 for it in plan.items if it.kind == KIND_DIVERSE)
        return models.PlanSummary(
            out=req.out,
            n_items=len(plan.items),
            n_diverse=n_diverse,
            n_baseline=len(plan.items) - n_diverse,
            n_downgraded=len(plan.downgraded),
            plan_hash=plan_hash(req.out),
        )

    @app.post("/feed", response_model=models.FeedSummary)
    @_guard
    def feed_endpoint(req: models.FeedRequest):
        dataset = load_dataset(req.dataset)
        plan = read_plan(req.plan)
        digest = plan_hash(req.plan)
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        n_entries = 0
        synth = 0
        for epoch in range(req.epochs):
            manifest = epoch_manifest(
                dataset,
                plan,
                digest,
                epoch,
                req.p0,
                store_dir=req.store,
                densities_root=req.densities_root,
                require_store=req.require_store,
            )
            (out_dir / f"epoch_{epoch:04d}.jsonl").write_text(manifest_to_jsonl(manifest))
            n_entries += len(manifest.entries)
            synth += sum(1 for e in manifest.entries if e.source["type"] == "augmented")
        return models.FeedSummary(
            out_dir=str(out_dir),
            epochs=req.epochs,
            n_entries=n_entries,
            synthetic_fraction=synth / n_entries if n_entries else 0.0,
        )

    @app.post("/eval/counts", response_model=models.EvalSummary)
    @_guard
    def eval_counts(req: models.EvalCountsRequest):
        dataset = load_dataset(req.dataset)
        ids = dataset.split_ids(req.split)
        if not ids:
            raise ValueError(f"dataset has no {req.split!r} split")
        predictions = json.loads(Path(req.predictions).read_text())
        missing = [i for i in ids if i not in predictions]
        if missing:
            raise ValueError(f"predictions missing ids: {missing[:5]}")
        predicted = [float(predictions[i]) for i in ids]
        truth = [float(dataset.records[i].count) for i in ids]
        result = evaluate_counts(predicted, truth, split=req.split, drop_top_k=req.drop_top_k)
        return models.EvalSummary(split=result.split, mae=result.mae, rmse=result.rmse, n=result.n)

    @app.post("/eval/fidelity", response_model=models.EvalSummary)
    @_guard
    def eval_fidelity(req: models.EvalFidelityRequest):
        plan = read_plan(req.plan)
        result = plan_fidelity(plan, req.store, req.densities, limit=req.limit)
        return models.EvalSummary(split=result.split, mae=result.mae, rmse=result.rmse, n=result.n)

    @app.post("/sweep", response_model=models.SweepSummary)
    @_guard
    def sweep_endpoint(req: models.SweepRequest):
        if req.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {req.axis!r}, expected one of {SWEEP_AXES}")
        dataset = load_dataset(req.dataset)
        evaluator = make_mock_evaluator(dataset, global_seed=req.seed, limit=req.limit)
        fixed = {"tc": req.tc, "pc": req.pc, "M": req.m, "p0": req.p0}
        rows = run_sweep(req.axis, req.values, fixed, evaluator, workers=req.workers)
        write_sweep_csv(rows, req.out)
        return models.SweepSummary(
            out=req.out,
            axis=req.axis,
            n_rows=len(rows),
            n_failed=sum(1 for r in rows if r.status == "failed"),
        )

    return app


@contextmanager
def run_local_service(app: FastAPI | None = None, host: str = "127.0.0.1", port: int = 0):
    """Run the service in a daemon thread; yields its base URL.

    Binds an ephemeral port by default, waits for startup, and shuts the
    server down on exit.
    """
    config = uvicorn.Config(app or create_app(), host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        deadline = time.monotonic() + STARTUP_TIMEOUT
        while not server.started:
            if not thread.is_alive():
                raise RuntimeError("service thread died during startup")
            if time.monotonic() > deadline:
                raise RuntimeError(f"service did not start within {STARTUP_TIMEOUT}s")
            time.sleep(0.01)
        bound = server.servers[0].sockets[0].getsockname()
        yield f"http://{host}:{bound[1]}"
    finally:
        server.should_exit = True
        thread.join(timeout=STARTUP_TIMEOUT)
