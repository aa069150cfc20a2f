"""Command-line front end.

Every pipeline command is a thin client: it POSTs to a running service
(--endpoint) or, when no endpoint is given, starts one in-process on an
ephemeral port for the duration of the command.  ``generate`` is the one
exception in spirit: the plan executor itself runs locally and treats the
endpoint as the generation backend to call.

File paths travel inside request bodies and are resolved by the service
process, so remote endpoints need paths valid on the remote machine.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path

import click
import httpx
import uvicorn

from .client import run_plan
from .dataset import load_dataset
from .mockgen import MOCK_BACKEND_ID
from .planning import read_plan
from .protocol import run_conformance
from .service.app import create_app, run_local_service

REQUEST_TIMEOUT = 600.0


@contextmanager
def _service(endpoint: str | None):
    if endpoint:
        yield endpoint.rstrip("/")
    else:
        with run_local_service() as url:
            yield url


def _post(base_url: str, path: str, payload: dict) -> dict:
    resp = httpx.post(base_url + path, json=payload, timeout=REQUEST_TIMEOUT)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise click.ClickException(f"{path} failed ({resp.status_code}): {detail}")
    return resp.json()


def _echo(summary: dict):
    click.echo(json.dumps(summary, indent=1, sort_keys=True))


@click.group()
def main():
    """Dataset augmentation pipeline for object counting."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--backend-id", default=MOCK_BACKEND_ID, show_default=True)
def serve(host, port, backend_id):
    """Run the service (mock generation backend + pipeline endpoints)."""
    uvicorn.run(create_app(backend_id), host=host, port=port, log_level="info")


@main.command()
@click.option("--annotations", required=True, type=click.Path())
@click.option("--dims", required=True, type=click.Path(), help="image dimensions file (id -> [width, height])")
@click.option("--schema", "schema_name", default="fsc147", show_default=True, type=click.Choice(["fsc147", "generic"]))
@click.option("--splits", type=click.Path(), default=None)
@click.option("--captions", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--endpoint", default=None, help="service URL; default runs in-process")
def ingest(annotations, dims, schema_name, splits, captions, out, endpoint):
    """Validate raw annotations into a canonical dataset file."""
    payload = {
        "annotations": annotations,
        "dims": dims,
        "schema": schema_name,
        "splits": splits,
        "captions": captions,
        "out": out,
    }
    with _service(endpoint) as url:
        _echo(_post(url, "/ingest", payload))


@main.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--sigma", default=2.0, show_default=True, type=float)
@click.option("--split", default=None, help="restrict to one split; default renders every record")
@click.option("--png", is_flag=True, help="also write a 16-bit preview PNG per map")
@click.option("--endpoint", default=None)
def densities(dataset, out_dir, sigma, split, png, endpoint):
    """Render one density map per image into a directory of .dmap files."""
    payload = {"dataset": dataset, "out_dir": out_dir, "sigma": sigma, "split": split, "png": png}
    with _service(endpoint) as url:
        _echo(_post(url, "/densities", payload))


@main.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--tc", default=0.7, show_default=True, type=float)
@click.option("--encoder", default="builtin", show_default=True, help="builtin | file:<path>")
@click.option("--out", required=True, type=click.Path())
@click.option("--endpoint", default=None)
def pairs(dataset, tc, encoder, out, endpoint):
    """Compute caption-swap candidate sets (JSON map id -> [ids])."""
    payload = {"dataset": dataset, "tc": tc, "encoder": encoder, "out": out}
    with _service(endpoint) as url:
        _echo(_post(url, "/pairs", payload))


@main.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--pairs", "pairs_file", required=True, type=click.Path())
@click.option("--m", default=10, show_default=True, type=int)
@click.option("--pc", default=0.5, show_default=True, type=float)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--tc", default=0.7, show_default=True, type=float, help="threshold the pairs file was built with; recorded in the plan header")
@click.option("--out", required=True, type=click.Path())
@click.option("--endpoint", default=None)
def plan(dataset, pairs_file, m, pc, seed, tc, out, endpoint):
    """Build the deterministic augmentation plan (JSONL)."""
    payload = {"dataset": dataset, "pairs": pairs_file, "m": m, "pc": pc, "seed": seed, "tc": tc, "out": out}
    with _service(endpoint) as url:
        _echo(_post(url, "/plan", payload))


@main.command()
@click.option("--plan", "plan_file", required=True, type=click.Path())
@click.option("--endpoint", default=None, help="generation backend URL; default runs the in-process mock")
@click.option("--out", required=True, type=click.Path())
@click.option("--densities", "densities_dir", default="densities", show_default=True, type=click.Path())
@click.option("--concurrency", default=4, show_default=True, type=int)
@click.option("--dataset", default=None, type=click.Path(), help="pass object locations as generation hints")
def generate(plan_file, endpoint, out, densities_dir, concurrency, dataset):
    """Execute a plan against a generation backend, filling the store."""
    plan_obj = read_plan(plan_file)
    points_lookup = None
    if dataset:
        ds = load_dataset(dataset)
        points_lookup = lambda image_id: list(ds.records[image_id].points)
    with _service(endpoint) as url:
        outcomes = run_plan(
            plan_obj,
            url,
            densities_dir,
            out,
            concurrency=concurrency,
            points_lookup=points_lookup,
        )
    _echo(
        {
            "store": out,
            "generated": len(outcomes),
            "backend_id": outcomes[0].backend_id if outcomes else None,
            "retries": sum(o.attempts - 1 for o in outcomes),
        }
    )


@main.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--plan", "plan_file", required=True, type=click.Path())
@click.option("--store", default=None, type=click.Path())
@click.option("--p0", default=0.5, show_default=True, type=float)
@click.option("--epochs", default=1, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--densities-root", default="densities", show_default=True)
@click.option("--no-require-store", is_flag=True, help="skip checking that selected augmentations exist on disk")
@click.option("--endpoint", default=None)
def feed(dataset, plan_file, store, p0, epochs, out_dir, densities_root, no_require_store, endpoint):
    """Write per-epoch training manifests mixing real and augmented images."""
    payload = {
        "dataset": dataset,
        "plan": plan_file,
        "store": store,
        "p0": p0,
        "epochs": epochs,
        "out_dir": out_dir,
        "densities_root": densities_root,
        "require_store": not no_require_store,
    }
    with _service(endpoint) as url:
        _echo(_post(url, "/feed", payload))


@main.group(name="eval")
def eval_group():
    """Counting metrics."""


@eval_group.command("counts")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--predictions", required=True, type=click.Path(), help="JSON map image_id -> predicted count")
@click.option("--split", default="val", show_default=True)
@click.option("--drop-top-k", default=0, show_default=True, type=int, help="report with the k largest absolute errors excluded")
@click.option("--endpoint", default=None)
def eval_counts(dataset, predictions, split, drop_top_k, endpoint):
    """MAE/RMSE of predicted counts against dataset ground truth."""
    payload = {"dataset": dataset, "predictions": predictions, "split": split, "drop_top_k": drop_top_k}
    with _service(endpoint) as url:
        _echo(_post(url, "/eval/counts", payload))


@eval_group.command("fidelity")
@click.option("--plan", "plan_file", required=True, type=click.Path())
@click.option("--store", required=True, type=click.Path())
@click.option("--densities", "densities_dir", required=True, type=click.Path())
@click.option("--limit", default=None, type=int)
@click.option("--endpoint", default=None)
def eval_fidelity(plan_file, store, densities_dir, limit, endpoint):
    """MAE/RMSE of stored-image blob counts against conditioning mass."""
    payload = {"plan": plan_file, "store": store, "densities": densities_dir, "limit": limit}
    with _service(endpoint) as url:
        _echo(_post(url, "/eval/fidelity", payload))


@main.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--axis", required=True, type=click.Choice(["tc", "pc", "M", "p0"]))
@click.option("--values", required=True, help="comma-separated numbers, e.g. 0.0,0.5,0.7")
@click.option("--tc", default=0.7, show_default=True, type=float)
@click.option("--pc", default=0.5, show_default=True, type=float)
@click.option("--m", default=10, show_default=True, type=int)
@click.option("--p0", default=0.5, show_default=True, type=float)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--limit", default=None, type=int, help="cap evaluated items per config")
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--endpoint", default=None)
def sweep(dataset, axis, values, tc, pc, m, p0, seed, limit, workers, out, endpoint):
    """Ablation sweep over one hyperparameter axis, written as CSV."""
    try:
        parsed = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise click.ClickException(f"--values must be comma-separated numbers, got {values!r}")
    payload = {
        "dataset": dataset,
        "axis": axis,
        "values": parsed,
        "tc": tc,
        "pc": pc,
        "m": m,
        "p0": p0,
        "seed": seed,
        "limit": limit,
        "workers": workers,
        "out": out,
    }
    with _service(endpoint) as url:
        _echo(_post(url, "/sweep", payload))


@main.command()
@click.option("--endpoint", required=True, help="backend URL to probe")
def conformance(endpoint):
    """Check a generation backend against the wire contract."""
    with httpx.Client(timeout=60.0) as client:
        results = run_conformance(endpoint.rstrip("/"), client)
    ok = True
    for result in results:
        status = "ok" if result.ok else "FAIL"
        click.echo(f"{result.check}: {status}" + (f" ({result.detail})" if result.detail else ""))
        ok = ok and result.ok
    if not ok:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
