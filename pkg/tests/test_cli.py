import json

import pytest
from click.testing import CliRunner

from countaug.cli import main
from countaug.dataset import save_dataset
from countaug.feed import manifest_from_jsonl
from countaug.metrics import sweep_from_csv
from countaug.planning import read_plan
from countaug.service.app import run_local_service
from countaug.simulate import make_corpus


@pytest.fixture
def runner():
    return CliRunner()


def invoke_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output + result.stderr
    return result


def test_full_chain(runner, tmp_path):
    """Every stage through the CLI, each command on its own ephemeral service."""
    dataset = make_corpus(6, seed=13, min_count=1, max_count=8)
    ds = tmp_path / "dataset.json"
    save_dataset(dataset, ds)
    dens = tmp_path / "densities"
    pairs_file = tmp_path / "pairs.json"
    plan_file = tmp_path / "plan.jsonl"
    store = tmp_path / "store"
    manifests = tmp_path / "manifests"

    result = invoke_ok(runner, ["densities", "--dataset", str(ds), "--out", str(dens)])
    assert json.loads(result.output)["n_maps"] == 6

    result = invoke_ok(runner, ["pairs", "--dataset", str(ds), "--tc", "0.0", "--out", str(pairs_file)])
    assert json.loads(result.output)["n_isolated"] == 0

    result = invoke_ok(
        runner,
        ["plan", "--dataset", str(ds), "--pairs", str(pairs_file), "--m", "2", "--pc", "1.0",
         "--seed", "7", "--tc", "0.0", "--out", str(plan_file)],
    )
    summary = json.loads(result.output)
    assert summary["n_items"] == 12
    assert summary["n_diverse"] == 12

    result = invoke_ok(
        runner,
        ["generate", "--plan", str(plan_file), "--out", str(store), "--densities", str(dens),
         "--dataset", str(ds), "--concurrency", "2"],
    )
    summary = json.loads(result.output)
    assert summary["generated"] == 12
    assert summary["retries"] == 0
    plan = read_plan(plan_file)
    for item in plan.items:
        assert (store / item.image_id / f"{item.aug_index}.png").exists()

    result = invoke_ok(
        runner,
        ["feed", "--dataset", str(ds), "--plan", str(plan_file), "--store", str(store),
         "--p0", "1.0", "--epochs", "2", "--out", str(manifests)],
    )
    assert json.loads(result.output)["synthetic_fraction"] == 1.0
    manifest = manifest_from_jsonl((manifests / "epoch_0001.jsonl").read_text())
    assert manifest.epoch == 1
    assert len(manifest.entries) == 6

    result = invoke_ok(
        runner,
        ["eval", "fidelity", "--plan", str(plan_file), "--store", str(store), "--densities", str(dens)],
    )
    summary = json.loads(result.output)
    assert summary["mae"] == 0.0
    assert summary["n"] == 12

    predictions = tmp_path / "pred.json"
    predictions.write_text(json.dumps({i: dataset.records[i].count for i in dataset.split_ids("train")}))
    result = invoke_ok(
        runner,
        ["eval", "counts", "--dataset", str(ds), "--predictions", str(predictions), "--split", "train"],
    )
    assert json.loads(result.output)["rmse"] == 0.0

    sweep_out = tmp_path / "sweep.csv"
    result = invoke_ok(
        runner,
        ["sweep", "--dataset", str(ds), "--axis", "pc", "--values", "0.0,1.0", "--m", "2",
         "--tc", "0.0", "--p0", "1.0", "--limit", "4", "--out", str(sweep_out)],
    )
    assert json.loads(result.output)["n_rows"] == 2
    rows = sweep_from_csv(sweep_out.read_text())
    assert [r.value for r in rows] == [0.0, 1.0]
    assert all(r.status == "ok" for r in rows)


def test_ingest_command(runner, fsc_files, tmp_path):
    out = tmp_path / "dataset.json"
    result = invoke_ok(
        runner,
        ["ingest", "--annotations", str(fsc_files["annotations"]), "--dims", str(fsc_files["dims"]),
         "--splits", str(fsc_files["splits"]), "--captions", str(fsc_files["captions"]), "--out", str(out)],
    )
    summary = json.loads(result.output)
    assert summary["n_records"] == 2
    assert out.exists()


def test_conformance_against_live_service(runner):
    with run_local_service() as url:
        result = runner.invoke(main, ["conformance", "--endpoint", url], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    lines = result.output.strip().splitlines()
    assert [l.split(":")[0] for l in lines] == ["health", "golden_request", "dimensions", "malformed_400"]
    assert all(": ok" in l for l in lines)


def test_conformance_unreachable_backend_fails(runner):
    result = runner.invoke(main, ["conformance", "--endpoint", "http://127.0.0.1:1"])
    assert result.exit_code == 1
    assert "FAIL" in result.output


def test_bad_values_argument(runner, tmp_path):
    result = runner.invoke(
        main,
        ["sweep", "--dataset", "x.json", "--axis", "tc", "--values", "0.1,banana", "--out", str(tmp_path / "s.csv")],
    )
    assert result.exit_code == 1
    assert "comma-separated numbers" in result.stderr


def test_pipeline_error_reported(runner, tmp_path):
    result = runner.invoke(
        main,
        ["densities", "--dataset", str(tmp_path / "ghost.json"), "--out", str(tmp_path / "d")],
    )
    assert result.exit_code == 1
    assert "failed (400)" in result.stderr


def test_serve_help(runner):
    result = invoke_ok(runner, ["serve", "--help"])
    assert "--backend-id" in result.output
