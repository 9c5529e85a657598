import json

import pytest
import yaml
from click.testing import CliRunner

from btrfly.cli import cli
from btrfly.schemas.dataset import DatasetManifest, PreparedManifest
from btrfly.services.trainer import train


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def invoke(runner, *args):
    result = runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert "1.0.0" in result.output


def test_unknown_command(runner):
    assert runner.invoke(cli, ["transmogrify"]).exit_code == 2


def test_phantom_and_prepare(runner, tmp_path):
    invoke(runner, "phantom", "--n", 3, "--policy", "lumbar", "--resolution", 4, "--noise-sd", 0, "--out", tmp_path / "data")
    manifest = DatasetManifest.load(tmp_path / "data" / "manifest.json")
    assert len(manifest.scans) == 3
    assert (tmp_path / "data" / "run_record.json").exists()

    result = invoke(
        runner, "prepare", tmp_path / "data" / "manifest.json",
        "--out", tmp_path / "prepared", "--n-aug", 1, "--resolution", 4, "--sigma", 6,
    )
    assert "samples written" in result.output
    prepared = PreparedManifest.load(tmp_path / "prepared" / "prepared_manifest.json")
    assert len(prepared.samples) == 3


def test_toolkit_error_exits_with_status_one(runner, tmp_path):
    DatasetManifest().save(tmp_path / "manifest.json")
    result = runner.invoke(cli, ["prepare", str(tmp_path / "manifest.json"), "--out", str(tmp_path / "p")])
    assert result.exit_code == 1
    assert "EmptyDataset" in result.output


def test_bad_config_exits_with_status_one(runner, prepared_dataset, tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text(yaml.safe_dump({"batch_size": 0}))
    result = runner.invoke(cli, ["train", str(prepared_dataset), "--config", str(config), "--out", str(tmp_path / "run")])
    assert result.exit_code == 1


@pytest.mark.slow
def test_end_to_end(runner, tmp_path, tiny_train_config, tiny_localizer_config):
    data, prepared, run = tmp_path / "data", tmp_path / "prepared", tmp_path / "run"
    invoke(runner, "phantom", "--n", 6, "--policy", "lumbar", "--resolution", 4, "--noise-sd", 0, "--seed", 3, "--out", data)
    manifest = data / "manifest.json"
    invoke(runner, "prepare", manifest, "--out", prepared, "--n-aug", 2, "--resolution", 4, "--sigma", 6)

    config = tmp_path / "train.yaml"
    config.write_text(yaml.safe_dump(tiny_train_config.model_dump(mode="json")))
    invoke(runner, "train", prepared / "prepared_manifest.json", "--config", config, "--mode", "pe_eb", "--iters", 4, "--out", run)
    bundle = run / "model.pt"
    assert bundle.exists() and (run / "train_log.csv").exists()

    loc_config = tmp_path / "localizer.yaml"
    loc_config.write_text(yaml.safe_dump({"model": tiny_localizer_config.model_dump(mode="json"), "device": "cpu"}))
    invoke(runner, "train", manifest, "--network", "localizer", "--config", loc_config, "--iters", 2, "--out", tmp_path / "loc")
    volume = next((data / "volumes").iterdir())
    result = runner.invoke(cli, ["localize", str(volume), "--checkpoint", str(tmp_path / "loc" / "localizer.pt"), "--out", str(tmp_path / "boxes")])
    # an untrained localizer may find nothing; both outcomes are clean exits
    assert result.exit_code in (0, 1)

    predictions = tmp_path / "predictions"
    invoke(runner, "infer", manifest, "--checkpoint", bundle, "--resolution", 4, "--device", "cpu", "--out", predictions)
    test_ids = [s.scan_id for s in DatasetManifest.load(manifest).scans if s.split.value == "test"]
    for scan_id in test_ids:
        assert (predictions / f"{scan_id}.json").exists()

    result = invoke(runner, "evaluate", manifest, "--predictions", predictions)
    report = json.loads((predictions / "metrics.json").read_text())
    assert 0.0 <= report["overall"]["id_rate"] <= 100.0
    assert "mean recall" in result.output

    sweep_dir = tmp_path / "sweep"
    invoke(
        runner, "sweep", manifest, "--checkpoint", bundle, "--t-grid", "0,0.5", "--dth-grid", "10,20",
        "--resolution", 4, "--device", "cpu", "--out", sweep_dir,
    )
    assert (sweep_dir / "pr_curve.csv").read_text().count("\n") == 3
    assert (sweep_dir / "dth_curve.csv").exists()

    codes = tmp_path / "codes.csv"
    invoke(runner, "latent", prepared / "prepared_manifest.json", "--checkpoint", bundle, "--device", "cpu", "--out", codes)
    assert codes.read_text().startswith("scan_id,view,c0")


@pytest.mark.slow
def test_plain_training_overfits_phantoms(prepared_dataset, tiny_train_config, tmp_path):
    cfg = tiny_train_config.model_copy(
        update={"total_iters": 300, "val_every": 100, "checkpoint_every": 1000, "augmentation": tiny_train_config.augmentation.model_copy(update={"enabled": False})}
    )
    result = train(prepared_dataset, cfg, tmp_path)
    head = sum(result.losses[:20]) / 20
    tail = sum(result.losses[-20:]) / 20
    assert tail < head
