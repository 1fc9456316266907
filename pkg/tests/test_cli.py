import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from resunet.cli import dispatch
from resunet.config import build_config, load_config
from resunet.errors import ConfigError
from resunet.io import list_case_dirs, read_case, read_labels
from resunet.volume import BRATS_LABELS

TINY_TOML = """
seed = 3

[network]
depth = 2
base_filters = 4

[train]
epochs = 1
batch_size = 8

[data]
patch_size = 32
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = root / "cfg.toml"
    cfg.write_text(TINY_TOML)
    steps = [
        ["phantom", "--n", "3", "--dims", "32", "--seed", "4", "--out", str(root / "data")],
        ["preprocess", "--data", str(root / "data"), "--config", str(cfg), "--out", str(root / "patches")],
        ["train", "--patches", str(root / "patches"), "--config", str(cfg), "--regime", "per_view_ensemble", "--out", str(root / "models")],
        ["predict", "--models", str(root / "models"), "--data", str(root / "data"), "--out", str(root / "preds")],
        ["evaluate", "--pred", str(root / "preds"), "--gt", str(root / "data"), "--out", str(root / "eval")],
        ["report", "--eval", f"ensemble={root / 'eval'}", "--out", str(root / "report" / "table.md")],
    ]
    codes = [dispatch(argv) for argv in steps]
    return root, codes


def test_pipeline_exit_codes(pipeline):
    _, codes = pipeline
    assert codes == [0] * 6


def test_phantom_outputs(pipeline):
    root, _ = pipeline
    dirs = list_case_dirs(root / "data")
    assert len(dirs) == 3
    case = read_case(dirs[0])
    assert case.dims == (32, 32, 32) and case.labels is not None


def test_preprocess_writes_every_view(pipeline):
    root, _ = pipeline
    counts = json.loads((root / "patches" / "manifest.json").read_text())["patch_counts"]
    assert set(counts) == {"axial", "sagittal", "coronal"}
    for view in counts:
        assert (root / "patches" / f"{view}_index.json").exists()


def test_ensemble_training_outputs(pipeline):
    root, _ = pipeline
    models = root / "models"
    assert sorted(p.name for p in models.glob("*.pt")) == ["model_axial.pt", "model_coronal.pt", "model_sagittal.pt"]
    for view in ("axial", "sagittal", "coronal"):
        with open(models / f"history_{view}.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1 and set(rows[0]) == {"epoch", "train_loss", "val_loss", "seconds"}


def test_predictions_are_label_volumes(pipeline):
    root, _ = pipeline
    preds = sorted((root / "preds").glob("*.nii.gz"))
    assert len(preds) == 3
    labels = read_labels(preds[0])
    assert labels.shape == (32, 32, 32)
    assert set(np.unique(labels).tolist()) <= set(BRATS_LABELS)


def test_evaluation_outputs(pipeline):
    root, _ = pipeline
    with open(root / "eval" / "per_case.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 3 * 4
    summary = (root / "eval" / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("statistic,Dice_ET,Dice_WT,Dice_TC")
    assert "WT" in json.loads((root / "eval" / "boxplots.json").read_text())


def test_report_table(pipeline):
    root, _ = pipeline
    text = (root / "report" / "table.md").read_text()
    assert text.startswith("| Method | Dice ET | Dice WT | Dice TC |")
    assert "| ensemble |" in text


def test_every_step_writes_a_manifest(pipeline):
    root, _ = pipeline
    for name in ("data", "patches", "models", "preds", "eval", "report"):
        manifest = json.loads((root / name / "manifest.json").read_text())
        assert "versions" in manifest and "torch" in manifest["versions"]
    train = json.loads((root / "models" / "manifest.json").read_text())
    assert train["seed"] == 3 and len(train["config_hash"]) == 64


def test_refuses_to_overwrite(pipeline, capsys):
    root, _ = pipeline
    before = (root / "data" / "manifest.json").read_text()
    assert dispatch(["phantom", "--n", "1", "--dims", "32", "--out", str(root / "data")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: OutputExists:")
    assert (root / "data" / "manifest.json").read_text() == before


def test_force_overwrites(tmp_path):
    out = tmp_path / "d"
    assert dispatch(["phantom", "--n", "2", "--dims", "32", "--out", str(out)]) == 0
    assert dispatch(["phantom", "--n", "1", "--dims", "32", "--out", str(out), "--force"]) == 0
    assert len(list_case_dirs(out)) == 1


def test_fixture_format(tmp_path):
    assert dispatch(["phantom", "--n", "1", "--dims", "32", "--format", "fixture", "--out", str(tmp_path / "d")]) == 0
    (case_dir,) = list_case_dirs(tmp_path / "d")
    assert any(p.suffix == ".raw" for p in case_dir.iterdir())
    assert read_case(case_dir).dims == (32, 32, 32)


def test_usage_errors_exit_two(tmp_path):
    assert dispatch([]) == 2
    assert dispatch(["bogus"]) == 2
    assert dispatch(["phantom", "--out", str(tmp_path)]) == 2
    assert dispatch(["train", "--patches", "p", "--out", "o", "--regime", "both"]) == 2


def test_domain_error_exit_one(tmp_path, capsys):
    assert dispatch(["phantom", "--n", "1", "--dims", "8", "--out", str(tmp_path / "x")]) == 1
    assert capsys.readouterr().err.startswith("error: SpecError:")
    assert dispatch(["evaluate", "--pred", str(tmp_path), "--gt", str(tmp_path / "none"), "--out", str(tmp_path / "e")]) == 1


def test_train_without_patches(tmp_path, capsys):
    (tmp_path / "p").mkdir()
    assert dispatch(["train", "--patches", str(tmp_path / "p"), "--out", str(tmp_path / "m")]) == 1
    assert "no axial patches" in capsys.readouterr().err


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "resunet", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("resunet ")


def test_toml_config_and_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(TINY_TOML)
    cfg = load_config(path, {"train.epochs": 5, "data.patch_size": None})
    assert cfg.network.base_filters == 4 and cfg.train.epochs == 5
    assert cfg.data.patch_size == 32
    assert cfg.train.seed == 3


def test_json_fallback(tmp_path):
    body = json.dumps({"seed": 2, "train": {"epochs": 4}})
    (tmp_path / "c.json").write_text(body)
    (tmp_path / "c.cfg").write_text(body)
    assert load_config(tmp_path / "c.json").train.epochs == 4
    assert load_config(tmp_path / "c.cfg").train.seed == 2


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        build_config({"train": {"epoch": 3}})
    with pytest.raises(ConfigError):
        build_config({"model": {}})
    (tmp_path / "bad.toml").write_text("[train\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_config_hash_tracks_content():
    a, b = build_config({"seed": 1}), build_config({"seed": 1})
    assert a.hash() == b.hash()
    assert a.hash() != build_config({"seed": 2}).hash()
