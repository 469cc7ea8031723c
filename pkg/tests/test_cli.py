import csv
import json

import numpy as np
import pytest

from featstack.cli import main
from featstack.joint import TransferRecipe, load_trunk
from featstack.store import ConceptSuiteSpec, ConceptTaskSpec, write_bundle
from featstack.store import complementary_pair_spec, generate_concept_tasks, generate_synthetic

TINY_GRID_JSON = {"lrs": [0.05], "regs": [0.01, 0.1], "epochs": [10], "dropout": "off"}


@pytest.fixture()
def bundle_dir(tmp_path):
    bundle = generate_synthetic(complementary_pair_spec(samples_per_class=30), seed=0)
    write_bundle(bundle, tmp_path / "bundle")
    return tmp_path / "bundle"


def grid_file(tmp_path):
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(TINY_GRID_JSON))
    return str(path)


class TestBasicCommands:
    def test_synth_then_ingest(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "b"), "--seed", "5"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["n"] == 1000
        assert main(["ingest", "--manifest", str(tmp_path / "b" / "manifest.json")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["splits"]["train"] == 600

    def test_synth_requires_out(self):
        assert main(["synth"]) == 1

    def test_synth_with_spec_file(self, tmp_path, capsys):
        spec = complementary_pair_spec(samples_per_class=10)
        (tmp_path / "spec.json").write_text(json.dumps(spec.to_json_dict()))
        code = main(
            ["synth", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "b")]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out)["n"] == 40

    def test_ingest_missing_manifest_is_io_error(self, tmp_path):
        assert main(["ingest", "--manifest", str(tmp_path / "nope.json")]) == 2

    def test_ingest_bad_manifest_is_validation_error(self, tmp_path):
        (tmp_path / "bad.json").write_text("{}")
        assert main(["ingest", "--manifest", str(tmp_path / "bad.json")]) == 1

    def test_unknown_argument(self):
        assert main(["subsets", "--networks", "a", "--bogus"]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0

    def test_subsets_csv(self, capsys):
        assert main(["subsets", "--networks", "NIN,VGG16", "--format", "csv"]) == 0
        rows = capsys.readouterr().out.strip().splitlines()
        assert rows == ["networks", "NIN", "VGG16", "NIN+VGG16"]

    def test_weights(self, capsys):
        assert main(["weights", "--accuracies", "GoogLeNet=0.3,VGG16=0.6"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["weights"] == {"GoogLeNet": 0.5, "VGG16": 1.0}

    def test_weights_bad_pair(self):
        assert main(["weights", "--accuracies", "oops"]) == 1


class TestTrainSweepFlow:
    def test_train_writes_model(self, bundle_dir, tmp_path, capsys):
        code = main(
            [
                "train",
                "--manifest", str(bundle_dir / "manifest.json"),
                "--networks", "netA,netB",
                "--epochs", "10",
                "--model-out", str(tmp_path / "model.bin"),
            ]
        )
        assert code == 0
        assert (tmp_path / "model.bin").exists()
        assert (tmp_path / "model.bin.json").exists()
        out = json.loads(capsys.readouterr().out)
        assert out["stack_spec"]["networks"] == ["netA", "netB"]

    def test_sweep_then_confusion_then_report(self, bundle_dir, tmp_path, capsys):
        code = main(
            [
                "sweep",
                "--manifest", str(bundle_dir / "manifest.json"),
                "--networks", "netA,netB",
                "--grid", grid_file(tmp_path),
                "--model-out", str(tmp_path / "winner.bin"),
                "--out", str(tmp_path / "sweep.json"),
                "--parallelism", "2",
            ]
        )
        assert code == 0
        sweep_obj = json.loads((tmp_path / "sweep.json").read_text())
        assert len(sweep_obj["results"]) == 2
        assert sweep_obj["dataset_id"] == "synth"

        code = main(
            [
                "confusion",
                "--model", str(tmp_path / "winner.bin"),
                "--manifest", str(bundle_dir / "manifest.json"),
                "--split", "val",
                "--format", "csv",
                "--out", str(tmp_path / "conf.csv"),
            ]
        )
        assert code == 0
        with open(tmp_path / "conf.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 5  # header + 4 classes

        code = main(
            ["report", "--results", str(tmp_path / "sweep.json"), "--format", "csv"]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("networks,dataset_id,accuracy,degradation")
        assert len(lines) == 2

    def test_ensemble(self, bundle_dir, tmp_path, capsys):
        code = main(
            [
                "ensemble",
                "--manifest", str(bundle_dir / "manifest.json"),
                "--networks", "netA,netB",
                "--grid", grid_file(tmp_path),
            ]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert len(out["subsets"]) == 3
        assert 0.0 <= out["ensemble_accuracy"] <= 1.0


def tiny_recipe() -> dict:
    suite = ConceptSuiteSpec(
        input_dim=6,
        num_concepts=4,
        separation=4.0,
        noise_sigma=1.0,
        tasks={
            "D": ConceptTaskSpec(classes=((0,), (1,), (2,), (3,)), samples_per_class=15),
            "A": ConceptTaskSpec(classes=((0, 1), (2, 3)), samples_per_class=15),
            "B": ConceptTaskSpec(classes=((0, 2), (1, 3)), samples_per_class=15),
            "C": ConceptTaskSpec(classes=((0,), (3,)), samples_per_class=15),
        },
    )
    recipe = TransferRecipe(seeds=(0,), suite=suite, trunk_hidden=(8,))
    obj = recipe.to_json_dict()
    obj["base_train"]["epochs"] = 10
    obj["finetune"]["epochs"] = 10
    obj["grid"] = {"lrs": [0.05], "regs": [0.1], "epochs": [10], "dropout": "off"}
    return obj


class TestJointCommands:
    def test_joint_train_and_transfer_eval(self, tmp_path, capsys):
        (tmp_path / "recipe.json").write_text(json.dumps(tiny_recipe()))
        code = main(
            [
                "joint-train",
                "--recipe", str(tmp_path / "recipe.json"),
                "--out", str(tmp_path / "exp"),
                "--save-trunks",
                "--format", "csv",
            ]
        )
        assert code == 0
        results = (tmp_path / "exp" / "transfer_results.csv").read_text().splitlines()
        assert results[0].startswith("task,trunk,seed0,median")
        trunk_file = tmp_path / "exp" / "seed0" / "trunkD.npz"
        assert trunk_file.exists()
        assert load_trunk(trunk_file).input_dim == 6

        suite = ConceptSuiteSpec.from_json_dict(tiny_recipe()["suite"])
        bundles = generate_concept_tasks(suite, seed=0)
        write_bundle(bundles["C"], tmp_path / "taskC")
        capsys.readouterr()
        code = main(
            [
                "transfer-eval",
                "--trunk", str(trunk_file),
                "--manifest", str(tmp_path / "taskC" / "manifest.json"),
            ]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["task"] == "C"
        assert 0.0 <= out["accuracy"] <= 1.0
