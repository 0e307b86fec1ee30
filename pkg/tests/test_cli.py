"""End-to-end tests for the ``emim`` command line."""

import pandas as pd
import pytest
import torch

from src.cli.main import CHECKPOINT_NAME, MASK_NAME, main
from src.core.errors import ExitCode
from src.network import EmimModel
from src.repositories import CheckpointRepository, DatasetRepository


GEN = [
    "--set", "gen.num_samples=4",
    "--set", "gen.num_modalities=2",
    "--set", "gen.dims=8,8,8",
]
TINY_TRAIN = [
    "--set", "encoder.depth=2",
    "--set", "encoder.embed_dim=8",
    "--set", "encoder.num_heads=2",
    "--set", "encoder.pyramid_levels=2",
    "--set", "train.total_steps=2",
    "--set", "train.eval_every=1",
    "--set", "train.batch_size=4",
    "--set", "train.probe_size=4",
    "--set", "train.eval_draws=50",
]


@pytest.fixture
def data_dir(balanced_dataset, tmp_path):
    return DatasetRepository().save(balanced_dataset, tmp_path / "data")


@pytest.fixture
def checkpoint(small_encoder_config, tmp_path):
    model = EmimModel(small_encoder_config)
    return CheckpointRepository().save(model, tmp_path / "model" / CHECKPOINT_NAME)


class TestGenData:
    def test_writes_dataset(self, tmp_path):
        out = tmp_path / "data"
        assert main(["gen-data", *GEN, "--out", str(out)]) == ExitCode.OK
        assert len(list(out.glob("*.mmv"))) == 4
        assert len(DatasetRepository().load(out)) == 4

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        main(["gen-data", *GEN, "--out", str(tmp_path / "a")])
        main(["gen-data", *GEN, "--out", str(tmp_path / "b")])
        for first in sorted((tmp_path / "a").iterdir()):
            assert first.read_bytes() == (tmp_path / "b" / first.name).read_bytes()

    def test_config_file(self, tmp_path):
        config = tmp_path / "lab.cfg"
        config.write_text("gen.num_samples=3\ngen.num_modalities=1\ngen.dims=4,4,4\n")
        out = tmp_path / "data"
        assert main(["gen-data", "--config", str(config), "--out", str(out)]) == ExitCode.OK
        assert len(list(out.glob("*.mmv"))) == 3


class TestErrors:
    def test_unknown_key_exits_with_config_code(self, tmp_path, capsys):
        code = main(["gen-data", "--set", "gen.colour=red", "--out", str(tmp_path)])
        assert code == ExitCode.CONFIG
        assert "gen.colour" in capsys.readouterr().err

    def test_invalid_value_exits_with_config_code(self, tmp_path, capsys):
        code = main(["gen-data", "--set", "gen.diversity=-1", "--out", str(tmp_path)])
        assert code == ExitCode.CONFIG
        assert "invalid configuration" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path):
        code = main(
            ["estimate-var", "--set", f"data.dir={tmp_path / 'absent'}", "--out", str(tmp_path)]
        )
        assert code == ExitCode.MISSING_INPUT

    def test_missing_checkpoint(self, data_dir, tmp_path):
        code = main(
            [
                "diagnose",
                "--set", f"data.dir={data_dir}",
                "--set", f"diagnose.checkpoint={tmp_path / 'absent.emim'}",
                "--out", str(tmp_path),
            ]
        )
        assert code == ExitCode.MISSING_INPUT

    def test_undecodable_checkpoint(self, checkpoint, data_dir, tmp_path, capsys):
        checkpoint.write_bytes(checkpoint.read_bytes().replace(b"encoder.", b"\xffncoder.", 1))
        code = main(
            [
                "probe",
                "--set", f"data.dir={data_dir}",
                "--set", f"probe.checkpoint={checkpoint}",
                "--out", str(tmp_path),
            ]
        )
        assert code == ExitCode.MISSING_INPUT
        assert "bad_text" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        code = main(["gen-data", "--config", str(tmp_path / "absent.cfg")])
        assert code == ExitCode.MISSING_INPUT

    def test_help_lists_keys(self, capsys):
        with pytest.raises(SystemExit):
            main(["pretrain", "--help"])
        out = capsys.readouterr().out
        assert "hmp.patch_min_visible" in out
        assert "train.total_steps" in out

    def test_estimate_help_names_the_comparison_centering(self, capsys):
        with pytest.raises(SystemExit):
            main(["estimate-var", "--help"])
        assert "estimate.centering=mask_unit" in capsys.readouterr().out


class TestEstimateVar:
    def test_constant_dataset_has_zero_variance(self, tmp_path):
        data = tmp_path / "data"
        main(
            [
                "gen-data", *GEN,
                "--set", "gen.diversity=0",
                "--set", "gen.lesion_probability=0",
                "--out", str(data),
            ]
        )
        out = tmp_path / "out"
        code = main(
            [
                "estimate-var",
                "--set", f"data.dir={data}",
                "--set", "estimate.num_draws=200",
                "--out", str(out),
            ]
        )
        assert code == ExitCode.OK
        table = pd.read_csv(out / "variance.csv", comment="#")
        assert len(table) == 6
        assert set(table["strategy"]) == {"random", "hmp"}
        assert (table["mean_var"] == 0.0).all()
        assert (out / "variance.csv").read_text().startswith("# convergence_threshold=")


class TestMaskPreview:
    def test_writes_mask(self, tmp_path):
        code = main(["mask-preview", "--set", "preview.seed=4", "--out", str(tmp_path)])
        assert code == ExitCode.OK
        lines = (tmp_path / MASK_NAME).read_text().splitlines()
        assert lines[0] == "4 64 0.75 4"
        assert len(lines) == 1 + 48 * 4


class TestTrainingCommands:
    def test_pretrain_is_reproducible(self, data_dir, tmp_path):
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(["pretrain", *TINY_TRAIN, "--set", f"data.dir={data_dir}", "--out", str(out)])
            assert code == ExitCode.OK
            outputs.append(out)
        for name in ("train_log.csv", "eval_log.csv", CHECKPOINT_NAME):
            assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
        assert len(pd.read_csv(outputs[0] / "train_log.csv")) == 2
        assert len(pd.read_csv(outputs[0] / "eval_log.csv")) == 3

    def test_diagnose_constant_model(self, small_encoder_config, data_dir, tmp_path):
        model = EmimModel(small_encoder_config)
        with torch.no_grad():
            model.head.weight.zero_()
        path = CheckpointRepository().save(model, tmp_path / CHECKPOINT_NAME)
        out = tmp_path / "diag"
        code = main(
            [
                "diagnose",
                "--set", f"data.dir={data_dir}",
                "--set", f"diagnose.checkpoint={path}",
                "--set", "diagnose.num_draws=100",
                "--set", "diagnose.probe_size=4",
                "--out", str(out),
            ]
        )
        assert code == ExitCode.OK
        assert "trivial_score=1.0\n" in (out / "collapse_summary.txt").read_text()
        assert len(pd.read_csv(out / "collapse_report.csv")) == 4
        assert len(pd.read_csv(out / "spectrum.csv")) == small_encoder_config.embed_dim

    def test_diagnose_rejects_mismatched_dataset(self, checkpoint, tmp_path):
        data = tmp_path / "data4"
        main(["gen-data", *GEN, "--set", "gen.dims=4,4,4", "--out", str(data)])
        code = main(
            [
                "diagnose",
                "--set", f"data.dir={data}",
                "--set", f"diagnose.checkpoint={checkpoint}",
                "--out", str(tmp_path),
            ]
        )
        assert code != ExitCode.OK

    def test_probe(self, checkpoint, data_dir, tmp_path):
        code = main(
            [
                "probe",
                "--set", f"data.dir={data_dir}",
                "--set", f"probe.checkpoint={checkpoint}",
                "--out", str(tmp_path),
            ]
        )
        assert code == ExitCode.OK
        text = (tmp_path / "probe.txt").read_text()
        assert text.startswith("accuracy=")
        assert "test_size=6" in text

    def test_ablate(self, data_dir, tmp_path):
        code = main(
            [
                "ablate", *TINY_TRAIN,
                "--set", "train.total_steps=1",
                "--set", f"data.dir={data_dir}",
                "--out", str(tmp_path),
            ]
        )
        assert code == ExitCode.OK
        table = pd.read_csv(tmp_path / "ablation.csv")
        assert list(table["name"]) == ["random", "random+pbt", "hmp", "hmp+pbt"]
