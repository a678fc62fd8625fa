import json

import numpy as np
import pytest

from cardiossl.cli import main
from cardiossl.nifti import read_nifti

SMALL = ["--set", "cohort.grid_size=48", "--set", "cohort.grid_spacing=4.0",
         "--set", "views.n_sa_slices=4"]


def run(*argv):
    return main(list(argv))


class TestGenData:
    def test_zero_subjects_exits_clean(self, tmp_path):
        out = tmp_path / "empty"
        assert run("gen-data", "--subjects", "0", "--seed", "1",
                   "--out", str(out)) == 0
        assert out.is_dir()
        assert not [p for p in out.iterdir() if p.is_dir()]

    def test_same_seed_identical_digests(self, tmp_path):
        for name in ("a", "b"):
            assert run("gen-data", "--subjects", "1", "--seed", "5",
                       "--out", str(tmp_path / name), *SMALL) == 0
        da = (tmp_path / "a" / "cohort_digest.txt").read_text()
        db = (tmp_path / "b" / "cohort_digest.txt").read_text()
        assert da == db
        assert run("gen-data", "--subjects", "1", "--seed", "6",
                   "--out", str(tmp_path / "c"), *SMALL) == 0
        assert (tmp_path / "c" / "cohort_digest.txt").read_text() != da

    def test_rerun_same_dir_skips_idempotently(self, tmp_path):
        out = tmp_path / "a"
        args = ("gen-data", "--subjects", "1", "--seed", "5", "--out", str(out))
        assert run(*args, *SMALL) == 0
        digest = (out / "cohort_digest.txt").read_text()
        assert run(*args, *SMALL) == 0
        assert (out / "cohort_digest.txt").read_text() == digest

    def test_manifest_written_and_complete(self, tmp_path):
        out = tmp_path / "a"
        run("gen-data", "--subjects", "1", "--seed", "2", "--out", str(out), *SMALL)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert manifest["config"]["cohort"]["grid_size"] == 48
        assert "created_at" in manifest and "finished_at" in manifest


class TestMakePretext:
    def test_writes_pretext_volumes(self, tmp_path):
        data = tmp_path / "d"
        run("gen-data", "--subjects", "1", "--seed", "3", "--out", str(data), *SMALL)
        assert run("make-pretext", "--data", str(data), "--view", "sa") == 0
        vol, _ = read_nifti(data / "subject_0000" / "ED" / "sa_pretext.nii.gz")
        assert vol.shape == (64, 64, 4)
        assert set(np.unique(vol)) <= set(range(-1, 10))

    def test_la4ch_view(self, tmp_path):
        data = tmp_path / "d"
        run("gen-data", "--subjects", "1", "--seed", "3", "--out", str(data), *SMALL)
        assert run("make-pretext", "--data", str(data), "--view", "la4ch") == 0
        vol, _ = read_nifti(data / "subject_0000" / "ED" / "la_4ch_pretext.nii.gz")
        assert vol.shape == (64, 64)

    def test_empty_cohort_is_data_error(self, tmp_path):
        (tmp_path / "d").mkdir()
        assert run("make-pretext", "--data", str(tmp_path / "d")) == 2


class TestExitCodes:
    def test_usage_error_is_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            run("gen-data")  # missing required flags
        assert exc.value.code == 1

    def test_unknown_command_is_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            run("wibble")
        assert exc.value.code == 1

    def test_missing_data_is_exit_2(self, tmp_path):
        assert run("make-pretext", "--data", str(tmp_path / "nope")) == 2

    def test_missing_checkpoint_names_producing_command(self, tmp_path, capsys):
        ws = tmp_path
        run("gen-data", "--subjects", "3", "--seed", "1",
            "--out", str(ws / "data" / "annotated"), *SMALL)
        code = run("finetune", "--workspace", str(ws), "--mode", "ssl_all",
                   "--subjects", "1", "--seed", "0", *SMALL,
                   "--set", "experiment.annotated_subjects=3",
                   "--set", "experiment.test_subjects=1",
                   "--set", "experiment.budgets=1,2")
        assert code == 2
        err = capsys.readouterr().err
        assert "cardiossl pretrain" in err

    def test_bad_config_value_is_exit_2(self, tmp_path):
        assert run("gen-data", "--subjects", "0", "--out", str(tmp_path / "x"),
                   "--set", "train.beta=0.5") == 2
