import json

import pytest
import torch
import yaml

from motionfill.cli import main
from motionfill.metrics import read_report_csv
from motionfill.pseq import load_corpus, load_sequence, save_sequence
from motionfill.train import load_checkpoint

TINY = {
    "generation": {"count": 8, "duration_range": [20, 24], "seed": 1},
    "model": {"seq_len": 8, "d_model": 32, "num_blocks": 1, "num_heads": 2, "regressor_hidden": 32},
    "corruption": {"mask_ratio": 0.25},
    "train": {"batch_size": 2, "max_steps": 10, "eval_every": 5, "seed": 0},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.yaml"
    cfg_path.write_text(yaml.safe_dump(TINY))
    data = root / "corpus"
    assert main(["generate", "--config", str(cfg_path), "--out", str(data)]) == 0
    ckpt = root / "model.ckpt"
    assert main(["train", "--config", str(cfg_path), "--data", str(data), "--out", str(ckpt)]) == 0
    return {"root": root, "config": cfg_path, "data": data, "ckpt": ckpt}


class TestGenerate:
    def test_corpus_written(self, workspace):
        corpus = load_corpus(workspace["data"])
        assert len(corpus) == 8
        assert len(corpus.train) == 6

    def test_count_override(self, workspace, tmp_path):
        out = tmp_path / "corpus5"
        assert main(["generate", "--config", str(workspace["config"]), "--out", str(out), "--count", "5"]) == 0
        assert len(load_corpus(out)) == 5

    def test_seed_changes_output(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cfg = str(workspace["config"])
        main(["generate", "--config", cfg, "--out", str(a), "--count", "2", "--seed", "1"])
        main(["generate", "--config", cfg, "--out", str(b), "--count", "2", "--seed", "2"])
        sa = load_corpus(a).train[0]
        sb = load_corpus(b).train[0]
        assert len(sa) != len(sb) or not torch.allclose(sa.rots, sb.rots)


class TestTrain:
    def test_checkpoint_written(self, workspace):
        ckpt = load_checkpoint(workspace["ckpt"])
        assert ckpt.step == 10
        assert ckpt.model_config.d_model == 32

    def test_resume_advances(self, workspace, tmp_path):
        out = tmp_path / "resumed.ckpt"
        code = main(
            ["train", "--data", str(workspace["data"]), "--out", str(out), "--resume", str(workspace["ckpt"]), "--steps", "3"]
        )
        assert code == 0
        assert load_checkpoint(out).step == 13

    def test_log_written(self, workspace, tmp_path):
        out = tmp_path / "logged.ckpt"
        log = tmp_path / "train.jsonl"
        main(
            ["train", "--data", str(workspace["data"]), "--out", str(out), "--resume", str(workspace["ckpt"]), "--steps", "5", "--log", str(log)]
        )
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert records
        assert {"step", "loss"} <= set(records[0])


class TestEval:
    def test_report_rows(self, workspace, tmp_path):
        report = tmp_path / "report.csv"
        code = main(
            ["eval", "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["data"]), "--report", str(report), "--split", "test"]
        )
        assert code == 0
        rows = read_report_csv(report)
        methods = {r.method for r in rows}
        assert methods == {"model", "nearest_fill", "savgol", "median"}
        means = [r for r in rows if r.sequence == "mean"]
        assert len(means) == 4
        assert all(r.mpjpe_mm >= 0 for r in rows)

    def test_empty_split_fails(self, workspace, tmp_path, capsys):
        report = tmp_path / "report.csv"
        code = main(
            ["eval", "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["data"]), "--report", str(report), "--split", "val"]
        )
        assert code == 1
        assert capsys.readouterr().err.startswith("error:")


class TestInfer:
    @pytest.fixture()
    def sample_path(self, workspace, tmp_path):
        seq = load_corpus(workspace["data"]).test[0]
        path = tmp_path / "in.pseq"
        save_sequence(path, seq)
        return path

    def test_refine(self, workspace, sample_path, tmp_path):
        out = tmp_path / "out.pseq"
        code = main(["infer", "--ckpt", str(workspace["ckpt"]), "--task", "refine", "--input", str(sample_path), "--output", str(out)])
        assert code == 0
        result = load_sequence(out)
        assert len(result) == len(load_sequence(sample_path))

    def test_future(self, workspace, sample_path, tmp_path):
        out = tmp_path / "future.pseq"
        code = main(
            ["infer", "--ckpt", str(workspace["ckpt"]), "--task", "future", "--input", str(sample_path), "--output", str(out), "--horizon", "3"]
        )
        assert code == 0
        assert len(load_sequence(out)) == 3

    def test_bad_horizon(self, workspace, sample_path, tmp_path, capsys):
        code = main(
            ["infer", "--ckpt", str(workspace["ckpt"]), "--task", "future", "--input", str(sample_path), "--output", str(tmp_path / "x.pseq"), "--horizon", "0"]
        )
        assert code == 1
        assert "horizon" in capsys.readouterr().err


class TestStudy:
    def test_rows_written(self, workspace, tmp_path):
        report = tmp_path / "study.csv"
        code = main(
            [
                "study",
                "--ckpt", str(workspace["ckpt"]),
                "--data", str(workspace["data"]),
                "--report", str(report),
                "--drops", "0.0,0.5",
                "--limit", "1",
            ]
        )
        assert code == 0
        lines = report.read_text().splitlines()
        assert lines[0].startswith("drop_frac,")
        assert len(lines) == 3


class TestErrors:
    def test_missing_file(self, capsys):
        assert main(["eval", "--ckpt", "/no/such.ckpt", "--data", "/no/dir", "--report", "/tmp/r.csv"]) == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_unknown_task_is_usage_error(self, workspace):
        with pytest.raises(SystemExit):
            main(["infer", "--ckpt", str(workspace["ckpt"]), "--task", "teleport", "--input", "a", "--output", "b"])

    def test_bad_drops_list(self, workspace, tmp_path, capsys):
        code = main(
            ["study", "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["data"]), "--report", str(tmp_path / "s.csv"), "--drops", "0.1,banana"]
        )
        assert code == 1
        assert "drops" in capsys.readouterr().err
