import json

import pytest

from convsearch_rl.cli import main
from convsearch_rl.evaluation import EvalReport, aggregate


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root), "--conversations", "12", "--seed", "4"]) == 0
    return root


def test_gen_data_files(workdir):
    for name in ("train.jsonl", "corpus.jsonl", "qrels.tsv", "config.ini"):
        assert (workdir / name).stat().st_size > 0


def test_index(workdir):
    out = workdir / "index.json"
    assert main(["index", "--corpus", str(workdir / "corpus.jsonl"), "--out", str(out)]) == 0
    assert out.exists()


def _train(workdir, name, steps=20):
    return main(["train", "--config", str(workdir / "config.ini"), "--output-dir",
                 str(workdir / name), "--steps", str(steps)])


def test_identical_runs_are_byte_identical(workdir):
    # checkpoint interval 50 must divide the step count
    assert _train(workdir, "r1", 50) == 0 and _train(workdir, "r2", 50) == 0
    for name in ("checkpoints/step_00050.json", "diagnostics.jsonl", "model.json"):
        assert (workdir / "r1" / name).read_bytes() == (workdir / "r2" / name).read_bytes()


def test_eval_and_report(workdir, capsys):
    if not (workdir / "r1" / "model.json").exists():
        assert _train(workdir, "r1", 50) == 0
    out = workdir / "eval.json"
    assert main(["eval", "--config", str(workdir / "config.ini"), "--checkpoint",
                 str(workdir / "r1" / "checkpoints" / "step_00050.json"), "--out", str(out)]) == 0
    rep = EvalReport.from_json(out.read_text())
    assert aggregate(rep.per_turn) == rep.aggregates
    assert rep.meta["step"] == 50 and rep.meta["alpha"] == 0.2
    capsys.readouterr()
    tables = workdir / "tables.json"
    assert main(["report", str(out), "--out", str(tables)]) == 0
    assert "Reward ratio sweep" in capsys.readouterr().out
    assert json.loads(tables.read_text())["alpha_sweep"][0]["alpha"] == 0.2


def test_missing_checkpoint_exit_code(workdir, capsys):
    code = main(["eval", "--config", str(workdir / "config.ini"), "--checkpoint",
                 str(workdir / "nope.json"), "--out", str(workdir / "x.json")])
    assert code == 2
    assert "checkpoint not found" in capsys.readouterr().err


def test_bad_config_exit_code(workdir, capsys):
    bad = workdir / "bad.ini"
    bad.write_text((workdir / "config.ini").read_text().replace("alpha = 0.2", "alpha = -1"))
    assert main(["train", "--config", str(bad), "--steps", "0"]) == 2
    assert "reward" in capsys.readouterr().err


def test_step_interval_mismatch(workdir, capsys):
    assert _train(workdir, "r3", 20) == 2
    assert "checkpoint_interval" in capsys.readouterr().err


@pytest.mark.slow
def test_full_run_writes_ten_checkpoints(workdir):
    assert _train(workdir, "full", 500) == 0
    ckpts = sorted((workdir / "full" / "checkpoints").glob("step_*.json"))
    assert [p.name for p in ckpts] == [f"step_{s:05d}.json" for s in range(50, 501, 50)]
    lines = (workdir / "full" / "diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == 500
