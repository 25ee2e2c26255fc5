import numpy as np
import pytest

from streamreplay.checkpoint import load_checkpoint
from streamreplay.cli import main
from streamreplay.report import read_log
from streamreplay.streams import StreamSpec

from conftest import write_mnist_fixture

SPEC_EXAMPLE = ("run --dataset synth --split synth_pairs --method replay --seed 42 --buffer-capacity 1000 "
                "--lambda 0.5 --epochs 3 --batch 128 --lr 1e-3").split()
FAST = ["--samples-per-phase", "100", "--epochs", "1"]


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("STREAMREPLAY_DATA", raising=False)


def phases_in(path):
    return [r for r in read_log(path) if r["record_type"] == "phase"]


class TestRun:
    def test_spec_example(self, capsys):
        assert main(SPEC_EXAMPLE + ["--out", "runs.log"]) == 0
        recs = phases_in("runs.log")
        assert [r["phase"] for r in recs] == [1, 2, 3, 4, 5]
        assert all(r["method"] == "replay" and r["seed"] == 42 for r in recs)
        assert len([l for l in capsys.readouterr().out.splitlines() if "phase" in l]) == 5

    def test_identical_invocations_append_identical_records(self):
        args = SPEC_EXAMPLE + FAST + ["--out", "runs.log"]
        assert main(args) == 0 and main(args) == 0
        lines = open("runs.log").read().splitlines()
        assert len(lines) == 12 and lines[:6] == lines[6:]

    def test_replay_without_capacity(self, capsys):
        assert main(["run", "--dataset", "synth", "--split", "synth_pairs", "--method", "replay",
                     "--seed", "1"]) == 2
        assert "buffer-capacity" in capsys.readouterr().err

    def test_unknown_flag_prints_usage(self, capsys):
        assert main(SPEC_EXAMPLE + ["--bogus"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_bad_split(self):
        assert main(["run", "--dataset", "synth", "--split", "time", "--method", "seqft", "--seed", "1"]) == 2

    def test_numeric_failure(self):
        assert main(SPEC_EXAMPLE + FAST + ["--lr", "1e306", "--out", "x.log"]) == 3
        (meta,) = read_log("x.log")
        assert meta["status"] == "failed"

    def test_run_meta_echoes_every_flag(self):
        assert main(SPEC_EXAMPLE + FAST + ["--out", "runs.log"]) == 0
        meta = read_log("runs.log")[0]
        assert meta["record_type"] == "run_meta"
        cli = meta["cli"]
        for key in ("hidden", "activation", "policy", "quota", "double_batch", "reset_optimizer",
                    "lam", "epochs", "batch", "lr", "val_fraction", "window_len", "data_root"):
            assert key in cli
        assert meta["config"]["capacity"] == 1000 and meta["config"]["hidden"] == [64]

    def test_config_file_with_override(self, tmp_path):
        (tmp_path / "c.cfg").write_text("dataset = synth\nsplit = synth_drift\nmethod = seqft\n"
                                        "seed = 3\nepochs = 1\nsamples-per-phase = 100\n")
        assert main(["run", "--config", "c.cfg", "--seed", "7", "--out", "c.log"]) == 0
        recs = phases_in("c.log")
        assert {r["seed"] for r in recs} == {7} and recs[0]["split"] == "synth_drift"

    def test_bad_config_key(self, tmp_path):
        (tmp_path / "c.cfg").write_text("colour = blue\n")
        assert main(["run", "--config", "c.cfg", "--method", "seqft", "--seed", "1"]) == 2

    def test_checkpoint_dir(self):
        assert main(SPEC_EXAMPLE + FAST + ["--out", "r.log", "--checkpoint-dir", "ck"]) == 0
        state, cfg = load_checkpoint("ck/synth.synth_pairs_replay_42.ckpt")
        assert state.phases_done == 5 and cfg["seed"] == 42

    def test_probe_verb(self):
        assert main(["probe", "--scenario", "synth.synth_pairs", "--method", "seqft", "--seed", "1",
                     *FAST, "--out", "p.log"]) == 0
        probes = [r for r in read_log("p.log") if r["record_type"] == "probe"]
        assert len(probes) == 10

    def test_data_root_from_environment(self, tmp_path, monkeypatch):
        write_mnist_fixture(tmp_path / "data_here")
        monkeypatch.setenv("STREAMREPLAY_DATA", str(tmp_path / "data_here"))
        assert main(["run", "--scenario", "rotmnist.digits_pairs", "--method", "seqft", "--seed", "0",
                     "--epochs", "1", "--hidden", "8", "--out", "m.log"]) == 0
        assert len(phases_in("m.log")) == 5


class TestMatrix:
    def test_default_matrix_then_report(self, capsys, tmp_path):
        assert main(["matrix", "--out", "m.log"]) == 0
        metas = [r for r in read_log("m.log") if r["record_type"] == "run_meta"]
        assert len(metas) == 12
        assert sorted({m["seed"] for m in metas}) == [13, 21, 42]
        assert {m["scenario"] for m in metas} == {"synth.synth_pairs", "synth.synth_drift"}
        assert len(phases_in("m.log")) == 60

        assert main(["report", "--log", "m.log", "--out-dir", "rep"]) == 0
        out = capsys.readouterr().out
        assert "average forgetting" in out
        files = {p.name for p in (tmp_path / "rep").iterdir()}
        assert {"avg_forgetting.txt", "avg_forgetting.csv", "plot_forgetting_summary.csv",
                "per_phase_synth.synth_pairs.classification.csv",
                "plot_per_phase_accuracy_synth.synth_drift.classification.csv"} <= files

    def test_missing_real_data_names_path(self, capsys):
        assert main(["matrix", "--scenarios", "rotmnist.digits_pairs", "--out", "m.log"]) == 2
        assert "mnist" in capsys.readouterr().err

    def test_unknown_scenario(self):
        assert main(["matrix", "--scenarios", "synth.nope"]) == 2

    def test_report_missing_log(self):
        assert main(["report", "--log", "absent.log"]) == 2


def test_gen_synth(tmp_path):
    assert main(["gen-synth", "--split", "synth_drift", "--samples-per-phase", "50",
                 "--out-dir", "g"]) == 0
    spec = StreamSpec.loads((tmp_path / "g" / "stream.cfg").read_text())
    assert spec.split == "synth_drift" and spec.samples_per_phase == 50
    lines = (tmp_path / "g" / "phase_1.csv").read_text().splitlines()
    assert len(lines) == 51 and lines[0].startswith("part,key,label,x0")
    row = lines[1].split(",")
    assert np.isfinite([float(v) for v in row[3:]]).all()
