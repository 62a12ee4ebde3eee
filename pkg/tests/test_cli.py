import json
import subprocess
import sys

import numpy as np
import pytest

from poseconsensus import io
from poseconsensus.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, exit_code, main, thread_count
from poseconsensus.config import ConfigError, resolve
from poseconsensus.consensus import InfeasibleProblemError
from poseconsensus.core import GroupSet
from poseconsensus.grouping import NonTerminationError

TINY = {
    "version": 1,
    "seed": 3,
    "synth": {"frames": 60, "sequences": 2, "test_frames": 30},
    "grouping": {"n_g": 8, "m_g": 2, "similarity_frames": 60},
    "train": {"hidden": 8, "epochs": 1, "batch_size": 32, "e2e_epochs": 1},
    "heatmaps": {"enabled": True, "size": 32, "frames": 6},
    "admm": {"max_iter": 300},
    "sweep": {"n_g": [8, 17]},
}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(TINY))
    return p


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("POSECONSENSUS_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("POSECONSENSUS_THREADS", raising=False)


# -- config ---------------------------------------------------------------------------


def test_config_defaults_and_validation():
    cfg = resolve({"version": 1})
    assert cfg["train"]["hidden"] == 64 and cfg["seed"] == 0
    for bad in ({}, {"version": 2}, {"version": 1, "extra": 1}, {"version": 1, "train": {"nope": 1}},
                {"version": 1, "train": {"epochs": "ten"}}, {"version": 1, "seed": -1},
                {"version": 1, "train": []}, {"version": 1, "train": {"shared_lifter": 1}}):
        with pytest.raises(ConfigError):
            resolve(bad)
    assert resolve({"version": 1, "train": {"learning_rate": 1}})["train"]["learning_rate"] == 1


def test_exit_code_mapping():
    assert exit_code(ConfigError("x")) == EXIT_USAGE
    assert exit_code(FileNotFoundError("x")) == EXIT_DATA
    assert exit_code(io.FormatError("x")) == EXIT_DATA
    assert exit_code(FloatingPointError("x")) == EXIT_NUMERIC
    assert exit_code(np.linalg.LinAlgError("x")) == EXIT_NUMERIC
    assert exit_code(NonTerminationError("x")) == EXIT_NUMERIC
    assert exit_code(InfeasibleProblemError("x")) == EXIT_DATA


def test_thread_count(monkeypatch):
    assert thread_count(None) == 1
    monkeypatch.setenv("POSECONSENSUS_THREADS", "3")
    assert thread_count(None) == 3
    assert thread_count(2) == 2
    monkeypatch.setenv("POSECONSENSUS_THREADS", "many")
    with pytest.raises(Exception):
        thread_count(None)


# -- usage errors -------------------------------------------------------------------


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["heatmap", "spin"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["eval", "mpjpe", "--pred", "a", "--gt", "b", "--protocol", "3"])
    assert e.value.code == EXIT_USAGE
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "bogus": True}))
    assert main(["pipeline", "run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    cfg.write_text("{not json")
    assert main(["pipeline", "run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["--threads", "0", "plots", "--results", str(tmp_path)]) == EXIT_USAGE


def test_data_errors(tmp_path):
    assert main(["eval", "mpjpe", "--pred", str(tmp_path / "missing.csv"), "--gt", "x"]) == EXIT_DATA
    (tmp_path / "bad.hmap").write_bytes(b"junk")
    assert main(["heatmap", "convert", "--heatmaps", str(tmp_path / "bad.hmap"),
                 "--out", str(tmp_path / "o.csv")]) == EXIT_DATA
    assert main(["plots", "--results", str(tmp_path)]) == EXIT_DATA
    a = np.zeros((2, 4, 3))
    io.write_poses(tmp_path / "a.csv", a)
    io.write_poses(tmp_path / "b.csv", np.zeros((2, 5, 3)))
    assert main(["eval", "mpjpe", "--pred", str(tmp_path / "a.csv"), "--gt", str(tmp_path / "b.csv")]) == EXIT_DATA


# -- individual commands ------------------------------------------------------------


def test_synth_groups_heatmaps_roundtrip(tmp_path, tiny_config):
    d = tmp_path
    assert main(["synth", "--config", str(tiny_config), "--out-3d", str(d / "p3.csv"), "--out-2d",
                 str(d / "p2.csv"), "--out-heatmaps", str(d / "h.hmap"), "--skeleton", str(d / "sk.json")]) == 0
    X3 = io.read_poses(d / "p3.csv")
    assert X3.shape == (120, 17, 3)
    assert io.read_heatmaps(d / "h.hmap").shape == (120, 17, 32, 32)
    assert main(["groups", "select", "--poses", str(d / "p3.csv"), "--config", str(tiny_config),
                 "--out", str(d / "g.json")]) == 0
    gs = io.read_groups(d / "g.json")
    assert gs.n_g == 8 and min(gs.coverage) >= 2

    assert main(["heatmap", "render", "--poses", str(d / "p2.csv"), "--size", "32",
                 "--out", str(d / "clean.hmap")]) == 0
    assert main(["heatmap", "convert", "--heatmaps", str(d / "clean.hmap"), "--out", str(d / "xy.csv")]) == 0
    x2 = io.read_poses(d / "p2.csv")
    # border-truncated Gaussians are biased; float32 storage bounds the rest
    inside = ((x2 >= 7) & (x2 <= 26)).all(axis=-1)
    assert inside.mean() > 0.5
    np.testing.assert_allclose(io.read_poses(d / "xy.csv")[inside], x2[inside], atol=2e-3)
    assert main(["heatmap", "convert", "--heatmaps", str(d / "clean.hmap"), "--out", str(d / "xy0.csv"),
                 "--zero-based", "--hard"]) == 0
    assert main(["heatmap", "bias", "--heatmaps", str(d / "h.hmap"), "--out", str(d / "bias")]) == 0
    summary = io.read_json(d / "bias" / "bias_summary.json")
    assert 0.0 <= summary["fraction_below_1px"] <= 1.0
    assert main(["plots", "--results", str(d / "bias")]) == 0
    assert (d / "bias" / "plots" / "bias_density.svg").exists()


def test_lift_and_consensus_commands(tmp_path, tiny_config):
    d = tmp_path
    main(["synth", "--config", str(tiny_config), "--out-3d", str(d / "p3.csv"), "--out-2d", str(d / "p2.csv")])
    main(["groups", "select", "--poses", str(d / "p3.csv"), "--config", str(tiny_config), "--out", str(d / "g.json")])
    assert main(["lift", "train", "--groups", str(d / "g.json"), "--config", str(tiny_config),
                 "--poses-2d", str(d / "p2.csv"), "--poses-3d", str(d / "p3.csv"), "--out", str(d / "m")]) == 0
    assert (d / "m" / "train_log.csv").read_text().startswith("epoch,")
    assert main(["lift", "eval", "--model", str(d / "m"), "--config", str(tiny_config), "--poses-2d",
                 str(d / "p2.csv"), "--poses-3d", str(d / "p3.csv"), "--out", str(d / "ev")]) == 0
    assert main(["consensus", "solve", "--groups", str(d / "g.json"), "--hypotheses",
                 str(d / "ev" / "hypotheses.tnsr"), "--out", str(d / "cons.csv"), "--max-iter", "300"]) == 0
    X = io.read_poses(d / "cons.csv")
    # same settings as the config used by lift eval
    np.testing.assert_allclose(X, io.read_poses(d / "ev" / "pred_3d.csv"), atol=1e-12)
    diag = (d / "cons_diagnostics.csv").read_text().splitlines()
    assert diag[0] == "sample,iterations,converged,primal,dual,objective" and len(diag) == 121
    assert (d / "cons_diagnostics_trace.csv").exists()
    assert main(["consensus", "solve", "--groups", str(d / "g.json"), "--hypotheses",
                 str(d / "ev" / "hypotheses.tnsr"), "--out", str(d / "c2.csv"), "--max-iter", "2",
                 "--strict"]) == EXIT_NUMERIC
    assert main(["eval", "mpjpe", "--pred", str(d / "cons.csv"), "--gt", str(d / "p3.csv"), "--protocol", "2",
                 "--out", str(d / "em")]) == 0
    assert io.read_json(d / "em" / "eval_p2.json")["alignment"] == "similarity"
    other = GroupSet.from_indices([tuple(range(17))], 17)
    io.write_groups(d / "other.json", other)
    assert main(["lift", "eval", "--model", str(d / "m"), "--groups", str(d / "other.json"),
                 "--poses-2d", str(d / "p2.csv"), "--out", str(d / "ev2")]) == EXIT_DATA


def test_consensus_rejects_uncovered_joints(tmp_path):
    io.write_groups(tmp_path / "g.json", GroupSet.from_indices([(0, 1)], 3))
    io.write_tensors(tmp_path / "h.tnsr", {"hypotheses": np.zeros((1, 1, 2, 3))})
    assert main(["consensus", "solve", "--groups", str(tmp_path / "g.json"), "--hypotheses",
                 str(tmp_path / "h.tnsr"), "--out", str(tmp_path / "o.csv")]) == EXIT_DATA


# -- pipeline ------------------------------------------------------------------------


def test_pipeline_is_deterministic_and_plottable(tmp_path, tiny_config):
    assert main(["pipeline", "run", "--config", str(tiny_config), "--out", str(tmp_path / "a")]) == 0
    assert main(["pipeline", "run", "--config", str(tiny_config), "--out", str(tmp_path / "b")]) == 0
    ma = (tmp_path / "a" / "manifest.json").read_text()
    assert ma == (tmp_path / "b" / "manifest.json").read_text()
    files = json.loads(ma)["files"]
    for name in ("groups.json", "pred_3d.csv", "report.json", "sweep.csv", "e2e_log.csv", "lifters.tnsr",
                 "bias_density.csv", "train_heatmaps.hmap"):
        assert name in files
    assert not list((tmp_path / "a").rglob("*.partial"))
    assert main(["plots", "--results", str(tmp_path / "a")]) == 0
    plots = sorted(p.name for p in (tmp_path / "a" / "plots").iterdir())
    assert {"sweep_ng8.csv", "sweep_ng17.csv", "per_joint_error.svg", "bias_density.svg"} <= set(plots)
    main(["plots", "--results", str(tmp_path / "b")])
    for name in plots:
        assert (tmp_path / "a" / "plots" / name).read_bytes() == (tmp_path / "b" / "plots" / name).read_bytes()


def test_output_dir_env_override(tmp_path, monkeypatch):
    cfg = dict(TINY, heatmaps={"enabled": False}, sweep={"n_g": []}, output_dir=str(tmp_path / "from_config"))
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    monkeypatch.setenv("POSECONSENSUS_OUTPUT_DIR", str(tmp_path / "from_env"))
    monkeypatch.setenv("POSECONSENSUS_THREADS", "2")
    assert main(["pipeline", "run", "--config", str(p)]) == 0
    assert (tmp_path / "from_env" / "manifest.json").exists()
    assert not (tmp_path / "from_config").exists()
    assert main(["pipeline", "run", "--config", str(p), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "manifest.json").exists()


def test_pipeline_stage_failure_is_numerical(tmp_path):
    cfg = dict(TINY, heatmaps={"enabled": False}, sweep={"n_g": []},
               train={"hidden": 4, "epochs": 2, "learning_rate": 1e300, "use_aggregation_loss": False})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    with np.errstate(all="ignore"):
        assert main(["pipeline", "run", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "poseconsensus.cli", "plots", "--results", str(tmp_path / "none")],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_DATA
    assert "error" in r.stderr
