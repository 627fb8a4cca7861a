import json
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from ask1 import config as cfgmod
from ask1.cli import main
from ask1.config import ConfigError, RunConfig, config_from_dict, config_to_dict, load_config
from ask1.nets import init_bundle, save_checkpoint
from ask1.plots import CsvFormatError, read_csv_columns, write_csv


def write_config(tmp_path, **run_overrides) -> Path:
    cfg = RunConfig()
    cfg.run.num_envs = 4
    cfg.run.iterations = 2
    cfg.run.seed = 7
    cfg.run.checkpoint_every = 1
    for k, v in run_overrides.items():
        setattr(cfg.run, k, v)
    path = tmp_path / "cfg.json"
    cfgmod.save_config(cfg, path)
    return path


def write_profile(tmp_path, rows=((0.0, 0.0, 0.0, 0.0),)) -> Path:
    path = tmp_path / "profile.csv"
    write_csv(path, ["t", "vx", "vy", "wz"], [list(r) for r in rows])
    return path


# -------------------------------------------------------------------- config

def test_config_roundtrip():
    cfg = RunConfig()
    cfg.run.seed = 42
    cfg.terrain.kind = "stairs"
    data = config_to_dict(cfg)
    back = config_from_dict(json.loads(json.dumps(data)))
    assert config_to_dict(back) == data


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"rewards": {"lin_track": 1.0, "bogus": 2.0}})
    with pytest.raises(ConfigError, match="unknown config section"):
        config_from_dict({"not_a_section": {}})


def test_config_missing_file_named(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="nope.json"):
        load_config(missing)


def test_config_all_defaults_materialized(tmp_path):
    path = write_config(tmp_path)
    data = json.loads(path.read_text())
    assert data["ppo"]["gamma"] == 0.99
    assert data["rewards"]["tracking_sigma"] == 0.15
    assert data["sim"]["dt"] == 0.005
    assert data["randomization"]["friction_scale"] == [0.5, 1.25]
    assert set(data) == {"robot", "terrain", "gait", "commands", "rewards", "noise",
                         "randomization", "sim", "ppo", "run"}


# --------------------------------------------------------------------- train

def test_train_zero_iterations_writes_artifacts(tmp_path):
    cfg_path = write_config(tmp_path, iterations=0)
    out = tmp_path / "run0"
    code = main(["train", "--config", str(cfg_path), "--iterations", "0",
                 "--out", str(out)])
    assert code == 0
    assert (out / "config.json").exists()
    assert (out / "checkpoint.ckpt").exists()
    assert (out / "metrics.csv").exists()
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["run"]["iterations"] == 0
    layout = (out / "obs_layout.txt").read_text()
    assert "critic full state (248)" in layout and "oldest frame first" in layout


def test_train_missing_config_exits_1(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "absent.json")])
    assert code == 1
    assert "absent.json" in capsys.readouterr().err


def test_train_writes_metrics_and_figures(tmp_path):
    cfg_path = write_config(tmp_path)
    out = tmp_path / "run1"
    code = main(["train", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    header, cols = read_csv_columns(out / "metrics.csv")
    from ask1.ppo import METRICS_COLUMNS
    assert header == list(METRICS_COLUMNS)
    assert len(cols[0]) == 2
    assert (out / "metrics.svg").exists()
    assert (out / "summary.json").exists()
    assert (out / "checkpoint_000001.ckpt").exists()


def test_train_determinism_small(tmp_path):
    cfg_path = write_config(tmp_path, iterations=3)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfg_path), "--out", str(out_a)]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(out_b)]) == 0
    assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()


# ---------------------------------------------------------------------- eval

def test_eval_standing_policy(tmp_path):
    # a freshly initialized actor outputs near-zero offsets: the robot stands
    bundle = init_bundle(np.random.default_rng(0))
    ckpt = tmp_path / "policy.ckpt"
    save_checkpoint(bundle, ckpt)
    profile = write_profile(tmp_path)
    out = tmp_path / "eval"
    code = main(["eval", "--checkpoint", str(ckpt), "--profile", str(profile),
                 "--seconds", "3", "--out", str(out)])
    assert code == 0
    header, cols = read_csv_columns(out / "tracking.csv")
    assert header[:4] == ["t", "cmd_vx", "cmd_vy", "cmd_wz"]
    t = np.asarray(cols[0])
    assert len(t) == 150  # 3 s at 50 Hz
    np.testing.assert_allclose(np.diff(t), 0.02, atol=1e-12)
    vx = np.asarray(cols[4])
    vy = np.asarray(cols[5])
    assert np.all(np.hypot(vx, vy) < 0.1)
    for name in ("tracking.svg", "feet.csv", "feet.svg", "rewards.csv", "rewards.svg"):
        assert (out / name).exists()
    header_feet, cols_feet = read_csv_columns(out / "feet.csv")
    assert len(header_feet) == 9
    header_rew, _ = read_csv_columns(out / "rewards.csv")
    assert header_rew[:6] == ["t", "r_g", "r_l", "r_s", "r_c", "r_t"]


def test_eval_never_mutates_checkpoint(tmp_path):
    bundle = init_bundle(np.random.default_rng(1))
    ckpt = tmp_path / "p.ckpt"
    save_checkpoint(bundle, ckpt)
    before = ckpt.read_bytes()
    profile = write_profile(tmp_path)
    main(["eval", "--checkpoint", str(ckpt), "--profile", str(profile),
          "--seconds", "1", "--out", str(tmp_path / "e")])
    assert ckpt.read_bytes() == before


def test_eval_layout_mismatch_names_dimension(tmp_path, capsys):
    bundle = init_bundle(np.random.default_rng(2), height_dim=50)  # wrong critic input
    ckpt = tmp_path / "bad.ckpt"
    save_checkpoint(bundle, ckpt)
    profile = write_profile(tmp_path)
    code = main(["eval", "--checkpoint", str(ckpt), "--profile", str(profile),
                 "--out", str(tmp_path / "e")])
    assert code == 1
    err = capsys.readouterr().err
    assert "mismatch" in err and "critic" in err


def test_eval_rejects_corrupt_checkpoint(tmp_path, capsys):
    ckpt = tmp_path / "corrupt.ckpt"
    ckpt.write_bytes(b"ASK1CKPT" + b"\x01\x00\x00\x00" + b"junk")
    profile = write_profile(tmp_path)
    code = main(["eval", "--checkpoint", str(ckpt), "--profile", str(profile),
                 "--out", str(tmp_path / "e")])
    assert code == 1
    assert "checksum" in capsys.readouterr().err


def test_eval_bad_profile_header(tmp_path, capsys):
    bundle = init_bundle(np.random.default_rng(3))
    ckpt = tmp_path / "p.ckpt"
    save_checkpoint(bundle, ckpt)
    bad = tmp_path / "bad_profile.csv"
    bad.write_text("time,vx\n0,0\n")
    code = main(["eval", "--checkpoint", str(ckpt), "--profile", str(bad),
                 "--out", str(tmp_path / "e")])
    assert code == 1
    assert "profile" in capsys.readouterr().err


# ---------------------------------------------------------------------- plot

def test_plot_two_column_csv(tmp_path):
    csv_path = tmp_path / "data.csv"
    write_csv(csv_path, ["x", "y"], [[i, i * i] for i in range(10)])
    out = tmp_path / "plot.svg"
    assert main(["plot", "--csv", str(csv_path), "--out", str(out)]) == 0
    content = out.read_text()
    assert content.lstrip().startswith("<?xml")
    assert "<svg" in content


def test_plot_deterministic_bytes(tmp_path):
    csv_path = tmp_path / "data.csv"
    write_csv(csv_path, ["t", "a", "b"], [[i * 0.1, np.sin(i), np.cos(i)] for i in range(30)])
    out1, out2 = tmp_path / "p1.svg", tmp_path / "p2.svg"
    main(["plot", "--csv", str(csv_path), "--out", str(out1)])
    main(["plot", "--csv", str(csv_path), "--out", str(out2)])
    assert out1.read_bytes() == out2.read_bytes()


def test_plot_empty_data_rows_exit_1(tmp_path, capsys):
    csv_path = tmp_path / "empty.csv"
    csv_path.write_text("x,y\n")
    code = main(["plot", "--csv", str(csv_path), "--out", str(tmp_path / "o.svg")])
    assert code == 1
    assert "line 2" in capsys.readouterr().err


def test_plot_malformed_row_names_line(tmp_path, capsys):
    csv_path = tmp_path / "bad.csv"
    csv_path.write_text("x,y\n1,2\n3\n")
    code = main(["plot", "--csv", str(csv_path), "--out", str(tmp_path / "o.svg")])
    assert code == 1
    assert "line 3" in capsys.readouterr().err


def test_plot_non_numeric_cell_names_line(tmp_path, capsys):
    csv_path = tmp_path / "nan.csv"
    csv_path.write_text("x,y\n1,2\n3,abc\n")
    code = main(["plot", "--csv", str(csv_path), "--out", str(tmp_path / "o.svg")])
    assert code == 1
    err = capsys.readouterr().err
    assert "line 3" in err and "abc" in err


# ------------------------------------------------------------------- csv io

def test_write_csv_lf_and_header(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [[1.0, 2.5]])
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.startswith(b"a,b\n")
