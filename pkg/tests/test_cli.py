import json
import shutil

import numpy as np
import pytest

from streamloc.cli import main
from streamloc.config import RunConfig, dump_config, load_config, parse_config
from streamloc.exceptions import ConfigError

TINY = {
    "data": {"classes": ["expand_contract", "brighten_dim"], "num_train": 8, "num_val": 3,
             "instance_range": [2, 3], "duration_range": [24, 40], "gap_range": [16, 20], "frame_size": [16, 16]},
    "networks": {"c3d": {"widths": [2, 2, 4, 4, 4, 4, 4, 4], "feature_dim": 8},
                 "f2g": {"content_widths": [2, 4], "motion_widths": [2, 4], "lstm_width": 4,
                         "decoder_widths": [4], "refine_width": 2},
                 "detector": {"lstm_width": 8}},
    "train": {"pr": {"epochs": 1, "samples_per_epoch": 16, "batch_size": 8},
              "ar": {"epochs": 1, "samples_per_epoch": 16, "batch_size": 8},
              "f2g": {"iterations": 2, "batch_size": 2, "val_every": 1, "val_pairs": 4},
              "det": {"cycles": 1, "epochs_per_cycle": 1, "batch_size": 4}},
}


def outputs(path):
    return json.loads((path / "manifest.json").read_text())["outputs"]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    steps = {}

    def call(name, *args):
        out = root / name
        argv = [args[0], "--config", str(cfg), "--out", str(out), *args[1:]]
        assert main(argv) == 0, argv
        steps[name] = out
        return out

    data = call("data", "gen-data", "--seed", "5")
    call("pr", "train-pr", "--data", str(data))
    call("ar", "train-ar", "--data", str(data))
    call("f2g", "train-f2g", "--data", str(data))
    ckpt = root / "ckpt"
    ckpt.mkdir()
    for name in ("pr", "ar", "f2g"):
        shutil.copy(steps[name] / f"{name}.slck", ckpt)
    call("det", "train-det", "--data", str(data), "--checkpoint-dir", str(ckpt))
    shutil.copy(steps["det"] / "det.slck", ckpt)
    call("detect", "detect", "--checkpoint-dir", str(ckpt), "--stream", str(data / "val"), "--batched")
    call("eval", "eval", "--detections", str(steps["detect"] / "detections.json"),
         "--annotations", str(data / "val"))
    return root, steps


def test_chain_outputs(run):
    _, steps = run
    assert (steps["data"] / "train" / "annotations.json").is_file()
    assert json.loads((steps["pr"] / "pr_metrics.json").read_text())["best_val_accuracy"] >= 0
    ar = json.loads((steps["ar"] / "ar_metrics.json").read_text())
    assert np.array(ar["confusion"]).shape == (4, 4)
    dets = json.loads((steps["detect"] / "detections.json").read_text())
    assert len(dets) == 3 and all(d["causal"] for d in dets)
    assert dets[0]["config"]["classes"] == ["expand_contract", "brighten_dim"]
    res = json.loads((steps["eval"] / "results.json").read_text())
    assert set(res["mAP"]) == {"0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.75", "0.95"}
    assert "per_frame_mAP" in res


def test_manifest_fields(run):
    _, steps = run
    doc = json.loads((steps["pr"] / "manifest.json").read_text())
    assert set(doc) == {"version", "argv", "seed", "config", "inputs", "outputs"}
    assert "pr.slck" in doc["outputs"] and "config.json" in doc["outputs"]
    assert any(k.endswith("annotations.json") for k in doc["inputs"])


@pytest.mark.parametrize("step", ["data", "pr", "ar", "f2g", "det", "detect", "eval"])
def test_replay_is_byte_identical(run, step):
    root, steps = run
    again = root / f"replay_{step}"
    assert main(["replay", str(steps[step] / "manifest.json"), "--out", str(again)]) == 0
    assert outputs(again) == outputs(steps[step])


def test_replay_detects_changed_input(run, tmp_path):
    root, steps = run
    data = tmp_path / "data"
    shutil.copytree(steps["data"], data)
    assert main(["train-f2g", "--config", str(root / "tiny.json"), "--data", str(data),
                 "--out", str(tmp_path / "f2g")]) == 0
    ann = data / "train" / "annotations.json"
    ann.write_text(ann.read_text() + " ")
    assert main(["replay", str(tmp_path / "f2g" / "manifest.json"), "--out", str(tmp_path / "again")]) == 2


def test_detect_single_frames_file_prints_windows(run, capsys):
    root, steps = run
    frames = sorted((steps["data"] / "val").glob("*.slvd"))[0]
    out = root / "single"
    assert main(["detect", "--config", str(root / "tiny.json"), "--out", str(out), "--checkpoint-dir",
                 str(root / "ckpt"), "--stream", str(frames)]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert lines[0]["t"] == 15 and all(b["t"] - a["t"] == 8 for a, b in zip(lines, lines[1:]))
    doc = json.loads((out / "detections.json").read_text())
    assert doc["stream_id"] == frames.stem


def test_oracle_future_flag_marks_non_causal(run):
    root, _ = run
    out = root / "oracle"
    assert main(["detect", "--config", str(root / "tiny.json"), "--out", str(out), "--checkpoint-dir",
                 str(root / "ckpt"), "--stream", str(root / "data" / "val"), "--oracle-future", "--batched"]) == 0
    assert all(not d["causal"] for d in json.loads((out / "detections.json").read_text()))


def test_exit_codes(run, tmp_path):
    root, _ = run
    assert main(["frobnicate", "--out", str(tmp_path)]) == 1
    assert main(["train-pr", "--out", str(tmp_path)]) == 1  # missing --data
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"pr": {"learning_rate": 1}}}))
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert main(["train-pr", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "y")]) == 2
    empty = tmp_path / "ckpt"
    empty.mkdir()
    assert main(["detect", "--config", str(root / "tiny.json"), "--out", str(tmp_path / "z"),
                 "--checkpoint-dir", str(empty), "--stream", str(root / "data" / "val")]) == 2


def test_gradcheck_command(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert doc["tolerance"] == 1e-4 and all(c["passed"] for c in doc["checks"].values())


# -- configuration ------------------------------------------------------------------------

def test_defaults_roundtrip():
    cfg = load_config()
    assert parse_config(json.loads(dump_config(cfg))) == cfg
    assert cfg.data.num_train == 200 and cfg.data.frame_size == (32, 32)


def test_config_rejects_unknown_key_with_path():
    with pytest.raises(ConfigError, match=r"train\.pr: unknown key\(s\) \['learning_rate'\]"):
        parse_config({"train": {"pr": {"learning_rate": 0.1}}})


def test_config_type_errors_name_the_field():
    with pytest.raises(ConfigError, match="data.num_train: expected an integer"):
        parse_config({"data": {"num_train": 2.5}})
    with pytest.raises(ConfigError, match=r"data.frame_size: expected 2 items"):
        parse_config({"data": {"frame_size": [32]}})
    with pytest.raises(ConfigError, match="tau must be an even integer"):
        parse_config({"pipeline": {"tau": 15}})


def test_with_seed_reaches_every_phase():
    cfg = RunConfig().with_seed(7)
    assert {cfg.train.pr.seed, cfg.train.ar.seed, cfg.train.f2g.seed, cfg.train.det.seed} == {7}
    assert cfg.detector_config().feature_dim == cfg.networks.c3d.feature_dim
    assert cfg.f2g_config().frame_size == cfg.data.frame_size
