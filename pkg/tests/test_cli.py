import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from rlanimate.agent import Checkpoint, load_checkpoint, save_checkpoint
from rlanimate.cli import ExperimentConfig, load_experiment, main
from rlanimate.errors import ConfigurationError
from rlanimate.motion import load_clip, parse_bvh

TINY_CONFIG = {
    "seed": 3,
    "dataset": {"n_train_point": 2, "n_train_wave": 2, "n_test_point": 1, "n_test_wave": 1, "n_frames": 24},
    "agent": {"h_dim": 8, "b_det_dim": 8, "b_stoch_dim": 8, "portrayal_hidden_dim": 8,
              "decoder_hidden_dim": 8, "policy_hidden_dim": 8},
    "train": {"epochs": 2, "updates_per_epoch": 2, "chunks_per_update": 2, "chunk_length": 6, "eval_every": 1},
}


def invoke(tmp_path, *args, env=None):
    cfg = tmp_path / "experiment.json"
    if not cfg.exists():
        cfg.write_text(json.dumps(TINY_CONFIG))
    return CliRunner().invoke(main, ["--config", str(cfg), "--out", str(tmp_path / "out"), *args], env=env)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    assert invoke(tmp, "dataset").exit_code == 0
    res = invoke(tmp, "train")
    assert res.exit_code == 0, res.output
    return tmp


def test_config_requires_seed_and_names_fields():
    with pytest.raises(ConfigurationError, match="seed"):
        ExperimentConfig.from_dict({})
    with pytest.raises(ConfigurationError, match=r"train\.chunk_length"):
        ExperimentConfig.from_dict({"seed": 0, "train": {"chunk_length": 1}})
    cfg = ExperimentConfig.from_dict(TINY_CONFIG)
    assert cfg.train.seed == cfg.agent.seed == cfg.dataset.seed == 3
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_seed_flag_overrides_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TINY_CONFIG))
    assert load_experiment(path, seed=9).train.seed == 9


def test_dataset_manifest_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert invoke(a, "dataset").exit_code == 0
    assert invoke(b, "dataset").exit_code == 0
    ma = (a / "out" / "dataset" / "manifest.json").read_bytes()
    assert ma == (b / "out" / "dataset" / "manifest.json").read_bytes()
    assert sorted(os.listdir(a / "out" / "dataset" / "clips")) == sorted(os.listdir(b / "out" / "dataset" / "clips"))


def test_env_var_sets_output_root(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    res = CliRunner().invoke(main, ["--config", str(cfg), "dataset"], env={"RLANIMATE_OUT": str(tmp_path / "env")})
    assert res.exit_code == 0
    assert (tmp_path / "env" / "dataset" / "manifest.json").exists()


def test_train_reproducible_logs(trained, tmp_path):
    first = (trained / "out" / "runs" / "full" / "log.csv").read_text()
    other = tmp_path / "again"
    other.mkdir()
    assert invoke(other, "dataset").exit_code == 0
    assert invoke(other, "train", "--ablation", "full").exit_code == 0
    assert (other / "out" / "runs" / "full" / "log.csv").read_text() == first


def test_eval_is_bit_stable(trained):
    ck = str(trained / "out" / "runs" / "full" / "checkpoint.rlack")
    res1 = invoke(trained, "eval", "--checkpoint", ck, "--flex", "0.5,1.0,1.5")
    assert res1.exit_code == 0, res1.output
    out = trained / "out" / "eval" / "full-test"
    first = {f: (out / f).read_bytes() for f in ("report.csv", "clips.csv", "scores.svg", "flex.csv")}
    res2 = invoke(trained, "eval", "--checkpoint", ck, "--flex", "0.5,1.0,1.5")
    assert res2.exit_code == 0 and res2.output == res1.output
    assert {f: (out / f).read_bytes() for f in first} == first
    assert "polyline" in first["scores.svg"].decode()


def test_eval_version_mismatch_exit_code(trained, tmp_path):
    ck = load_checkpoint(trained / "out" / "runs" / "full" / "checkpoint.rlack")
    stale = Checkpoint(ck.agent_config, ck.parameters, ck.seed, "0", ck.train_config, ck.metadata)
    path = tmp_path / "stale.rlack"
    save_checkpoint(stale, path)
    res = invoke(trained, "eval", "--checkpoint", str(path))
    assert res.exit_code == 4
    assert "'0'" in res.output and "'1'" in res.output


def test_missing_files_are_io_errors(trained):
    res = invoke(trained, "eval", "--checkpoint", str(trained / "nope.rlack"))
    assert res.exit_code == 3


def test_bad_config_is_exit_2(tmp_path):
    (tmp_path / "experiment.json").write_text(json.dumps({"seed": 0, "train": {"epochs": 0}}))
    res = invoke(tmp_path, "dataset")
    assert res.exit_code == 2 and "train.epochs" in res.output


def test_generate_wave_clip_and_bvh(trained):
    ck = str(trained / "out" / "runs" / "full" / "checkpoint.rlack")
    res = invoke(trained, "generate", "--checkpoint", ck, "--wave", "0.5", "--arm", "left", "--frames", "60", "--bvh")
    assert res.exit_code == 0, res.output
    gen = trained / "out" / "generated"
    clip = load_clip(gen / "wave-left-60.json")
    assert clip.n_frames == 60 and clip.behaviour == "wave" and clip.arm == "left"
    again = parse_bvh((gen / "wave-left-60.bvh").read_text(), behaviour="wave", arm="left", attributes=clip.attributes)
    assert again.n_frames == 60
    np.testing.assert_allclose(again.frames, clip.frames, atol=1e-6)


def test_generate_point_requires_unit_target(trained):
    ck = str(trained / "out" / "runs" / "full" / "checkpoint.rlack")
    res = invoke(trained, "generate", "--checkpoint", ck, "--point", "0,2,0")
    assert res.exit_code == 2
    res = invoke(trained, "generate", "--checkpoint", ck, "--point", "0,2,0", "--normalize", "--name", "p")
    assert res.exit_code == 0, res.output
    clip = load_clip(trained / "out" / "generated" / "p.json")
    assert clip.attributes == (0.0, 1.0, 0.0)


def test_generate_rejects_bad_exaggeration(trained):
    ck = str(trained / "out" / "runs" / "full" / "checkpoint.rlack")
    assert invoke(trained, "generate", "--checkpoint", ck, "--wave", "1.5").exit_code == 2
    assert invoke(trained, "generate", "--checkpoint", ck).exit_code == 2
