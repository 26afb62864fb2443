import numpy as np
import pytest
import yaml

from powergov.checkpoint import load_checkpoint, save_checkpoint
from powergov.config import DEFAULTS, TRAIN_KEYS, build_config, env_overrides, load_config
from powergov.errors import ChecksumMismatch, ConfigError, NoSuchFile
from powergov.ppo import TrainConfig, train

TABLE_I = {
    "Sample_Step": 3000,
    "Reuse_Times": 200,
    "Gamma": 0.99,
    "Lambda_Entropy": 0.97,
    "Clip_Epsilon": 0.2,
    "Policy_Learning_Rate": 3e-4,
    "Value_Function_Learning_Rate": 1e-3,
    "Train_Policy_Iterations": 80,
    "Train_Value_Iterations": 80,
    "Target_kl": 0.01,
    "Hidden_Sizes": [64, 64],
}


def test_defaults_carry_every_table_value():
    cfg = build_config({})
    for key, value in TABLE_I.items():
        assert cfg[key] == value
    tc = cfg.train_config()
    assert (tc.sample_step, tc.epochs, tc.gamma, tc.lam, tc.hidden) == (3000, 200, 0.99, 0.97, (64, 64))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        build_config({"gama": 0.9})


def test_bad_values_name_their_keys():
    with pytest.raises(ConfigError) as err:
        build_config({"Clip_Epsilon": 1.5, "Sample_Step": "many", "cpu_power_w": [3.0, 2.0, 1.0]})
    msg = str(err.value)
    assert "Clip_Epsilon" in msg and "clip_eps out of (0,1)" in msg
    assert "Sample_Step" in msg
    assert "cpu" in msg


def test_snapshot_round_trip(tmp_path):
    cfg = build_config({"seed": 3, "Gamma": 0.95, "horizon": 40})
    path = tmp_path / "c.yaml"
    path.write_text(cfg.to_yaml())
    data = yaml.safe_load(path.read_text())
    assert set(data) == set(DEFAULTS)
    assert data["seed"] == 3
    again = load_config(path)
    assert dict(again.values) == dict(cfg.values)
    assert again.env_hash() == cfg.env_hash()


def test_env_hash_tracks_environment_only():
    base = build_config({})
    assert build_config({"Gamma": 0.5}).env_hash() == base.env_hash()
    assert build_config({"beta": 2.0}).env_hash() != base.env_hash()
    assert build_config({"workload_high_w": 7.0}).env_hash() != base.env_hash()


def test_env_var_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("Gamma: 0.9\n")
    cfg = load_config(path, environ={"POWERGOV_GAMMA": "0.8", "POWERGOV_HIDDEN_SIZES": "[32, 32]"})
    assert cfg["Gamma"] == 0.8
    assert cfg["Hidden_Sizes"] == [32, 32]
    assert env_overrides({"OTHER": "1"}) == {}


def test_cli_overrides_win(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 1\n")
    assert load_config(path, overrides={"seed": 9}, environ={"POWERGOV_SEED": "5"}).seed == 9


def test_nested_sections_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("ppo:\n  Gamma: 0.9\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(NoSuchFile):
        load_config(tmp_path / "nope.yaml")


def test_trace_workload_is_hashed_by_content(tmp_path):
    from powergov import telemetry, workloads

    telemetry.write_trace(workloads.constant(3.0, 1.0), tmp_path / "a.csv")
    telemetry.write_trace(workloads.constant(3.0, 1.0), tmp_path / "b.csv")
    a = build_config({"workload_trace": "a.csv"}, tmp_path)
    b = build_config({"workload_trace": "b.csv"}, tmp_path)
    assert a.env_hash() == b.env_hash()
    assert a.workload().duration == pytest.approx(1.0)


def test_every_train_key_maps_to_a_field():
    fields = set(TrainConfig.__dataclass_fields__)
    assert set(TRAIN_KEYS.values()) <= fields


# -------------------------------------------------------------- checkpoint

def tiny_result():
    from powergov import workloads
    from powergov.envsim import EnvConfig, PowerEnv

    cfg = TrainConfig(sample_step=32, epochs=2, train_policy_iters=3, train_value_iters=3, hidden=(8, 8))
    return train(cfg, lambda: PowerEnv(EnvConfig(), workloads.constant(5.0, 1.0)))


def test_checkpoint_round_trip(tmp_path):
    res = tiny_result()
    path = tmp_path / "ck.npz"
    save_checkpoint(path, res, "abc")
    back = load_checkpoint(path, "abc")
    assert back.config == res.config
    for p, q in zip(res.actor.params + res.critic.params, back.actor.params + back.critic.params):
        assert np.array_equal(p, q)
    assert back.opts.actor.t == res.opts.actor.t


def test_checkpoint_env_mismatch(tmp_path):
    path = tmp_path / "ck.npz"
    save_checkpoint(path, tiny_result(), "abc")
    with pytest.raises(ChecksumMismatch):
        load_checkpoint(path, "def")


def test_checkpoint_tampered_parameters(tmp_path):
    path = tmp_path / "ck.npz"
    save_checkpoint(path, tiny_result(), "abc")
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    arrays["critic.b0"] = arrays["critic.b0"] + 1.0
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    with pytest.raises(ChecksumMismatch):
        load_checkpoint(path)


def test_checkpoint_missing(tmp_path):
    with pytest.raises(NoSuchFile):
        load_checkpoint(tmp_path / "none.npz")


def test_bundled_configs_match_presets():
    from pathlib import Path

    from powergov import envsim

    root = Path(__file__).resolve().parents[1] / "configs"
    duty = load_config(root / "duty.yaml")
    assert duty.env_config() == envsim.duty_config()
    np.testing.assert_array_equal(duty.workload().power(), envsim.duty_workload().power())
    toy = load_config(root / "toy.yaml")
    assert toy.env_config() == envsim.toy_config()
