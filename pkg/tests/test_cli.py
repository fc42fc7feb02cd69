import json

import numpy as np
import pytest

from nrnn.cli import dispatch, write_csv
from nrnn.data import (ExperimentConfig, DatasetSelector, ModelConfig,
                       save_config)
from nrnn.sde import NoiseConfig
from nrnn.training import (TrainConfig, init_raw_weights, load_checkpoint,
                           materialize)


@pytest.fixture
def synth_config(tmp_path):
    cfg = ExperimentConfig(
        dataset=DatasetSelector(name="synth",
                                params={"n": 120, "M": 6, "d_x": 2,
                                        "separation": 4.0, "seed": 1}),
        model=ModelConfig(d_h=6, beta=0.75, gamma_a=0.001, gamma_w=0.001),
        train=TrainConfig(lr=0.01, epochs=5, batch_size=32,
                          init_variance=0.02, seed=0,
                          noise=NoiseConfig(0.05, 1.0, 1.0)),
        step_scale=0.5,
    )
    path = tmp_path / "synth.json"
    save_config(path, cfg)
    return path


def test_unknown_flag_exits_one(capsys):
    assert dispatch(["train", "--bogus-flag"]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_config_exits_one(tmp_path, capsys):
    assert dispatch(["train", "--out", str(tmp_path)]) == 1


def test_train_zero_epochs_checkpoint_equals_init(tmp_path, synth_config):
    out = tmp_path / "run"
    code = dispatch(["train", "--config", str(synth_config),
                     "--epochs", "0", "--out", str(out)])
    assert code == 0
    raw, cfg, step_scale, _ = load_checkpoint(out / "checkpoint.npz")
    ref = init_raw_weights(6, 2, 2, 0.02, seed=np.random.default_rng(0))
    np.testing.assert_array_equal(raw.B, ref.B)
    np.testing.assert_array_equal(raw.V, ref.V)
    assert step_scale == 0.5
    manifest = json.loads((out / "train_manifest.json").read_text())
    assert manifest["command"] == "train"
    assert len(manifest["config_sha256"]) == 64


def test_train_checkpoint_carries_rng_state(tmp_path, synth_config):
    out = tmp_path / "run"
    assert dispatch(["train", "--config", str(synth_config),
                     "--out", str(out)]) == 0
    _, _, _, header = load_checkpoint(out / "checkpoint.npz")
    state = header["rng_state"]
    assert state is not None and "bit_generator" in state


def test_train_eval_sweep_pipeline(tmp_path, synth_config):
    out = tmp_path / "run"
    assert dispatch(["train", "--config", str(synth_config),
                     "--out", str(out)]) == 0
    ckpt = out / "checkpoint.npz"
    assert dispatch(["eval", "--config", str(synth_config), "--ckpt",
                     str(ckpt), "--out", str(out)]) == 0
    acc = json.loads((out / "eval.json").read_text())["accuracy"]
    assert 0.0 <= acc <= 1.0

    assert dispatch(["perturb-sweep", "--config", str(synth_config),
                     "--model-ckpt", str(ckpt), "--kind", "white",
                     "--grid", "0.0,0.5", "--seeds", "0,1",
                     "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "model_id,seed,kind,strength,accuracy"
    assert len(lines) == 5


def test_csv_outputs_byte_identical(tmp_path, synth_config):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert dispatch(["train", "--config", str(synth_config),
                         "--out", str(out)]) == 0
        assert dispatch(["perturb-sweep", "--config", str(synth_config),
                         "--model-ckpt", str(out / "checkpoint.npz"),
                         "--kind", "mult_white", "--grid", "0.0,0.3",
                         "--seeds", "0,1,2", "--out", str(out)]) == 0
        outs.append(out)
    assert (outs[0] / "sweep.csv").read_bytes() \
        == (outs[1] / "sweep.csv").read_bytes()
    assert (outs[0] / "metrics.csv").read_bytes() \
        == (outs[1] / "metrics.csv").read_bytes()


def test_convergence_command(tmp_path):
    out = tmp_path / "conv"
    assert dispatch(["convergence-test", "--paths", "1500",
                     "--out", str(out)]) == 0
    payload = json.loads((out / "convergence.json").read_text())
    assert 0.3 <= payload["slope"] <= 0.7
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "delta,strong_error"
    assert len(lines) == 8


def test_lyapunov_scalar_oracle_command(tmp_path):
    out = tmp_path / "lyap"
    assert dispatch(["lyapunov", "--scalar-oracle", "a=1", "sigma=2",
                     "--horizon", "100", "--paths", "8",
                     "--out", str(out)]) == 0
    payload = json.loads((out / "lyapunov.json").read_text())
    assert payload["lambda_hat"] == pytest.approx(-1.0, abs=0.15)
    assert payload["inside_bracket"] is True


def test_stabilize_command(tmp_path):
    out = tmp_path / "stab"
    assert dispatch(["stabilize", "--a", "0.5",
                     "--sigmas", "0.0,1.0,2.0", "--out", str(out)]) == 0
    lines = (out / "stabilize.csv").read_text().splitlines()
    assert lines[0] == "sigma1,sigma2,lower,upper,stabilized,lambda_hat"
    stabilized = [line.split(",")[4] for line in lines[1:]]
    assert stabilized == ["0", "0", "1"]


def test_probe_reg_command(tmp_path):
    out = tmp_path / "reg"
    assert dispatch(["probe-reg", "--paths", "4000",
                     "--eps-grid", "0.03,0.01", "--out", str(out)]) == 0
    payload = json.loads((out / "regularizer_report.json").read_text())
    assert payload["R_hat"] == pytest.approx(payload["R_hat_frobenius"],
                                             rel=1e-8)
    lines = (out / "mc_table.csv").read_text().splitlines()
    assert lines[0] == "eps,ratio,stderr"
    assert len(lines) == 3


def test_margin_command(tmp_path, synth_config):
    out = tmp_path / "mar"
    assert dispatch(["train", "--config", str(synth_config),
                     "--out", str(out)]) == 0
    assert dispatch(["margin", "--config", str(synth_config),
                     "--ckpt", str(out / "checkpoint.npz"),
                     "--max-samples", "3", "--r-max", "3.0",
                     "--directions", "8", "--out", str(out)]) == 0
    lines = (out / "margin.csv").read_text().splitlines()
    assert lines[0] == "sample_id,score,gamma_lower,empirical_margin"
    assert len(lines) == 4
    summary = json.loads((out / "margin.json").read_text())
    assert "C" in summary and len(summary["phi_sup"]) == 6


def test_write_csv_seventeen_digits(tmp_path):
    path = tmp_path / "x.csv"
    write_csv(path, ["a"], [[1.0 / 3.0]])
    assert path.read_text() == "a\n0.33333333333333331\n"
