import gzip
import json
import struct

import numpy as np
import pytest

from conftest import find_mnist

from nrnn.data import (ExperimentConfig, SequenceDataset, config_from_dict,
                       config_to_dict, default_mnist_config, load_config,
                       load_dataset_cache, load_ecg, load_ecg_splits,
                       load_mnist_idx, resolve_dataset, save_config,
                       save_dataset_cache, synth_two_class)
from nrnn.errors import ConfigurationError
from nrnn.training import TrainConfig, train


def write_idx_fixture(tmp_path, pixels, labels, gz=False):
    """Hand-assembled IDX byte pair for tiny images."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    img = struct.pack(">IIII", 0x00000803, n, rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", 0x00000801, n) + bytes(labels)
    suffix = ".gz" if gz else ""
    img_path = tmp_path / f"images-idx3-ubyte{suffix}"
    lab_path = tmp_path / f"labels-idx1-ubyte{suffix}"
    img_path.write_bytes(gzip.compress(img) if gz else img)
    lab_path.write_bytes(gzip.compress(lab) if gz else lab)
    return img_path, lab_path


class TestIdxLoader:
    PIXELS = [[[0, 255], [128, 64]], [[10, 20], [30, 40]]]
    LABELS = [3, 7]

    def test_fixture_parses_to_known_values(self, tmp_path):
        paths = write_idx_fixture(tmp_path, self.PIXELS, self.LABELS)
        ds = load_mnist_idx(paths)
        assert ds.inputs.shape == (2, 4, 1)
        np.testing.assert_allclose(
            ds.inputs[0, :, 0], np.array([0, 255, 128, 64]) / 255.0)
        np.testing.assert_allclose(
            ds.inputs[1, :, 0], np.array([10, 20, 30, 40]) / 255.0)
        np.testing.assert_array_equal(ds.labels, [3, 7])
        assert ds.meta["d_y"] == 10
        assert ds.meta["value_range"] == (0.0, 1.0)

    def test_gzip_transparent(self, tmp_path):
        plain = load_mnist_idx(write_idx_fixture(tmp_path, self.PIXELS,
                                                 self.LABELS))
        zipped = load_mnist_idx(write_idx_fixture(tmp_path, self.PIXELS,
                                                  self.LABELS, gz=True))
        np.testing.assert_array_equal(plain.inputs, zipped.inputs)

    def test_bad_magic_rejected(self, tmp_path):
        img_path, lab_path = write_idx_fixture(tmp_path, self.PIXELS,
                                               self.LABELS)
        data = bytearray(img_path.read_bytes())
        data[3] = 0x01
        img_path.write_bytes(bytes(data))
        with pytest.raises(ConfigurationError, match="magic"):
            load_mnist_idx((img_path, lab_path))

    def test_truncated_rejected(self, tmp_path):
        img_path, lab_path = write_idx_fixture(tmp_path, self.PIXELS,
                                               self.LABELS)
        img_path.write_bytes(img_path.read_bytes()[:-3])
        with pytest.raises(ConfigurationError, match="bytes"):
            load_mnist_idx((img_path, lab_path))

    def test_identity_permutation_equals_ordered(self, tmp_path):
        paths = write_idx_fixture(tmp_path, self.PIXELS, self.LABELS)
        ordered = load_mnist_idx(paths, variant="ordered")
        permuted = load_mnist_idx(paths, variant="permuted",
                                  permutation=np.arange(4))
        np.testing.assert_array_equal(ordered.inputs, permuted.inputs)

    def test_permutation_is_bijection(self, tmp_path):
        paths = write_idx_fixture(tmp_path, self.PIXELS, self.LABELS)
        ordered = load_mnist_idx(paths, variant="ordered")
        permuted = load_mnist_idx(paths, variant="permuted",
                                  permutation_seed=11)
        # every pixel multiset is preserved per sample
        for i in range(2):
            assert sorted(ordered.inputs[i, :, 0]) == \
                sorted(permuted.inputs[i, :, 0])
        assert not np.array_equal(ordered.inputs, permuted.inputs)

    def test_permuted_applies_same_map_to_all_samples(self, tmp_path):
        paths = write_idx_fixture(tmp_path, self.PIXELS, self.LABELS)
        ordered = load_mnist_idx(paths, variant="ordered")
        permuted = load_mnist_idx(paths, variant="permuted",
                                  permutation_seed=11)
        perm = np.random.default_rng(11).permutation(4)
        np.testing.assert_array_equal(permuted.inputs,
                                      ordered.inputs[:, perm, :])

    @pytest.mark.skipif(find_mnist() is None,
                        reason="MNIST IDX files not available")
    def test_official_test_split_shape(self):
        paths = find_mnist()
        ds = load_mnist_idx((paths["test_images"], paths["test_labels"]))
        assert ds.n_samples == 10_000
        assert ds.n_steps == 784
        hist = np.bincount(ds.labels, minlength=10)
        assert (hist > 0).sum() == 10
        assert 0.0 <= ds.inputs.min() and ds.inputs.max() <= 1.0


def write_ecg_file(tmp_path, n_rows, length=140, seed=0, name="ecg.txt"):
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, 6, size=n_rows)
    rows = []
    for lab in labels:
        vals = rng.standard_normal(length)
        rows.append("\t".join([f"{float(lab):.4e}"]
                              + [f"{v:.6f}" for v in vals]))
    path = tmp_path / name
    path.write_text("\n".join(rows) + "\n")
    return path, labels


class TestEcgLoader:
    def test_full_split_sizes(self, tmp_path):
        path, _ = write_ecg_file(tmp_path, 5000)
        splits = load_ecg_splits(path)
        assert splits["train"].n_samples == 500
        assert splits["val"].n_samples == 500
        assert splits["test"].n_samples == 4000

    def test_sequence_length_and_dims(self, tmp_path):
        path, _ = write_ecg_file(tmp_path, 50)
        ds = load_ecg(path, split="train")
        assert ds.n_steps == 140
        assert ds.d_x == 1
        assert ds.d_y == 2

    def test_class_collapse_on_fixture(self, tmp_path):
        rows = ["1.0\t" + "\t".join(["0.1"] * 140),
                "2.0\t" + "\t".join(["0.2"] * 140),
                "3.0\t" + "\t".join(["0.3"] * 140),
                "4.0\t" + "\t".join(["0.4"] * 140),
                "5.0\t" + "\t".join(["0.5"] * 140)]
        path = tmp_path / "five.txt"
        path.write_text("\n".join(rows) + "\n")
        splits = load_ecg_splits(path, shuffle_seed=0)
        all_labels = np.concatenate([splits[k].labels
                                     for k in ("train", "val", "test")])
        all_first = np.concatenate([splits[k].inputs[:, 0, 0]
                                    for k in ("train", "val", "test")])
        # source class 1 -> 0 (normal), classes 2..5 -> 1 (abnormal)
        for first_val, lab in zip(all_first, all_labels):
            expected = 0 if abs(first_val - 0.1) < 1e-9 else 1
            assert lab == expected

    def test_malformed_row_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1.0\t0.5\t0.25\n2.0\t0.5\n")
        with pytest.raises(ConfigurationError, match="fields"):
            load_ecg(path)

    def test_non_numeric_rejected(self, tmp_path):
        path = tmp_path / "bad2.txt"
        path.write_text("1.0\tx\n")
        with pytest.raises(ConfigurationError):
            load_ecg(path)

    def test_deterministic_split(self, tmp_path):
        path, _ = write_ecg_file(tmp_path, 60)
        a = load_ecg_splits(path, shuffle_seed=4)
        b = load_ecg_splits(path, shuffle_seed=4)
        np.testing.assert_array_equal(a["test"].inputs, b["test"].inputs)

    @pytest.mark.skipif("NRNN_ECG_PATH" not in __import__("os").environ,
                        reason="set NRNN_ECG_PATH to the ECG5000 file")
    def test_real_file_splits(self):
        import os
        splits = load_ecg_splits(os.environ["NRNN_ECG_PATH"])
        assert splits["train"].n_samples == 500
        assert splits["val"].n_samples == 500
        assert splits["test"].n_samples == 4000
        assert splits["train"].n_steps == 140


class TestSynth:
    def test_no_signal_at_zero_separation(self):
        ds = synth_two_class(300, 6, 2, separation=0.0, seed=0)
        held_out = synth_two_class(300, 6, 2, separation=0.0, seed=1)
        cfg = TrainConfig(lr=0.01, epochs=10, batch_size=32,
                          init_variance=0.02, seed=0)
        _, metrics = train(ds, cfg, eval_dataset=held_out, d_h=6,
                           step_scale=0.5)
        assert 0.4 <= metrics[-1]["eval_accuracy"] <= 0.6

    def test_separable_reaches_95(self):
        ds = synth_two_class(200, 8, 2, separation=5.0, seed=1)
        cfg = TrainConfig(lr=0.01, epochs=30, batch_size=32,
                          init_variance=0.1 / 8, seed=0)
        _, metrics = train(ds, cfg, d_h=8, step_scale=0.5)
        assert metrics[-1]["eval_accuracy"] >= 0.95

    def test_same_seed_identical(self):
        a = synth_two_class(50, 5, 2, 2.0, seed=9)
        b = synth_two_class(50, 5, 2, 2.0, seed=9)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_mean_gap_equals_separation(self):
        ds = synth_two_class(20000, 4, 2, separation=3.0, seed=2)
        mu0 = ds.inputs[ds.labels == 0].reshape(-1, 8).mean(axis=0)
        mu1 = ds.inputs[ds.labels == 1].reshape(-1, 8).mean(axis=0)
        assert np.linalg.norm(mu1 - mu0) == pytest.approx(3.0, abs=0.05)


class TestConfig:
    def test_default_matches_published_tuning(self):
        cfg = default_mnist_config()
        assert cfg.model.d_h == 128
        assert cfg.train.lr == 0.001
        assert cfg.train.decay_factor == 0.1
        assert cfg.train.decay_epochs == (90,)
        assert cfg.train.epochs == 100
        assert cfg.model.beta == 0.75
        assert cfg.model.gamma_a == 0.001
        assert cfg.model.gamma_w == 0.001
        assert cfg.train.noise.epsilon == 0.01
        assert cfg.train.noise.sigma1 == 0.02
        assert cfg.train.noise.sigma2 == 0.02
        assert cfg.train.init_variance == pytest.approx(0.1 / 128)

    def test_round_trip(self, tmp_path):
        cfg = default_mnist_config()
        path = tmp_path / "cfg.json"
        save_config(path, cfg)
        assert load_config(path) == cfg

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "version": "v1",\n  "oops\n}\n')
        with pytest.raises(ConfigurationError, match="line 3"):
            load_config(path)

    def test_unknown_keys_rejected(self):
        doc = config_to_dict(default_mnist_config())
        doc["training"]["momentum"] = 0.9
        with pytest.raises(ConfigurationError, match="momentum"):
            config_from_dict(doc)
        doc2 = config_to_dict(default_mnist_config())
        doc2["extra_section"] = {}
        with pytest.raises(ConfigurationError, match="extra_section"):
            config_from_dict(doc2)

    def test_bad_version_rejected(self):
        doc = config_to_dict(default_mnist_config())
        doc["version"] = "v999"
        with pytest.raises(ConfigurationError, match="version"):
            config_from_dict(doc)

    def test_resolve_synth(self):
        cfg = ExperimentConfig()
        splits = resolve_dataset(cfg.dataset)
        assert splits["train"].n_samples + splits["test"].n_samples == 512
        assert splits["train"].d_y == 2


class TestDatasetContainer:
    def test_label_range_enforced(self):
        with pytest.raises(ConfigurationError):
            SequenceDataset(np.zeros((2, 3, 1)), np.array([0, 5]),
                            {"d_y": 2})

    def test_value_range_enforced(self):
        with pytest.raises(ConfigurationError):
            SequenceDataset(np.full((1, 2, 1), 7.0), np.array([0]),
                            {"d_y": 2, "value_range": (0.0, 1.0)})

    def test_cache_round_trip_lossless(self, tmp_path):
        ds = synth_two_class(20, 5, 3, 2.0, seed=3)
        path = tmp_path / "cache.npz"
        save_dataset_cache(path, ds)
        back = load_dataset_cache(path)
        np.testing.assert_array_equal(ds.inputs, back.inputs)
        np.testing.assert_array_equal(ds.labels, back.labels)
        assert json.loads(json.dumps(ds.meta)) == back.meta
