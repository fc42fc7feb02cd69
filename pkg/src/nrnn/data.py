"""Dataset ingestion and experiment configuration.

Loaders for IDX-format digit images (presented pixel by pixel, optionally
under a fixed random pixel permutation), UCR-style delimited ECG traces
(collapsed to a normal/abnormal binary task with a documented 500/500/4000
split), and synthetic two-class Gaussian sequences.  Experiment
configurations are versioned JSON documents parsed strictly: unknown keys
are rejected.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .rng import make_rng
from .sde import NoiseConfig
from .training import TrainConfig

CONFIG_VERSION = "v1"
_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------

@dataclass
class SequenceDataset:
    """Uniform-length labelled input sequences.

    inputs: (N, M, d_x); labels: (N,) integers in [0, d_y).
    """
    inputs: np.ndarray
    labels: np.ndarray
    meta: dict

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 3:
            raise ConfigurationError(f"inputs must be (N, M, d_x), got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ConfigurationError("labels must have one entry per sample")
        d_y = int(self.meta.get("d_y", 0))
        if d_y <= 0:
            raise ConfigurationError("meta must declare a positive d_y")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= d_y):
            raise ConfigurationError("labels out of range for declared d_y")
        rng_range = self.meta.get("value_range")
        if rng_range is not None and self.inputs.size:
            lo, hi = rng_range
            if self.inputs.min() < lo - 1e-12 or self.inputs.max() > hi + 1e-12:
                raise ConfigurationError("input values leave the declared range")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_x(self) -> int:
        return self.inputs.shape[2]

    @property
    def d_y(self) -> int:
        return int(self.meta["d_y"])

    def subset(self, indices) -> "SequenceDataset":
        indices = np.asarray(indices)
        if indices.dtype != bool:
            indices = indices.astype(np.intp)
        return SequenceDataset(self.inputs[indices], self.labels[indices],
                               dict(self.meta))


def save_dataset_cache(path, dataset: SequenceDataset):
    """Lossless ``.npz`` cache of a dataset."""
    np.savez(path, inputs=dataset.inputs, labels=dataset.labels,
             meta=np.frombuffer(json.dumps(dataset.meta).encode(), dtype=np.uint8))


def load_dataset_cache(path) -> SequenceDataset:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        return SequenceDataset(data["inputs"], data["labels"], meta)


# ---------------------------------------------------------------------------
# IDX loader
# ---------------------------------------------------------------------------

def _read_idx(path, expected_magic: int) -> np.ndarray:
    path = Path(path)
    raw = gzip.decompress(path.read_bytes()) if path.suffix == ".gz" \
        else path.read_bytes()
    if len(raw) < 4:
        raise ConfigurationError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ConfigurationError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    n_dims = magic & 0xFF
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise ConfigurationError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{n_dims}I", raw[4:header_len])
    expected_size = header_len + int(np.prod(dims))
    if len(raw) != expected_size:
        raise ConfigurationError(
            f"{path}: expected {expected_size} bytes for dims {dims}, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)


def load_mnist_idx(paths, variant: str = "ordered", permutation_seed: int = 0,
                   permutation: np.ndarray | None = None,
                   limit: int | None = None) -> SequenceDataset:
    """Pixel-sequence dataset from an IDX image/label file pair.

    ``paths`` is ``(images_path, labels_path)``.  Images are flattened
    row-major into length rows*cols sequences of one pixel in [0, 1].  The
    permuted variant applies a single fixed pixel permutation (drawn from
    ``permutation_seed``, or given explicitly) to every sample.
    """
    if variant not in ("ordered", "permuted"):
        raise ConfigurationError(f"unknown variant {variant!r}")
    images_path, labels_path = (paths["images"], paths["labels"]) \
        if isinstance(paths, dict) else paths
    images = _read_idx(images_path, _IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, _IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConfigurationError("image and label counts disagree")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    n, rows, cols = images.shape
    seq = images.reshape(n, rows * cols, 1).astype(float) / 255.0
    if variant == "permuted":
        if permutation is None:
            permutation = make_rng(permutation_seed).permutation(rows * cols)
        else:
            permutation = np.asarray(permutation)
            if sorted(permutation.tolist()) != list(range(rows * cols)):
                raise ConfigurationError("explicit permutation is not a bijection")
        seq = seq[:, permutation, :]
    meta = {"name": "mnist", "M": rows * cols, "d_x": 1, "d_y": 10,
            "value_range": (0.0, 1.0), "variant": variant,
            "permutation_seed": permutation_seed}
    return SequenceDataset(seq, labels.astype(np.int64), meta)


# ---------------------------------------------------------------------------
# ECG loader
# ---------------------------------------------------------------------------

def _parse_delimited(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    labels = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ConfigurationError(
                    f"{path}:{lineno}: row has {len(parts)} fields, expected {width}")
            try:
                values = [float(v) for v in parts]
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
            labels.append(values[0])
            rows.append(values[1:])
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    return np.asarray(rows), np.asarray(labels)


def load_ecg_splits(path, shuffle_seed: int = 0) -> dict[str, SequenceDataset]:
    """Normal/abnormal heartbeat splits from a UCR-style delimited file.

    Source labels (class 1 = normal, classes 2+ = abnormal) collapse to a
    binary task.  Split rule: one seeded shuffle of all rows, then the
    first 500 are training, the next 500 validation, and the remainder
    test, reproducing the 500/500/4000 sizes on the full 5000-row data.
    """
    series, raw_labels = _parse_delimited(path)
    labels = (raw_labels.round().astype(np.int64) != 1).astype(np.int64)
    n = series.shape[0]
    if n < 3:
        raise ConfigurationError("need at least 3 rows to split")
    order = make_rng(shuffle_seed).permutation(n)
    n_train = min(500, max(1, n - 2))
    n_val = min(500, max(1, n - n_train - 1))
    bounds = {"train": order[:n_train],
              "val": order[n_train:n_train + n_val],
              "test": order[n_train + n_val:]}
    lo, hi = float(series.min()), float(series.max())
    out = {}
    for split, idx in bounds.items():
        meta = {"name": "ecg", "M": series.shape[1], "d_x": 1, "d_y": 2,
                "value_range": (lo, hi), "split": split,
                "shuffle_seed": shuffle_seed}
        out[split] = SequenceDataset(series[idx][:, :, None], labels[idx], meta)
    return out


def load_ecg(path, split: str = "train", shuffle_seed: int = 0) -> SequenceDataset:
    splits = load_ecg_splits(path, shuffle_seed)
    if split not in splits:
        raise ConfigurationError(f"unknown split {split!r}")
    return splits[split]


# ---------------------------------------------------------------------------
# Synthetic two-class task
# ---------------------------------------------------------------------------

def synth_two_class(n: int, M: int, d_x: int, separation: float,
                    seed: int = 0) -> SequenceDataset:
    """Two Gaussian classes whose means are ``separation`` apart.

    Unit-variance sequences with the class mean shifted along the
    normalized all-ones direction of the flattened input space, so the
    task's Bayes accuracy is controlled directly by ``separation``.
    """
    if n < 1 or M < 1 or d_x < 1:
        raise ConfigurationError("n, M, d_x must all be >= 1")
    rng = make_rng(seed)
    labels = rng.permutation(np.arange(n) % 2).astype(np.int64)
    base = rng.standard_normal((n, M, d_x))
    shift_dir = np.full((M, d_x), 1.0 / np.sqrt(M * d_x))
    base += (labels[:, None, None] - 0.5) * separation * shift_dir
    meta = {"name": "synth", "M": M, "d_x": d_x, "d_y": 2,
            "value_range": None, "separation": separation, "seed": seed}
    return SequenceDataset(base, labels, meta)


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSelector:
    """Which dataset to load; ``params`` carries loader-specific settings
    (file paths, sizes, separation, ...)."""
    name: str = "synth"
    variant: str = "ordered"
    permutation_seed: int = 0
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 128
    beta: float = 0.75
    gamma_a: float = 0.001
    gamma_w: float = 0.001


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one training run.

    The integrator step scale and the noise amplitude are deliberately
    separate keys: published tuning tables use one symbol for both roles,
    and conflating them changes the model.
    """
    dataset: DatasetSelector = field(default_factory=DatasetSelector)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3))
    step_scale: float = 1.0
    version: str = CONFIG_VERSION


def default_mnist_config() -> ExperimentConfig:
    """Published defaults for the ordered pixel-sequence task."""
    return ExperimentConfig(
        dataset=DatasetSelector(name="mnist", variant="ordered", permutation_seed=0),
        model=ModelConfig(d_h=128, beta=0.75, gamma_a=0.001, gamma_w=0.001),
        train=TrainConfig(lr=0.001, decay_factor=0.1, decay_epochs=(90,),
                          epochs=100, batch_size=128, init_variance=0.1 / 128,
                          noise=NoiseConfig(epsilon=0.01, sigma1=0.02, sigma2=0.02),
                          seed=0),
        step_scale=1.0,
    )


def _take(section: dict, path: str, allowed: set[str]) -> dict:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {path}: {sorted(unknown)}")
    return section


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "version": cfg.version,
        "dataset": asdict(cfg.dataset),
        "model": asdict(cfg.model),
        "noise": {"epsilon": cfg.train.noise.epsilon,
                  "sigma1": cfg.train.noise.sigma1,
                  "sigma2": cfg.train.noise.sigma2},
        "schedule": {"step_scale": cfg.step_scale},
        "training": {"lr": cfg.train.lr, "decay_factor": cfg.train.decay_factor,
                     "decay_epochs": list(cfg.train.decay_epochs),
                     "epochs": cfg.train.epochs, "batch_size": cfg.train.batch_size,
                     "init_variance": cfg.train.init_variance, "seed": cfg.train.seed},
    }


def config_from_dict(doc: dict) -> ExperimentConfig:
    _take(doc, "<root>", {"version", "dataset", "model", "noise", "schedule", "training"})
    version = doc.get("version")
    if version != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported config version {version!r}")
    ds = _take(dict(doc.get("dataset", {})), "dataset",
               {"name", "variant", "permutation_seed", "params"})
    mdl = _take(dict(doc.get("model", {})), "model",
                {"d_h", "beta", "gamma_a", "gamma_w"})
    noise = _take(dict(doc.get("noise", {})), "noise", {"epsilon", "sigma1", "sigma2"})
    sched = _take(dict(doc.get("schedule", {})), "schedule", {"step_scale"})
    trn = _take(dict(doc.get("training", {})), "training",
                {"lr", "decay_factor", "decay_epochs", "epochs", "batch_size",
                 "init_variance", "seed"})
    return ExperimentConfig(
        dataset=DatasetSelector(**ds),
        model=ModelConfig(**mdl),
        train=TrainConfig(noise=NoiseConfig(**noise),
                          decay_epochs=tuple(trn.pop("decay_epochs", ())), **trn),
        step_scale=float(sched.get("step_scale", 1.0)),
    )


def resolve_dataset(selector: DatasetSelector) -> dict[str, SequenceDataset]:
    """Load the train/test splits a selector points at.

    synth: ``params`` = {n, M, d_x, separation, seed, test_fraction};
    mnist: ``params`` = {train_images, train_labels, test_images,
    test_labels, train_limit, test_limit}; ecg: ``params`` = {path,
    shuffle_seed}.
    """
    params = dict(selector.params)
    if selector.name == "synth":
        full = synth_two_class(
            n=int(params.get("n", 512)), M=int(params.get("M", 16)),
            d_x=int(params.get("d_x", 2)),
            separation=float(params.get("separation", 4.0)),
            seed=int(params.get("seed", 0)))
        frac = float(params.get("test_fraction", 0.25))
        order = make_rng(int(params.get("seed", 0)) + 1).permutation(full.n_samples)
        n_test = max(1, int(round(frac * full.n_samples)))
        return {"train": full.subset(order[n_test:]),
                "test": full.subset(order[:n_test])}
    if selector.name == "mnist":
        missing = [k for k in ("train_images", "train_labels",
                               "test_images", "test_labels") if k not in params]
        if missing:
            raise ConfigurationError(f"mnist dataset params missing {missing}")
        kwargs = dict(variant=selector.variant,
                      permutation_seed=selector.permutation_seed)
        train = load_mnist_idx((params["train_images"], params["train_labels"]),
                               limit=params.get("train_limit"), **kwargs)
        test = load_mnist_idx((params["test_images"], params["test_labels"]),
                              limit=params.get("test_limit"), **kwargs)
        return {"train": train, "test": test}
    if selector.name == "ecg":
        if "path" not in params:
            raise ConfigurationError("ecg dataset params missing 'path'")
        return load_ecg_splits(params["path"],
                               shuffle_seed=int(params.get("shuffle_seed", 0)))
    raise ConfigurationError(f"unknown dataset {selector.name!r}")


def save_config(path, cfg: ExperimentConfig):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")


def load_config(path) -> ExperimentConfig:
    """Parse a config file; malformed JSON reports the offending line."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top-level JSON value must be an object")
    return config_from_dict(doc)
