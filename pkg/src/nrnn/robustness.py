"""Input perturbation models and multi-seed accuracy sweeps.

Four perturbation kinds: additive white noise, multiplicative white noise,
salt-and-pepper pixel corruption, and single-step sign-gradient adversarial
perturbations.  Sweeps evaluate trained models (noise-free at inference) on
freshly perturbed copies of a test set, one realization per sample per
seed, and aggregate accuracies over seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .rng import substream
from .sde import ModelParams
from .training import accuracy, loss_input_gradients

KINDS = ("white", "mult_white", "salt_pepper", "fgsm")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationSpec:
    """One perturbation model: kind, strength, and its own seed.

    ``strength`` is the noise scale (white), scale around one (mult_white),
    corrupted-pixel fraction (salt_pepper), or step radius (fgsm).
    ``clip_range`` is required for salt_pepper and also clips fgsm output
    when set.
    """
    kind: str
    strength: float
    clip_range: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown perturbation kind {self.kind!r}")
        if self.strength < 0:
            raise ConfigurationError("strength must be >= 0")
        if self.kind == "salt_pepper":
            if self.clip_range is None:
                raise ConfigurationError("salt_pepper requires clip_range")
            if self.strength > 1:
                raise ConfigurationError("salt_pepper fraction must be in [0, 1]")
        if self.clip_range is not None:
            lo, hi = self.clip_range
            if not lo < hi:
                raise ConfigurationError("clip_range must satisfy min < max")
            object.__setattr__(self, "clip_range", (float(lo), float(hi)))


@dataclass
class SweepReport:
    rows: list[dict]
    aggregates: list[dict]


# ---------------------------------------------------------------------------
# Perturbations
# ---------------------------------------------------------------------------

def _salt_pepper(x: np.ndarray, alpha: float, lo: float, hi: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Corrupt exactly round(alpha*N/2) entries to each extreme.

    Deterministic counts (random positions, random tie for an odd total)
    rather than per-entry coin flips, which removes the count variance.
    """
    out = x.copy()
    flat = out.reshape(-1)
    n_total = flat.size
    n_corrupt = int(round(alpha * n_total))
    idx = rng.choice(n_total, size=n_corrupt, replace=False)
    n_min = n_corrupt // 2
    if n_corrupt % 2 == 1 and rng.random() < 0.5:
        n_min += 1
    flat[idx[:n_min]] = lo
    flat[idx[n_min:]] = hi
    return out


def perturb(x_seq: np.ndarray, spec: PerturbationSpec,
            rng: np.random.Generator | None = None,
            model: ModelParams | None = None, label: int | None = None,
            step_scale=1.0) -> np.ndarray:
    """Perturbed copy of one input sequence.

    Pure in ``(x_seq, spec)`` when ``rng`` is omitted: the stream is derived
    from ``spec.seed``.  The fgsm kind needs ``model`` and ``label`` to
    take the loss gradient in the input (through the noise-free model).
    """
    x = np.asarray(x_seq, dtype=float)
    if spec.strength == 0.0 and spec.kind != "salt_pepper":
        return x.copy()
    if rng is None:
        rng = substream(spec.seed, 0)

    if spec.kind == "white":
        return x + rng.normal(0.0, spec.strength, size=x.shape)
    if spec.kind == "mult_white":
        return x * rng.normal(1.0, spec.strength, size=x.shape)
    if spec.kind == "salt_pepper":
        lo, hi = spec.clip_range
        return _salt_pepper(x, spec.strength, lo, hi, rng)

    # fgsm
    if model is None or label is None:
        raise ConfigurationError("fgsm perturbation requires model and label")
    grad = loss_input_gradients(x[None], np.asarray([int(label)]), model,
                                step_scale)[0]
    out = x + spec.strength * np.sign(grad)
    if spec.clip_range is not None:
        out = np.clip(out, spec.clip_range[0], spec.clip_range[1])
    return out


def perturb_dataset(X: np.ndarray, labels: np.ndarray, spec: PerturbationSpec,
                    seed: int, model: ModelParams | None = None,
                    step_scale=1.0) -> np.ndarray:
    """Fresh perturbation realization for every sample of a test set.

    Randomized kinds draw one substream per (sweep seed, spec seed); fgsm
    is deterministic given the model.
    """
    X = np.asarray(X, dtype=float)
    if spec.strength == 0.0 and spec.kind != "salt_pepper":
        return X.copy()
    rng = substream(seed, 23, spec.seed)
    if spec.kind == "white":
        return X + rng.normal(0.0, spec.strength, size=X.shape)
    if spec.kind == "mult_white":
        return X * rng.normal(1.0, spec.strength, size=X.shape)
    if spec.kind == "salt_pepper":
        lo, hi = spec.clip_range
        out = np.empty_like(X)
        for i in range(X.shape[0]):
            out[i] = _salt_pepper(X[i], spec.strength, lo, hi, rng)
        return out
    if model is None:
        raise ConfigurationError("fgsm perturbation requires a model")
    grads = loss_input_gradients(X, labels, model, step_scale)
    out = X + spec.strength * np.sign(grads)
    if spec.clip_range is not None:
        out = np.clip(out, spec.clip_range[0], spec.clip_range[1])
    return out


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

def sweep(models: list[tuple[str, ModelParams]], dataset_test, specs,
          seeds, step_scale=1.0) -> SweepReport:
    """Accuracy of every model under every perturbation spec and seed.

    Inference runs the noise-free model.  Rows are emitted in canonical
    (model, spec, seed) order; aggregates carry mean and standard deviation
    over seeds.
    """
    if not models or not list(specs) or not list(seeds):
        raise ConfigurationError("models, specs, and seeds must be non-empty")
    X = np.asarray(dataset_test.inputs, dtype=float)
    labels = np.asarray(dataset_test.labels)
    if X.shape[0] == 0:
        raise ConfigurationError("empty test dataset")

    rows = []
    for model_id, params in models:
        for spec in specs:
            for seed in seeds:
                x_pert = perturb_dataset(X, labels, spec, int(seed),
                                         model=params, step_scale=step_scale)
                acc = accuracy(params, x_pert, labels, step_scale)
                rows.append({"model_id": model_id, "seed": int(seed),
                             "kind": spec.kind, "strength": spec.strength,
                             "accuracy": acc})

    aggregates = []
    for model_id, _ in models:
        for spec in specs:
            accs = [r["accuracy"] for r in rows
                    if r["model_id"] == model_id and r["kind"] == spec.kind
                    and r["strength"] == spec.strength]
            accs = np.asarray(accs)
            aggregates.append({
                "model_id": model_id, "kind": spec.kind, "strength": spec.strength,
                "mean_accuracy": float(accs.mean()),
                "std_accuracy": float(accs.std(ddof=1)) if accs.size > 1 else 0.0,
            })
    return SweepReport(rows=rows, aggregates=aggregates)


def clean_accuracy(params: ModelParams, dataset, step_scale=1.0) -> float:
    X = np.asarray(dataset.inputs, dtype=float)
    return accuracy(params, X, np.asarray(dataset.labels), step_scale)
