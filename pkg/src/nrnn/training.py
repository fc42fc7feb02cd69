"""Weight parameterization, backpropagation through time, and training.

The hidden-to-hidden matrices are built from unconstrained raw matrices by

    A = (1 - beta_a) (B + B^T) + beta_a (B - B^T) - gamma_a I,
    W = (1 - beta_w) (C + C^T) + beta_w (C - C^T) - gamma_w I,

so the optimizer works on ``B, C, U, b, V``.  Gradients are exact pathwise
derivatives of the realized loss: in noisy mode the per-step normal draws
are frozen, and the multiplicative channel's dependence on the drift is part
of the chain rule.  The hot paths are vectorized over the batch dimension;
the single-sample entry points wrap a batch of one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigurationError, IntegrationDivergedError
from .rng import make_rng
from .sde import (ModelParams, NoiseConfig, Trajectory, get_activation,
                  simulate, uniform_schedule)

if TYPE_CHECKING:  # pragma: no cover
    from .data import SequenceDataset

CHECKPOINT_VERSION = "v1"


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawWeights:
    """Unconstrained weights plus the fixed parameterization constants."""
    B: np.ndarray
    C: np.ndarray
    U: np.ndarray
    b: np.ndarray
    V: np.ndarray
    beta_a: float = 0.75
    beta_w: float = 0.75
    gamma_a: float = 0.001
    gamma_w: float = 0.001
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("B", "C", "U", "b", "V"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        d_h = self.B.shape[0]
        if self.B.shape != (d_h, d_h) or self.C.shape != (d_h, d_h):
            raise ConfigurationError("B and C must be square with matching sizes")
        for name, lo, hi in (("beta_a", 0.0, 1.0), ("beta_w", 0.0, 1.0)):
            v = float(getattr(self, name))
            if not lo <= v <= hi:
                raise ConfigurationError(f"{name} must be in [{lo}, {hi}], got {v}")
            object.__setattr__(self, name, v)
        for name in ("gamma_a", "gamma_w"):
            v = float(getattr(self, name))
            if v < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {v}")
            object.__setattr__(self, name, v)

    @property
    def d_h(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    decay_factor: float = 1.0
    decay_epochs: tuple[int, ...] = ()
    epochs: int = 1
    batch_size: int = 32
    init_variance: float = 0.01
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigurationError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.epochs < 0 or self.batch_size < 1 or self.init_variance <= 0:
            raise ConfigurationError("epochs >= 0, batch_size >= 1, init_variance > 0 required")
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))


@dataclass
class GradientBundle:
    """Gradients with respect to the raw weights."""
    B: np.ndarray
    C: np.ndarray
    U: np.ndarray
    b: np.ndarray
    V: np.ndarray

    def check_finite(self):
        for name in ("B", "C", "U", "b", "V"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigurationError(f"gradient for {name} contains non-finite entries")


# ---------------------------------------------------------------------------
# Parameterization
# ---------------------------------------------------------------------------

def _t_map(raw: np.ndarray, beta: float, gamma: float) -> np.ndarray:
    return (1.0 - beta) * (raw + raw.T) + beta * (raw - raw.T) - gamma * np.eye(raw.shape[0])


def _t_map_pullback(grad: np.ndarray, beta: float) -> np.ndarray:
    return (1.0 - beta) * (grad + grad.T) + beta * (grad - grad.T)


def materialize(raw: RawWeights) -> ModelParams:
    """Build the RNN weights from the raw parameterization."""
    return ModelParams(
        A=_t_map(raw.B, raw.beta_a, raw.gamma_a),
        W=_t_map(raw.C, raw.beta_w, raw.gamma_w),
        U=raw.U, b=raw.b, V=raw.V, activation=raw.activation,
    )


def init_raw_weights(d_h: int, d_x: int, d_y: int, init_variance: float,
                     beta_a: float = 0.75, beta_w: float = 0.75,
                     gamma_a: float = 0.001, gamma_w: float = 0.001,
                     seed: int | np.random.Generator = 0,
                     activation: str = "tanh") -> RawWeights:
    """Raw weights drawn i.i.d. normal with the given variance; b starts at 0."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    std = float(np.sqrt(init_variance))
    return RawWeights(
        B=std * rng.standard_normal((d_h, d_h)),
        C=std * rng.standard_normal((d_h, d_h)),
        U=std * rng.standard_normal((d_h, d_x)),
        b=np.zeros(d_h),
        V=std * rng.standard_normal((d_y, d_h)),
        beta_a=beta_a, beta_w=beta_w, gamma_a=gamma_a, gamma_w=gamma_w,
        activation=activation,
    )


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy of softmax(logits), log-sum-exp stabilized."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.atleast_1d(np.asarray(labels))
    if np.any(labels < 0) or np.any(labels >= logits.shape[-1]):
        raise ConfigurationError("label out of range for the number of classes")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    return lse - shifted[np.arange(len(labels)), labels]


# ---------------------------------------------------------------------------
# Batched forward / backward
# ---------------------------------------------------------------------------

def _per_step_deltas(step_scale, m_steps: int) -> np.ndarray:
    """Uniform scalar or explicit per-step array of step sizes."""
    deltas = np.asarray(step_scale, dtype=float)
    if deltas.ndim == 0:
        deltas = np.full(m_steps, float(deltas))
    if deltas.shape != (m_steps,):
        raise ConfigurationError(f"need {m_steps} step sizes, got shape {deltas.shape}")
    if np.any(deltas <= 0):
        raise ConfigurationError("step sizes must be > 0")
    return deltas


def _step_coefficient(delta: float, noise: NoiseConfig, xi_m: np.ndarray | None):
    """Per-entry multiplier of the drift in one update.

    The update reads ``h + c * f + sqrt(delta) eps sigma1 xi`` with
    ``c = delta + sqrt(delta) eps sigma2 xi``, grouping the deterministic and
    multiplicative-noise contributions of the drift.
    """
    if xi_m is None or noise.epsilon == 0.0:
        return delta
    return delta + np.sqrt(delta) * noise.epsilon * noise.sigma2 * xi_m


def forward_batch(X: np.ndarray, p: ModelParams, noise: NoiseConfig,
                  step_scale, xi: np.ndarray | None):
    """States and pre-activations for a batch of input sequences.

    X: (N, M, d_x); xi: (M, N, d_h) frozen draws or None for the
    deterministic path; ``step_scale`` is a scalar or per-step array.
    Returns (H, Z) with H: (M+1, N, d_h), Z: (M, N, d_h).
    """
    X = np.asarray(X, dtype=float)
    n_samples, m_steps, _ = X.shape
    deltas = _per_step_deltas(step_scale, m_steps)
    act = get_activation(p.activation)
    H = np.empty((m_steps + 1, n_samples, p.d_h))
    Z = np.empty((m_steps, n_samples, p.d_h))
    H[0] = 0.0
    h = H[0]
    for m in range(m_steps):
        z = h @ p.W.T + X[:, m] @ p.U.T + p.b
        f = h @ p.A.T + act.fn(z)
        c = _step_coefficient(deltas[m], noise, None if xi is None else xi[m])
        h = h + c * f
        if xi is not None and noise.epsilon > 0.0 and noise.sigma1 > 0.0:
            h = h + (np.sqrt(deltas[m]) * noise.epsilon * noise.sigma1) * xi[m]
        if not np.all(np.isfinite(h)):
            raise IntegrationDivergedError(m)
        Z[m] = z
        H[m + 1] = h
    return H, Z


def backward_batch(X: np.ndarray, labels: np.ndarray, p: ModelParams,
                   noise: NoiseConfig, step_scale,
                   xi: np.ndarray | None, H: np.ndarray, Z: np.ndarray,
                   want_input_grads: bool = False):
    """Exact gradients of the mean cross-entropy over the batch.

    Returns ``(grads_model, input_grads)`` where ``grads_model`` maps the
    materialized tensors A, W, U, b, V to the gradient of the mean loss and
    ``input_grads`` (if requested) holds per-sample gradients of the
    *per-sample* loss, shape (N, M, d_x).
    """
    X = np.asarray(X, dtype=float)
    n_samples, m_steps, _ = X.shape
    deltas = _per_step_deltas(step_scale, m_steps)
    act = get_activation(p.activation)

    logits = H[m_steps] @ p.V.T
    probs = softmax(logits)
    g_logits = probs.copy()
    g_logits[np.arange(n_samples), labels] -= 1.0
    g_logits /= n_samples

    g_v = g_logits.T @ H[m_steps]
    lam = g_logits @ p.V

    g_a = np.zeros_like(p.A)
    g_w = np.zeros_like(p.W)
    g_u = np.zeros_like(p.U)
    g_b = np.zeros_like(p.b)
    x_grads = np.empty((n_samples, m_steps, p.d_x)) if want_input_grads else None

    for m in range(m_steps - 1, -1, -1):
        c = _step_coefficient(deltas[m], noise, None if xi is None else xi[m])
        c_lam = c * lam
        s = act.d1(Z[m]) * c_lam
        g_a += c_lam.T @ H[m]
        g_w += s.T @ H[m]
        g_u += s.T @ X[:, m]
        g_b += s.sum(axis=0)
        if want_input_grads:
            # Gradient of the per-sample loss, so undo the 1/N of the mean.
            x_grads[:, m] = (s @ p.U) * n_samples
        lam = lam + c_lam @ p.A + s @ p.W

    grads_model = {"A": g_a, "W": g_w, "U": g_u, "b": g_b, "V": g_v}
    return grads_model, x_grads


def pull_back_to_raw(grads_model: dict, raw: RawWeights) -> GradientBundle:
    """Chain the materialized-weight gradients through the parameterization."""
    return GradientBundle(
        B=_t_map_pullback(grads_model["A"], raw.beta_a),
        C=_t_map_pullback(grads_model["W"], raw.beta_w),
        U=grads_model["U"].copy(),
        b=grads_model["b"].copy(),
        V=grads_model["V"].copy(),
    )


def batch_loss_and_grads(X: np.ndarray, labels: np.ndarray, raw: RawWeights,
                         noise: NoiseConfig, step_scale: float,
                         xi: np.ndarray | None):
    """Mean loss and raw-weight gradients for one batch."""
    p = materialize(raw)
    H, Z = forward_batch(X, p, noise, step_scale, xi)
    labels = np.asarray(labels)
    loss = float(np.mean(cross_entropy(H[-1] @ p.V.T, labels)))
    grads_model, _ = backward_batch(X, labels, p, noise, step_scale, xi, H, Z)
    return loss, pull_back_to_raw(grads_model, raw)


def loss_input_gradients(X: np.ndarray, labels: np.ndarray, p: ModelParams,
                         step_scale: float = 1.0) -> np.ndarray:
    """Per-sample gradients of the loss in the inputs (noise-free model)."""
    X = np.asarray(X, dtype=float)
    noise = NoiseConfig()
    H, Z = forward_batch(X, p, noise, step_scale, None)
    _, x_grads = backward_batch(X, np.asarray(labels), p, noise, step_scale,
                                None, H, Z, want_input_grads=True)
    return x_grads


# ---------------------------------------------------------------------------
# Single-sample entry points
# ---------------------------------------------------------------------------

def forward_loss(x_seq: np.ndarray, label: int, raw: RawWeights,
                 config: TrainConfig, mode: str = "deterministic",
                 rng_seed: int | None = None, step_scale: float = 1.0):
    """Loss and trajectory of a single sample.

    Noisy mode draws and caches the per-step noise on the trajectory so the
    realized loss is differentiable by :func:`bptt`.
    """
    p = materialize(raw)
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    if not 0 <= int(label) < p.d_y:
        raise ConfigurationError(f"label {label} out of range for d_y={p.d_y}")
    schedule = uniform_schedule(x_seq.shape[0], step_scale)
    noise = config.noise if mode == "noisy" else NoiseConfig()
    traj = simulate(x_seq, p, noise, schedule, mode=mode, rng_seed=rng_seed)
    loss = float(cross_entropy(p.V @ traj.final_state, [int(label)])[0])
    return loss, traj


def bptt(x_seq: np.ndarray, label: int, raw: RawWeights, config: TrainConfig,
         traj: Trajectory, step_scale: float = 1.0) -> GradientBundle:
    """Gradient of the realized single-sample loss in the raw weights.

    In noisy mode (``config.noise.epsilon > 0``) the trajectory must carry
    the frozen noise draws from the forward pass.
    """
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    noisy = config.noise.epsilon > 0.0
    if noisy and traj.noise_draws is None:
        raise ConfigurationError("noisy-mode gradient requires cached noise draws "
                                 "from the forward pass")
    p = materialize(raw)
    noise = config.noise if noisy else NoiseConfig()
    xi = traj.noise_draws[:, None, :] if noisy else None
    H = traj.states[:, None, :]
    Z = traj.preacts[:, None, :]
    grads_model, _ = backward_batch(x_seq[None], np.asarray([int(label)]), p,
                                    noise, step_scale, xi, H, Z)
    return pull_back_to_raw(grads_model, raw)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

_PARAM_FIELDS = ("B", "C", "U", "b", "V")


@dataclass
class AdamState:
    t: int
    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, raw: RawWeights) -> "AdamState":
        return cls(t=0,
                   m={k: np.zeros_like(getattr(raw, k)) for k in _PARAM_FIELDS},
                   v={k: np.zeros_like(getattr(raw, k)) for k in _PARAM_FIELDS})


def adam_step(raw: RawWeights, grads: GradientBundle, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[RawWeights, AdamState]:
    """One Adam update with bias correction; returns new weights and state."""
    grads.check_finite()
    t = state.t + 1
    new_m, new_v, updates = {}, {}, {}
    for k in _PARAM_FIELDS:
        g = getattr(grads, k)
        new_m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        new_v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = new_m[k] / (1.0 - beta1 ** t)
        v_hat = new_v[k] / (1.0 - beta2 ** t)
        updates[k] = getattr(raw, k) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return replace(raw, **updates), AdamState(t=t, m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# Inference helpers
# ---------------------------------------------------------------------------

def predict_batch(p: ModelParams, X: np.ndarray, step_scale: float = 1.0) -> np.ndarray:
    """Predicted labels with the noise-free model; argmax ties go to the
    lowest class index."""
    H, _ = forward_batch(np.asarray(X, dtype=float), p, NoiseConfig(), step_scale, None)
    return np.argmax(H[-1] @ p.V.T, axis=1)


def accuracy(p: ModelParams, X: np.ndarray, labels: np.ndarray,
             step_scale: float = 1.0) -> float:
    preds = predict_batch(p, X, step_scale)
    return float(np.mean(preds == np.asarray(labels)))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train(dataset: "SequenceDataset", config: TrainConfig,
          eval_dataset: "SequenceDataset | None" = None,
          step_scale: float = 1.0, d_h: int | None = None,
          raw_init: RawWeights | None = None,
          beta_a: float = 0.75, beta_w: float = 0.75,
          gamma_a: float = 0.001, gamma_w: float = 0.001,
          rng: np.random.Generator | None = None):
    """Minibatch Adam training; returns final weights and per-epoch metrics.

    Weights start from ``raw_init`` when given, otherwise they are drawn for
    hidden size ``d_h``.  Noisy mode (``config.noise.epsilon > 0``) draws
    fresh noise for every forward pass; evaluation always runs the
    noise-free model.  Metrics is a list of
    ``{"epoch", "train_loss", "eval_accuracy", "lr"}`` rows.

    All randomness (initialization, shuffling, noise draws) flows through
    one generator, seeded from ``config.seed`` unless passed explicitly;
    passing it in lets the caller persist the post-training state in a
    checkpoint.
    """
    X = np.asarray(dataset.inputs, dtype=float)
    labels = np.asarray(dataset.labels)
    if X.shape[0] == 0:
        raise ConfigurationError("empty dataset")
    n_samples, m_steps, d_x = X.shape
    d_y = int(dataset.d_y)

    if rng is None:
        rng = make_rng(config.seed)
    if raw_init is not None:
        raw = raw_init
    elif d_h is not None:
        raw = init_raw_weights(d_h=d_h, d_x=d_x, d_y=d_y,
                               init_variance=config.init_variance,
                               beta_a=beta_a, beta_w=beta_w,
                               gamma_a=gamma_a, gamma_w=gamma_w, seed=rng)
    else:
        raise ConfigurationError("train() needs either d_h or raw_init")
    state = AdamState.zeros_like(raw)
    noisy = config.noise.epsilon > 0.0
    noise = config.noise if noisy else NoiseConfig()

    eval_X = X if eval_dataset is None else np.asarray(eval_dataset.inputs, dtype=float)
    eval_y = labels if eval_dataset is None else np.asarray(eval_dataset.labels)

    lr = config.lr
    metrics = []
    for epoch in range(config.epochs):
        if epoch in config.decay_epochs:
            lr *= config.decay_factor
        order = rng.permutation(n_samples)
        epoch_loss = 0.0
        for start in range(0, n_samples, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = X[idx], labels[idx]
            xi = rng.standard_normal((m_steps, len(idx), raw.d_h)) if noisy else None
            loss, grads = batch_loss_and_grads(xb, yb, raw, noise, step_scale, xi)
            raw, state = adam_step(raw, grads, state, lr)
            epoch_loss += loss * len(idx)
        p = materialize(raw)
        metrics.append({
            "epoch": epoch,
            "train_loss": epoch_loss / n_samples,
            "eval_accuracy": accuracy(p, eval_X, eval_y, step_scale),
            "lr": lr,
        })
    return raw, metrics


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, raw: RawWeights, config: TrainConfig,
                    rng_state: dict | None = None, step_scale: float = 1.0,
                    meta: dict | None = None):
    """Write a versioned ``.npz`` checkpoint.

    Layout: arrays ``B C U b V`` plus one JSON header string carrying the
    parameterization constants, the training configuration, the step scale,
    and the optional generator state.
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "activation": raw.activation,
        "beta_a": raw.beta_a, "beta_w": raw.beta_w,
        "gamma_a": raw.gamma_a, "gamma_w": raw.gamma_w,
        "step_scale": step_scale,
        "config": {
            "lr": config.lr, "decay_factor": config.decay_factor,
            "decay_epochs": list(config.decay_epochs), "epochs": config.epochs,
            "batch_size": config.batch_size, "init_variance": config.init_variance,
            "seed": config.seed,
            "noise": {"epsilon": config.noise.epsilon, "sigma1": config.noise.sigma1,
                      "sigma2": config.noise.sigma2},
        },
        "rng_state": rng_state,
        "meta": meta or {},
    }
    np.savez(path, B=raw.B, C=raw.C, U=raw.U, b=raw.b, V=raw.V,
             header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8))


def load_checkpoint(path):
    """Read a checkpoint; returns ``(raw, config, step_scale, header)``."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(
                f"unsupported checkpoint version {header.get('version')!r}")
        raw = RawWeights(B=data["B"], C=data["C"], U=data["U"], b=data["b"],
                         V=data["V"], beta_a=header["beta_a"], beta_w=header["beta_w"],
                         gamma_a=header["gamma_a"], gamma_w=header["gamma_w"],
                         activation=header["activation"])
    cfg = header["config"]
    config = TrainConfig(
        lr=cfg["lr"], decay_factor=cfg["decay_factor"],
        decay_epochs=tuple(cfg["decay_epochs"]), epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], init_variance=cfg["init_variance"],
        noise=NoiseConfig(**cfg["noise"]), seed=cfg["seed"])
    return raw, config, float(header.get("step_scale", 1.0)), header
