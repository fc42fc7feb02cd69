"""Hidden-state SDE model and its integrators.

The hidden state follows an Ito SDE whose drift is the continuous-time RNN
field ``f(h, x) = A h + a(W h + U x + b)`` and whose diffusion is diagonal,

    sigma(h, x) = epsilon * (sigma1 * I + sigma2 * diag(f(h, x))),

mixing an additive and a multiplicative noise channel.  Trajectories are
produced by explicit Euler (deterministic), Euler-Maruyama (noisy), or a
drift-tamed Euler-Maruyama variant.  The module also exposes the analytic
derivatives of the drift and the per-step state-to-state Jacobians whose
ordered products drive the downstream analyses.

Shapes: states are 1-D ``(d_h,)`` vectors; the pointwise operations (drift,
diffusion, integrator steps) also accept stacked states with leading batch
dimensions, which the Monte-Carlo consumers rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError, IntegrationDivergedError
from .rng import make_rng, substream


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Activation:
    """Pointwise activation with first and second derivatives."""
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    lipschitz: float


def _tanh_d1(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _tanh_d2(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


# Only a bounded, three-times differentiable activation is shipped; ReLU
# would break the smoothness requirements of the expansion machinery.
ACTIVATIONS: dict[str, Activation] = {
    "tanh": Activation("tanh", np.tanh, _tanh_d1, _tanh_d2, lipschitz=1.0),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unsupported activation {name!r}; available: {sorted(ACTIVATIONS)}"
        ) from None


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Weights of the deterministic RNN field.

    A, W: (d_h, d_h); U: (d_h, d_x); b: (d_h,); V: (d_y, d_h).
    """
    A: np.ndarray
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    V: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("A", "W", "U", "b", "V"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        d_h = self.A.shape[0]
        checks = [
            (self.A.shape == (d_h, d_h), f"A must be square, got {self.A.shape}"),
            (self.W.shape == (d_h, d_h), f"W must be ({d_h},{d_h}), got {self.W.shape}"),
            (self.U.ndim == 2 and self.U.shape[0] == d_h,
             f"U must have {d_h} rows, got {self.U.shape}"),
            (self.b.shape == (d_h,), f"b must be ({d_h},), got {self.b.shape}"),
            (self.V.ndim == 2 and self.V.shape[1] == d_h,
             f"V must have {d_h} columns, got {self.V.shape}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)
        for name in ("A", "W", "U", "b", "V"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigurationError(f"{name} contains non-finite entries")
        get_activation(self.activation)

    @property
    def d_h(self) -> int:
        return self.A.shape[0]

    @property
    def d_x(self) -> int:
        return self.U.shape[1]

    @property
    def d_y(self) -> int:
        return self.V.shape[0]

    @property
    def act(self) -> Activation:
        return get_activation(self.activation)


@dataclass(frozen=True)
class NoiseConfig:
    """Diffusion parameters: overall amplitude and the two channel weights."""
    epsilon: float = 0.0
    sigma1: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        for name in ("epsilon", "sigma1", "sigma2"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    def without_amplitude(self) -> "NoiseConfig":
        """Same channel weights with the overall amplitude factored out."""
        return replace(self, epsilon=1.0)


@dataclass(frozen=True)
class StepSchedule:
    """Positive step sizes of one trajectory; ``Delta`` is the largest."""
    deltas: np.ndarray
    Delta: float = field(init=False)

    def __post_init__(self):
        deltas = np.atleast_1d(np.asarray(self.deltas, dtype=float))
        if deltas.ndim != 1:
            raise ConfigurationError("deltas must be a 1-D sequence")
        if deltas.size and (not np.all(np.isfinite(deltas)) or np.any(deltas <= 0)):
            raise ConfigurationError("every step size must be finite and > 0")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "Delta", float(deltas.max()) if deltas.size else 0.0)

    def __len__(self) -> int:
        return self.deltas.size

    @property
    def horizon(self) -> float:
        return float(self.deltas.sum())

    def scaled(self, factor: float) -> "StepSchedule":
        if factor <= 0:
            raise ConfigurationError("scale factor must be > 0")
        return StepSchedule(self.deltas * factor)


def uniform_schedule(n_steps: int, delta: float = 1.0) -> StepSchedule:
    return StepSchedule(np.full(n_steps, float(delta)))


@dataclass
class Trajectory:
    """States and cached pre-activations of one simulated path.

    ``states`` has M+1 rows, ``preacts`` M rows (``z_m = W h_m + U x_m + b``);
    ``noise_draws`` holds the M standard-normal vectors of a noisy run.
    """
    states: np.ndarray
    preacts: np.ndarray
    noise_draws: np.ndarray | None
    schedule: StepSchedule

    def __post_init__(self):
        m = len(self.schedule)
        if self.states.shape[0] != m + 1:
            raise ConfigurationError(
                f"states must have {m + 1} rows for {m} steps, got {self.states.shape[0]}")
        if self.preacts.shape[0] != m:
            raise ConfigurationError(f"preacts must have {m} rows, got {self.preacts.shape[0]}")
        if self.noise_draws is not None and self.noise_draws.shape[0] != m:
            raise ConfigurationError("noise_draws length must equal the number of steps")

    @property
    def n_steps(self) -> int:
        return len(self.schedule)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class JacobianChain:
    """Per-step state-to-state Jacobians ``J_m = I + delta_m (A + D_m W)``."""
    step_jacobians: np.ndarray  # (M, d_h, d_h)

    @property
    def n_steps(self) -> int:
        return self.step_jacobians.shape[0]

    def product(self, m: int, k: int) -> np.ndarray:
        return jacobian_product(self, m, k)


# ---------------------------------------------------------------------------
# Field and derivatives
# ---------------------------------------------------------------------------

def preactivation(h: np.ndarray, x: np.ndarray, p: ModelParams) -> np.ndarray:
    """``z = W h + U x + b``; broadcasts over leading batch dimensions."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    if h.shape[-1] != p.d_h:
        raise ConfigurationError(f"state has dimension {h.shape[-1]}, model expects {p.d_h}")
    if x.shape[-1] != p.d_x:
        raise ConfigurationError(f"input has dimension {x.shape[-1]}, model expects {p.d_x}")
    return h @ p.W.T + x @ p.U.T + p.b


def drift(h: np.ndarray, x: np.ndarray, p: ModelParams) -> np.ndarray:
    """RNN vector field ``A h + a(W h + U x + b)``."""
    h = np.asarray(h, dtype=float)
    z = preactivation(h, x, p)
    return h @ p.A.T + p.act.fn(z)


def diffusion(h: np.ndarray, x: np.ndarray, p: ModelParams, n: NoiseConfig) -> np.ndarray:
    """Diagonal of the diffusion matrix, ``epsilon (sigma1 + sigma2 f(h, x))``.

    The diffusion is diagonal by construction, so it is stored as a vector;
    the full matrix is ``diag`` of the returned value.
    """
    if n.epsilon == 0.0:
        h = np.asarray(h, dtype=float)
        if h.shape[-1] != p.d_h:
            raise ConfigurationError(f"state has dimension {h.shape[-1]}, model expects {p.d_h}")
        return np.zeros(h.shape)
    return n.epsilon * (n.sigma1 + n.sigma2 * drift(h, x, p))


def drift_jacobian_h(h: np.ndarray, x: np.ndarray, p: ModelParams) -> np.ndarray:
    """``A + diag(a'(z)) W`` at a single state."""
    z = preactivation(h, x, p)
    return p.A + p.act.d1(z)[:, None] * p.W


def drift_jacobian_x(h: np.ndarray, x: np.ndarray, p: ModelParams) -> np.ndarray:
    """``diag(a'(z)) U`` at a single state."""
    z = preactivation(h, x, p)
    return p.act.d1(z)[:, None] * p.U


def drift_hessian_h_component(h: np.ndarray, x: np.ndarray, p: ModelParams,
                              component: int) -> np.ndarray:
    """Hessian in ``h`` of one drift component: ``a''(z_p) w_p w_p^T``.

    The linear part contributes nothing; only the recurrent row ``w_p``
    enters, scaled by the activation curvature at that component.
    """
    if not 0 <= component < p.d_h:
        raise ConfigurationError(f"component {component} out of range for d_h={p.d_h}")
    z = preactivation(h, x, p)
    w = p.W[component]
    return p.act.d2(z[component]) * np.outer(w, w)


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0:
        raise ConfigurationError(f"step size must be finite and > 0, got {delta}")
    return delta


def euler_step(h: np.ndarray, x: np.ndarray, p: ModelParams, delta: float) -> np.ndarray:
    """Explicit Euler step ``h + delta f(h, x)``."""
    delta = _check_delta(delta)
    return h + delta * drift(h, x, p)


def em_step(h: np.ndarray, x: np.ndarray, p: ModelParams, n: NoiseConfig,
            delta: float, xi: np.ndarray,
            drift_fn: Callable[[np.ndarray, np.ndarray, ModelParams], np.ndarray]
            | None = None) -> np.ndarray:
    """Euler-Maruyama step ``h + delta f + sqrt(delta) sigma xi``.

    With ``epsilon == 0`` this is bit-identical to :func:`euler_step`.
    ``drift_fn`` optionally replaces the model field in both the drift and
    the multiplicative diffusion channel.
    """
    delta = _check_delta(delta)
    f = drift_fn(h, x, p) if drift_fn is not None else drift(h, x, p)
    base = h + delta * f
    if n.epsilon == 0.0:
        return base
    xi = np.asarray(xi, dtype=float)
    diag = n.epsilon * (n.sigma1 + n.sigma2 * f)
    return base + np.sqrt(delta) * diag * xi


def tamed_em_step(h: np.ndarray, x: np.ndarray, p: ModelParams, n: NoiseConfig,
                  delta: float, xi: np.ndarray, c1: float, c2: float,
                  drift_fn: Callable[[np.ndarray, np.ndarray, ModelParams], np.ndarray]
                  | None = None) -> np.ndarray:
    """Drift-tamed Euler-Maruyama step.

    The drift increment is damped by ``1 / max(1, c1 ||h|| + c2)``, which
    caps the per-step growth for states far from the origin; the diffusion
    increment is left untouched.  ``drift_fn`` optionally replaces the model
    field (used to exercise the integrator on superlinear test fields).
    """
    delta = _check_delta(delta)
    if c1 < 0 or c2 < 0:
        raise ConfigurationError("taming coefficients must be >= 0")
    f = drift_fn(h, x, p) if drift_fn is not None else drift(h, x, p)
    h = np.asarray(h, dtype=float)
    norm = np.linalg.norm(h, axis=-1, keepdims=True)
    factor = 1.0 / np.maximum(1.0, c1 * norm + c2)
    out = h + (delta * factor) * f
    if n.epsilon != 0.0:
        diag = n.epsilon * (n.sigma1 + n.sigma2 * f)
        out = out + np.sqrt(delta) * diag * np.asarray(xi, dtype=float)
    return out


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

MODES = ("deterministic", "noisy", "tamed")


def simulate(x_seq: np.ndarray, p: ModelParams, n: NoiseConfig,
             schedule: StepSchedule, mode: str = "deterministic",
             rng_seed: int | None = None, *, h0: np.ndarray | None = None,
             xi: np.ndarray | None = None, taming: tuple[float, float] = (1.0, 0.0),
             drift_fn=None) -> Trajectory:
    """Integrate one trajectory over a full input sequence.

    ``x_seq`` has shape (M, d_x) and must match the schedule length.  The
    noisy and tamed modes draw the per-step normal vectors from
    ``rng_seed`` unless an explicit ``xi`` array (M, d_h) is supplied;
    the draws are stored on the returned trajectory so the run can be
    replayed (same draws -> bit-identical states).

    Raises :class:`IntegrationDivergedError` with the offending step index
    as soon as the state stops being finite.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    m_steps = len(schedule)
    if x_seq.shape[0] != m_steps:
        raise ConfigurationError(
            f"input sequence has {x_seq.shape[0]} steps but schedule has {m_steps}")
    if m_steps and x_seq.shape[1] != p.d_x:
        raise ConfigurationError(f"inputs have d_x={x_seq.shape[1]}, model expects {p.d_x}")

    h = np.zeros(p.d_h) if h0 is None else np.asarray(h0, dtype=float).copy()
    if h.shape != (p.d_h,):
        raise ConfigurationError(f"h0 must have shape ({p.d_h},), got {h.shape}")

    stochastic = mode in ("noisy", "tamed")
    if stochastic:
        if xi is not None:
            xi = np.asarray(xi, dtype=float)
            if xi.shape != (m_steps, p.d_h):
                raise ConfigurationError(f"xi must have shape ({m_steps},{p.d_h})")
        else:
            xi = make_rng(rng_seed).standard_normal((m_steps, p.d_h))

    states = np.empty((m_steps + 1, p.d_h))
    preacts = np.empty((m_steps, p.d_h))
    states[0] = h
    for m in range(m_steps):
        x_m = x_seq[m]
        delta = schedule.deltas[m]
        preacts[m] = preactivation(h, x_m, p)
        if mode == "deterministic":
            h = euler_step(h, x_m, p, delta) if drift_fn is None else \
                h + delta * drift_fn(h, x_m, p)
        elif mode == "noisy":
            h = em_step(h, x_m, p, n, delta, xi[m], drift_fn=drift_fn)
        else:
            h = tamed_em_step(h, x_m, p, n, delta, xi[m], taming[0], taming[1],
                              drift_fn=drift_fn)
        if not np.all(np.isfinite(h)):
            raise IntegrationDivergedError(m)
        states[m + 1] = h

    return Trajectory(states=states, preacts=preacts,
                      noise_draws=xi if stochastic else None, schedule=schedule)


def jacobian_chain(traj: Trajectory, x_seq: np.ndarray, p: ModelParams,
                   schedule: StepSchedule | None = None) -> JacobianChain:
    """Per-step Jacobians along a deterministic trajectory."""
    schedule = schedule if schedule is not None else traj.schedule
    m_steps = len(schedule)
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    if x_seq.shape[0] != m_steps or traj.states.shape[0] != m_steps + 1:
        raise ConfigurationError("trajectory, inputs, and schedule lengths disagree")
    eye = np.eye(p.d_h)
    jacs = np.empty((m_steps, p.d_h, p.d_h))
    for m in range(m_steps):
        jacs[m] = eye + schedule.deltas[m] * drift_jacobian_h(traj.states[m], x_seq[m], p)
    return JacobianChain(jacs)


def jacobian_product(chain: JacobianChain, m: int, k: int) -> np.ndarray:
    """Ordered product ``J_m J_{m-1} ... J_k``; empty when ``k == m + 1``."""
    d_h = chain.step_jacobians.shape[1]
    if k > m + 1:
        raise ConfigurationError(f"empty-beyond product requested: k={k} > m+1={m + 1}")
    if k < 0 or m >= chain.n_steps:
        raise ConfigurationError(
            f"product indices (m={m}, k={k}) out of range for {chain.n_steps} steps")
    out = np.eye(d_h)
    for i in range(m, k - 1, -1):
        out = out @ chain.step_jacobians[i]
    return out


# ---------------------------------------------------------------------------
# Strong-convergence study
# ---------------------------------------------------------------------------

def gbm_params(a: float, sigma_mult: float) -> tuple[ModelParams, NoiseConfig]:
    """Scalar model whose SDE is geometric Brownian motion.

    With ``W = U = b = 0`` the field is exactly ``a h``, and the
    multiplicative diffusion channel with weight ``sigma_mult / a`` turns the
    diagonal diffusion into ``sigma_mult * h``.
    """
    if a == 0:
        raise ConfigurationError("drift rate must be nonzero to emulate multiplicative noise")
    p = ModelParams(A=[[a]], W=[[0.0]], U=[[0.0]], b=[0.0], V=[[1.0]])
    n = NoiseConfig(epsilon=1.0, sigma1=0.0, sigma2=sigma_mult / a)
    return p, n


def gbm_strong_errors(a: float, sigma_mult: float, h0: float, t_final: float,
                      deltas: np.ndarray, n_paths: int, rng_seed: int = 0) -> np.ndarray:
    """Terminal strong error of Euler-Maruyama against the exact GBM solution.

    For each step size the scheme is driven by fresh Brownian increments and
    compared with the closed-form solution evaluated on the same path;
    returns ``mean |h_T^em - h_T^exact|`` per step size.
    """
    p, n = gbm_params(a, sigma_mult)
    deltas = np.asarray(deltas, dtype=float)
    x_dummy = np.zeros(1)
    errors = np.empty(deltas.size)
    for i, delta in enumerate(deltas):
        n_steps = int(round(t_final / delta))
        if abs(n_steps * delta - t_final) > 1e-12 * t_final:
            raise ConfigurationError(f"step size {delta} does not divide horizon {t_final}")
        rng = substream(rng_seed, i)
        h = np.full((n_paths, 1), float(h0))
        b_final = np.zeros(n_paths)
        sqrt_delta = np.sqrt(delta)
        for _ in range(n_steps):
            xi = rng.standard_normal((n_paths, 1))
            h = em_step(h, x_dummy, p, n, delta, xi)
            b_final += sqrt_delta * xi[:, 0]
        exact = h0 * np.exp((a - 0.5 * sigma_mult ** 2) * t_final + sigma_mult * b_final)
        errors[i] = np.mean(np.abs(h[:, 0] - exact))
    return errors
