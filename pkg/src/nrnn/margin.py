"""Classification scores, margin lower bounds, and empirical margin probes.

The score of a sample is the scaled softmax gap between its class and the
best wrong class.  Dividing the score by a sensitivity constant times the
accumulated worst-case step-Jacobian product norms gives a certified lower
bound on the classification margin: the radius of the largest input-space
ball (within the input domain) that the classifier labels consistently.
The empirical probe estimates that radius from above by hunting for label
flips along gradient and random directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .linalg import spectral_norm
from .rng import make_rng
from .sde import (JacobianChain, ModelParams, NoiseConfig, StepSchedule,
                  Trajectory, get_activation, jacobian_chain, simulate)
from .training import softmax

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class MarginReport:
    sample_id: int
    score: float
    C_const: float
    phi_sup_estimates: np.ndarray
    gamma_lower: float
    empirical_margin: float | None = None


@dataclass(frozen=True)
class AttackConfig:
    """Search protocol of the empirical margin probe."""
    r_max: float
    n_random_directions: int = 64
    n_coarse: int = 32
    rel_tol: float = 1e-4
    seed: int = 0
    use_gradient_direction: bool = True
    directions: np.ndarray | None = None  # explicit (K, M, d_x) directions

    def __post_init__(self):
        if self.r_max <= 0 or self.n_coarse < 2 or self.rel_tol <= 0:
            raise ConfigurationError("r_max > 0, n_coarse >= 2, rel_tol > 0 required")


@dataclass(frozen=True)
class EmpiricalMargin:
    """Smallest flip radius found; ``flipped=False`` means none was found
    within ``r_max`` (the margin is at least ``radius``)."""
    radius: float
    flipped: bool


# ---------------------------------------------------------------------------
# Batched deterministic inference on a general schedule
# ---------------------------------------------------------------------------

def _final_states(x_seqs: np.ndarray, p: ModelParams, schedule: StepSchedule) -> np.ndarray:
    """Terminal hidden states for a stack of input sequences (K, M, d_x)."""
    x_seqs = np.asarray(x_seqs, dtype=float)
    if x_seqs.shape[1] != len(schedule):
        raise ConfigurationError("input sequences do not match the schedule length")
    act = get_activation(p.activation)
    h = np.zeros((x_seqs.shape[0], p.d_h))
    for m in range(len(schedule)):
        z = h @ p.W.T + x_seqs[:, m] @ p.U.T + p.b
        h = h + schedule.deltas[m] * (h @ p.A.T + act.fn(z))
    return h


def _predict(x_seqs: np.ndarray, p: ModelParams, schedule: StepSchedule) -> np.ndarray:
    logits = _final_states(x_seqs, p, schedule) @ p.V.T
    return np.argmax(logits, axis=1)


# ---------------------------------------------------------------------------
# Score and sensitivity
# ---------------------------------------------------------------------------

def score(x_seq: np.ndarray, label: int, p: ModelParams,
          schedule: StepSchedule) -> float:
    """Scaled softmax gap between the labelled class and the best other one.

    Positive exactly when the sample is classified as its label (argmax
    ties, resolved toward the lowest index, sit on the score-zero boundary).
    """
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    label = int(label)
    if not 0 <= label < p.d_y:
        raise ConfigurationError(f"label {label} out of range for d_y={p.d_y}")
    probs = softmax(_final_states(x_seq[None], p, schedule)[0] @ p.V.T)
    gaps = probs[label] - probs
    gaps[label] = np.inf
    return SQRT2 * float(gaps.min())


def sensitivity_constant(trajectories: list[Trajectory], p: ModelParams) -> float:
    """``||V||_2`` times the worst per-step input-Jacobian norm over the
    provided trajectories (``||diag(a'(z_m)) U||_2``)."""
    if not trajectories:
        raise ConfigurationError("need at least one trajectory")
    act = get_activation(p.activation)
    worst = 0.0
    for traj in trajectories:
        for z in traj.preacts:
            worst = max(worst, spectral_norm(act.d1(z)[:, None] * p.U))
    return spectral_norm(p.V) * worst


# ---------------------------------------------------------------------------
# Jacobian-product supremum over the input domain
# ---------------------------------------------------------------------------

def convex_hull_samples(inputs: np.ndarray, n_samples: int, rng_seed: int = 0,
                        include_vertices: bool = True) -> np.ndarray:
    """Dataset points plus random convex combinations of them."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 3 or inputs.shape[0] == 0:
        raise ConfigurationError("inputs must be a non-empty (N, M, d_x) array")
    rng = make_rng(rng_seed)
    weights = rng.dirichlet(np.ones(inputs.shape[0]), size=n_samples)
    combos = np.tensordot(weights, inputs, axes=(1, 0))
    return np.concatenate([inputs, combos], axis=0) if include_vertices else combos


def _suffix_product_norms(chain: JacobianChain) -> np.ndarray:
    """Spectral norms of the products from each step (exclusive) to the end.

    Entry ``m`` holds ``||J_{M-1} ... J_{m+1}||_2``; the last entry is the
    norm of the empty product, i.e. 1.
    """
    m_steps = chain.n_steps
    norms = np.empty(m_steps)
    prod = np.eye(chain.step_jacobians.shape[1])
    norms[m_steps - 1] = 1.0
    for m in range(m_steps - 2, -1, -1):
        prod = prod @ chain.step_jacobians[m + 1]
        norms[m] = spectral_norm(prod)
    return norms


def phi_norm_sup(p: ModelParams, schedule: StepSchedule,
                 x_seqs: np.ndarray) -> np.ndarray:
    """Per-step supremum of the tail Jacobian-product norms over sample
    input sequences (typically from :func:`convex_hull_samples`)."""
    x_seqs = np.asarray(x_seqs, dtype=float)
    if x_seqs.ndim != 3 or x_seqs.shape[0] == 0:
        raise ConfigurationError("x_seqs must be a non-empty (K, M, d_x) array")
    sups = np.zeros(len(schedule))
    for x_seq in x_seqs:
        traj = simulate(x_seq, p, NoiseConfig(), schedule)
        chain = jacobian_chain(traj, x_seq, p, schedule)
        sups = np.maximum(sups, _suffix_product_norms(chain))
    return sups


# ---------------------------------------------------------------------------
# Margin bound and empirical margin
# ---------------------------------------------------------------------------

def margin_lower_bound(x_seq: np.ndarray, label: int, p: ModelParams,
                       schedule: StepSchedule, phi_sups: np.ndarray,
                       C: float) -> float:
    """Certified margin lower bound ``score / (C sum_m delta_m sup_m)``.

    Raises ``ValueError`` for misclassified samples (score <= 0); returns
    ``inf`` for the degenerate ``C == 0`` case (input-insensitive model).
    """
    s = score(x_seq, label, p, schedule)
    if s <= 0:
        raise ValueError(f"sample is misclassified (score={s:.3e}); margin undefined")
    phi_sups = np.asarray(phi_sups, dtype=float)
    if phi_sups.shape != (len(schedule),):
        raise ConfigurationError("phi_sups must have one entry per step")
    denom = C * float(np.dot(schedule.deltas, phi_sups))
    if denom == 0.0:
        return float("inf")
    return s / denom


def empirical_margin(x_seq: np.ndarray, label: int, p: ModelParams,
                     schedule: StepSchedule, attack: AttackConfig,
                     grad_fn=None) -> EmpiricalMargin:
    """Upper estimate of the classification margin by directional search.

    Rays are cast along the loss-gradient direction, optional explicit
    directions, and random unit directions; along each ray a coarse scan
    brackets the first observed label flip and bisection tightens it to
    ``rel_tol`` relative.  Any radius observed to flip upper-bounds the
    reported value.
    """
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    label = int(label)
    base_score = score(x_seq, label, p, schedule)
    if base_score <= 0:
        return EmpiricalMargin(0.0, True)

    m_steps, d_x = x_seq.shape
    dirs = []
    if attack.use_gradient_direction:
        if grad_fn is not None:
            g = np.asarray(grad_fn(x_seq, label), dtype=float)
        else:
            from .training import loss_input_gradients
            g = loss_input_gradients(x_seq[None], np.asarray([label]), p,
                                     schedule.deltas)[0]
        norm = np.linalg.norm(g)
        if norm > 0:
            dirs.append(g / norm)
    if attack.directions is not None:
        for d in np.asarray(attack.directions, dtype=float):
            norm = np.linalg.norm(d)
            if norm > 0:
                dirs.append(d / norm)
    rng = make_rng(attack.seed)
    for _ in range(attack.n_random_directions):
        d = rng.standard_normal((m_steps, d_x))
        dirs.append(d / np.linalg.norm(d))
    if not dirs:
        raise ConfigurationError("no search directions configured")
    dirs = np.stack(dirs)

    radii = np.linspace(attack.r_max / attack.n_coarse, attack.r_max, attack.n_coarse)
    cand = x_seq[None, None] + radii[None, :, None, None] * dirs[:, None]
    preds = _predict(cand.reshape(-1, m_steps, d_x), p, schedule)
    flips = (preds != label).reshape(len(dirs), attack.n_coarse)

    lo = np.zeros(len(dirs))
    hi = np.full(len(dirs), np.inf)
    for k in range(len(dirs)):
        idx = np.flatnonzero(flips[k])
        if idx.size:
            hi[k] = radii[idx[0]]
            lo[k] = radii[idx[0] - 1] if idx[0] > 0 else 0.0
    active = np.isfinite(hi)
    if not np.any(active):
        return EmpiricalMargin(attack.r_max, False)

    while True:
        gap = hi[active] - lo[active]
        if np.all(gap <= attack.rel_tol * np.maximum(hi[active], 1e-300)):
            break
        mids = 0.5 * (lo[active] + hi[active])
        cand = x_seq[None] + mids[:, None, None] * dirs[active]
        preds = _predict(cand, p, schedule)
        flipped_mid = preds != label
        hi_active, lo_active = hi[active], lo[active]
        hi_active[flipped_mid] = mids[flipped_mid]
        lo_active[~flipped_mid] = mids[~flipped_mid]
        hi[active], lo[active] = hi_active, lo_active

    return EmpiricalMargin(float(hi[active].min()), True)


# ---------------------------------------------------------------------------
# Input-output Jacobian
# ---------------------------------------------------------------------------

def input_output_jacobian(x_seq: np.ndarray, p: ModelParams,
                          schedule: StepSchedule) -> np.ndarray:
    """Jacobian of the softmax output in the flattened input sequence.

    Built from the chain through the final state: the softmax factor
    ``diag(p) - p p^T`` composed with ``V``, the tail Jacobian products,
    and the per-step input Jacobians scaled by their step sizes.  Shape
    (d_y, M * d_x).
    """
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    traj = simulate(x_seq, p, NoiseConfig(), schedule)
    chain = jacobian_chain(traj, x_seq, p, schedule)
    act = get_activation(p.activation)
    m_steps = len(schedule)

    probs = softmax(p.V @ traj.final_state)
    ev = (np.diag(probs) - np.outer(probs, probs)) @ p.V

    out = np.empty((p.d_y, m_steps * p.d_x))
    lead = ev.copy()
    for m in range(m_steps - 1, -1, -1):
        du = act.d1(traj.preacts[m])[:, None] * p.U
        out[:, m * p.d_x:(m + 1) * p.d_x] = schedule.deltas[m] * (lead @ du)
        lead = lead @ chain.step_jacobians[m]
    return out


# ---------------------------------------------------------------------------
# Generalization bound
# ---------------------------------------------------------------------------

def generalization_bound(gamma_min: float, k: float, C_M: float, N: int,
                         d_y: int, L_g: float, delta_conf: float) -> float:
    """Margin-based generalization bound.

    ``L_g (gamma^{-k/2} sqrt(d_y C_M^k 2^{k+1} ln 2 / N)
          + sqrt(2 ln(1/delta') / N))``
    for a loss bounded by ``L_g``, an input domain of manifold dimension
    ``k`` and complexity constant ``C_M``, and confidence ``1 - delta'``.
    """
    if gamma_min <= 0 or N < 1 or not 0 < delta_conf < 1 or C_M <= 0 or L_g <= 0:
        raise ConfigurationError("need gamma_min > 0, N >= 1, C_M > 0, L_g > 0, "
                                 "and delta_conf in (0, 1)")
    if k < 0:
        raise ConfigurationError("manifold dimension k must be >= 0")
    margin_term = gamma_min ** (-k / 2.0) * math.sqrt(
        d_y * C_M ** k * 2.0 ** (k + 1) * math.log(2.0) / N)
    conf_term = math.sqrt(2.0 * math.log(1.0 / delta_conf) / N)
    return L_g * (margin_term + conf_term)


# ---------------------------------------------------------------------------
# Per-sample report
# ---------------------------------------------------------------------------

def build_margin_reports(inputs: np.ndarray, labels: np.ndarray, p: ModelParams,
                         schedule: StepSchedule, attack: AttackConfig | None = None,
                         n_hull_samples: int = 128, rng_seed: int = 0):
    """Margin analysis of a sample set.

    Returns ``(reports, C, phi_sups)``.  Misclassified samples get
    ``gamma_lower = nan`` and an empirical margin of zero.
    """
    inputs = np.asarray(inputs, dtype=float)
    labels = np.asarray(labels)
    trajs = [simulate(x, p, NoiseConfig(), schedule) for x in inputs]
    c_const = sensitivity_constant(trajs, p)
    sups = phi_norm_sup(p, schedule, convex_hull_samples(inputs, n_hull_samples,
                                                         rng_seed))
    reports = []
    for i, (x_seq, label) in enumerate(zip(inputs, labels)):
        s = score(x_seq, int(label), p, schedule)
        if s > 0:
            gamma = margin_lower_bound(x_seq, int(label), p, schedule, sups, c_const)
        else:
            gamma = float("nan")
        emp = None
        if attack is not None:
            emp = empirical_margin(x_seq, int(label), p, schedule, attack).radius
        reports.append(MarginReport(sample_id=i, score=s, C_const=c_const,
                                    phi_sup_estimates=sups, gamma_lower=gamma,
                                    empirical_margin=emp))
    return reports, c_const, sups
