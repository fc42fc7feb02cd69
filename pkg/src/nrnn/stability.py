"""Sample Lyapunov exponents and analytic stability brackets.

Two copies of the hidden-state SDE are driven by the same noise from
initial states ``eps0`` apart; the exponential growth rate of their
separation is the sample Lyapunov exponent of the perturbation dynamics.
The estimator renormalizes the separation whenever it leaves a numerical
band (so the pair stays in the linear regime) and accumulates the log
growth factors.  The analytic bracket combines the symmetric-part
eigenvalues of the linear term, the recurrent gain, and the noise-level
terms ``phi = -s2^2 + s1^2/2`` and ``psi = -s1^2 + s2^2/2``; it applies
when the pairwise diffusion difference is sandwiched as
``s1 ||e|| <= ||dsigma(e)||_F <= s2 ||e||``.

The model's own diffusion does not satisfy that sandwich in general, so
the bracket-validation path uses a per-coordinate linear diffusion
``c * h`` (``s1 = s2 = c``) for which it holds with equality; the model
diffusion is still available for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError
from .linalg import spectral_norm
from .rng import substream
from .sde import ModelParams, NoiseConfig, drift, em_step, get_activation

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

# Diffusion kinds of the coupled pair.
_KIND_MODEL = 0
_KIND_LINEAR = 1
_KIND_NONE = 2


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class StabilityBounds:
    phi: float
    psi: float
    lambda_min_Asym: float
    lambda_max_Asym: float
    L_a: float
    sigma_max_W: float
    lower: float
    upper: float


@dataclass
class LyapunovEstimate:
    lambda_hat: float
    n_renormalizations: int
    horizon: float
    stderr_over_blocks: float


# ---------------------------------------------------------------------------
# Input sources
# ---------------------------------------------------------------------------

def cycled_input_source(x_seq: np.ndarray):
    """Repeat a finite input sequence cyclically for an infinite horizon."""
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    if x_seq.shape[0] == 0:
        raise ConfigurationError("cannot cycle an empty input sequence")

    def source(offset: int, n_steps: int) -> np.ndarray:
        idx = (offset + np.arange(n_steps)) % x_seq.shape[0]
        return x_seq[idx]

    return source


def gaussian_input_source(d_x: int, std: float = 1.0, seed: int = 0):
    """I.i.d. normal inputs, reproducible per step offset."""

    def source(offset: int, n_steps: int) -> np.ndarray:
        return std * substream(seed, 17, offset).standard_normal((n_steps, d_x))

    return source


def constant_input_source(x: np.ndarray):
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def source(offset: int, n_steps: int) -> np.ndarray:
        return np.broadcast_to(x, (n_steps, x.size)).copy()

    return source


# ---------------------------------------------------------------------------
# Coupled step (reference implementation)
# ---------------------------------------------------------------------------

def coupled_step(h: np.ndarray, h_prime: np.ndarray, x: np.ndarray,
                 p: ModelParams, n: NoiseConfig, delta: float, xi: np.ndarray,
                 diffusion_fn=None):
    """Advance both states of the pair with identical noise increments.

    ``diffusion_fn(state) -> diagonal`` optionally replaces the model
    diffusion (used for the linear test diffusions of the bracket suite).
    """
    if diffusion_fn is None:
        return (em_step(h, x, p, n, delta, xi),
                em_step(h_prime, x, p, n, delta, xi))
    delta = float(delta)
    if delta <= 0:
        raise ConfigurationError(f"step size must be > 0, got {delta}")
    sq = math.sqrt(delta)
    out = []
    for state in (h, h_prime):
        out.append(state + delta * drift(state, x, p)
                   + sq * diffusion_fn(state) * xi)
    return tuple(out)


def linear_diffusion(coeff: float):
    """Per-coordinate multiplicative diffusion ``c * h``.

    Pairwise differences satisfy the sandwich hypothesis with equality at
    both ends (``s1 = s2 = c``).
    """
    if coeff < 0:
        raise ConfigurationError("diffusion coefficient must be >= 0")
    return lambda state: coeff * state


# ---------------------------------------------------------------------------
# Fast coupled propagation
# ---------------------------------------------------------------------------

def _advance_coupled_python(h, hp, A, W, Ut, b, xs, xi, delta, eps0, lo, hi,
                            kind, coeff, eps_n, s1, s2, log_acc, renorms):
    """Vectorized reference propagation; mirrors the compiled kernel."""
    sq = math.sqrt(delta)
    for m in range(xi.shape[0]):
        x = xs[m]
        for state in (h, hp):
            z = state @ W.T + x @ Ut + b
            f = state @ A.T + np.tanh(z)
            if kind == _KIND_MODEL:
                noise = eps_n * (s1 + s2 * f)
            elif kind == _KIND_LINEAR:
                noise = coeff * state
            else:
                noise = 0.0
            state += delta * f + (sq * noise) * xi[m]
        diff = hp - h
        nrm = np.linalg.norm(diff, axis=1)
        out_of_band = (nrm < lo) | (nrm > hi)
        for q in np.flatnonzero(out_of_band):
            if nrm[q] <= 0.0 or not np.isfinite(nrm[q]):
                return 1
            log_acc[q] += math.log(nrm[q] / eps0)
            hp[q] = h[q] + (eps0 / nrm[q]) * diff[q]
            renorms[q] += 1
    return 0


if _HAVE_NUMBA:

    @njit(cache=True)
    def _advance_coupled_jit(h, hp, A, W, Ut, b, xs, xi, delta, eps0, lo, hi,
                             kind, coeff, eps_n, s1, s2, log_acc, renorms):
        steps = xi.shape[0]
        n_paths, d_h = h.shape
        d_x = xs.shape[1]
        sq = math.sqrt(delta)
        f1 = np.empty(d_h)
        f2 = np.empty(d_h)
        for m in range(steps):
            for q in range(n_paths):
                for i in range(d_h):
                    z1 = b[i]
                    z2 = b[i]
                    for j in range(d_h):
                        z1 += W[i, j] * h[q, j]
                        z2 += W[i, j] * hp[q, j]
                    for j in range(d_x):
                        xv = xs[m, j] * Ut[j, i]
                        z1 += xv
                        z2 += xv
                    a1 = 0.0
                    a2 = 0.0
                    for j in range(d_h):
                        a1 += A[i, j] * h[q, j]
                        a2 += A[i, j] * hp[q, j]
                    f1[i] = a1 + math.tanh(z1)
                    f2[i] = a2 + math.tanh(z2)
                for i in range(d_h):
                    noise1 = 0.0
                    noise2 = 0.0
                    if kind == 0:
                        noise1 = eps_n * (s1 + s2 * f1[i])
                        noise2 = eps_n * (s1 + s2 * f2[i])
                    elif kind == 1:
                        noise1 = coeff * h[q, i]
                        noise2 = coeff * hp[q, i]
                    h[q, i] += delta * f1[i] + sq * noise1 * xi[m, q, i]
                    hp[q, i] += delta * f2[i] + sq * noise2 * xi[m, q, i]
                nrm = 0.0
                for i in range(d_h):
                    diff = hp[q, i] - h[q, i]
                    nrm += diff * diff
                nrm = math.sqrt(nrm)
                if nrm < lo or nrm > hi:
                    if nrm <= 0.0 or not math.isfinite(nrm):
                        return 1
                    log_acc[q] += math.log(nrm / eps0)
                    scale = eps0 / nrm
                    for i in range(d_h):
                        hp[q, i] = h[q, i] + scale * (hp[q, i] - h[q, i])
                    renorms[q] += 1
        return 0


# ---------------------------------------------------------------------------
# Lyapunov estimator
# ---------------------------------------------------------------------------

def estimate_lyapunov(p: ModelParams, n: NoiseConfig, input_source, delta: float,
                      horizon_T: float, eps0: float = 1e-8,
                      renorm_threshold: float = 1e-3, renorm_floor: float = 1e-12,
                      rng_seed: int = 0, n_paths: int = 1, n_blocks: int = 10,
                      diffusion: str = "model", mult_coeff: float | None = None,
                      h0: np.ndarray | None = None,
                      use_fast: bool = True) -> LyapunovEstimate:
    """Sample Lyapunov exponent of the coupled perturbation dynamics.

    Runs ``n_paths`` independent pairs over ``horizon_T`` with uniform step
    ``delta``; the separation is kept inside the absolute band
    ``[renorm_floor, renorm_threshold]`` by rescaling back to ``eps0`` and
    banking the log growth factor.  The estimate is the total banked log
    growth per unit time; the standard error comes from the per-block rates
    of ``n_blocks`` equal time windows in every path.

    ``diffusion`` selects the pairwise noise: ``model`` (the RNN diffusion
    with amplitude ``n.epsilon``), ``linear`` (per-coordinate ``c * h``
    with ``c = mult_coeff``), or ``none``.
    """
    if eps0 <= 0:
        raise ConfigurationError(f"initial perturbation size must be > 0, got {eps0}")
    if not 0 < renorm_floor < renorm_threshold:
        raise ConfigurationError("need 0 < renorm_floor < renorm_threshold")
    if delta <= 0 or horizon_T <= 0:
        raise ConfigurationError("delta and horizon_T must be > 0")
    kind = {"model": _KIND_MODEL, "linear": _KIND_LINEAR, "none": _KIND_NONE}.get(diffusion)
    if kind is None:
        raise ConfigurationError(f"unknown diffusion kind {diffusion!r}")
    if kind == _KIND_LINEAR and (mult_coeff is None or mult_coeff < 0):
        raise ConfigurationError("linear diffusion requires mult_coeff >= 0")
    if p.activation != "tanh":
        raise ConfigurationError("fast coupled propagation supports tanh only")

    total_steps = int(round(horizon_T / delta))
    if total_steps < n_blocks:
        raise ConfigurationError("horizon too short for the requested block count")
    horizon_eff = total_steps * delta

    rng = substream(rng_seed, 0)
    base = np.zeros(p.d_h) if h0 is None else np.asarray(h0, dtype=float)
    h = np.tile(base, (n_paths, 1))
    dirs = rng.standard_normal((n_paths, p.d_h))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    hp = h + eps0 * dirs

    log_acc = np.zeros(n_paths)
    renorms = np.zeros(n_paths, dtype=np.int64)
    coeff = 0.0 if mult_coeff is None else float(mult_coeff)

    block_edges = np.linspace(0, total_steps, n_blocks + 1).astype(np.int64)
    block_logs = np.empty((n_blocks, n_paths))
    prev_snapshot = log_acc.copy()

    fast = use_fast and _HAVE_NUMBA
    u_t = np.ascontiguousarray(p.U.T)
    chunk_cap = 16384

    for blk in range(n_blocks):
        start, stop = int(block_edges[blk]), int(block_edges[blk + 1])
        offset = start
        while offset < stop:
            steps = min(chunk_cap, stop - offset)
            xs = np.ascontiguousarray(input_source(offset, steps))
            if xs.shape != (steps, p.d_x):
                raise ConfigurationError("input source returned a wrong-shaped block")
            xi = rng.standard_normal((steps, n_paths, p.d_h))
            args = (h, hp, p.A, p.W, u_t, p.b, xs, xi, float(delta), float(eps0),
                    float(renorm_floor), float(renorm_threshold), kind, coeff,
                    n.epsilon, n.sigma1, n.sigma2, log_acc, renorms)
            status = _advance_coupled_jit(*args) if fast \
                else _advance_coupled_python(*args)
            if status != 0 or not np.all(np.isfinite(h)) or not np.all(np.isfinite(hp)):
                raise NumericalError(
                    f"coupled propagation left the finite range near step {offset}; "
                    f"max |h| = {np.max(np.abs(h)):.3e}")
            offset += steps
        # Bank the in-flight log separation so block rates are unbiased.
        nrm = np.linalg.norm(hp - h, axis=1)
        if np.any(nrm <= 0):
            raise NumericalError("perturbation collapsed to zero; increase eps0")
        snapshot = log_acc + np.log(nrm / eps0)
        block_logs[blk] = snapshot - prev_snapshot
        prev_snapshot = snapshot

    total_log = prev_snapshot  # includes the final partial separation
    lambda_hat = float(total_log.mean() / horizon_eff)
    block_rates = block_logs / (np.diff(block_edges)[:, None] * delta)
    stderr = float(block_rates.std(ddof=1) / math.sqrt(block_rates.size)) \
        if block_rates.size > 1 else 0.0
    return LyapunovEstimate(lambda_hat=lambda_hat,
                            n_renormalizations=int(renorms.sum()),
                            horizon=horizon_eff, stderr_over_blocks=stderr)


# ---------------------------------------------------------------------------
# Analytic bracket
# ---------------------------------------------------------------------------

def theorem3_bounds(p: ModelParams, n_effective_sigmas: tuple[float, float],
                    L_a: float | None = None) -> StabilityBounds:
    """Analytic bracket of the sample Lyapunov exponent.

    ``n_effective_sigmas`` are the sandwich constants of the pairwise
    diffusion difference; with both zero the bracket reduces to the
    noise-free form.  ``L_a`` defaults to the activation's Lipschitz
    constant.
    """
    s1, s2 = (float(v) for v in n_effective_sigmas)
    if s1 < 0 or s2 < 0:
        raise ConfigurationError("sandwich constants must be >= 0")
    if L_a is None:
        L_a = get_activation(p.activation).lipschitz
    phi = -s2 ** 2 + 0.5 * s1 ** 2
    psi = -s1 ** 2 + 0.5 * s2 ** 2
    sym_eigs = np.linalg.eigvalsh(0.5 * (p.A + p.A.T))
    sigma_max_w = spectral_norm(p.W)
    return StabilityBounds(
        phi=phi, psi=psi,
        lambda_min_Asym=float(sym_eigs[0]), lambda_max_Asym=float(sym_eigs[-1]),
        L_a=float(L_a), sigma_max_W=sigma_max_w,
        lower=phi + float(sym_eigs[0]),
        upper=psi + float(L_a) * sigma_max_w + float(sym_eigs[-1]),
    )


def stabilization_search(p: ModelParams, L_a: float, sigma_grid,
                         cross_check: bool = False, input_source=None,
                         delta: float = 1e-3, horizon_T: float = 100.0,
                         rng_seed: int = 0) -> list[dict]:
    """Scan noise levels for an analytically certified negative upper bound.

    Each row records the bracket's upper bound and whether it certifies
    stabilization; with ``cross_check`` the certified rows also get a
    Lyapunov estimate (linear pairwise diffusion requires ``s1 == s2``).
    """
    rows = []
    for s1, s2 in sigma_grid:
        bounds = theorem3_bounds(p, (float(s1), float(s2)), L_a)
        row = {"sigma1": float(s1), "sigma2": float(s2),
               "upper": bounds.upper, "lower": bounds.lower,
               "stabilized": bool(bounds.upper < 0.0), "lambda_hat": None}
        if cross_check and row["stabilized"] and s1 == s2:
            src = input_source or constant_input_source(np.zeros(p.d_x))
            est = estimate_lyapunov(p, NoiseConfig(), src, delta, horizon_T,
                                    diffusion="linear", mult_coeff=float(s1),
                                    rng_seed=rng_seed, n_paths=2)
            row["lambda_hat"] = est.lambda_hat
        rows.append(row)
    return rows


def scalar_linear_params(a: float) -> ModelParams:
    """One-dimensional model whose drift is exactly ``a h``."""
    return ModelParams(A=[[float(a)]], W=[[0.0]], U=[[0.0]], b=[0.0], V=[[1.0]])
