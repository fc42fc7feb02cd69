"""Small dense linear-algebra helpers: spectral norms and PSD square roots."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError

# Below this size a dense SVD is cheaper and exact; power iteration is for
# the occasional larger matrix (e.g. wide input-output Jacobians).
_SVD_CUTOVER = 64


def spectral_norm(mat: np.ndarray, method: str = "auto",
                  tol: float = 1e-8, max_iter: int = 500, seed: int = 0) -> float:
    """Largest singular value of a dense matrix.

    ``method`` is one of ``auto`` (SVD for small matrices, power iteration
    otherwise), ``svd``, or ``power``.  Power iteration runs on ``M^T M``
    with a deterministically seeded start vector and stops when the Rayleigh
    quotient changes by less than ``tol`` relatively.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={mat.ndim}")
    if method == "auto":
        method = "svd" if max(mat.shape) <= _SVD_CUTOVER else "power"
    if method == "svd":
        return float(np.linalg.svd(mat, compute_uv=False)[0])
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    # Iterate on the squared Gram matrix of the smaller side; the squaring
    # doubles the convergence exponent, which matters when the two leading
    # singular values nearly coincide.  Normalizing by the Frobenius norm
    # keeps the fourth powers in range.
    gram = mat @ mat.T if mat.shape[0] <= mat.shape[1] else mat.T @ mat
    scale = float(np.linalg.norm(gram))
    if scale == 0.0:
        return 0.0
    gram2 = (gram / scale) @ (gram / scale)
    n = gram2.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    change_prev = None
    for it in range(max_iter):
        w = gram2 @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (gram2 @ v))
        change = abs(lam_new - lam)
        lam = lam_new
        # Geometric-tail estimate of the remaining error: with contraction
        # ratio r the outstanding gap is about change * r / (1 - r).  Needs
        # two settled iterations before it is meaningful.
        if it >= 2 and change_prev is not None and change_prev > 0:
            ratio = min(change / change_prev, 0.999)
            remaining = change * ratio / (1.0 - ratio)
            if remaining <= tol * max(abs(lam), 1e-300):
                break
        elif it >= 2 and change == 0.0:
            break
        change_prev = change
    # lam estimates the top eigenvalue of (gram/scale)^2 = (sigma^2/scale)^2.
    return float(np.sqrt(scale * np.sqrt(max(lam, 0.0))))


def psd_sqrt(mat: np.ndarray, clip: float = 1e-12, indefinite_tol: float = -1e-10) -> np.ndarray:
    """Symmetric factor ``F`` with ``F^T F = mat`` for a PSD matrix.

    The matrix may be singular (a strict Cholesky factorization would fail),
    so the factor is built from the symmetric eigendecomposition with
    eigenvalues below ``clip`` set to zero.  Eigenvalues below
    ``indefinite_tol`` indicate the input is not PSD and raise.
    """
    mat = np.asarray(mat, dtype=float)
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.size and vals[0] < indefinite_tol * max(1.0, abs(vals[-1])):
        raise NumericalError(f"matrix is indefinite: min eigenvalue {vals[0]:.3e}")
    vals = np.where(vals < clip, 0.0, vals)
    return np.sqrt(vals)[:, None] * vecs.T


def fit_loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit requires positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
