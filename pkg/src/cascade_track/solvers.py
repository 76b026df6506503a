"""Closed-form regularized least-squares solvers.

Second-stage model fitting boils down to ridge regression over a row-wise
data matrix D (one feature embedding per row) with binary labels y:

    primal:   w = (D^T D + lam I)^-1 D^T y          cost O(L^3)
    dual:     w = D^T (D D^T + lam I)^-1 y          cost O(P^3)

Both give the same w; ``solve_auto`` picks whichever linear system is
smaller.  ``solve_weighted`` handles the per-sample weighted variant by
row-scaling with sqrt(weights), and ``reweigh`` derives those weights from
the previous model's reconstruction errors.  ``cf_solve_fourier`` is the
classic circulant-filter solver kept around as a verification oracle.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

DEFAULT_LAMBDA = 1e-3


@dataclass(frozen=True)
class RidgeModel:
    """Linear regressor w with its regularizer; immutable value."""

    w: np.ndarray
    lam: float
    domain: str = "primal"  # which solver produced w

    def predict(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(rows, dtype=float) @ self.w


def _check_inputs(D, y, lam):
    # float32 stays float32 (tracker hot path), everything else goes float64
    D = np.asarray(D)
    if D.dtype != np.float32:
        D = D.astype(float, copy=False)
    y = np.asarray(y, dtype=D.dtype).ravel()
    if D.ndim != 2 or D.shape[0] != y.shape[0]:
        raise ValueError(f"bad shapes D={D.shape} y={y.shape}")
    if not (np.isfinite(D).all() and np.isfinite(y).all()):
        raise ValueError("non-finite inputs")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return D, y


def _spd_solve(A, b):
    # cholesky with a jitter retry; near-singular systems show up when the
    # buffer holds duplicated samples
    try:
        c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(A) / A.shape[0]
        c = scipy.linalg.cho_factor(A + jitter * np.eye(A.shape[0], dtype=A.dtype),
                                    lower=True, check_finite=False)
    return scipy.linalg.cho_solve(c, b, check_finite=False)


def solve_primal(D, y, lam=DEFAULT_LAMBDA) -> RidgeModel:
    """w = (D^T D + lam I)^-1 D^T y via an SPD factorization solve."""
    D, y = _check_inputs(D, y, lam)
    L = D.shape[1]
    w = _spd_solve(D.T @ D + D.dtype.type(lam) * np.eye(L, dtype=D.dtype), D.T @ y)
    return RidgeModel(w=w, lam=lam, domain="primal")


def solve_dual(D, y, lam=DEFAULT_LAMBDA) -> RidgeModel:
    """w = D^T alpha with alpha = (D D^T + lam I)^-1 y."""
    D, y = _check_inputs(D, y, lam)
    P = D.shape[0]
    alpha = _spd_solve(D @ D.T + D.dtype.type(lam) * np.eye(P, dtype=D.dtype), y)
    return RidgeModel(w=D.T @ alpha, lam=lam, domain="dual")


def solve_auto(D, y, lam=DEFAULT_LAMBDA, weights=None) -> RidgeModel:
    """Dual solve when P < L, primal otherwise (ties go primal).

    With ``weights`` given, solves the per-sample weighted objective by
    row-scaling D and y with sqrt(weights) first.
    """
    D, y = _check_inputs(D, y, lam)
    if weights is not None:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape[0] != D.shape[0]:
            raise ValueError("weights length must match sample count")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        if not np.any(weights > 0):
            raise ValueError("all-zero weight vector")
        s = np.sqrt(weights).astype(D.dtype)
        D = D * s[:, None]
        y = y * s
    P, L = D.shape
    if P < L:
        return solve_dual(D, y, lam)
    return solve_primal(D, y, lam)


def solve_weighted(D, y, weights, lam=DEFAULT_LAMBDA) -> RidgeModel:
    """Weighted ridge: each sample's squared error scaled by its weight."""
    return solve_auto(D, y, lam, weights=weights)


def reweigh(D, y, model: RidgeModel) -> np.ndarray:
    """Per-sample weights from the previous model's reconstruction errors.

    Weights are the L1-normalized absolute residuals rescaled to sum to the
    sample count P; an (almost) perfect fit degenerates to uniform weights.
    """
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if D.shape[0] == 0:
        raise ValueError("empty data matrix")
    r = np.abs(y - D @ model.w)
    total = r.sum()
    if total < 1e-12:
        return np.ones(D.shape[0])
    return r / total * D.shape[0]


def cf_solve_fourier(X, Y, lam=DEFAULT_LAMBDA) -> np.ndarray:
    """Closed-form circulant filter: W_hat = conj(X_hat) Y_hat / (|X_hat|^2 + lam).

    Solves min_W ||X (*) W - Y||^2 + lam ||W||^2 with (*) the 2-D circular
    convolution, elementwise in the Fourier domain.  Single channel only;
    this solver exists as a cross-check for the discrete solvers above.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.ndim != 2:
        raise ValueError(f"dimension mismatch X={X.shape} Y={Y.shape}")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    Xh = np.fft.fft2(X)
    Yh = np.fft.fft2(Y)
    Wh = np.conj(Xh) * Yh / (np.conj(Xh) * Xh + lam)
    return np.fft.ifft2(Wh).real
