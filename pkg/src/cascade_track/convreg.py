"""First cascade stage: small-kernel convolutional regression.

A 4x4xC kernel W is fit so that the valid-mode multi-channel correlation of
the RoI feature map X with W reproduces a Gaussian response peaked on the
target:

    min_W  sum_k ||X_k * W - Y_k||^2 + lam ||W||^2

The objective is an exact quadratic, so it is minimized by conjugate
gradient on its normal equations; no learning rate to tune, warm starts for
the scheduled online updates, and the objective is monotone per iteration.
The kernel only has m*n*C (= 208) coefficients, so each map's contribution
to the normal equations is condensed once into an (mnC, mnC) Gram block and
CG iterations afterwards are practically free.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class ConvKernelModel:
    kernel: np.ndarray  # (m, n, C)
    lam: float
    # objective after each CG iteration of the most recent fit
    objectives: tuple = ()


@dataclass(frozen=True)
class ResponseMap:
    """Valid-mode response with the geometry to map cells back to patch pixels."""

    values: np.ndarray
    stride: float
    origin: tuple  # patch-pixel coords of response cell (0, 0)

    def cell_to_patch(self, i, j):
        """Patch-pixel point under response cell (row i, col j)."""
        return (self.origin[0] + j * self.stride, self.origin[1] + i * self.stride)


def gaussian_label(dims, center, sigma) -> np.ndarray:
    """Gaussian bump exp(-d^2 / (2 sigma^2)) peaked at center=(cy, cx) cells."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    M, N = dims
    cy, cx = center
    ii, jj = np.mgrid[0:M, 0:N]
    return np.exp(-((ii - cy) ** 2 + (jj - cx) ** 2) / (2.0 * sigma ** 2))


def _as_3d(X):
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[:, :, None]
    return X


def _forward(X, W):
    # multi-channel valid correlation, channels summed
    m, n, _ = W.shape
    win = sliding_window_view(X, (m, n), axis=(0, 1))  # (M', N', C, m, n)
    return np.einsum("ijcpq,pqc->ij", win, W, optimize=True)


def _adjoint(X, R):
    # gradient of the forward map wrt W
    win = sliding_window_view(X, R.shape, axis=(0, 1))  # (m, n, C, M', N')
    return np.einsum("pqcij,ij->pqc", win, R, optimize=True)


def respond(X, model: ConvKernelModel) -> np.ndarray:
    """Valid-mode multi-channel correlation of X with the kernel."""
    X = _as_3d(X)
    m, n, C = model.kernel.shape
    if m > X.shape[0] or n > X.shape[1] or C != X.shape[2]:
        raise ValueError(f"kernel {model.kernel.shape} does not fit map {X.shape}")
    return _forward(X, model.kernel.astype(X.dtype, copy=False))


def conv_gram(X, Y, kernel_shape):
    """Normal-equation block of one (map, label) pair.

    Returns (A, b, c) with A = G^T G, b = G^T y, c = y^T y, where G is the
    valid-placement design matrix whose columns follow kernel.ravel() order.
    """
    X = _as_3d(X)
    Y = np.asarray(Y)
    m, n = kernel_shape[:2]
    C = X.shape[2]
    if Y.shape != (X.shape[0] - m + 1, X.shape[1] - n + 1):
        raise ValueError(f"label shape {Y.shape} does not match valid response")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise ValueError("non-finite inputs")
    win = sliding_window_view(X, (m, n), axis=(0, 1))
    G = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(-1, m * n * C)
    y = Y.reshape(-1).astype(G.dtype, copy=False)
    return (G.T @ G).astype(float), (G.T @ y).astype(float), float(y @ y)


def _cg_quad(A, b, c, lam, w0, iters):
    """CG on (A + lam I) w = b, reporting the LS objective per iteration."""
    d = b.shape[0]
    w = np.asarray(w0, dtype=float).reshape(d).copy()

    def matvec(v):
        return A @ v + lam * v

    def objective(v):
        return float(v @ matvec(v) - 2.0 * (b @ v)) + c

    r = b - matvec(w)
    p = r.copy()
    rs = float(r @ r)
    objs = [objective(w)]
    for _ in range(iters):
        if rs == 0.0:
            break
        Ap = matvec(p)
        alpha = rs / float(p @ Ap)
        w += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        objs.append(objective(w))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return w, tuple(objs)


def train_kernel(X, Y, lam, iters=20, kernel_shape=(4, 4)) -> ConvKernelModel:
    """Fit the kernel from scratch (W = 0) with `iters` CG iterations."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    X = _as_3d(X)
    shape = (kernel_shape[0], kernel_shape[1], X.shape[2])
    A, b, c = conv_gram(X, Y, kernel_shape)
    w, objs = _cg_quad(A, b, c, lam, np.zeros(shape), iters)
    return ConvKernelModel(kernel=w.reshape(shape), lam=lam, objectives=objs)


def update_kernel(model: ConvKernelModel, pairs, iters=5) -> ConvKernelModel:
    """Re-optimize on the summed objective over buffered (map, label) pairs,
    warm-started from the current kernel."""
    if not pairs:
        raise ValueError("empty training buffer")
    grams = [conv_gram(X, Y, model.kernel.shape[:2]) for X, Y in pairs]
    return update_from_grams(model, grams, iters)


def update_from_grams(model: ConvKernelModel, grams, iters=5) -> ConvKernelModel:
    """Same as update_kernel but over precomputed conv_gram blocks."""
    if not grams:
        raise ValueError("empty training buffer")
    A = grams[0][0].copy()
    b = grams[0][1].copy()
    c = grams[0][2]
    for Ak, bk, ck in grams[1:]:
        A += Ak
        b += bk
        c += ck
    w, objs = _cg_quad(A, b, c, model.lam, model.kernel, iters)
    return ConvKernelModel(kernel=w.reshape(model.kernel.shape), lam=model.lam,
                           objectives=objs)


def objective_gradient(X, Y, W, lam):
    """Analytic gradient of the regression objective at kernel W, computed
    through the correlation operator rather than the Gram blocks."""
    X = _as_3d(np.asarray(X, dtype=float))
    W = np.asarray(W, dtype=float)
    return 2.0 * (_adjoint(X, _forward(X, W) - np.asarray(Y, dtype=float)) + lam * W)


def refine_peak(values, i, j):
    """Sub-cell peak position by per-axis 3-point parabola around (i, j)."""
    v = np.asarray(values)

    def shift(a, b, c):
        denom = a - 2.0 * b + c
        if denom >= 0:
            return 0.0
        return float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))

    di = dj = 0.0
    if 0 < i < v.shape[0] - 1:
        di = shift(v[i - 1, j], v[i, j], v[i + 1, j])
    if 0 < j < v.shape[1] - 1:
        dj = shift(v[i, j - 1], v[i, j], v[i, j + 1])
    return i + di, j + dj


def top_peaks(values, k, nms_radius):
    """Up to k strict local maxima in descending score order.

    A cell qualifies when strictly greater than every in-bounds 8-neighbor.
    Greedy selection suppresses any candidate within Chebyshev distance
    nms_radius of an already accepted peak; score ties break by row-major
    cell index.
    """
    if k < 1 or nms_radius < 0:
        raise ValueError("need k >= 1 and nms_radius >= 0")
    v = np.asarray(values)
    pad = np.full((v.shape[0] + 2, v.shape[1] + 2), -np.inf, dtype=v.dtype)
    pad[1:-1, 1:-1] = v
    is_max = np.ones_like(v, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_max &= v > pad[1 + di:1 + di + v.shape[0], 1 + dj:1 + dj + v.shape[1]]
    ii, jj = np.nonzero(is_max)
    order = np.lexsort((jj, ii, -v[ii, jj]))
    peaks = []
    for idx in order:
        i, j = int(ii[idx]), int(jj[idx])
        if any(max(abs(i - pi), abs(j - pj)) <= nms_radius for pi, pj, _ in peaks):
            continue
        peaks.append((i, j, float(v[i, j])))
        if len(peaks) == k:
            break
    return peaks
