"""Slow brute-force reference routines.

Everything in here is written the long way on purpose: dense matrices,
textbook elimination, explicit operator construction.  The fast paths in
``solvers`` and ``convreg`` are checked against these in the test suite and
in the ``selftest`` CLI command, so nothing here may call into those modules.
"""

import numpy as np


def gauss_solve(A, b):
    """Solve A x = b by Gaussian elimination with partial pivoting."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape[0] != n:
        raise ValueError("shape mismatch")
    for k in range(n - 1):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if A[p, k] == 0.0:
            raise np.linalg.LinAlgError("singular matrix")
        if p != k:
            A[[k, p]] = A[[p, k]]
            b[[k, p]] = b[[p, k]]
        for i in range(k + 1, n):
            m = A[i, k] / A[k, k]
            A[i, k:] -= m * A[k, k:]
            b[i] -= m * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x


def ridge_dense(D, y, lam):
    """Ridge solution via the normal equations and gauss_solve."""
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    L = D.shape[1]
    return gauss_solve(D.T @ D + lam * np.eye(L), D.T @ y)


def circulant_matrix(X):
    """Dense matrix A of the 2-D circular convolution w -> X (*) w.

    Column (p, q) of A is X cyclically rolled by (p, q), flattened row-major,
    so that A @ w.ravel() equals the circular convolution of X with w.
    """
    X = np.asarray(X, dtype=float)
    M, N = X.shape
    A = np.empty((M * N, M * N))
    for p in range(M):
        for q in range(N):
            A[:, p * N + q] = np.roll(X, (p, q), axis=(0, 1)).ravel()
    return A


def cf_dense(X, Y, lam):
    """Regularized LS filter for the circular-convolution operator, solved
    densely: (A^T A + lam I) w = A^T y with A from circulant_matrix."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    A = circulant_matrix(X)
    n = A.shape[1]
    w = gauss_solve(A.T @ A + lam * np.eye(n), A.T @ Y.ravel())
    return w.reshape(X.shape)


def conv_design_matrix(X, kernel_shape):
    """Dense matrix G of the valid-mode sliding-window correlation.

    G @ vec(W) lists, for every valid kernel placement (i, j), the dot
    product of W with the (m, n, C) window of X anchored at (i, j).
    vec() is row-major over (m, n, C).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    m, n = kernel_shape
    M, N, C = X.shape
    rows = []
    for i in range(M - m + 1):
        for j in range(N - n + 1):
            rows.append(X[i:i + m, j:j + n, :].ravel())
    return np.array(rows)


def conv_ridge_dense(maps_and_labels, kernel_shape, lam):
    """Regularized LS kernel over one or more (map, label) pairs, solved
    densely through the stacked design matrices."""
    Gs = [conv_design_matrix(X, kernel_shape) for X, _ in maps_and_labels]
    ys = [np.asarray(Y, dtype=float).ravel() for _, Y in maps_and_labels]
    d = Gs[0].shape[1]
    lhs = lam * np.eye(d)
    rhs = np.zeros(d)
    for G, y in zip(Gs, ys):
        lhs += G.T @ G
        rhs += G.T @ y
    return gauss_solve(lhs, rhs)
