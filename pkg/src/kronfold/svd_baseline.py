"""Vectorized truncated-SVD / PCA baseline.

Samples are vectorized by column stacking and reduced with the leading
``d`` left singular vectors of the ``(n1*n2) x N`` data matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import as_samples
from .glram import sign_gauge


@dataclass(frozen=True, eq=False)
class SvdModel:
    W: np.ndarray
    singular_values: np.ndarray
    shape: tuple  # (n1, n2)
    mean: np.ndarray | None = None
    residual_energy: float = 0.0

    @property
    def d(self):
        return self.W.shape[1]

    @property
    def centered(self):
        return self.mean is not None


def _vectorize(A):
    N = A.shape[0]
    return A.transpose(0, 2, 1).reshape(N, -1)  # rows are vec(A_i)


def svd_fit(data, d, centered=False):
    """Fit the rank-``d`` projector.

    ``residual_energy`` on the returned model is the squared Frobenius
    reconstruction error on the training data, i.e. the tail sum of squared
    singular values.
    """
    A = as_samples(data)
    N, n1, n2 = A.shape
    n = n1 * n2
    if not 1 <= d <= min(n, N):
        raise ValueError(f"d must be in [1, {min(n, N)}], got {d}")
    X = _vectorize(A)
    mean = X.mean(axis=0) if centered else None
    if centered:
        X = X - mean
    # X is N x n; right singular vectors of X are the left ones of X^T
    _, sigma, Vt = np.linalg.svd(X, full_matrices=False)
    W = sign_gauge(Vt[:d].T)
    tail = float(np.sum(sigma[d:] ** 2))
    return SvdModel(W, sigma[:d].copy(), (n1, n2), mean, tail)


def svd_project(model, data):
    """Reduced vectors ``y_i = W^T (vec(A_i) - mu)``, shape ``(N, d)``."""
    A = as_samples(data)
    if A.shape[1:] != tuple(model.shape):
        raise ValueError(f"samples are {A.shape[1:]}, model expects {tuple(model.shape)}")
    X = _vectorize(A)
    if model.mean is not None:
        X = X - model.mean
    return X @ model.W


def svd_reconstruct(model, projected):
    """``unvec(W y_i + mu)`` for each row of ``projected``."""
    Y = np.atleast_2d(np.asarray(projected, dtype=float))
    if Y.shape[1] != model.d:
        raise ValueError(f"projected vectors have length {Y.shape[1]}, model has d = {model.d}")
    X = Y @ model.W.T
    if model.mean is not None:
        X = X + model.mean
    n1, n2 = model.shape
    return X.reshape(-1, n2, n1).transpose(0, 2, 1)


def svd_objective(data, model):
    """Squared Frobenius reconstruction error of ``data`` under ``model``."""
    A = as_samples(data)
    residual = A - svd_reconstruct(model, svd_project(model, A))
    return float(np.sum(residual * residual))
