"""Single-pair generalized low-rank approximation (GLRAM).

Minimizes ``sum_i ||A_i - L D_i R^T||_F^2`` over orthonormal ``L`` (n1 x k1),
orthonormal ``R`` (n2 x k2) and cores ``D_i``, by alternating top-eigenvector
updates of ``R`` and ``L``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import as_samples

INIT_MODES = ("identity", "random")


@dataclass(frozen=True)
class FitConfig:
    k1: int
    k2: int
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0
    init_mode: str = "identity"

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("k1 and k2 must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")

    def check_dims(self, n1, n2):
        if self.k1 > n1 or self.k2 > n2:
            raise ValueError(f"(k1, k2) = ({self.k1}, {self.k2}) exceeds sample shape ({n1}, {n2})")


@dataclass(frozen=True, eq=False)
class GlramModel:
    L: np.ndarray
    R: np.ndarray
    cores: np.ndarray
    objective_history: list = field(default_factory=list)
    iterations: int = 0

    @property
    def dims(self):
        return self.L.shape[0], self.R.shape[0], self.L.shape[1], self.R.shape[1]

    @property
    def objective(self):
        return self.objective_history[-1]


def form_MR(data, L):
    """``sum_i A_i^T L L^T A_i`` (n2 x n2)."""
    A = as_samples(data)
    L = np.asarray(L, dtype=float)
    if L.shape[0] != A.shape[1]:
        raise ValueError(f"L has {L.shape[0]} rows, samples have {A.shape[1]}")
    P = np.matmul(L.T, A)  # (N, k1, n2)
    M = np.einsum("nki,nkj->ij", P, P)
    return 0.5 * (M + M.T)


def form_ML(data, R):
    """``sum_i A_i R R^T A_i^T`` (n1 x n1)."""
    A = as_samples(data)
    R = np.asarray(R, dtype=float)
    if R.shape[0] != A.shape[2]:
        raise ValueError(f"R has {R.shape[0]} rows, samples have {A.shape[2]} columns")
    P = np.matmul(A, R)  # (N, n1, k2)
    M = np.einsum("nik,njk->ij", P, P)
    return 0.5 * (M + M.T)


def sign_gauge(V):
    """Flip columns so each column's largest-magnitude entry is positive."""
    V = np.array(V, dtype=float)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def top_eigvecs(S, t, return_values=False):
    """Eigenvectors of symmetric ``S`` for its ``t`` largest eigenvalues.

    Columns come back in descending eigenvalue order with the sign gauge of
    :func:`sign_gauge`.  ``S`` must be symmetric to 1e-10 relative to its
    norm; the symmetric part is decomposed.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    m = S.shape[0]
    if not 1 <= t <= m:
        raise ValueError(f"t must be in [1, {m}], got {t}")
    asym = np.linalg.norm(S - S.T)
    if asym > 1e-10 * max(1.0, np.linalg.norm(S)):
        raise ValueError(f"matrix is not symmetric (||S - S^T|| = {asym:.3e})")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(w, kind="stable")[::-1][:t]
    W = sign_gauge(V[:, order])
    if return_values:
        return W, w[order]
    return W


def glram_project(model, data):
    """Cores ``L^T A_i R``."""
    A = as_samples(data)
    n1, n2, _, _ = model.dims
    if A.shape[1:] != (n1, n2):
        raise ValueError(f"samples are {A.shape[1:]}, model expects {(n1, n2)}")
    return model.L.T @ A @ model.R


def glram_reconstruct(model, cores):
    """Reconstructions ``L D_i R^T``."""
    cores = np.asarray(cores, dtype=float)
    _, _, k1, k2 = model.dims
    if cores.shape[-2:] != (k1, k2):
        raise ValueError(f"cores are {cores.shape[-2:]}, model expects {(k1, k2)}")
    return model.L @ cores @ model.R.T


def _objectives(A, L, R):
    cores = L.T @ A @ R
    residual = A - L @ cores @ R.T
    return float(np.sum(residual * residual)), float(np.sum(cores * cores))


def glram_objective(data, model):
    """Return ``(min_form, max_form)``.

    ``min_form`` is the reconstruction error with cores ``L^T A_i R`` and
    ``max_form`` is ``sum_i ||L^T A_i R||_F^2``; for orthonormal factors they
    add up to the total energy ``sum_i ||A_i||_F^2``.
    """
    A = as_samples(data)
    n1, n2, _, _ = model.dims
    if A.shape[1:] != (n1, n2):
        raise ValueError(f"samples are {A.shape[1:]}, model expects {(n1, n2)}")
    return _objectives(A, model.L, model.R)


def initial_L(n1, config):
    if config.init_mode == "identity":
        return np.eye(n1)[:, : config.k1]
    rng = np.random.default_rng(config.seed)
    Q, R = np.linalg.qr(rng.standard_normal((n1, config.k1)))
    return Q * np.sign(np.diag(R))


def glram_fit(data, config, L0=None):
    """Fit GLRAM by alternating eigen-updates.

    Each outer iteration replaces ``R`` with the top ``k2`` eigenvectors of
    :func:`form_MR` and then ``L`` with the top ``k1`` eigenvectors of
    :func:`form_ML`; the reconstruction error is recorded after the ``L``
    step.  Iteration stops once
    ``(obj[t-1] - obj[t]) / max(obj[0], tiny) < tol`` or after ``max_iter``.
    """
    A = as_samples(data)
    _, n1, n2 = A.shape
    config.check_dims(n1, n2)
    L = initial_L(n1, config) if L0 is None else np.asarray(L0, dtype=float)
    R = None
    history = []
    tiny = np.finfo(float).tiny
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        R = top_eigvecs(form_MR(A, L), config.k2)
        L = top_eigvecs(form_ML(A, R), config.k1)
        obj, _ = _objectives(A, L, R)
        history.append(obj)
        if len(history) > 1 and (history[-2] - obj) / max(history[0], tiny) < config.tol:
            break
    cores = L.T @ A @ R
    return GlramModel(L, R, cores, history, iterations)
