"""Multiple-pairs GLRAM.

Model: ``A_i ~ sum_j L_j D_i R_j^T`` with ``k`` unconstrained pairs and one
shared core per sample.  Fitted by block coordinate descent:

* cores: least squares against ``B = sum_j kron(R_j, L_j)`` through the
  normal equations, with ``B^T B`` and ``B^T a_i`` built pair by pair;
* ``L_j'`` / ``R_j'``: closed-form minimizers ``N_L B_L^+`` / ``N_R B_R^+``
  of the quadratic obtained by freezing every other block.

Each block update exactly minimizes the objective over that block, so the
recorded objective never increases.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import as_samples
from .glram import FitConfig, GlramModel, glram_fit
from .kronecker import KronPairList, apply_pairs

INIT_MODES = ("glram-warm", "random", "pairs-warm")
PINV_RTOL = 1e-12
WARM_PAIR_SCALE = 1e-3


class RankDeficientWarning(RuntimeWarning):
    """A normal-equation matrix was singular; a minimum-norm solution was used."""


class SingularSystemError(np.linalg.LinAlgError):
    """A normal-equation matrix had non-finite entries."""


@dataclass(frozen=True)
class MpglramConfig:
    k: int
    k1: int
    k2: int
    outer_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    init_mode: str = "glram-warm"
    ridge_rel: float = 0.0
    update_order: str = "LR"
    glram_max_iter: int = 100
    glram_tol: float = 1e-6

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("k1 and k2 must be >= 1")
        if self.ridge_rel < 0:
            raise ValueError("ridge_rel must be >= 0")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.update_order not in ("LR", "RL"):
            raise ValueError("update_order must be 'LR' or 'RL'")

    def glram_config(self):
        return FitConfig(self.k1, self.k2, max_iter=self.glram_max_iter,
                         tol=self.glram_tol, seed=self.seed)


@dataclass(frozen=True, eq=False)
class MpglramModel:
    pairs: KronPairList
    cores: np.ndarray
    objective_history: list = field(default_factory=list)
    config: MpglramConfig | None = None
    sweeps: int = 0

    @property
    def k(self):
        return self.pairs.k

    @property
    def dims(self):
        return self.pairs.dims

    @property
    def parameter_count(self):
        return self.pairs.parameter_count

    @property
    def objective(self):
        return self.objective_history[-1]


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------

def psd_solve(B, rhs, ridge_rel=0.0, side="left"):
    """Solve with a symmetric PSD matrix through its eigendecomposition.

    ``side="left"`` returns ``X`` with ``B X = rhs``; ``side="right"`` returns
    ``X`` with ``X B = rhs``.  Eigenvalues at or below ``PINV_RTOL`` times the
    largest are dropped (minimum-norm solution, with a
    :class:`RankDeficientWarning`).  ``ridge_rel > 0`` adds
    ``ridge_rel * trace(B) / dim`` to the diagonal first.
    """
    B = np.asarray(B, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(rhs))):
        raise SingularSystemError("non-finite entries in normal equations")
    m = B.shape[0]
    B = 0.5 * (B + B.T)
    if ridge_rel > 0:
        B = B + (ridge_rel * np.trace(B) / m) * np.eye(m)
    w, V = np.linalg.eigh(B)
    top = w[-1] if m else 0.0
    keep = w > PINV_RTOL * top if top > 0 else np.zeros(m, dtype=bool)
    if not np.all(keep):
        warnings.warn(
            f"normal equations of size {m} have rank {int(keep.sum())}; "
            "using the minimum-norm solution",
            RankDeficientWarning,
            stacklevel=3,
        )
    inv_w = np.zeros_like(w)
    inv_w[keep] = 1.0 / w[keep]
    if rhs.ndim == 1:
        return V @ (inv_w * (V.T @ rhs))
    if side == "left":
        return V @ (inv_w[:, None] * (V.T @ rhs))
    return ((rhs @ V) * inv_w) @ V.T


# ---------------------------------------------------------------------------
# Block updates
# ---------------------------------------------------------------------------

def gram_of_pairs(pairs):
    """``B^T B`` for ``B = sum_j kron(R_j, L_j)``, without forming ``B``.

    Equals ``sum_{j, j'} kron(R_j^T R_j', L_j^T L_j')``.
    """
    Ls, Rs = pairs.Ls, pairs.Rs
    n1, n2, k1, k2 = pairs.dims
    # LL[j, l] = L_j^T L_l, RR[j, l] = R_j^T R_l
    LL = np.einsum("jai,lak->jlik", Ls, Ls)
    RR = np.einsum("jai,lak->jlik", Rs, Rs)
    # kron(RR, LL)[b*k1 + a, d*k1 + c] = RR[b, d] * LL[a, c], summed over (j, l)
    G = np.einsum("jlbd,jlac->badc", RR, LL).reshape(k1 * k2, k1 * k2)
    return 0.5 * (G + G.T)


def pairs_rhs(data, pairs):
    """Columns ``B^T vec(A_i) = sum_j vec(L_j^T A_i R_j)``, shape ``(k1*k2, N)``."""
    A = as_samples(data)
    total = None
    for L, R in pairs:
        term = L.T @ A @ R
        total = term if total is None else total + term
    N = A.shape[0]
    return total.transpose(0, 2, 1).reshape(N, -1).T


def update_cores(data, pairs, ridge_rel=0.0):
    """Least-squares cores for fixed pairs; returns an ``(N, k1, k2)`` array."""
    A = as_samples(data)
    n1, n2, k1, k2 = pairs.dims
    if A.shape[1:] != (n1, n2):
        raise ValueError(f"samples are {A.shape[1:]}, pairs expect {(n1, n2)}")
    G = gram_of_pairs(pairs)
    d = psd_solve(G, pairs_rhs(A, pairs), ridge_rel)
    return d.T.reshape(A.shape[0], k2, k1).transpose(0, 2, 1)


def residual_excluding(data, pairs, cores, j):
    """``A_i - sum_{l != j} L_l D_i R_l^T`` for every sample."""
    A = as_samples(data)
    if not 0 <= j < pairs.k:
        raise IndexError(f"pair index {j} out of range for k = {pairs.k}")
    out = A.copy()
    for l, (L, R) in enumerate(pairs):
        if l != j:
            out -= L @ cores @ R.T
    return out


def _check_block(Abar, cores, factor, name):
    if Abar.shape[0] != cores.shape[0]:
        raise ValueError(f"{Abar.shape[0]} residuals but {cores.shape[0]} cores")
    if factor.shape[1] != (cores.shape[1] if name == "L" else cores.shape[2]):
        raise ValueError(f"{name} has {factor.shape[1]} columns, cores are {cores.shape[1:]}")


def _normal_R(Abar, L, cores):
    """``N_R = sum_i Abar_i^T M_i`` and ``B_R = sum_i M_i^T M_i`` with ``M_i = L D_i``."""
    N, n1, n2 = Abar.shape
    M = (L @ cores).reshape(N * n1, -1)  # samples stacked row-wise
    return Abar.reshape(N * n1, n2).T @ M, M.T @ M


def _normal_L(Abar, R, cores):
    """``N_L = sum_i Abar_i M_i`` and ``B_L = sum_i M_i^T M_i`` with ``M_i = R D_i^T``."""
    N, n1, n2 = Abar.shape
    M = (R @ cores.transpose(0, 2, 1)).reshape(N * n2, -1)
    return Abar.transpose(1, 0, 2).reshape(n1, N * n2) @ M, M.T @ M


def update_R_pair(Abar, L, cores, ridge_rel=0.0):
    """Minimize ``sum_i ||Abar_i - L D_i R^T||^2`` over ``R``.

    With ``M_i = L D_i``: ``N_R = sum_i Abar_i^T M_i``,
    ``B_R = sum_i M_i^T M_i`` and ``R = N_R B_R^{-1}``.
    """
    Abar = as_samples(Abar)
    L = np.asarray(L, dtype=float)
    cores = np.asarray(cores, dtype=float)
    _check_block(Abar, cores, L, "L")
    N_R, B_R = _normal_R(Abar, L, cores)
    return psd_solve(B_R, N_R, ridge_rel, side="right")


def update_L_pair(Abar, R, cores, ridge_rel=0.0):
    """Minimize ``sum_i ||Abar_i - L D_i R^T||^2`` over ``L``.

    With ``M_i = R D_i^T``: ``N_L = sum_i Abar_i M_i``,
    ``B_L = sum_i M_i^T M_i`` and ``L = N_L B_L^{-1}``.
    """
    Abar = as_samples(Abar)
    R = np.asarray(R, dtype=float)
    cores = np.asarray(cores, dtype=float)
    _check_block(Abar, cores, R, "R")
    N_L, B_L = _normal_L(Abar, R, cores)
    return psd_solve(B_L, N_L, ridge_rel, side="right")


def restricted_objective_R(Abar, L, cores, R):
    """``-2 tr(N_R R^T) + tr(R B_R R^T)``: the ``R``-dependent part of the loss."""
    N_R, B_R = _normal_R(as_samples(Abar), np.asarray(L, dtype=float), np.asarray(cores))
    return -2.0 * np.sum(N_R * R) + np.sum((R @ B_R) * R)


def restricted_objective_L(Abar, R, cores, L):
    """``-2 tr(N_L L^T) + tr(L B_L L^T)``: the ``L``-dependent part of the loss."""
    N_L, B_L = _normal_L(as_samples(Abar), np.asarray(R, dtype=float), np.asarray(cores))
    return -2.0 * np.sum(N_L * L) + np.sum((L @ B_L) * L)


# ---------------------------------------------------------------------------
# Objective and fitting
# ---------------------------------------------------------------------------

def mpglram_objective(data, model_or_pairs, cores=None):
    """``sum_i ||A_i - sum_j L_j D_i R_j^T||_F^2``."""
    A = as_samples(data)
    if isinstance(model_or_pairs, MpglramModel):
        pairs, cores = model_or_pairs.pairs, model_or_pairs.cores
    else:
        pairs = model_or_pairs
    n1, n2, _, _ = pairs.dims
    if A.shape[1:] != (n1, n2):
        raise ValueError(f"samples are {A.shape[1:]}, pairs expect {(n1, n2)}")
    residual = A - apply_pairs(pairs, cores)
    return float(np.sum(residual * residual))


def mpglram_project(model, data, ridge_rel=None):
    """Least-squares cores of new samples under the fitted pairs."""
    if ridge_rel is None:
        ridge_rel = model.config.ridge_rel if model.config is not None else 0.0
    return update_cores(data, model.pairs, ridge_rel)


def mpglram_reconstruct(model, cores):
    return apply_pairs(model.pairs, cores)


def _pad(pairs, k, rng, zero_left):
    """Extend ``pairs`` to ``k`` pairs.

    New right factors are seeded Gaussians scaled by ``WARM_PAIR_SCALE``.
    With ``zero_left`` the new left factors are zero: the objective at the
    padded start then equals that of ``pairs`` exactly, and the random
    right factor keeps the first ``L_j`` update non-degenerate (an all-zero
    pair is a fixed point of the updates).  Otherwise the left factors are
    scaled Gaussians too.
    """
    extra = k - pairs.k
    if extra <= 0:
        return pairs
    n1, n2, k1, k2 = pairs.dims
    if zero_left:
        Ls = np.zeros((extra, n1, k1))
    else:
        Ls = WARM_PAIR_SCALE * rng.standard_normal((extra, n1, k1))
    Rs = WARM_PAIR_SCALE * rng.standard_normal((extra, n2, k2))
    return pairs.padded(Ls, Rs)


def initial_pairs(A, config, warm_start=None):
    _, n1, n2 = A.shape
    rng = np.random.default_rng(config.seed)
    if config.init_mode == "random":
        Ls = rng.standard_normal((config.k, n1, config.k1)) / np.sqrt(n1)
        Rs = rng.standard_normal((config.k, n2, config.k2)) / np.sqrt(n2)
        return KronPairList(Ls, Rs)
    if config.init_mode == "glram-warm":
        if warm_start is None:
            warm_start = glram_fit(A, config.glram_config())
        if isinstance(warm_start, GlramModel):
            base = KronPairList(warm_start.L[None], warm_start.R[None])
        else:
            base = warm_start
        if base.k != 1:
            raise ValueError("glram-warm expects a single-pair warm start")
    else:
        if warm_start is None:
            raise ValueError("pairs-warm initialization needs a warm_start model or pair list")
        base = warm_start.pairs if isinstance(warm_start, MpglramModel) else warm_start
        if base.k > config.k:
            raise ValueError(f"warm start has {base.k} pairs, more than k = {config.k}")
    if base.dims != (n1, n2, config.k1, config.k2):
        raise ValueError(f"warm start dims {base.dims} do not match {(n1, n2, config.k1, config.k2)}")
    return _pad(base, config.k, rng, zero_left=config.init_mode == "pairs-warm")


def mpglram_fit(data, config, warm_start=None):
    """Fit a ``k``-pair model by coordinate descent.

    Parameters
    ----------
    data : MatrixDataset or (N, n1, n2) array_like
    config : MpglramConfig
    warm_start : GlramModel, MpglramModel or KronPairList, optional
        ``glram-warm`` uses a fitted GLRAM model (fitting one if omitted)
        as pair 1 and small seeded Gaussians for the rest; ``pairs-warm``
        starts from the given pairs, padding up to ``k`` with pairs whose
        left factor is zero.  Passing ``k`` pairs with
        ``pairs-warm`` starts exactly at those pairs.

    Returns
    -------
    MpglramModel
        ``objective_history[0]`` is the loss after the initial core solve;
        one entry follows every later block update (each ``L_j``, each
        ``R_j``, then the cores at the end of the sweep).
    """
    A = as_samples(data)
    _, n1, n2 = A.shape
    if config.k1 > n1 or config.k2 > n2:
        raise ValueError(f"(k1, k2) = ({config.k1}, {config.k2}) exceeds sample shape ({n1}, {n2})")
    pairs = initial_pairs(A, config, warm_start)
    Ls = pairs.Ls.copy()
    Rs = pairs.Rs.copy()
    ridge = config.ridge_rel

    def current():
        return KronPairList(Ls, Rs)

    cores = update_cores(A, current(), ridge)
    # terms[j] = L_j D_i R_j^T; recon is their sum
    terms = [L @ cores @ R.T for L, R in zip(Ls, Rs)]
    recon = sum(terms)

    def loss():
        r = A - recon
        return float(np.sum(r * r))

    history = [loss()]
    tiny = np.finfo(float).tiny
    sweeps = 0
    for sweeps in range(1, config.outer_iters + 1):
        start = history[-1]
        for j in range(config.k):
            for side in config.update_order:
                Abar = A - (recon - terms[j])
                if side == "L":
                    N_L, B_L = _normal_L(Abar, Rs[j], cores)
                    Ls[j] = psd_solve(B_L, N_L, ridge, side="right")
                else:
                    N_R, B_R = _normal_R(Abar, Ls[j], cores)
                    Rs[j] = psd_solve(B_R, N_R, ridge, side="right")
                new = Ls[j] @ cores @ Rs[j].T
                recon = recon - terms[j] + new
                terms[j] = new
                history.append(loss())
        cores = update_cores(A, current(), ridge)
        terms = [L @ cores @ R.T for L, R in zip(Ls, Rs)]
        recon = sum(terms)
        history.append(loss())
        if (start - history[-1]) / max(history[0], tiny) < config.tol:
            break
    return MpglramModel(current(), cores, history, config, sweeps)
