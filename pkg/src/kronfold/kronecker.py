"""Kronecker-product algebra for sum-of-pairs projectors.

Conventions
-----------
``vec`` stacks columns (Fortran order).  Under that convention

    vec(L @ D @ R.T) == kron(R, L) @ vec(D)

and every routine in the package builds its dense operators this way.  The
sum-of-pairs projector of a :class:`KronPairList` is therefore
``sum_j kron(R_j, L_j)``, not ``sum_j kron(L_j, R_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def vec(M):
    """Stack the columns of ``M`` into a 1-D array."""
    return np.asarray(M).reshape(-1, order="F")


def unvec(v, p, q):
    """Inverse of :func:`vec` for a ``p x q`` matrix."""
    v = np.asarray(v)
    if v.size != p * q:
        raise ValueError(f"cannot unvec length {v.size} into {p}x{q}")
    return v.reshape((p, q), order="F")


def kron(A, B):
    """Kronecker product; block ``(i, j)`` of the result is ``A[i, j] * B``."""
    return np.kron(np.asarray(A, dtype=float), np.asarray(B, dtype=float))


@dataclass(frozen=True, eq=False)
class KronPairList:
    """Ordered list of ``k`` factor pairs ``(L_j, R_j)``.

    ``Ls`` has shape ``(k, n1, k1)`` and ``Rs`` has shape ``(k, n2, k2)``.
    No orthogonality is implied.
    """

    Ls: np.ndarray
    Rs: np.ndarray

    def __post_init__(self):
        Ls = np.array(self.Ls, dtype=float, ndmin=3)
        Rs = np.array(self.Rs, dtype=float, ndmin=3)
        if Ls.ndim != 3 or Rs.ndim != 3:
            raise ValueError("Ls and Rs must be stacks of matrices")
        if Ls.shape[0] != Rs.shape[0]:
            raise ValueError(f"{Ls.shape[0]} left factors but {Rs.shape[0]} right factors")
        if Ls.shape[0] < 1:
            raise ValueError("a pair list needs at least one pair")
        Ls.flags.writeable = False
        Rs.flags.writeable = False
        object.__setattr__(self, "Ls", Ls)
        object.__setattr__(self, "Rs", Rs)

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        return cls(np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))

    @property
    def k(self):
        return self.Ls.shape[0]

    @property
    def dims(self):
        """``(n1, n2, k1, k2)``."""
        _, n1, k1 = self.Ls.shape
        _, n2, k2 = self.Rs.shape
        return n1, n2, k1, k2

    @property
    def parameter_count(self):
        n1, n2, k1, k2 = self.dims
        return self.k * (n1 * k1 + n2 * k2)

    def __iter__(self):
        return iter(zip(self.Ls, self.Rs))

    def __len__(self):
        return self.k

    def projector(self):
        """Dense ``(n1*n2) x (k1*k2)`` operator ``sum_j kron(R_j, L_j)``."""
        return sum(kron(R, L) for L, R in self)

    def padded(self, extra_Ls, extra_Rs):
        return KronPairList(
            np.concatenate([self.Ls, np.asarray(extra_Ls, dtype=float)]),
            np.concatenate([self.Rs, np.asarray(extra_Rs, dtype=float)]),
        )


@dataclass(frozen=True)
class RearrangedMatrix:
    """Rearranged projector: one row per block, ``vec`` of that block."""

    matrix: np.ndarray
    block_dims: tuple  # (p, q, r, s): p x q grid of r x s blocks


def _check_factoring(W, p, q, r, s):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape != (p * r, q * s):
        raise ValueError(
            f"matrix of shape {W.shape} does not factor as ({p}*{r}) x ({q}*{s})"
        )
    if min(p, q, r, s) < 1:
        raise ValueError("block dimensions must be positive")
    return W


def rearrange(W, p, q, r, s):
    """Rearrange a ``(p*r) x (q*s)`` matrix into a ``(p*q) x (r*s)`` matrix.

    ``W`` is viewed as a ``p x q`` grid of ``r x s`` blocks ``W_ij``.  Row
    ``i + j*p`` of the result is ``vec(W_ij)``, so rows run down each column
    of blocks before moving right.  With that ordering
    ``rearrange(kron(A, B)) == outer(vec(A), vec(B))``.
    """
    W = _check_factoring(W, p, q, r, s)
    # blocks[i, j] == W[i*r:(i+1)*r, j*s:(j+1)*s]
    blocks = W.reshape(p, r, q, s).transpose(0, 2, 1, 3)
    # vec of each block is its column-major flattening
    rows = blocks.transpose(1, 0, 3, 2).reshape(p * q, r * s)
    return RearrangedMatrix(rows, (p, q, r, s))


def unrearrange(Wt, p, q, r, s):
    """Inverse of :func:`rearrange`."""
    Wt = np.asarray(Wt, dtype=float)
    if Wt.shape != (p * q, r * s):
        raise ValueError(f"expected shape {(p * q, r * s)}, got {Wt.shape}")
    blocks = Wt.reshape(q, p, s, r).transpose(1, 0, 3, 2)
    return blocks.transpose(0, 2, 1, 3).reshape(p * r, q * s)


def numerical_rank(sigma, rows, cols):
    """Count singular values above ``max(rows, cols) * eps * sigma_max``."""
    sigma = np.asarray(sigma)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    cutoff = max(rows, cols) * np.finfo(float).eps * sigma[0]
    return int(np.count_nonzero(sigma > cutoff))


def kron_rank_decompose(W, p, q, r, s, max_pairs=None, return_spectrum=False):
    """Write ``W`` as a sum of Kronecker products ``sum_j kron(A_j, B_j)``.

    The rearranged matrix is factored by SVD; each singular triplet gives
    ``vec(A_j) = sqrt(sigma_j) u_j`` and ``vec(B_j) = sqrt(sigma_j) v_j``.
    Keeping the leading ``t`` pairs is the best Kronecker-rank-``t``
    approximation of ``W`` in Frobenius norm.

    Parameters
    ----------
    W : (p*r, q*s) array_like
    p, q, r, s : int
        ``A_j`` is ``p x q`` and ``B_j`` is ``r x s``.
    max_pairs : int, optional
        Keep at most this many pairs.  By default all pairs up to the
        numerical rank of the rearranged matrix are kept.
    return_spectrum : bool
        Also return every singular value of the rearranged matrix.

    Returns
    -------
    KronPairList
        ``Ls`` holds the ``A_j`` and ``Rs`` the ``B_j``.  A zero ``W``
        yields a single all-zero pair.
    sigma : ndarray, only if ``return_spectrum``
    """
    Wt = rearrange(W, p, q, r, s).matrix
    U, sigma, Vt = np.linalg.svd(Wt, full_matrices=False)
    rank = numerical_rank(sigma, p * q, r * s)
    t = rank if max_pairs is None else min(rank, int(max_pairs))
    if t == 0:
        pairs = KronPairList(np.zeros((1, p, q)), np.zeros((1, r, s)))
    else:
        root = np.sqrt(sigma[:t])
        Ls = [unvec(root[j] * U[:, j], p, q) for j in range(t)]
        Rs = [unvec(root[j] * Vt[j], r, s) for j in range(t)]
        pairs = KronPairList(np.stack(Ls), np.stack(Rs))
    if return_spectrum:
        return pairs, sigma
    return pairs


def reassemble(pairs):
    """``sum_j kron(A_j, B_j)`` in the orientation produced by
    :func:`kron_rank_decompose`."""
    return sum(kron(A, B) for A, B in pairs)


def apply_pairs(pairs, D):
    """Evaluate ``sum_j L_j @ D @ R_j.T``.

    ``D`` may be a single ``k1 x k2`` core or a stack ``(N, k1, k2)``; the
    dense Kronecker operator is never formed.
    """
    D = np.asarray(D, dtype=float)
    n1, n2, k1, k2 = pairs.dims
    if D.shape[-2:] != (k1, k2):
        raise ValueError(f"core shape {D.shape[-2:]} does not match pair dims {(k1, k2)}")
    out = None
    for L, R in pairs:
        term = L @ D @ R.T
        out = term if out is None else out + term
    return out
