"""Smallest generalized eigenpairs K u = lambda M u.

Solved with blocked LOBPCG preconditioned by an incomplete LU of a shifted
stiffness matrix (diagonal fallback if the factorization fails).  For pure
Neumann problems the constant nullvector is handled by deflation, so the
reported eigenvalues start at the first nonzero one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_SEED = 777
_TOL = 1e-8
_MAXITER = 500


@dataclass
class EigenSet:
    """k smallest eigenpairs, ascending; vectors M-orthonormal columns."""

    values: np.ndarray        # (k,)
    vectors: np.ndarray       # (n, k), vectors[:, i] for values[i]

    def __post_init__(self):
        order = np.argsort(self.values)
        self.values = np.asarray(self.values, dtype=float)[order]
        self.vectors = np.asarray(self.vectors, dtype=float)[:, order]


def _preconditioner(K: sp.csr_matrix, M: sp.csr_matrix):
    shift = 1e-3 * K.diagonal().max()
    try:
        ilu = spla.spilu((K + shift * M).tocsc(), drop_tol=1e-5, fill_factor=20)
        return spla.LinearOperator(K.shape, ilu.solve)
    except RuntimeError:
        d = K.diagonal() + shift * M.diagonal()
        return spla.LinearOperator(K.shape, lambda x: x / d)


def solve_smallest(K: sp.csr_matrix, M: sp.csr_matrix, k: int = 3,
                   deflate_constants: bool = False,
                   x0: np.ndarray | None = None) -> EigenSet:
    """k smallest eigenpairs of K u = lambda M u (SPD pencil).

    deflate_constants removes the constant mode of a pure-Neumann operator;
    x0 warm-starts the block iteration (shape (n, >=k+2) from a prior call).
    """
    n = K.shape[0]
    block = min(k + 2, n)
    rng = np.random.default_rng(_SEED)
    if x0 is not None and x0.shape[0] == n:
        X = x0[:, :block].copy()
        if X.shape[1] < block:   # pad a narrow warm start with fresh columns
            X = np.hstack([X, rng.standard_normal((n, block - X.shape[1]))])
    else:
        X = rng.standard_normal((n, block))
    Y = None
    if deflate_constants:
        ones = np.ones((n, 1))
        Y = ones / np.sqrt(float(ones[:, 0] @ (M @ ones[:, 0])))

    prec = _preconditioner(K, M)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")   # lobpcg warns if tol not fully met
        vals, vecs = spla.lobpcg(K, X, M=prec, B=M, Y=Y, tol=_TOL,
                                 maxiter=_MAXITER, largest=False)
    order = np.argsort(vals)[:k]
    vals = vals[order]
    vecs = vecs[:, order]
    # normalize sign and M-norm so results are reproducible
    for i in range(vecs.shape[1]):
        v = vecs[:, i]
        v /= np.sqrt(float(v @ (M @ v)))
        j = np.argmax(np.abs(v))
        if v[j] < 0:
            v = -v
        vecs[:, i] = v
    return EigenSet(vals, vecs)


def rayleigh_quotient(K, M, u: np.ndarray) -> float:
    return float(u @ (K @ u)) / float(u @ (M @ u))


def multiplicity_ratio(es: EigenSet) -> float:
    """lambda_1 / lambda_2 in (0, 1]; ~1 signals a (near-)double eigenvalue."""
    if len(es.values) < 2:
        return 0.0
    return float(es.values[0] / es.values[1])
