"""Sparse direct and iterative solvers behind the solver contracts.

The saddle-point system is complex symmetric (not Hermitian), so one LU
factorization with fill-reducing ordering serves both the state and the
adjoint solve. A single step of iterative refinement after each
triangular solve holds the relative-residual contract of 1e-10 on
well-conditioned desk-scale systems. Conjugate gradients covers the
real SPD systems of the regularization subproblem.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularMatrixError

log = logging.getLogger(__name__)

RESIDUAL_CONTRACT = 1e-10


def finalize_csr(m: sp.spmatrix) -> sp.csr_matrix:
    """Canonical CSR: sorted indices, summed duplicates, no stored zeros."""
    m = m.tocsr().copy()
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


class Factorization:
    """Immutable LU handle, reusable for many right-hand sides."""

    def __init__(self, matrix: sp.spmatrix):
        m = matrix.tocsc()
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"matrix must be square, got {m.shape}")
        self.matrix = m
        self.n = m.shape[0]
        try:
            self._lu = spla.splu(m, permc_spec="COLAMD")
        except RuntimeError as e:
            raise SingularMatrixError(f"sparse LU failed: {e}") from None
        # splu can return a factorization with non-finite entries instead
        # of raising on some singular inputs; probe once
        probe = self._lu.solve(np.ones(self.n, dtype=m.dtype))
        if not np.isfinite(probe).all():
            raise SingularMatrixError("sparse LU produced non-finite factors")

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve to the residual contract with one refinement step."""
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs length {b.shape[0]} != matrix dimension {self.n}")
        x = self._lu.solve(b.astype(self.matrix.dtype, copy=False))
        x += self._lu.solve(b - self.matrix @ x)
        return x

    def residual(self, x: np.ndarray, b: np.ndarray) -> float:
        """Relative residual norm; 0 for b = 0."""
        bn = np.linalg.norm(b)
        if bn == 0.0:
            return 0.0
        return float(np.linalg.norm(b - self.matrix @ x) / bn)


def factorize(matrix: sp.spmatrix) -> Factorization:
    return Factorization(matrix)


def solve(fact: Factorization, b: np.ndarray) -> np.ndarray:
    return fact.solve(b)


@dataclass
class CGReport:
    converged: bool
    iterations: int
    residual: float


def cg_solve(matrix, b: np.ndarray, tol: float = 1e-10, max_iter: int = 500,
             x0: np.ndarray | None = None) -> tuple[np.ndarray, CGReport]:
    """Conjugate gradients on an SPD operator; non-convergence is reported.

    ``matrix`` may be a sparse matrix or a LinearOperator. The report
    carries the true relative residual of the returned iterate.
    """
    b = np.asarray(b, dtype=np.float64)
    if np.linalg.norm(b) == 0.0:
        return np.zeros_like(b), CGReport(True, 0, 0.0)
    count = 0

    def cb(_):
        nonlocal count
        count += 1

    x, info = spla.cg(matrix, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter,
                      callback=cb)
    res = float(np.linalg.norm(b - matrix @ x) / np.linalg.norm(b))
    converged = info == 0
    if not converged:
        log.warning("cg did not converge in %d iterations (residual %.3e)",
                    count, res)
    return x, CGReport(converged, count, res)


def dump_matrix(matrix: sp.spmatrix, path) -> None:
    """Debug dump: one 'row col re im' line per stored entry."""
    m = finalize_csr(matrix).tocoo()
    with open(path, "w", encoding="ascii") as f:
        for r, c, v in zip(m.row, m.col, m.data):
            v = complex(v)
            f.write(f"{r} {c} {v.real!r} {v.imag!r}\n")
