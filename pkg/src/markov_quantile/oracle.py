"""Brute-force check of level kernels as row-stochastic matrices on N uniform bins.

Nothing here reuses the kernel algebra: averaging kernels are built directly
as block matrices, products are matrix products and cdfs are cumulative sums.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .families import AtomicLevelSet


class GridMisaligned(ValueError):
    pass


ALIGN_TOL = 1e-12


def _bin(x: float, N: int) -> int:
    i = round(x * N)
    if abs(x * N - i) > ALIGN_TOL * N:
        raise GridMisaligned(f"breakpoint {x!r} is not a multiple of 1/{N}")
    return int(i)


class BinKernel:
    """Row-stochastic N x N matrix; bin i stands for levels ]i/N, (i+1)/N[."""

    def __init__(self, matrix, check: bool = True):
        M = np.asarray(matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("bin kernel must be square")
        if check and (np.any(M < -ALIGN_TOL) or np.max(np.abs(M.sum(axis=1) - 1)) > 1e-12 * M.shape[0]):
            raise ValueError("bin kernel rows must be non-negative and sum to 1")
        self.matrix = M

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @staticmethod
    def identity(N: int) -> "BinKernel":
        return BinKernel(np.eye(N), check=False)

    def then(self, other: "BinKernel") -> "BinKernel":
        return BinKernel(self.matrix @ other.matrix, check=False)

    def then_average(self, A: AtomicLevelSet) -> "BinKernel":
        """Product with the averaging matrix of ``A``, done by column-block means."""
        M = self.matrix.copy()
        for a, b in A.intervals:
            i, j = _bin(a, self.N), _bin(b, self.N)
            M[:, i:j] = M[:, i:j].mean(axis=1, keepdims=True)
        return BinKernel(M, check=False)

    def transpose(self) -> "BinKernel":
        return BinKernel(self.matrix.T.copy(), check=False)

    def is_doubly_stochastic(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.matrix.sum(axis=0) - 1)) <= tol * self.N)

    def corner_cdf(self) -> np.ndarray:
        """Mass of [0, i/N] x [0, j/N] under Joint(uniform, self) for all corners."""
        C = np.zeros((self.N + 1, self.N + 1))
        C[1:, 1:] = np.cumsum(np.cumsum(self.matrix / self.N, axis=0), axis=1)
        return C

    def to_csv(self) -> str:
        return "\n".join(",".join(f"{v:.17g}" for v in row) for row in self.matrix) + "\n"


def averaging_matrix(A: AtomicLevelSet, N: int) -> BinKernel:
    M = np.eye(N)
    for a, b in A.intervals:
        i, j = _bin(a, N), _bin(b, N)
        M[i:j, i:j] = 1.0 / (j - i)
    return BinKernel(M, check=False)


def oracle_kernel(obj, N: int) -> BinKernel:
    """Bin matrix of an atomic level set, a level kernel or a level coupling."""
    if isinstance(obj, AtomicLevelSet):
        return averaging_matrix(obj, N)
    k = obj.kernel.materialize() if hasattr(obj, "kernel") else obj.materialize()
    edges = [_bin(x, N) for x in k.grid]
    M = np.zeros((N, N))
    for i in range(k.n_cells):
        ri = slice(edges[i], edges[i + 1])
        for j in range(k.n_cells):
            M[ri, edges[j]:edges[j + 1]] = k.dens[i, j] / N
        idx = np.arange(edges[i], edges[i + 1])
        M[idx, idx] += k.ident[i]
    return BinKernel(M, check=False)


def oracle_product(sets: Sequence[AtomicLevelSet], N: int, fast: bool = True) -> BinKernel:
    """Matrix of the product of averagings, in the given order."""
    out = BinKernel.identity(N)
    for A in sets:
        out = out.then_average(A) if fast else out.then(averaging_matrix(A, N))
    return out


def exact_corner_cdf(L, N: int) -> np.ndarray:
    u = np.arange(N + 1) / N
    k = L.kernel.materialize() if hasattr(L, "kernel") else L
    return k.cdf_table(u, u)


def oracle_compare(exact, approx: BinKernel) -> float:
    """Largest cdf difference over all corners (i/N, j/N)."""
    k = exact.kernel.materialize() if hasattr(exact, "kernel") else exact
    for x in k.grid:
        _bin(x, approx.N)
    return float(np.max(np.abs(exact_corner_cdf(k, approx.N) - approx.corner_cdf())))


def oracle_fd_cdf(kernels: Sequence[BinKernel], levels: Sequence[float]) -> float:
    """Orthant mass of the level chain started uniform, by restricted mat-vec products."""
    if len(levels) != len(kernels) + 1:
        raise ValueError("need one threshold per time")
    N = kernels[0].N if kernels else 1
    cut = [_bin(u, N) for u in levels]
    v = np.zeros(N)
    v[:cut[0]] = 1.0 / N
    for K, c in zip(kernels, cut[1:]):
        v = v @ K.matrix
        v[c:] = 0.0
    return float(v.sum())
