"""Kernels and couplings on the level space ]0, 1[ with the Lebesgue measure.

A level kernel lives on a breakpoint grid with widths ``w``.  Row ``i`` (the law
of the next level given a current level ``x`` in cell ``i``) is

    ident[i] * delta_x  +  dens[i, j] dy  on cell j.

Rows are stochastic: ``ident[i] + sum_j dens[i, j] * w[j] == 1``.  This class is
closed under composition, and under transposition when the kernel preserves
the uniform law.  The distinct normalized rows of ``dens`` form the mixture
targets, see :attr:`LevelKernel.targets`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measure import REPR_TOL, RealMeasure, level_grid

CMP_TOL = 1e-9
MAX_CELLS = 4096


class KernelError(ValueError):
    pass


class NotDoublyStochastic(KernelError):
    pass


class NotStochastic(KernelError):
    pass


class MarginalMismatch(KernelError):
    pass


class LengthMismatch(KernelError):
    pass


class CapacityError(KernelError):
    pass


def _cells_of(old_grid: np.ndarray, new_grid: np.ndarray) -> np.ndarray:
    """Index of the old cell containing each cell of a refining grid."""
    mid = 0.5 * (new_grid[:-1] + new_grid[1:])
    return np.clip(np.searchsorted(old_grid, mid, side="right") - 1, 0, old_grid.size - 2)


def _interp_index(grid: np.ndarray, u: np.ndarray):
    """Cell index and fractional position for points ``u`` in [0, 1]."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    k = np.clip(np.searchsorted(grid, u, side="right") - 1, 0, grid.size - 2)
    s = (u - grid[k]) / (grid[k + 1] - grid[k])
    return k, np.clip(s, 0.0, 1.0)


# densities


class LevelDensity:
    """Piecewise-constant non-negative density on ]0, 1[."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.grid.size - 1,):
            raise KernelError("density needs one value per cell")
        if np.any(self.values < -REPR_TOL):
            raise KernelError("density must be non-negative")

    @staticmethod
    def uniform() -> "LevelDensity":
        return LevelDensity([0.0, 1.0], [1.0])

    @staticmethod
    def indicator(a: float, b: float, height: float = 1.0) -> "LevelDensity":
        g = level_grid([a, b])
        mid = 0.5 * (g[:-1] + g[1:])
        return LevelDensity(g, np.where((mid > a) & (mid < b), height, 0.0))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.grid)

    @property
    def mass(self) -> float:
        return float(self.values @ self.widths)

    def cdf(self, u):
        cum = np.concatenate([[0.0], np.cumsum(self.values * self.widths)])
        k, s = _interp_index(self.grid, u)
        out = cum[k] + s * (cum[k + 1] - cum[k])
        return float(out) if np.ndim(out) == 0 else out

    def refine(self, grid) -> "LevelDensity":
        grid = np.asarray(grid, dtype=float)
        return LevelDensity(grid, self.values[_cells_of(self.grid, grid)])

    def restrict(self, u: float) -> "LevelDensity":
        """Density restricted to [0, u]."""
        d = self.refine(level_grid(self.grid, [u]))
        mid = 0.5 * (d.grid[:-1] + d.grid[1:])
        return LevelDensity(d.grid, np.where(mid < u, d.values, 0.0))

    def is_decreasing(self, tol: float = CMP_TOL) -> bool:
        return bool(np.all(np.diff(self.values) <= tol))

    def allclose(self, other: "LevelDensity", tol: float = CMP_TOL) -> bool:
        g = level_grid(self.grid, other.grid)
        return bool(np.max(np.abs(self.refine(g).values - other.refine(g).values)) <= tol)

    def __repr__(self):
        return f"LevelDensity(grid={self.grid.tolist()}, values={self.values.tolist()})"


# kernels


class LevelKernel:
    """Stochastic kernel on ]0, 1[: identity part plus cell-constant densities."""

    __slots__ = ("grid", "ident", "dens", "_tables")

    def __init__(self, grid, ident, dens, check: bool = True):
        self.grid = np.asarray(grid, dtype=float)
        self.ident = np.asarray(ident, dtype=float)
        self.dens = np.asarray(dens, dtype=float)
        n = self.grid.size - 1
        if self.ident.shape != (n,) or self.dens.shape != (n, n):
            raise KernelError("kernel arrays do not match the grid")
        if n > MAX_CELLS:
            raise CapacityError(f"kernel with {n} cells exceeds the cap of {MAX_CELLS}")
        self._tables = None
        if check:
            if self.grid[0] != 0.0 or self.grid[-1] != 1.0 or np.any(np.diff(self.grid) <= 0):
                raise KernelError("grid must increase from 0 to 1")
            if np.any(self.ident < -REPR_TOL) or np.any(self.dens < -REPR_TOL):
                raise NotStochastic("negative kernel weight")
            if np.max(np.abs(self.row_sums() - 1.0)) > REPR_TOL * max(1, n):
                raise NotStochastic("kernel rows must sum to 1")

    # constructors

    @staticmethod
    def identity() -> "LevelKernel":
        return LevelKernel([0.0, 1.0], [1.0], [[0.0]])

    @staticmethod
    def full_averaging() -> "LevelKernel":
        return LevelKernel([0.0, 1.0], [0.0], [[1.0]])

    @staticmethod
    def averaging(intervals: Sequence[tuple[float, float]]) -> "LevelKernel":
        """Uniform resampling inside each disjoint interval, identity elsewhere."""
        ivs = sorted((float(a), float(b)) for a, b in intervals if b - a > REPR_TOL)
        g = level_grid([p for iv in ivs for p in iv])
        n = g.size - 1
        mid = 0.5 * (g[:-1] + g[1:])
        ident = np.ones(n)
        dens = np.zeros((n, n))
        w = np.diff(g)
        for a, b in ivs:
            inside = (mid > a) & (mid < b)
            if not np.any(inside):
                continue
            ident[inside] = 0.0
            # normalize by the snapped cell widths so rows stay stochastic
            dens[np.ix_(inside, inside)] = 1.0 / w[inside].sum()
        return LevelKernel(g, ident, dens, check=False).canonical()

    @staticmethod
    def from_mixture(grid, ident, coefficients, targets) -> "LevelKernel":
        """Build from coefficients (cells x targets) and target densities (targets x cells)."""
        c = np.asarray(coefficients, dtype=float).reshape(len(ident), -1)
        t = np.asarray(targets, dtype=float).reshape(c.shape[1], len(ident))
        return LevelKernel(grid, ident, c @ t)

    # structure

    @property
    def n_cells(self) -> int:
        return self.grid.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.grid)

    def row_sums(self) -> np.ndarray:
        return self.ident + self.dens @ self.widths

    def col_sums(self) -> np.ndarray:
        return self.ident + self.widths @ self.dens

    def is_doubly_stochastic(self, tol: float = CMP_TOL) -> bool:
        return bool(np.max(np.abs(self.col_sums() - 1.0)) <= tol)

    @property
    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        """Mixture form: (coefficients, targets) with ``dens = coefficients @ targets``.

        Targets are the distinct normalized non-zero rows of ``dens``.
        """
        mass = self.dens @ self.widths
        rows, coeffs = [], np.zeros((self.n_cells, 0))
        cols = []
        for i in range(self.n_cells):
            if mass[i] <= REPR_TOL:
                cols.append(-1)
                continue
            r = self.dens[i] / mass[i]
            for j, t in enumerate(rows):
                if np.max(np.abs(t - r)) <= REPR_TOL * max(1.0, np.max(r)):
                    cols.append(j)
                    break
            else:
                rows.append(r)
                cols.append(len(rows) - 1)
        coeffs = np.zeros((self.n_cells, len(rows)))
        for i, j in enumerate(cols):
            if j >= 0:
                coeffs[i, j] = mass[i]
        targets = np.array(rows) if rows else np.zeros((0, self.n_cells))
        return coeffs, targets

    def refine(self, grid) -> "LevelKernel":
        grid = np.asarray(grid, dtype=float)
        if grid.size == self.grid.size and np.array_equal(grid, self.grid):
            return self
        idx = _cells_of(self.grid, grid)
        return LevelKernel(grid, self.ident[idx], self.dens[np.ix_(idx, idx)], check=False)

    def canonical(self, tol: float = REPR_TOL) -> "LevelKernel":
        """Merge adjacent cells that carry identical rows and columns."""
        n = self.n_cells
        if n == 1:
            return self
        D = self.dens
        def close(x, y):
            return np.abs(x - y) <= tol * np.maximum(1.0, np.maximum(np.abs(x), np.abs(y)))
        same = np.abs(np.diff(self.ident)) <= tol
        same &= np.all(close(D[1:, :], D[:-1, :]), axis=1)
        same &= np.all(close(D[:, 1:], D[:, :-1]), axis=0)
        if not np.any(same):
            return self
        keep = np.concatenate([[True], ~same])
        starts = np.flatnonzero(keep)
        grid = np.concatenate([self.grid[starts], [1.0]])
        return LevelKernel(grid, self.ident[starts], self.dens[np.ix_(starts, starts)], check=False)

    # algebra

    def compose(self, other: "LevelKernel") -> "LevelKernel":
        """Kernel of "first self, then other"."""
        g = level_grid(self.grid, other.grid)
        if g.size - 1 > MAX_CELLS:
            raise CapacityError(f"composition needs {g.size - 1} cells")
        k1, k2 = self.refine(g), other.refine(g)
        w = np.diff(g)
        a1, a2, d1, d2 = k1.ident, k2.ident, k1.dens, k2.dens
        dens = a1[:, None] * d2 + d1 * a2[None, :] + d1 @ (w[:, None] * d2)
        return LevelKernel(g, a1 * a2, dens, check=False).canonical()

    def transpose(self, tol: float = CMP_TOL) -> "LevelKernel":
        if not self.is_doubly_stochastic(tol):
            raise NotDoublyStochastic("transpose needs a kernel that preserves the uniform law")
        return LevelKernel(self.grid, self.ident, self.dens.T.copy(), check=False)

    def apply(self, theta: LevelDensity) -> LevelDensity:
        g = level_grid(self.grid, theta.grid)
        k = self.refine(g)
        th = theta.refine(g).values
        return LevelDensity(g, th * k.ident + (th * k.widths) @ k.dens)

    def apply_many(self, grid: np.ndarray, M: np.ndarray):
        """Push a stack of densities (rows of ``M`` on ``grid``); returns (grid, M')."""
        g = level_grid(self.grid, grid)
        k = self.refine(g)
        M = M[:, _cells_of(grid, g)]
        return g, M * k.ident + (M * k.widths) @ k.dens

    def row(self, x: float) -> tuple[float, LevelDensity]:
        """Identity weight and diffuse density of the row at level ``x``."""
        i = int(_interp_index(self.grid, x)[0])
        return float(self.ident[i]), LevelDensity(self.grid, self.dens[i])

    def materialize(self) -> "LevelKernel":
        return self

    # cdf

    def cdf_tables(self):
        """Diffuse corner table ``C[p, q]`` and identity mass ``A[p]`` on the grid."""
        if self._tables is None:
            w = self.widths
            C = np.zeros((self.n_cells + 1, self.n_cells + 1))
            C[1:, 1:] = np.cumsum(np.cumsum(w[:, None] * self.dens * w[None, :], axis=0), axis=1)
            A = np.concatenate([[0.0], np.cumsum(self.ident * w)])
            self._tables = (C, A)
        return self._tables

    def cdf(self, u, v):
        """Mass of [0, u] x [0, v] under Joint(uniform, self)."""
        C, A = self.cdf_tables()
        ua, va = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        i, s = _interp_index(self.grid, ua)
        j, t = _interp_index(self.grid, va)
        diff = ((1 - s) * (1 - t) * C[i, j] + s * (1 - t) * C[i + 1, j]
                + (1 - s) * t * C[i, j + 1] + s * t * C[i + 1, j + 1])
        m = np.minimum(np.clip(ua, 0, 1), np.clip(va, 0, 1))
        k, r = _interp_index(self.grid, m)
        out = diff + A[k] + r * (A[k + 1] - A[k])
        return float(out) if np.ndim(out) == 0 else out

    def _interp_matrix(self, u) -> np.ndarray:
        k, s = _interp_index(self.grid, u)
        W = np.zeros((k.size, self.n_cells + 1))
        r = np.arange(k.size)
        W[r, k] = 1 - s
        W[r, k + 1] += s
        return W

    def cdf_table(self, us, vs) -> np.ndarray:
        """cdf on the product grid ``us x vs``.

        The diffuse part is bilinear per cell, hence separable; the identity
        part is A(min(u, v)) = min(A(u), A(v)) because A is non-decreasing.
        """
        us = np.atleast_1d(np.asarray(us, float))
        vs = np.atleast_1d(np.asarray(vs, float))
        C, A = self.cdf_tables()
        Wu, Wv = self._interp_matrix(us), self._interp_matrix(vs)
        return Wu @ C @ Wv.T + np.minimum.outer(Wu @ A, Wv @ A)

    def second_marginal(self) -> LevelDensity:
        return LevelDensity(self.grid, self.col_sums())

    # serialization

    def to_json(self) -> dict:
        coeffs, targets = self.targets
        return {"grid": self.grid.tolist(), "ident": self.ident.tolist(),
                "coefficients": coeffs.tolist(), "targets": targets.tolist()}

    @staticmethod
    def from_json(obj: dict) -> "LevelKernel":
        grid = obj["grid"]
        n = len(grid) - 1
        coeffs = np.asarray(obj.get("coefficients", []), dtype=float).reshape(n, -1)
        targets = np.asarray(obj.get("targets", []), dtype=float).reshape(coeffs.shape[1], n)
        return LevelKernel(grid, obj["ident"], coeffs @ targets)

    def __repr__(self):
        return f"LevelKernel(cells={self.n_cells})"


def kernel_apply(theta: LevelDensity, k) -> LevelDensity:
    return k.apply(theta)


def kernel_compose(*ks: LevelKernel) -> LevelKernel:
    out = ks[0]
    for k in ks[1:]:
        out = out.compose(k)
    return out


def kernel_transpose(k: LevelKernel) -> LevelKernel:
    return k.transpose()


def increasing_kernel(k: LevelKernel, tol: float = CMP_TOL) -> bool:
    """True when ``x -> k(x, [0, v])`` is non-increasing for every threshold ``v``.

    For ``v`` inside a cell every row value is affine in ``v`` except for the
    jump of the identity part at ``x = v``, so both cell ends suffice.
    """
    k = k.materialize()
    w = k.widths
    n = k.n_cells
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(k.dens * w[None, :], axis=1)], axis=1)
    for j in range(n):
        for q in (j, j + 1):
            c = cum[:, q]
            seq = np.concatenate([k.ident[:j] + c[:j], [k.ident[j] + c[j], c[j]], c[j + 1:]])
            if np.any(np.diff(seq) > tol):
                return False
    return True


def preserves_decreasing(k: LevelKernel, thetas: Sequence[LevelDensity], tol: float = CMP_TOL) -> bool:
    """Whether ``k`` maps each given decreasing density to a decreasing one."""
    return all(k.apply(t).is_decreasing(tol) for t in thetas)


# couplings


class LevelCoupling:
    """Joint(uniform, kernel) on ]0, 1[^2.

    ``kernel`` is a :class:`LevelKernel` or any lazy object with the same
    ``grid``, ``apply``, ``apply_many``, ``cdf_table`` and ``materialize`` methods.
    """

    __slots__ = ("kernel", "info")

    def __init__(self, kernel, info: dict | None = None):
        self.kernel = kernel
        self.info = dict(info or {})

    @staticmethod
    def identity() -> "LevelCoupling":
        return LevelCoupling(LevelKernel.identity())

    @staticmethod
    def product() -> "LevelCoupling":
        return LevelCoupling(LevelKernel.full_averaging())

    @property
    def exact(self) -> bool:
        return isinstance(self.kernel, LevelKernel)

    def materialize(self) -> "LevelCoupling":
        return LevelCoupling(self.kernel.materialize())

    def cdf(self, u, v):
        if self.exact:
            return self.kernel.cdf(u, v)
        tab = self.kernel.cdf_table(np.atleast_1d(u), np.atleast_1d(v))
        return float(tab[0, 0]) if np.ndim(u) == 0 and np.ndim(v) == 0 else tab

    def cdf_table(self, us, vs) -> np.ndarray:
        return self.kernel.cdf_table(us, vs)

    def transpose(self) -> "LevelCoupling":
        return LevelCoupling(self.kernel.materialize().transpose())

    def then(self, other: "LevelCoupling") -> "LevelCoupling":
        return LevelCoupling(self.kernel.materialize().compose(other.kernel.materialize()))

    def check_stationary(self, tol: float = CMP_TOL):
        k = self.kernel.materialize()
        if not k.is_doubly_stochastic(tol):
            raise MarginalMismatch("second marginal is not uniform")

    def to_json(self) -> dict:
        return self.kernel.materialize().to_json()

    def __repr__(self):
        return f"LevelCoupling({self.kernel!r})"


class RealCoupling:
    """Law of (G_left(U), G_right(V)) for (U, V) distributed as ``level``."""

    __slots__ = ("left", "right", "level")

    def __init__(self, left: RealMeasure, right: RealMeasure, level: LevelCoupling):
        self.left, self.right, self.level = left, right, level

    def cdf(self, x, y):
        return self.level.cdf(self.left.cdf(x), self.right.cdf(y))

    def cdf_table(self, xs, ys) -> np.ndarray:
        return self.level.cdf_table(self.left.cdf(np.asarray(xs, float)), self.right.cdf(np.asarray(ys, float)))

    def __repr__(self):
        return f"RealCoupling({self.left!r}, {self.right!r})"


def pushforward_coupling(mu: RealMeasure, nu: RealMeasure, L: LevelCoupling) -> RealCoupling:
    return RealCoupling(mu, nu, L)


def quantile_coupling(mu: RealMeasure, nu: RealMeasure) -> RealCoupling:
    return RealCoupling(mu, nu, LevelCoupling.identity())


def coupling_cdf(P, u, v):
    return P.cdf(u, v)


# distance and order


@dataclass
class _Candidates:
    values: np.ndarray
    argmax: tuple[float, float] | None = None


def _attained(grid: np.ndarray, mu: RealMeasure | None):
    """Grid points that are values of ``F_mu`` and cells where ``F_mu`` is continuous."""
    n = grid.size - 1
    if mu is None:
        return np.ones(n + 1, dtype=bool), np.ones(n, dtype=bool)
    mid = 0.5 * (grid[:-1] + grid[1:])
    k = np.clip(np.searchsorted(mu.levels, mid, side="right") - 1, 0, mu.n_pieces - 1)
    seg_cell = mu.hi[k] > mu.lo[k]
    on_break = np.zeros(n + 1, dtype=bool)
    idx = np.searchsorted(grid, mu.levels)
    idx = np.clip(idx, 0, n)
    close = np.abs(grid[idx] - mu.levels) <= REPR_TOL
    on_break[idx[close]] = True
    pts = on_break.copy()
    pts[:-1] |= seg_cell
    pts[1:] |= seg_cell
    return pts, seg_cell


def _level_difference_candidates(k1: LevelKernel, k2: LevelKernel, left=None, right=None) -> np.ndarray:
    """Values of F1 - F2 at every point where its extremes can occur.

    Off the diagonal both cdfs are bilinear per cell, so corners suffice.  On a
    diagonal cell the identity parts add a term in min(u, v), which makes the
    difference along u = v quadratic; its interior vertex is included too.
    """
    g = level_grid(k1.grid, k2.grid,
                   left.levels if left is not None else [], right.levels if right is not None else [])
    if g.size - 1 > MAX_CELLS:
        raise CapacityError(f"comparison needs {g.size - 1} cells")
    k1, k2 = k1.refine(g), k2.refine(g)
    C1, A1 = k1.cdf_tables()
    C2, A2 = k2.cdf_tables()
    n = g.size - 1
    dC = C1 - C2
    dA = A1 - A2
    pu, cu = _attained(g, left)
    pv, cv = _attained(g, right)
    idx = np.arange(n + 1)
    corner = dC + dA[np.minimum.outer(idx, idx)]
    vals = [corner[np.ix_(pu, pv)].ravel()]
    # diagonal vertices
    i = np.arange(n)
    c00, c10, c01, c11 = dC[i, i], dC[i + 1, i], dC[i, i + 1], dC[i + 1, i + 1]
    delta = (k1.ident - k2.ident) * np.diff(g)
    qa = c00 - (c10 + c01) + c11
    qb = -2 * c00 + (c10 + c01) + delta
    qc = c00 + dA[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = -qb / (2 * qa)
    ok = np.isfinite(s) & (s > 0) & (s < 1) & cu & cv
    if np.any(ok):
        vals.append(qa[ok] * s[ok] ** 2 + qb[ok] * s[ok] + qc[ok])
    return np.concatenate(vals)


def _probe_levels(*grids, m: int = 64) -> np.ndarray:
    return level_grid(np.linspace(0, 1, m + 1), *grids)


def _lazy_difference_candidates(L1, L2, left=None, right=None) -> np.ndarray:
    """Difference sampled on probe levels (breakpoints plus a uniform grid)."""
    extra = [left.levels] if left is not None else []
    extra_v = [right.levels] if right is not None else []
    probe = [getattr(k, "probe", []) for k in (L1.kernel, L2.kernel)]
    us = _probe_levels(*extra, *probe)
    vs = _probe_levels(*extra_v, *probe)
    if left is not None:
        us = us[_attained_points(us, left)]
    if right is not None:
        vs = vs[_attained_points(vs, right)]
    return (L1.cdf_table(us, vs) - L2.cdf_table(us, vs)).ravel()


def _attained_points(points: np.ndarray, mu: RealMeasure) -> np.ndarray:
    k = np.clip(np.searchsorted(mu.levels, points, side="left") - 1, 0, mu.n_pieces - 1)
    at_break = np.min(np.abs(points[:, None] - mu.levels[None, :]), axis=1) <= REPR_TOL
    return at_break | (mu.hi[k] > mu.lo[k])


def _as_level_pair(P, Q):
    if isinstance(P, RealCoupling) != isinstance(Q, RealCoupling):
        raise MarginalMismatch("cannot compare a level coupling with a real coupling")
    if isinstance(P, RealCoupling):
        if not (P.left == Q.left and P.right == Q.right):
            raise MarginalMismatch("couplings have different marginals")
        return P.level, Q.level, P.left, P.right
    return P, Q, None, None


def _difference_candidates(P, Q) -> np.ndarray:
    L1, L2, left, right = _as_level_pair(P, Q)
    k1, k2 = L1.kernel, L2.kernel
    if isinstance(k1, LevelKernel) and isinstance(k2, LevelKernel):
        if left is None and not (k1.is_doubly_stochastic() and k2.is_doubly_stochastic()):
            s1, s2 = k1.second_marginal(), k2.second_marginal()
            if not s1.allclose(s2):
                raise MarginalMismatch("second marginals differ")
        return _level_difference_candidates(k1, k2, left, right)
    return _lazy_difference_candidates(L1, L2, left, right)


def rho(P, Q) -> float:
    """Sup-norm distance between the cdfs of two couplings with equal marginals."""
    return float(np.max(np.abs(_difference_candidates(P, Q))))


def lo_leq(P, Q, tol: float = CMP_TOL) -> bool:
    """Lower-orthant order: ``F_P >= F_Q`` everywhere."""
    return bool(np.min(_difference_candidates(P, Q)) >= -tol)


# Markov chains


class MarkovChainLaw:
    """Markov law started at ``initial`` (None for the uniform level law).

    Level chains use LevelCoupling steps and level thresholds.  Real chains use
    RealCoupling steps and real thresholds; at each junction the steps are
    glued through the common marginal, which averages over its atomic levels.
    """

    def __init__(self, initial, steps: Sequence):
        self.initial = initial
        self.steps = list(steps)
        real = [isinstance(s, RealCoupling) for s in self.steps]
        if any(real) and not all(real):
            raise KernelError("mixing level and real steps")
        self.is_real = bool(self.steps) and all(real) or isinstance(initial, RealMeasure)
        if self.is_real:
            marg = [self.steps[0].left] if self.steps else [initial]
            for i, s in enumerate(self.steps):
                if i and not (s.left == self.steps[i - 1].right):
                    raise MarginalMismatch(f"step {i} does not start where step {i - 1} ends")
                marg.append(s.right)
            self.marginals = marg
        else:
            self.marginals = None

    @property
    def n_times(self) -> int:
        return len(self.steps) + 1

    def level_factors(self) -> list:
        """Level kernels whose product is the chain, junction averaging included."""
        out = []
        for i, s in enumerate(self.steps):
            if self.is_real:
                if i > 0:
                    ivs = self.marginals[i].atom_intervals()
                    if ivs:
                        out.append(LevelKernel.averaging(ivs))
                out.append(s.level.kernel)
            else:
                out.append(s.kernel)
        return out


def compose_real(P: RealCoupling, Q: RealCoupling) -> RealCoupling:
    """Catenation of two real couplings through their common marginal."""
    if not (P.right == Q.left):
        raise MarginalMismatch("couplings do not share the middle marginal")
    k = P.level.kernel.materialize()
    ivs = P.right.atom_intervals()
    if ivs:
        k = k.compose(LevelKernel.averaging(ivs))
    k = k.compose(Q.level.kernel.materialize())
    return RealCoupling(P.left, Q.right, LevelCoupling(k))


def fd_cdf(chain: MarkovChainLaw, thresholds: Sequence[float]) -> float:
    """Mass of the lower orthant below ``thresholds`` (one per time)."""
    if len(thresholds) != chain.n_times:
        raise LengthMismatch(f"expected {chain.n_times} thresholds, got {len(thresholds)}")
    if chain.is_real:
        levels = [float(m.cdf(x)) for m, x in zip(chain.marginals, thresholds)]
    else:
        levels = [float(np.clip(u, 0.0, 1.0)) for u in thresholds]
    theta = LevelDensity.uniform().restrict(levels[0])
    li = 1
    for i, s in enumerate(chain.steps):
        if chain.is_real:
            if i > 0:
                ivs = chain.marginals[i].atom_intervals()
                if ivs:
                    theta = LevelKernel.averaging(ivs).apply(theta)
            k = s.level.kernel
        else:
            k = s.kernel
        theta = k.apply(theta).restrict(levels[li])
        li += 1
    return theta.mass


# lower-orthant supremum


@dataclass(frozen=True)
class Invalid:
    """No lower-orthant supremum: the pointwise min of the cdfs has a negative rectangle."""

    witness: tuple[tuple[float, float], tuple[float, float]]
    increment: float


def _min_table_check(tables: list[np.ndarray], xs: np.ndarray, ys: np.ndarray, tol: float):
    F = np.min(np.stack(tables), axis=0)
    inc = F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
    i, j = np.unravel_index(np.argmin(inc), inc.shape)
    if inc[i, j] < -tol:
        return F, Invalid(((float(xs[i]), float(ys[j])), (float(xs[i + 1]), float(ys[j + 1]))), float(inc[i, j]))
    return F, None


def losup_couplings(Ls: Sequence, tol: float = CMP_TOL):
    """Lower-orthant supremum of 2-D couplings, or :class:`Invalid`.

    The candidate cdf is the pointwise minimum on a merged grid.  If some input
    attains it everywhere that input is returned.  For level couplings that
    are not attained, the result is the coupling with that cdf on every grid
    corner and constant density inside cells.  Real couplings may have
    different marginals; the grid then runs over the real breakpoints.
    """
    Ls = list(Ls)
    if not Ls:
        raise KernelError("empty family")
    if all(isinstance(L, RealCoupling) for L in Ls):
        return _losup_real(Ls, tol)
    ks = [L.kernel.materialize() for L in Ls]
    for k in ks:
        if not k.is_doubly_stochastic():
            raise MarginalMismatch("losup needs couplings with uniform marginals")
    for L in Ls:
        if all(lo_leq(M, L, tol) for M in Ls):
            return L
    g = level_grid(*[k.grid for k in ks])
    tables = [k.cdf_table(g, g) for k in ks]
    F, bad = _min_table_check(tables, g, g, tol)
    if bad is not None:
        return bad
    w = np.diff(g)
    inc = F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
    dens = np.maximum(inc, 0.0) / (w[:, None] * w[None, :])
    return LevelCoupling(LevelKernel(g, np.zeros(g.size - 1), dens, check=False).canonical())


def _real_grid(P: RealCoupling, axis: int) -> np.ndarray:
    mu = P.left if axis == 0 else P.right
    g = P.level.kernel.materialize().grid
    pts = [mu.lo, mu.hi, np.atleast_1d(mu.quantile(np.clip(g[1:], REPR_TOL, 1.0)))]
    return np.unique(np.concatenate(pts))


def _losup_real(Ps: list[RealCoupling], tol: float):
    xs = np.unique(np.concatenate([_real_grid(P, 0) for P in Ps]))
    ys = np.unique(np.concatenate([_real_grid(P, 1) for P in Ps]))
    lo = min(xs[0], ys[0]) - 1.0
    xs = np.concatenate([[lo], xs])
    ys = np.concatenate([[lo], ys])
    tables = [P.cdf_table(xs, ys) for P in Ps]
    F, bad = _min_table_check(tables, xs, ys, tol)
    if bad is not None:
        return bad
    for P, T in zip(Ps, tables):
        if np.max(np.abs(T - F)) <= tol:
            return P
    raise KernelError("real losup exists but is not attained by an input; use level couplings")
