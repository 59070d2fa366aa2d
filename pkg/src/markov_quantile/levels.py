"""Averaging kernels of atomic levels and their products over sets of times."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .families import AtomicLevelSet, ExplicitFamily, MarginalFamily, TimeInterval
from .kernel import (CMP_TOL, MAX_CELLS, CapacityError, LevelCoupling, LevelDensity, LevelKernel,
                     RealCoupling, lo_leq, rho, _cells_of)
from .measure import level_grid

# cells above which a product of averagings is kept lazy
EXACT_CELLS = 768
# running-product size up to which large products are still built exactly
SEQUENTIAL_CELLS = 192


class NoConvergence(RuntimeError):
    def __init__(self, msg: str, gaps: Sequence[float] = ()):
        super().__init__(msg)
        self.gaps = list(gaps)


class _Indeterminate:
    """Result of a test too close to its decision threshold."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "Indeterminate"

    def __bool__(self):
        raise TypeError("Indeterminate has no truth value")


Indeterminate = _Indeterminate()


def ell_of(A: AtomicLevelSet) -> LevelKernel:
    """Identity outside the intervals of ``A``, uniform resampling inside each one."""
    return LevelKernel.averaging(A.intervals)


def _dedupe(sets: Sequence[AtomicLevelSet]) -> list[AtomicLevelSet]:
    out: list[AtomicLevelSet] = []
    for A in sets:
        if A.empty:
            continue
        if out and out[-1].same_as(A):
            continue  # averaging is idempotent
        out.append(A)
    return out


class AveragingChain:
    """Lazy product ``ell(A_1) ell(A_2) ... ell(A_m)`` of averaging kernels.

    Densities are pushed factor by factor on the union grid of all interval
    endpoints, so the cost is linear in the number of factors.
    """

    def __init__(self, sets: Sequence[AtomicLevelSet], probe: Sequence[float] = ()):
        self.sets = _dedupe(sets)
        self.grid = level_grid(*[A.endpoints() for A in self.sets])
        self.probe = np.asarray(probe, dtype=float)
        self._kernel = None
        self._plans: dict = {}

    @property
    def n_factors(self) -> int:
        return len(self.sets)

    @property
    def work(self) -> int:
        return self.n_factors * (self.grid.size - 1)

    def _plan(self, grid: np.ndarray):
        key = (grid.size, float(grid.sum()))
        plan = self._plans.get(key)
        if plan is None:
            plan = []
            for A in self.sets:
                a = np.array([iv[0] for iv in A.intervals])
                b = np.array([iv[1] for iv in A.intervals])
                ia = np.searchsorted(grid, a)
                ib = np.searchsorted(grid, b)
                owner = np.full(grid.size - 1, -1)
                k = 0
                for i, j in zip(ia, ib):
                    if j > i:
                        owner[i:j] = k
                        k += 1
                length = grid[ib] - grid[ia]
                ok = length > 0
                plan.append((ia[ok], ib[ok], length[ok], owner))
            if len(self._plans) > 8:
                self._plans.clear()
            self._plans[key] = plan
        return plan

    def apply_many(self, grid: np.ndarray, M: np.ndarray):
        g = level_grid(self.grid, grid)
        M = np.array(M[:, _cells_of(np.asarray(grid, float), g)], dtype=float)
        w = np.diff(g)
        inside_cols = None
        for ia, ib, length, owner in self._plan(g):
            if ia.size == 0:
                continue
            # direct block sums; differences of cumulative sums lose the thin cells
            MW = np.concatenate([M * w, np.zeros((M.shape[0], 1))], axis=1)
            bounds = np.stack([ia, ib], axis=1).ravel()
            level = np.add.reduceat(MW, bounds, axis=1)[:, ::2] / length
            inside_cols = owner >= 0
            M[:, inside_cols] = level[:, owner[inside_cols]]
        return g, M

    def apply(self, theta: LevelDensity) -> LevelDensity:
        g, M = self.apply_many(theta.grid, theta.values[None, :])
        return LevelDensity(g, M[0])

    def cdf_table(self, us, vs) -> np.ndarray:
        us = np.asarray(us, dtype=float)
        vs = np.asarray(vs, dtype=float)
        g0 = level_grid(us)
        mid = 0.5 * (g0[:-1] + g0[1:])
        M = (mid[None, :] < us[:, None]).astype(float)
        g, M = self.apply_many(g0, M)
        cum = np.concatenate([np.zeros((M.shape[0], 1)), np.cumsum(M * np.diff(g), axis=1)], axis=1)
        k = np.clip(np.searchsorted(g, vs, side="right") - 1, 0, g.size - 2)
        s = np.clip((vs - g[k]) / (g[k + 1] - g[k]), 0.0, 1.0)
        return cum[:, k] + s * (cum[:, k + 1] - cum[:, k])

    def materialize(self) -> LevelKernel:
        if self._kernel is None:
            if self.grid.size - 1 > MAX_CELLS:
                raise CapacityError(f"averaging product needs {self.grid.size - 1} cells")
            ks = [ell_of(A) for A in self.sets] or [LevelKernel.identity()]
            while len(ks) > 1:  # balanced products keep intermediate grids small
                ks = [ks[i].compose(ks[i + 1]) if i + 1 < len(ks) else ks[i] for i in range(0, len(ks), 2)]
            self._kernel = ks[0]
        return self._kernel

    def sample(self, u: np.ndarray, uniforms) -> np.ndarray:
        """Step levels ``u`` through every factor; ``uniforms(i)`` yields the draws for factor i."""
        u = np.array(u, dtype=float)
        for i, A in enumerate(self.sets):
            a = np.array([iv[0] for iv in A.intervals])
            b = np.array([iv[1] for iv in A.intervals])
            k = np.searchsorted(a, u, side="left") - 1
            kk = np.clip(k, 0, a.size - 1)
            hit = (k >= 0) & (u > a[kk]) & (u < b[kk])
            # boundary levels are a null set; treat them as inside the interval to their left
            hit |= (k >= 0) & (u == b[kk])
            r = uniforms(i)
            u = np.where(hit, a[kk] + (b[kk] - a[kk]) * r, u)
        return u

    def __repr__(self):
        return f"AveragingChain(factors={self.n_factors}, cells={self.grid.size - 1})"


def then_ell(k: LevelKernel, A: AtomicLevelSet) -> LevelKernel:
    """``k`` followed by ``ell_of(A)``, by averaging column blocks in O(cells^2)."""
    g = level_grid(k.grid, A.endpoints())
    k = k.refine(g)
    w = np.diff(g)
    ident = k.ident.copy()
    dens = k.dens.copy()
    for a, b in A.intervals:
        i, j = np.searchsorted(g, [a, b])
        if j <= i:
            continue
        # mass each row sends into ]a, b[, identity part included
        mass = dens[:, i:j] @ w[i:j]
        mass[i:j] += ident[i:j]
        ident[i:j] = 0.0
        dens[:, i:j] = (mass / w[i:j].sum())[:, None]
    return LevelKernel(g, ident, dens, check=False).canonical()


def _sequential_product(sets: Sequence[AtomicLevelSet], cap: int) -> LevelKernel | None:
    """Exact product built factor by factor, or None once it needs more than ``cap`` cells."""
    k = LevelKernel.identity()
    for A in sets:
        k = then_ell(k, A)
        if k.n_cells > cap:
            return None
    return k


def level_coupling_of(sets: Sequence[AtomicLevelSet], probe: Sequence[float] = (),
                      exact_cells: int = EXACT_CELLS, info: dict | None = None) -> LevelCoupling:
    """Coupling of a product of averagings.

    The product is exact when the union grid is small, or when the running
    product stays small after merging equal cells; otherwise it stays lazy.
    """
    chain = AveragingChain(sets, probe)
    if chain.n_factors == 0:
        L = LevelCoupling.identity()
    elif chain.grid.size - 1 <= exact_cells:
        L = LevelCoupling(chain.materialize())
    else:
        k = _sequential_product(chain.sets, min(exact_cells, SEQUENTIAL_CELLS))
        L = LevelCoupling(chain if k is None else k)
    L.info["sets"] = chain.sets
    if info:
        L.info.update(info)
    return L


def L_finite(family: MarginalFamily, R: Sequence[float]) -> LevelCoupling:
    """Product of the averaging kernels at the times of ``R``, in increasing order."""
    ts = sorted(set(float(r) for r in R))
    return level_coupling_of([family.atomic_levels(t) for t in ts])


# interval limits


@dataclass
class Refinement:
    depth: int
    gaps: list = field(default_factory=list)
    monotone: list = field(default_factory=list)


def dyadic_times(family: MarginalFamily, I: TimeInterval, depth: int) -> list[float]:
    """Times ``lo + k 2^-depth (hi - lo)`` of the domain lying in ``I``, plus anchors in ``I``.

    Points at distance ``2^-k`` times the width of ``I`` from its ends, for
    k up to ``depth``, are added too.  All sets are nested in ``depth``.
    """
    lo, hi = family.domain
    span = hi - lo
    step = span / 2 ** depth
    a = max(I.lo, lo)
    b = min(I.hi, hi)
    k0 = math.ceil((a - lo) / step - 1e-9)
    k1 = math.floor((b - lo) / step + 1e-9)
    ts = [lo + k * step for k in range(k0, k1 + 1)]
    ts += [t for t in getattr(family, "anchors", ()) if a <= t <= b]
    ts += [t for t in (I.lo, I.hi) if lo <= t <= hi]
    # nested points closing in on the ends, so a non-dyadic open end cannot stall the refinement
    w = b - a
    ts += [x for k in range(1, depth + 1) for x in (a + w * 2.0 ** -k, b - w * 2.0 ** -k)]
    ts = sorted(set(round(t, 15) for t in ts))
    return [t for t in ts if I.contains(t)]


def _probe_for(family: MarginalFamily, I: TimeInterval) -> np.ndarray:
    pts = []
    for t in (I.lo, I.hi):
        try:
            pts.append(family.marginal(t).levels)
        except Exception:
            pass
    return level_grid(*pts) if pts else np.array([0.0, 1.0])


def L_at_depth(family: MarginalFamily, I: TimeInterval, depth: int) -> LevelCoupling:
    ts = dyadic_times(family, I, depth)
    return level_coupling_of([family.atomic_levels(t) for t in ts], probe=_probe_for(family, I),
                             info={"depth": depth, "times": len(ts)})


def L_interval(family: MarginalFamily, I, tol: float = 1e-6, max_depth: int = 20,
               depth: int | None = None, work_budget: float = 4e7,
               metric: str = "level") -> LevelCoupling:
    """Level coupling of the averagings over all times of ``I``.

    ``I`` is a :class:`TimeInterval` or a pair (s, t) meaning the open interval.
    Explicit families are handled exactly.  Parametric families are refined on
    dyadic time grids until two consecutive doublings move the coupling by
    less than ``tol``; a fixed ``depth`` skips the search.  With
    ``metric="real"`` the distance is taken between the pushforwards by the
    quantile functions at the two ends of ``I``, which is all a pair coupling
    of the process depends on.
    """
    if not isinstance(I, TimeInterval):
        I = TimeInterval.open(*I)
    if isinstance(family, ExplicitFamily):
        return level_coupling_of(family.atomic_sets_in(I))
    if getattr(family, "diffuse", False):
        return level_coupling_of([])
    cache = getattr(family, "_cache", None)
    key = ("L", I, tol, max_depth, depth, metric)
    if cache is not None and key in cache:
        return cache[key]
    if depth is not None:
        L = L_at_depth(family, I, depth)
    else:
        L = _refine(family, I, tol, max_depth, work_budget, metric)
    if cache is not None:
        cache[key] = L
    return L


def _start_depth(family: MarginalFamily, I: TimeInterval) -> int:
    lo, hi = family.domain
    width = max(min(I.hi, hi) - max(I.lo, lo), 0.0)
    if width <= 0:
        return 0
    return max(0, int(math.floor(math.log2((hi - lo) / width))) + 1)


def _work(L: LevelCoupling) -> float:
    k = L.kernel
    if isinstance(k, AveragingChain):
        return k.work
    # sequential products cost one column-block pass per factor, plus fixed overhead
    return len(L.info.get("sets", ())) * (float(k.n_cells) ** 2 + 1024.0)


def _refine(family, I, tol, max_depth, work_budget, metric="level") -> LevelCoupling:
    ref = Refinement(depth=0)
    if metric == "real":
        mu, nu = family.marginal(I.lo), family.marginal(I.hi)

        def lift(L):
            return RealCoupling(mu, nu, L)
    elif metric == "level":
        def lift(L):
            return L
    else:
        raise ValueError(f"unknown metric {metric!r}")
    n = _start_depth(family, I)
    prev = L_at_depth(family, I, n)
    below = 0
    while n < max_depth:
        n += 1
        cur = L_at_depth(family, I, n)
        gap = rho(lift(prev), lift(cur))
        ref.gaps.append(gap)
        ref.monotone.append(lo_leq(lift(prev), lift(cur), tol=max(CMP_TOL, tol / 10)))
        below = below + 1 if gap < tol else 0
        if below >= 2:
            cur.info.update(depth=n, gaps=ref.gaps, monotone=ref.monotone)
            return cur
        if _work(cur) * 2 > work_budget:
            raise NoConvergence(f"work budget exhausted at depth {n}, last gap {gap:.3g}", ref.gaps)
        prev = cur
    raise NoConvergence(f"no convergence within depth {max_depth}, last gap {ref.gaps[-1]:.3g}",
                        ref.gaps)


def product_of(*Ls: LevelCoupling) -> LevelCoupling:
    """Product of level couplings.

    Products of averagings are concatenated factor-wise (lazy if large);
    anything else is composed exactly.
    """
    if all("sets" in L.info for L in Ls):
        sets = [A for L in Ls for A in L.info["sets"]]
        probes = [L.kernel.probe for L in Ls if isinstance(L.kernel, AveragingChain)]
        return level_coupling_of(sets, probe=level_grid(*probes) if probes else ())
    out = None
    for L in Ls:
        k = L.kernel.materialize()
        out = k if out is None else out.compose(k)
    return LevelCoupling(out)


# essential atomic times and intervals


def essential(family: MarginalFamily, I, probe: tuple[float, float], tol: float = 1e-6, **kw):
    """Whether removing ``I`` from ]s, t[ changes the level coupling.

    ``I`` is a time ``a`` or a closed interval (a, b) with s < a <= b < t.
    Returns True, False or :data:`Indeterminate` when the distance lies within
    a factor 10 of ``tol``.
    """
    s, t = map(float, probe)
    a, b = (float(I), float(I)) if np.ndim(I) == 0 else map(float, I)
    if not (s < a <= b < t):
        raise ValueError("need s < inf I <= sup I < t")
    whole = L_interval(family, TimeInterval.open(s, t), tol=tol, **kw)
    left = L_interval(family, TimeInterval.open(s, a), tol=tol, **kw)
    right = L_interval(family, TimeInterval.open(b, t), tol=tol, **kw)
    rest = product_of(left, right)
    d = rho(whole, rest)
    if isinstance(family, ExplicitFamily):
        return bool(d > tol)
    if tol / 10 <= d <= 10 * tol:
        return Indeterminate
    return bool(d > tol)
