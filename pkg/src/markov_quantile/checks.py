"""Invariant suite run by ``mq check``: one entry per property of the library.

Each property takes a :class:`Context` (family, seed, tolerance) and returns
``(ok, detail)`` with ``ok`` None when the property does not apply to the
family.  ``MANIFEST`` lists the property names; its length is pinned by the
tests so a dropped property is noticed.
"""
from __future__ import annotations

import io
import json
import math
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .action import action, disp_ensemble, energy
from .families import ExplicitFamily, MarginalFamily, TimeInterval, time_reversed
from .kernel import (CapacityError, LevelCoupling, LevelDensity, LevelKernel, MarkovChainLaw,
                     RealCoupling, compose_real, fd_cdf, increasing_kernel, lo_leq,
                     quantile_coupling, rho)
from .levels import (AveragingChain, Indeterminate, L_interval, NoConvergence, dyadic_times,
                     ell_of, essential, level_coupling_of, product_of)
from .measure import REPR_TOL, RealMeasure, from_mixture, sto_leq, stoinf, stosup, w2
from .mq import ProcessHandle, _thresholds, markov_check, mq_coupling, pair_coupling, simulate
from .oracle import BinKernel, GridMisaligned, oracle_fd_cdf, oracle_kernel, oracle_product

DKW_CONFIDENCE = 0.999
COARSE_TOL = 1e-3


@dataclass
class Context:
    family: MarginalFamily
    seed: int = 0
    tol: float = 1e-6
    rng: np.random.Generator = field(init=False)
    times: list = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self.times = sample_times(self.family)

    @property
    def exact(self) -> bool:
        return isinstance(self.family, ExplicitFamily)

    @property
    def coupling_tol(self) -> float:
        """Tolerance on coupling cdfs: comparison level if exact, else a few refinement tolerances."""
        return 1e-9 if self.exact else 10 * self.tol + 1e-9

    def marginals(self) -> list[RealMeasure]:
        return [self.family.marginal(t) for t in self.times]

    def handle(self) -> ProcessHandle:
        return ProcessHandle.markov_quantile(self.family, tol=self.tol)


@dataclass
class PropertyResult:
    name: str
    status: str
    detail: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "status": self.status, "detail": self.detail}


PROPERTIES: dict[str, Callable[[Context], tuple]] = {}


def prop(name: str):
    def deco(fn):
        if name in PROPERTIES:
            raise ValueError(f"duplicate property {name}")
        PROPERTIES[name] = fn
        return fn
    return deco


def sample_times(family: MarginalFamily) -> list[float]:
    """Times with a known marginal, spread over the family."""
    if isinstance(family, ExplicitFamily):
        ts = []
        for kind, lo, hi, m in family.pieces():
            if kind == "point":
                ts.append(lo)
            elif m is not None:
                if math.isinf(lo) and math.isinf(hi):
                    ts.append(0.0)
                elif math.isinf(lo):
                    ts.append(hi - 1.0)
                elif math.isinf(hi):
                    ts.append(lo + 1.0)
                else:
                    ts.append(0.5 * (lo + hi))
        return sorted(set(ts))
    lo, hi = family.domain
    return [lo + k * (hi - lo) / 4 for k in range(5)]


def _triples(ctx: Context, k: int = 2) -> list[tuple]:
    ts = ctx.times
    if len(ts) < 3:
        return []
    out = [(ts[0], ts[len(ts) // 2], ts[-1])]
    for _ in range(k - 1):
        i = np.sort(ctx.rng.choice(len(ts), 3, replace=False))
        out.append(tuple(ts[j] for j in i))
    return out


def _pairs(ctx: Context, k: int = 2) -> list[tuple]:
    return [(s, u) for s, _, u in _triples(ctx, k)] or (
        [(ctx.times[0], ctx.times[-1])] if len(ctx.times) > 1 else [])


# random objects


def random_measure(rng: np.random.Generator) -> RealMeasure:
    n_at, n_seg = rng.integers(0, 3), rng.integers(0, 3)
    if n_at + n_seg == 0:
        n_at = 1
    atoms = [(float(rng.normal()), float(rng.random() + 0.1)) for _ in range(n_at)]
    segs = []
    for _ in range(n_seg):
        a = float(rng.normal())
        segs.append((a, a + float(rng.random() + 0.05), float(rng.random() + 0.1)))
    tot = sum(w for _, w in atoms) + sum(w for *_, w in segs)
    return from_mixture([(x, w / tot) for x, w in atoms], [(a, b, w / tot) for a, b, w in segs])


def random_intervals(rng: np.random.Generator, den: int = 64, k: int = 3) -> list[tuple[float, float]]:
    cuts = np.sort(rng.choice(np.arange(den + 1), 2 * k, replace=False)) / den
    return [(float(cuts[2 * i]), float(cuts[2 * i + 1])) for i in range(k) if rng.random() < 0.8]


def random_averaging(rng: np.random.Generator, den: int = 64) -> LevelKernel:
    return LevelKernel.averaging(random_intervals(rng, den, int(rng.integers(1, 4))))


def block_permutation(rng: np.random.Generator, blocks: int = 4) -> LevelKernel:
    """Doubly stochastic kernel sending block i of ]0, 1[ uniformly onto block perm(i)."""
    g = np.linspace(0, 1, blocks + 1)
    perm = rng.permutation(blocks)
    dens = np.zeros((blocks, blocks))
    dens[np.arange(blocks), perm] = blocks
    return LevelKernel(g, np.zeros(blocks), dens)


def random_kernel(rng: np.random.Generator, den: int = 64) -> LevelKernel:
    """Doubly stochastic kernel on a dyadic grid; increasing roughly half of the time."""
    k = random_averaging(rng, den)
    for _ in range(int(rng.integers(0, 2))):
        k = k.compose(random_averaging(rng, den))
    if rng.random() < 0.5:
        k = k.compose(block_permutation(rng)) if rng.random() < 0.5 else block_permutation(rng).compose(k)
    return k


def random_decreasing(rng: np.random.Generator, cells: int = 8) -> LevelDensity:
    g = np.concatenate([[0.0], np.sort(rng.random(cells - 1)), [1.0]])
    v = np.sort(rng.random(cells) + 1e-3)[::-1]
    th = LevelDensity(g, v)
    return LevelDensity(g, v / th.mass)


def _level_points(*objs) -> np.ndarray:
    pts = [np.linspace(0, 1, 33)]
    for o in objs:
        g = getattr(o, "grid", None)
        if g is not None:
            pts.append(np.asarray(g))
    return np.unique(np.concatenate(pts))


def _real_table_diff(P, Q, xs, ys) -> float:
    return float(np.max(np.abs(np.asarray(P.cdf_table(xs, ys)) - np.asarray(Q.cdf_table(xs, ys)))))


def _atomic_sets(ctx: Context) -> list:
    return [ctx.family.atomic_levels(t) for t in ctx.times]


def _ok(flag: bool, detail: str = "") -> tuple:
    return bool(flag), detail


# measure


def _rounding_scale(mu: RealMeasure, F: np.ndarray, x: np.ndarray) -> np.ndarray:
    """How far a few ulps of rounding in the level ``F`` can move the quantile."""
    k = np.clip(np.searchsorted(mu.levels, F, side="left") - 1, 0, mu.n_pieces - 1)
    slope = (mu.hi[k] - mu.lo[k]) / (mu.levels[k + 1] - mu.levels[k])
    return 1.0 + np.abs(x) + slope * 1e-3


@prop("measure.section_identity")
def _section_identity(ctx):
    worst = 0.0
    for mu in ctx.marginals():
        xs = _thresholds(mu, cap=64)
        F = np.atleast_1d(mu.cdf(xs))
        pos = F > 0
        q = np.atleast_1d(mu.quantile(F[pos]))
        worst = max(worst, float(np.max((q - xs[pos]) / _rounding_scale(mu, F[pos], xs[pos]), initial=0.0)))
        u = 1.0 - ctx.rng.random(200)
        x = np.atleast_1d(mu.quantile(u))
        Fx = np.atleast_1d(mu.cdf(x))
        back = np.atleast_1d(mu.quantile(Fx))
        worst = max(worst, float(np.max(np.abs(back - x) / _rounding_scale(mu, Fx, x))))
    return _ok(worst <= 1e-12, f"max scaled violation {worst:.3g}")


@prop("measure.pushforward_dkw")
def _pushforward(ctx):
    n = 10_000
    eps = math.sqrt(math.log(2 / (1 - DKW_CONFIDENCE)) / (2 * n))
    worst = 0.0
    for mu in ctx.marginals():
        x = np.sort(np.atleast_1d(mu.quantile(1.0 - ctx.rng.random(n))))
        hi = np.searchsorted(x, x, side="right") / n
        lo = np.searchsorted(x, x, side="left") / n
        d = max(np.max(np.abs(hi - np.atleast_1d(mu.cdf(x)))),
                np.max(np.abs(lo - np.atleast_1d(mu.cdf_left(x)))))
        worst = max(worst, float(d))
    return _ok(worst <= eps, f"max deviation {worst:.3g}, bound {eps:.3g}")


def _measure_pool(ctx, extra: int = 4) -> list:
    return ctx.marginals() + [random_measure(ctx.rng) for _ in range(extra)]


def _w1(a: RealMeasure, b: RealMeasure) -> float:
    """Exact integral of |G_a - G_b| over levels."""
    g = np.union1d(a.levels, b.levels)
    (l0, r0), (l1, r1) = a.values_on(g), b.values_on(g)
    d0, d1 = l0 - l1, r0 - r1
    w = np.diff(g)
    same = d0 * d1 >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = (d0 * d0 + d1 * d1) / (2 * np.abs(d0 - d1))
    return float(np.sum(w * np.where(same, 0.5 * np.abs(d0 + d1), np.nan_to_num(cross))))


def _order_slack(a: RealMeasure, b: RealMeasure) -> float:
    # mutual order holds up to 1e-9 in value and REPR_TOL per piece in level
    span = max(a.hi[-1], b.hi[-1]) - min(a.lo[0], b.lo[0])
    return 2e-9 + 2 * span * (a.n_pieces + b.n_pieces) * REPR_TOL


@prop("measure.sto_partial_order")
def _sto_order(ctx):
    pool = _measure_pool(ctx)
    pool += [stosup(pool[:2]), stoinf(pool[:2])]
    bad = 0
    for a in pool:
        bad += not sto_leq(a, a)
        for b in pool:
            if sto_leq(a, b) and sto_leq(b, a) and _w1(a, b) > _order_slack(a, b):
                bad += 1
            if sto_leq(a, b):
                bad += sum(1 for c in pool if sto_leq(b, c) and not sto_leq(a, c))
    return _ok(bad == 0, f"{bad} violations over {len(pool)} measures")


@prop("measure.stosup_lub")
def _stosup_lub(ctx):
    pool = _measure_pool(ctx)
    bad = 0
    for _ in range(20):
        idx = ctx.rng.choice(len(pool), int(ctx.rng.integers(1, 4)), replace=False)
        S = [pool[i] for i in idx]
        sup, inf = stosup(S), stoinf(S)
        bad += sum(not sto_leq(m, sup) for m in S) + sum(not sto_leq(inf, m) for m in S)
        extra = random_measure(ctx.rng)
        bad += not sto_leq(sup, stosup(S + [extra]))
        bad += not sto_leq(stoinf(S + [extra]), inf)
    return _ok(bad == 0, f"{bad} violations")


@prop("measure.w2_metric")
def _w2_metric(ctx):
    pool = _measure_pool(ctx)
    worst = 0.0
    for _ in range(30):
        a, b, c = (pool[i] for i in ctx.rng.choice(len(pool), 3))
        worst = max(worst, w2(a, c) - w2(a, b) - w2(b, c), abs(w2(a, b) - w2(b, a)), w2(a, a))
    return _ok(worst <= 1e-12, f"max violation {worst:.3g}")


@prop("measure.atom_partition")
def _atom_partition(ctx):
    worst = 0.0
    for mu in ctx.marginals():
        atoms = mu.atoms()
        ivs = mu.atom_intervals()
        worst = max(worst, float(abs(len(atoms) - len(ivs))))
        for a, (lo, hi) in zip(atoms, ivs):
            worst = max(worst, abs(a.level_interval[0] - lo), abs(a.level_interval[1] - hi),
                        abs((hi - lo) - a.weight))
        seg = float(np.sum(mu.masses[mu.hi > mu.lo]))
        worst = max(worst, abs(sum(a.weight for a in atoms) + seg - 1.0))
    return _ok(worst <= 1e-12, f"max violation {worst:.3g}")


# kernel


@prop("kernel.closure")
def _closure(ctx):
    bad = 0
    for _ in range(20):
        k1, k2 = random_kernel(ctx.rng), random_kernel(ctx.rng)
        c = k1.compose(k2)
        t = k1.transpose()
        bad += not (isinstance(c, LevelKernel) and isinstance(t, LevelKernel))
        cc = c.canonical()
        bad += not (np.array_equal(cc.grid, c.grid) and np.array_equal(cc.dens, c.dens))
    return _ok(bad == 0, f"{bad} violations")


@prop("kernel.stationarity_composition")
def _stationarity(ctx):
    worst = 0.0
    u = np.linspace(0, 1, 65)
    for _ in range(20):
        k = random_kernel(ctx.rng).compose(random_kernel(ctx.rng))
        worst = max(worst, float(np.max(np.abs(k.apply(LevelDensity.uniform()).cdf(u) - u))))
    return _ok(worst <= 1e-12, f"max deviation {worst:.3g}")


def _increasing_closure_count(rng, n: int) -> tuple[int, int]:
    bad = tested = 0
    for _ in range(n):
        k1, k2 = random_kernel(rng), random_kernel(rng)
        if increasing_kernel(k1) and increasing_kernel(k2):
            tested += 1
            bad += not increasing_kernel(k1.compose(k2))
    return bad, tested


@prop("kernel.increasing_closure")
def _increasing_closure(ctx):
    bad, tested = _increasing_closure_count(ctx.rng, 200)
    return _ok(bad == 0, f"{bad} failures over {tested} increasing pairs")


def transpose_preserves_decreasing(k: LevelKernel, tol: float = 1e-9) -> bool:
    """Whether the transpose of ``k`` maps the indicators of [0, u] to decreasing densities.

    Decreasing densities are mixtures of such indicators, so cell ends and
    midpoints of ``k`` are enough.
    """
    kt = k.transpose()
    us = np.unique(np.concatenate([k.grid[1:], 0.5 * (k.grid[:-1] + k.grid[1:])]))
    return all(kt.apply(LevelDensity.indicator(0.0, u)).is_decreasing(tol) for u in us)


@prop("kernel.decreasing_preservation")
def _decreasing_preservation(ctx):
    bad = n_inc = 0
    for _ in range(40):
        k = random_kernel(ctx.rng)
        inc = increasing_kernel(k)
        n_inc += inc
        bad += inc != transpose_preserves_decreasing(k)
    return _ok(bad == 0, f"{bad} disagreements, {n_inc}/40 increasing")


@prop("kernel.rho_contraction")
def _rho_contraction(ctx):
    worst = -math.inf
    for _ in range(20):
        R = random_averaging(ctx.rng).compose(random_averaging(ctx.rng))
        P, Q = random_kernel(ctx.rng), random_kernel(ctx.rng)
        base = rho(LevelCoupling(P), LevelCoupling(Q))
        left = rho(LevelCoupling(R.compose(P)), LevelCoupling(R.compose(Q)))
        right = rho(LevelCoupling(P.compose(R)), LevelCoupling(Q.compose(R)))
        worst = max(worst, left - base, right - base)
    return _ok(worst <= 1e-12, f"max excess {worst:.3g}")


@prop("kernel.catenation_continuity")
def _catenation(ctx):
    a, b = 0.25, 0.5
    k = LevelKernel.averaging([(a, b)])
    other = random_averaging(ctx.rng)
    rates, bad = [], 0
    for n in range(2, 12, 2):
        kn = LevelKernel.averaging([(a, b + 2.0 ** -n)])
        d = rho(LevelCoupling(kn.compose(other)), LevelCoupling(k.compose(other)))
        bad += d > rho(LevelCoupling(kn), LevelCoupling(k)) + 1e-12
        rates.append(d)
    ok = bad == 0 and rates[-1] <= 1e-3 and all(np.diff(rates) <= 1e-15)
    return _ok(ok, "rho by n: " + ", ".join(f"{r:.2e}" for r in rates))


@prop("kernel.quantile_algebra")
def _quantile_algebra(ctx):
    worst = 0.0
    for s, r, t in _triples(ctx) or [tuple(ctx.times[:1] * 3)]:
        mus, mur, mut = (ctx.family.marginal(x) for x in (s, r, t))
        xs, ys = _thresholds(mus, 16), _thresholds(mut, 16)
        glued = compose_real(quantile_coupling(mus, mur), quantile_coupling(mur, mut))
        through = RealCoupling(mus, mut, LevelCoupling(ell_of(ctx.family.atomic_levels(r))))
        worst = max(worst, _real_table_diff(glued, through, xs, ys))
        xr = _thresholds(mur, 16)
        diag = np.atleast_1d(mur.cdf(np.minimum.outer(xr, xr).ravel())).reshape(xr.size, xr.size)
        worst = max(worst, float(np.max(np.abs(quantile_coupling(mur, mur).cdf_table(xr, xr) - diag))))
    return _ok(worst <= 1e-12, f"max deviation {worst:.3g}")


def hoeffding_frechet_gap(mu: RealMeasure, nu: RealMeasure, m: int = 64) -> float:
    lo = min(mu.support()[0], nu.support()[0]) - 0.5
    hi = max(mu.support()[1], nu.support()[1]) + 0.5
    xs = np.linspace(lo, hi, m)
    F = quantile_coupling(mu, nu).cdf_table(xs, xs)
    return float(np.max(np.abs(F - np.minimum.outer(mu.cdf(xs), nu.cdf(xs)))))


@prop("kernel.hoeffding_frechet")
def _hoeffding(ctx):
    pool = _measure_pool(ctx)
    worst = max(hoeffding_frechet_gap(pool[i], pool[j])
                for i, j in ctx.rng.choice(len(pool), (20, 2)))
    return _ok(worst <= 1e-12, f"max deviation {worst:.3g}")


@prop("kernel.fd_cdf_pairs")
def _fd_pairs(ctx):
    triples = _triples(ctx)
    if not triples:
        return None, "needs three times"
    worst = 0.0
    for s, r, t in triples:
        mus, mur, mut = (ctx.family.marginal(x) for x in (s, r, t))
        P = RealCoupling(mus, mur, LevelCoupling(random_kernel(ctx.rng)))
        Q = RealCoupling(mur, mut, LevelCoupling(random_kernel(ctx.rng)))
        for x in _thresholds(mus, 6):
            for y in _thresholds(mur, 6):
                worst = max(worst, abs(fd_cdf(MarkovChainLaw(None, [P]), [x, y]) - P.cdf(x, y)))
        PQ = compose_real(P, Q)
        worst = max(worst, float(np.max(np.abs(
            _catenated_table(P, Q, _thresholds(mus, 6), _thresholds(mut, 6))
            - PQ.cdf_table(_thresholds(mus, 6), _thresholds(mut, 6))))))
    return _ok(worst <= 1e-12, f"max deviation {worst:.3g}")


# levels


@prop("levels.idempotence")
def _idempotence(ctx):
    worst = 0.0
    sets = [A for A in _atomic_sets(ctx) if not A.empty]
    sets += [type(sets[0])(tuple(random_intervals(ctx.rng))) if sets else None]
    for A in filter(None, sets):
        if A.empty:
            continue
        k = ell_of(A)
        kk = k.compose(k)
        if kk.grid.size != k.grid.size:
            return _ok(False, "grids differ")
        # densities on very thin cells are huge, so compare relative to each entry
        rel = np.abs(kk.dens - k.dens) / np.maximum(1.0, np.abs(k.dens))
        worst = max(worst, float(np.max(rel)), float(np.max(np.abs(kk.ident - k.ident))))
    return _ok(worst <= 1e-12, f"max relative deviation {worst:.3g}")


def _random_subset(ctx, items: list, k: int | None = None) -> list:
    if not items:
        return []
    k = int(ctx.rng.integers(0, len(items) + 1)) if k is None else k
    idx = np.sort(ctx.rng.choice(len(items), min(k, len(items)), replace=False))
    return [items[i] for i in idx]


@prop("levels.lambda_invariance")
def _lambda_inv(ctx):
    sets = _atomic_sets(ctx)
    worst = 0.0
    for _ in range(10):
        L = level_coupling_of(_random_subset(ctx, sets))
        out = L.kernel.apply(LevelDensity.uniform())
        u = _level_points(out)
        worst = max(worst, float(np.max(np.abs(out.cdf(u) - u))))
    return _ok(worst <= 1e-12, f"max deviation {worst:.3g}")


@prop("levels.monotone_in_R")
def _monotone_R(ctx):
    sets = _atomic_sets(ctx)
    bad = 0
    for _ in range(200):
        big = _random_subset(ctx, list(range(len(sets))))
        small = _random_subset(ctx, big)
        th = random_decreasing(ctx.rng)
        a = AveragingChain([sets[i] for i in small]).apply(th)
        b = AveragingChain([sets[i] for i in big]).apply(th)
        u = _level_points(a, b)
        bad += np.any(a.cdf(u) < b.cdf(u) - 1e-12)
    return _ok(bad == 0, f"{bad} failures in 200 cases")


@prop("levels.order_bound")
def _order_bound(ctx):
    sets = _atomic_sets(ctx)
    bad = 0
    for _ in range(10):
        big = _random_subset(ctx, list(range(len(sets))))
        small = _random_subset(ctx, big)
        Lb = level_coupling_of([sets[i] for i in big])
        Ls = level_coupling_of([sets[i] for i in small])
        bad += not lo_leq(Ls, Lb) or not lo_leq(Lb, LevelCoupling.product())
    return _ok(bad == 0, f"{bad} failures")


@prop("levels.decreasing_stability")
def _decreasing_stab(ctx):
    sets = _atomic_sets(ctx)
    bad = 0
    for _ in range(100):
        th = random_decreasing(ctx.rng)
        out = AveragingChain(_random_subset(ctx, sets)).apply(th)
        u = _level_points(th, out)
        bad += not out.is_decreasing() or np.any(th.cdf(u) < out.cdf(u) - 1e-12)
    return _ok(bad == 0, f"{bad} failures in 100 cases")


@prop("levels.split_composition")
def _split(ctx):
    sets = _atomic_sets(ctx)
    worst, detail = 0.0, []
    for c in range(1, len(sets)):
        L = level_coupling_of(sets)
        try:
            k = level_coupling_of(sets[:c]).kernel.materialize().compose(
                level_coupling_of(sets[c:]).kernel.materialize())
        except CapacityError:
            continue
        worst = max(worst, rho(L, LevelCoupling(k)))
    detail.append(f"finite: {worst:.3g}")
    ok = worst <= 1e-9
    if not ctx.exact and len(ctx.times) >= 3:
        f = ctx.family
        s, t, u = ctx.times[0], ctx.times[len(ctx.times) // 2], ctx.times[-1]
        whole = L_interval(f, (s, u), tol=ctx.tol, metric="real")
        left = L_interval(f, (s, t), tol=ctx.tol, metric="real")
        right = L_interval(f, (t, u), tol=ctx.tol, metric="real")
        mid = level_coupling_of([f.atomic_levels(t)])
        glued = product_of(left, mid, right)
        mus, muu = f.marginal(s), f.marginal(u)
        d = rho(RealCoupling(mus, muu, whole), RealCoupling(mus, muu, glued))
        detail.append(f"refined: {d:.3g}")
        ok &= d <= ctx.coupling_tol
    return _ok(ok, ", ".join(detail))


@prop("levels.essential_times_finite")
def _essential_count(ctx):
    f = ctx.family
    if ctx.exact:
        def in_union(r):
            return r in set(f.times.tolist())
        cands = list(ctx.times)
    else:
        lo, hi = f.domain

        def in_union(r):
            # dyadic grids are nested, so every refinement union lies in the dyadic points
            k = (r - lo) / (hi - lo) * 2 ** 20
            return r in f.anchors or abs(k - round(k)) < 1e-6
        cands = sorted(set(f.anchors) | {lo + (k + 0.37) * (hi - lo) / 4 for k in range(4)})
    # essential times move the coupling by O(1); a coarse threshold separates them
    etol = ctx.tol if ctx.exact else max(ctx.tol, 1e-3)
    found, undecided = [], 0
    ts = sorted(set(cands) | set(ctx.times))
    for r in cands:
        below = [x for x in ts if x < r]
        above = [x for x in ts if x > r]
        if not below or not above:
            continue
        try:
            e = essential(f, r, (below[-1], above[0]), tol=etol, work_budget=1e6)
        except NoConvergence:
            e = Indeterminate
        if e is Indeterminate:
            undecided += 1
        elif e:
            found.append(r)
    if undecided == len(cands):
        return None, "no candidate time could be decided within the work budget"
    stray = [r for r in found if not in_union(r)]
    return _ok(not stray, f"essential {found}, undecided {undecided}, outside refinement {stray}, "
                         f"threshold {etol:g}")


# mq


def _catenated_table(P, Q, xs, zs) -> np.ndarray:
    big = P.right.support()[1] + 1.0
    chain = MarkovChainLaw(None, [P, Q])
    return np.array([[fd_cdf(chain, [x, big, z]) for z in zs] for x in xs])


@prop("mq.chapman_kolmogorov")
def _ck(ctx):
    worst = 0.0
    triples = _triples(ctx)
    if not triples:
        return None, "needs three times"
    for s, t, u in triples:
        f = ctx.family
        P, Q = mq_coupling(f, s, t, ctx.tol), mq_coupling(f, t, u, ctx.tol)
        PQ = mq_coupling(f, s, u, ctx.tol)
        xs, zs = _thresholds(P.left), _thresholds(Q.right)
        worst = max(worst, float(np.max(np.abs(_catenated_table(P, Q, xs, zs) - PQ.cdf_table(xs, zs)))))
    return _ok(worst <= ctx.coupling_tol, f"max deviation {worst:.3g}")


def lazy_increasing(L: LevelCoupling, tol: float = 1e-9, m: int = 256) -> bool:
    """Increasing kernel test through the cdf: ``u -> F(u, v)`` must be concave for every v."""
    u = np.unique(np.concatenate([np.linspace(0, 1, m + 1), L.kernel.grid]))
    F = L.cdf_table(u, u)
    slope = np.diff(F, axis=0) / np.diff(u)[:, None]
    return bool(np.all(np.diff(slope, axis=0) <= tol / np.min(np.diff(u))))


@prop("mq.increasing_kernels")
def _mq_increasing(ctx):
    bad = 0
    pairs = _pairs(ctx)
    for s, t in pairs:
        L = mq_coupling(ctx.family, s, t, ctx.tol).level
        bad += not (increasing_kernel(L.kernel) if L.exact else lazy_increasing(L))
    return _ok(bad == 0, f"{bad} non-increasing out of {len(pairs)}")


def _times_between(ctx, s, t) -> list[float]:
    f = ctx.family
    if ctx.exact:
        return [float(r) for r in f.times if s < r < t]
    return [r for r in dyadic_times(f, TimeInterval.open(s, t), 3)]


@prop("mq.supremum")
def _mq_sup(ctx):
    bad = tested = 0
    for s, t in _pairs(ctx):
        M = mq_coupling(ctx.family, s, t, ctx.tol)
        inner = _times_between(ctx, s, t)
        for _ in range(5):
            R = _random_subset(ctx, inner)
            Q = pair_coupling(ProcessHandle.made_markov_at(ctx.family, R), s, t)
            tested += 1
            bad += not lo_leq(Q, M, tol=ctx.coupling_tol)
    return _ok(bad == 0, f"{bad} failures in {tested}")


@prop("mq.minimality")
def _mq_min(ctx):
    bad = 0
    pairs = _pairs(ctx)
    for s, t in pairs:
        M = mq_coupling(ctx.family, s, t, ctx.tol)
        bad += not lo_leq(M, RealCoupling(M.left, M.right, LevelCoupling.product()), tol=ctx.coupling_tol)
    return _ok(bad == 0, f"{bad} failures in {len(pairs)}")


@prop("mq.time_reversal")
def _reversal(ctx):
    rev = time_reversed(ctx.family)
    worst = 0.0
    for s, t in _pairs(ctx):
        P = mq_coupling(ctx.family, s, t, ctx.tol)
        Pr = mq_coupling(rev, -t, -s, ctx.tol)
        xs, ys = _thresholds(P.left), _thresholds(P.right)
        worst = max(worst, float(np.max(np.abs(P.cdf_table(xs, ys) - Pr.cdf_table(ys, xs).T))))
    return _ok(worst <= ctx.coupling_tol, f"max deviation {worst:.3g}")


@prop("mq.monotone_marginals")
def _monotone(ctx):
    ms = ctx.marginals()
    if not all(sto_leq(a, b) for a, b in zip(ms[:-1], ms[1:])):
        return None, "marginals are not stochastically increasing"
    worst = 0.0
    for s, t in _pairs(ctx):
        P = mq_coupling(ctx.family, s, t, ctx.tol)
        ys = np.unique(np.concatenate([_thresholds(P.left, 32), _thresholds(P.right, 32)]))
        # P(Y <= y < X) = F_t(y) - F(y, y)
        worst = max(worst, float(np.max(np.atleast_1d(P.right.cdf(ys)) - np.diag(P.cdf_table(ys, ys)))))
    e = simulate(ctx.handle(), ctx.times, 2000, ctx.seed)
    drops = int(np.sum(np.diff(e.paths, axis=1) < -1e-12))
    return _ok(worst <= ctx.coupling_tol and drops == 0, f"mass below diagonal {worst:.3g}, path drops {drops}")


def empirical_pair_cdf(x: np.ndarray, y: np.ndarray, xs, ys) -> np.ndarray:
    a = (x[:, None] <= np.asarray(xs)[None, :]).astype(float)
    b = (y[:, None] <= np.asarray(ys)[None, :]).astype(float)
    return a.T @ b / x.size


@prop("mq.simulation_consistency")
def _sim_consistency(ctx):
    worst = 0.0
    for s, t in _pairs(ctx, 1):
        grid = [s] + _times_between(ctx, s, t)[:0] + [t]
        e = simulate(ctx.handle(), grid, 100_000, ctx.seed)
        P = mq_coupling(ctx.family, s, t, ctx.tol)
        xs, ys = _thresholds(P.left), _thresholds(P.right)
        emp = empirical_pair_cdf(e.paths[:, 0], e.paths[:, -1], xs, ys)
        worst = max(worst, float(np.max(np.abs(emp - P.cdf_table(xs, ys)))))
    return _ok(worst <= 0.01, f"max deviation {worst:.3g}")


@prop("mq.markov")
def _markov(ctx):
    triples = _triples(ctx, 1)
    if not triples:
        return None, "needs three times"
    r = markov_check(ctx.handle(), triples[0], tol=ctx.coupling_tol)
    return _ok(r.passed, f"deviation {r.deviation:.3g}")


# action


def _partition_pool(ctx) -> list[float]:
    if ctx.exact:
        return list(ctx.times)
    lo, hi = ctx.family.domain
    return sorted(set(ctx.times) | set(float(x) for x in lo + (hi - lo) * ctx.rng.random(6)))


@prop("action.refinement_monotone")
def _energy_monotone(ctx):
    pool = _partition_pool(ctx)
    if len(pool) < 2:
        return None, "needs two times"
    bad = 0
    for _ in range(20):
        fine = [pool[0]] + _random_subset(ctx, pool[1:-1]) + [pool[-1]]
        coarse = [fine[0]] + _random_subset(ctx, fine[1:-1]) + [fine[-1]]
        bad += energy(ctx.family, fine) < energy(ctx.family, coarse) * (1 - 1e-12) - 1e-12
    return _ok(bad == 0, f"{bad} failures")


@prop("action.chasles")
def _chasles(ctx):
    pool = _partition_pool(ctx)
    if len(pool) < 3:
        return None, "needs three times"
    worst = 0.0
    for i in range(1, len(pool) - 1):
        whole = energy(ctx.family, pool)
        parts = energy(ctx.family, pool[:i + 1]) + energy(ctx.family, pool[i:])
        worst = max(worst, abs(whole - parts) / max(1.0, abs(whole)))
    return _ok(worst <= 1e-12, f"max relative deviation {worst:.3g}")


@prop("action.lower_bound")
def _lower_bound(ctx):
    grid = ctx.times
    if len(grid) < 2:
        return None, "needs two times"
    E = energy(ctx.family, grid)
    n = 4000
    ens = {"quantile": simulate(ProcessHandle.quantile(ctx.family), grid, n, ctx.seed),
           "mq": simulate(ctx.handle(), grid, n, ctx.seed),
           "disp": disp_ensemble(ctx.family, grid, n, ctx.seed)}
    worst, out = 0.0, []
    for name, e in ens.items():
        a = action(e)
        worst = max(worst, E - a.value - 3 * a.sigma)
        out.append(f"{name} {a.value:.6g}")
    return _ok(worst <= 1e-9 * max(1.0, E), f"energy {E:.6g}; " + ", ".join(out))


@prop("action.made_markov_preservation")
def _made_markov(ctx):
    grid = ctx.times
    if len(grid) < 3:
        return None, "needs three times"
    R = [grid[len(grid) // 2]]
    n = 20_000
    a = action(simulate(ProcessHandle.made_markov_at(ctx.family, R), grid, n, ctx.seed))
    b = action(simulate(ProcessHandle.quantile(ctx.family), grid, n, ctx.seed + 1))
    bound = 4 * math.hypot(a.sigma, b.sigma) + 1e-9 * max(1.0, abs(b.value))
    return _ok(abs(a.value - b.value) <= bound,
               f"made Markov {a.value:.6g}, quantile {b.value:.6g}, bound {bound:.3g}")


@prop("action.disp_convergence")
def _disp_conv(ctx):
    pairs = _pairs(ctx, 1)
    if not pairs:
        return None, "needs two times"
    s, t = pairs[0]
    if ctx.exact:
        R = [s] + _times_between(ctx, s, t) + [t]
    else:
        R = list(np.linspace(s, t, 2 ** 5 + 1))
    P = mq_coupling(ctx.family, s, t, ctx.tol)
    e = disp_ensemble(ctx.family, R, 50_000, ctx.seed)
    xs, ys = _thresholds(P.left), _thresholds(P.right)
    d = float(np.max(np.abs(empirical_pair_cdf(e.paths[:, 0], e.paths[:, -1], xs, ys) - P.cdf_table(xs, ys))))
    return _ok(d <= 0.03, f"rho {d:.3g} on {len(R) - 1} steps")


# oracle


@prop("oracle.functoriality")
def _functoriality(ctx):
    N = 256
    worst = 0.0
    for _ in range(10):
        k1, k2 = random_kernel(ctx.rng), random_kernel(ctx.rng)
        lhs = oracle_kernel(k1.compose(k2), N).matrix
        rhs = oracle_kernel(k1, N).then(oracle_kernel(k2, N)).matrix
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return _ok(worst <= 1e-12, f"max deviation {worst:.3g}")


@prop("oracle.transpose")
def _oracle_transpose(ctx):
    N = 256
    worst = 0.0
    for _ in range(10):
        k = random_kernel(ctx.rng)
        worst = max(worst, float(np.max(np.abs(oracle_kernel(k.transpose(), N).matrix
                                               - oracle_kernel(k, N).transpose().matrix))))
    return _ok(worst <= 1e-12, f"max deviation {worst:.3g}")


@prop("oracle.fd_cdf")
def _oracle_fd(ctx):
    N = 256
    worst = 0.0
    for _ in range(10):
        k1, k2 = random_kernel(ctx.rng), random_kernel(ctx.rng)
        us = [float(x) for x in ctx.rng.integers(0, N + 1, 3) / N]
        exact = fd_cdf(MarkovChainLaw(None, [LevelCoupling(k1), LevelCoupling(k2)]), us)
        approx = oracle_fd_cdf([oracle_kernel(k1, N), oracle_kernel(k2, N)], us)
        worst = max(worst, abs(exact - approx))
    return _ok(worst <= 1e-9, f"max deviation {worst:.3g}")


@prop("oracle.family_product")
def _oracle_family(ctx):
    N = 1024
    sets = [A for A in _atomic_sets(ctx) if not A.empty]
    try:
        O = oracle_product(sets, N)
    except GridMisaligned:
        return None, f"breakpoints not aligned to {N} bins"
    L = level_coupling_of(sets)
    try:
        k = L.kernel.materialize()
    except CapacityError:
        return None, "product too large to materialize"
    u = np.arange(N + 1) / N
    d = float(np.max(np.abs(k.cdf_table(u, u) - BinKernel(O.matrix, check=False).corner_cdf())))
    return _ok(d <= 1e-9, f"max corner deviation {d:.3g}")


# cli


@prop("cli.determinism")
def _determinism(ctx):
    from .cli import main

    pairs = _pairs(ctx, 1)
    if not pairs:
        return None, "needs two times"
    s, t = pairs[0]
    spec = json.dumps(ctx.family.to_json())
    argv = ["coupling", "--family", spec, "--s", repr(s), "--t", repr(t), "--tol", repr(ctx.tol)]
    outs = []
    for _ in range(2):
        buf, err = io.StringIO(), io.StringIO()
        with redirect_stdout(buf), redirect_stderr(err):
            code = main(argv)
        outs.append((code, buf.getvalue(), err.getvalue()))
    # a refinement that does not converge must fail the same way twice
    code, text, diag = outs[0]
    return _ok(outs[0] == outs[1] and code in (0, 1),
               f"exit {code}, {len(text)} bytes, {len(diag)} bytes of diagnostics")


MANIFEST = tuple(PROPERTIES)


def run_checks(family: MarginalFamily, seed: int = 0, tol: float = 1e-6,
               only: list[str] | None = None) -> list[PropertyResult]:
    """Run the properties (all, or those whose name starts with an entry of ``only``)."""
    out = []
    for name, fn in PROPERTIES.items():
        if only and not any(name.startswith(o) for o in only):
            continue
        try:
            ok, detail = fn(Context(family, seed, tol))
        except NoConvergence as exc:
            if tol >= COARSE_TOL:
                out.append(PropertyResult(name, "skip", f"refinement did not converge: {exc}"))
                continue
            # first-order refinements cannot reach fine tolerances at desk scale
            try:
                ok, detail = fn(Context(family, seed, COARSE_TOL))
            except NoConvergence as exc2:
                out.append(PropertyResult(name, "skip", f"refinement did not converge: {exc2}"))
                continue
            detail = f"{detail} (refinement tolerance {COARSE_TOL:g}; {tol:g} not reached: {exc})"
        status = "skip" if ok is None else ("pass" if ok else "fail")
        out.append(PropertyResult(name, status, detail))
    return out
