"""Quantile, made-Markov and Markov-quantile processes of a family of marginals."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .families import MarginalFamily, TimeInterval
from .kernel import (LengthMismatch, LevelCoupling, LevelDensity, MarkovChainLaw, RealCoupling,
                     fd_cdf)
from .levels import AveragingChain, L_interval, level_coupling_of
from .measure import REPR_TOL
from .rng import uniforms


class ZeroMass(ValueError):
    pass


QUANTILE, MADE_MARKOV, MARKOV_QUANTILE = "quantile", "markov_at", "mq"


@dataclass(frozen=True)
class ProcessHandle:
    """A process with the marginals of ``family``.

    ``kind`` is "quantile" (one level for all times), "markov_at" (quantile
    process whose level is resampled by the atomic averaging at each time of
    ``R``) or "mq" (Markov-quantile).  ``tol`` and ``depth`` control how
    interval couplings of parametric families are refined.
    """

    family: MarginalFamily
    kind: str = MARKOV_QUANTILE
    R: tuple = ()
    tol: float = 1e-6
    depth: int | None = None

    def __post_init__(self):
        if self.kind not in (QUANTILE, MADE_MARKOV, MARKOV_QUANTILE):
            raise ValueError(f"unknown process kind {self.kind!r}")
        object.__setattr__(self, "R", tuple(sorted(float(r) for r in self.R)))
        lo, hi = self.family.domain
        if any(r < lo or r > hi for r in self.R):
            raise ValueError("times of R must lie in the family domain")

    @staticmethod
    def quantile(family) -> "ProcessHandle":
        return ProcessHandle(family, QUANTILE)

    @staticmethod
    def made_markov_at(family, R) -> "ProcessHandle":
        return ProcessHandle(family, MADE_MARKOV, tuple(R))

    @staticmethod
    def markov_quantile(family, tol: float = 1e-6, depth: int | None = None) -> "ProcessHandle":
        return ProcessHandle(family, MARKOV_QUANTILE, tol=tol, depth=depth)


def mq_level(family: MarginalFamily, s: float, t: float, tol: float = 1e-6,
             depth: int | None = None) -> LevelCoupling:
    """Level coupling over the open time interval ]s, t[."""
    if not s < t:
        raise ValueError("need s < t")
    return L_interval(family, TimeInterval.open(s, t), tol=tol, depth=depth, metric="real")


def mq_coupling(family: MarginalFamily, s: float, t: float, tol: float = 1e-6,
                depth: int | None = None) -> RealCoupling:
    """Pair coupling of the Markov-quantile process between times s < t."""
    return RealCoupling(family.marginal(s), family.marginal(t), mq_level(family, s, t, tol, depth))


def _step_level(p: ProcessHandle, s: float, t: float, junction: bool) -> LevelCoupling:
    """Level coupling from time s to time t, including the averaging at s when ``junction``.

    The averaging at s does not change the value at s itself, but it matters
    for what follows once s is an interior time of a longer chain.
    """
    f = p.family
    if p.kind == QUANTILE:
        return level_coupling_of([])
    if p.kind == MADE_MARKOV:
        ts = [r for r in p.R if s < r < t]
        if junction and s in p.R:
            ts = [s] + ts
        return level_coupling_of([f.atomic_levels(r) for r in ts])
    L = mq_level(f, s, t, p.tol, p.depth)
    if not junction:
        return L
    A = f.atomic_levels(s)
    if A.empty:
        return L
    sets = [A] + list(L.info["sets"])
    return level_coupling_of(sets, probe=getattr(L.kernel, "probe", ()))


def pair_coupling(p: ProcessHandle, s: float, t: float) -> RealCoupling:
    return RealCoupling(p.family.marginal(s), p.family.marginal(t), _step_level(p, s, t, False))


def _check_times(times, xs):
    if len(times) != len(xs):
        raise LengthMismatch("times and thresholds differ in length")
    if any(b <= a for a, b in zip(times[:-1], times[1:])):
        raise ValueError("times must increase")


def process_fd_cdf(p: ProcessHandle, times: Sequence[float], xs: Sequence[float]) -> float:
    """P(X_{t_1} <= x_1, ..., X_{t_d} <= x_d)."""
    times = [float(t) for t in times]
    _check_times(times, xs)
    levels = [float(p.family.marginal(t).cdf(x)) for t, x in zip(times, xs)]
    if p.kind == QUANTILE:
        return min(levels)
    steps = [_step_level(p, times[i], times[i + 1], i > 0) for i in range(len(times) - 1)]
    return fd_cdf(MarkovChainLaw(None, steps), levels)


def catenated_fd_cdf(p: ProcessHandle, times: Sequence[float], xs: Sequence[float]) -> float:
    """Same orthant mass for the Markov law glued from the process's own pair couplings."""
    times = [float(t) for t in times]
    _check_times(times, xs)
    steps = [pair_coupling(p, times[i], times[i + 1]) for i in range(len(times) - 1)]
    return fd_cdf(MarkovChainLaw(None, steps), list(xs))


@dataclass
class MarkovCheck:
    passed: bool
    deviation: float
    at: tuple

    def __bool__(self):
        return self.passed


def _thresholds(mu, cap: int = 12) -> np.ndarray:
    pts = np.unique(np.concatenate([mu.lo, mu.hi]))
    mids = 0.5 * (pts[:-1] + pts[1:])
    xs = np.unique(np.concatenate([pts, mids]))
    if xs.size > cap:
        xs = xs[np.unique(np.linspace(0, xs.size - 1, cap).round().astype(int))]
    return xs


def markov_check(p: ProcessHandle, times: Sequence[float], tol: float = 1e-9) -> MarkovCheck:
    """Compare the process with the catenation of its pair couplings on a threshold grid."""
    times = [float(t) for t in times]
    if len(times) < 3:
        raise ValueError("markov_check needs at least three times")
    grids = [_thresholds(p.family.marginal(t)) for t in times]
    worst, at = 0.0, ()
    for xs in itertools.product(*grids):
        d = abs(process_fd_cdf(p, times, xs) - catenated_fd_cdf(p, times, xs))
        if d > worst:
            worst, at = d, tuple(float(x) for x in xs)
    return MarkovCheck(worst <= tol, worst, at)


# simulation


@dataclass
class PathEnsemble:
    grid: np.ndarray
    paths: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    def to_csv(self) -> str:
        lines = [",".join(f"{t:.17g}" for t in self.grid)]
        lines += [",".join(f"{x:.17g}" for x in row) for row in self.paths]
        return "\n".join(lines) + "\n"


class _Draws:
    """Sequential blocks of per-path uniforms."""

    def __init__(self, seed: int, n: int):
        self.seed, self.n, self.block = seed, n, 0

    def __call__(self, _i=None) -> np.ndarray:
        r = uniforms(self.seed, self.block, self.n)
        self.block += 1
        return r


def simulate(p: ProcessHandle, grid: Sequence[float], n: int, seed: int = 0) -> PathEnsemble:
    """Sample ``n`` paths on ``grid`` by stepping levels through the level kernels."""
    grid = np.asarray(grid, dtype=float)
    if n < 1 or grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("need n >= 1 and an increasing grid")
    draws = _Draws(int(seed), int(n))
    u = 1.0 - draws()  # levels in ]0, 1]
    out = np.empty((n, grid.size))
    out[:, 0] = p.family.marginal(grid[0]).quantile(u)
    for i in range(grid.size - 1):
        L = _step_level(p, grid[i], grid[i + 1], i > 0)
        sets = L.info["sets"]
        if sets:
            u = AveragingChain(sets).sample(u, draws)
            u = np.clip(u, np.nextafter(0.0, 1.0), 1.0)
        out[:, i + 1] = p.family.marginal(grid[i + 1]).quantile(u)
    return PathEnsemble(grid, out, int(seed))


# jump rates


@dataclass
class JumpRates:
    up: float
    down: float
    up_empirical: float
    down_empirical: float
    up_raw: float
    down_raw: float


def transition_probability(family: MarginalFamily, t: float, k: int, j: int, h: float,
                           tol: float | None = None, depth: int | None = None) -> float:
    """P(X_{t+h} = j | X_t = k) under the Markov-quantile process of an integer family."""
    mu, nu = family.marginal(t), family.marginal(t + h)
    src = _atom_interval(mu, k)
    if src is None or src[1] - src[0] <= REPR_TOL:
        raise ZeroMass(f"no mass at state {k} at time {t}")
    dst = _atom_interval(nu, j)
    if dst is None:
        return 0.0
    if tol is None:
        tol = min(1e-6, 0.05 * h * h)
    L = mq_level(family, t, t + h, tol, depth)
    theta = L.kernel.apply(LevelDensity.indicator(*src))
    return float((theta.cdf(dst[1]) - theta.cdf(dst[0])) / (src[1] - src[0]))


def _atom_interval(mu, x: float):
    for a in mu.atoms():
        if abs(a.x - x) <= REPR_TOL:
            return a.level_interval
    return None


def _level_derivative(family, t: float, k: int, h: float) -> float:
    d = family.level_derivative(t, k)
    if d is not None:
        return d
    lo, hi = family.domain
    a, b = max(t - h, lo), min(t + h, hi)
    return (float(family.marginal(b).cdf(k)) - float(family.marginal(a).cdf(k))) / (b - a)


def jump_rates(family: MarginalFamily, t: float, k: int, h: float = 1e-3,
               tol: float | None = None) -> JumpRates:
    """Up and down jump rates at state ``k`` and time ``t``.

    The analytic rates use the derivative of the cdf at k and k-1.  The
    empirical ones are MQ transition probabilities over [t, t+h] divided by
    h, extrapolated from steps h and h/2 to cancel the first-order bias.
    """
    mu = family.marginal(t)
    m = float(mu.cdf(k) - mu.cdf_left(k))
    if m <= REPR_TOL:
        raise ZeroMass(f"state {k} has no mass at time {t}")
    up = max(-_level_derivative(family, t, k, h), 0.0) / m
    down = max(_level_derivative(family, t, k - 1, h), 0.0) / m

    def rate(j, hh):
        return transition_probability(family, t, k, j, hh, tol) / hh

    up_h, up_h2 = rate(k + 1, h), rate(k + 1, h / 2)
    dn_h, dn_h2 = rate(k - 1, h), rate(k - 1, h / 2)
    return JumpRates(up, down, 2 * up_h2 - up_h, 2 * dn_h2 - dn_h, up_h, dn_h)
