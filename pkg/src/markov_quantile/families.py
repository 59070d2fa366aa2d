"""Families of marginals indexed by time: explicit lists and parametric builtins."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .measure import REPR_TOL, Atom, RealMeasure, Segment, dirac, from_mixture, make_measure, uniform


class FamilyError(ValueError):
    pass


class NoMarginal(FamilyError):
    pass


class IncompleteFamily(FamilyError):
    pass


@dataclass(frozen=True)
class AtomicLevelSet:
    """Disjoint open level intervals merged by the quantile function at one time."""

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        ivs = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for a, b in ivs:
            if not (0.0 <= a < b <= 1.0):
                raise FamilyError(f"bad level interval ({a}, {b})")
        for (a0, b0), (a1, b1) in zip(ivs[:-1], ivs[1:]):
            if a1 < b0 - REPR_TOL:
                raise FamilyError("level intervals overlap")
        object.__setattr__(self, "intervals", ivs)

    @staticmethod
    def of(mu: RealMeasure) -> "AtomicLevelSet":
        return AtomicLevelSet(tuple(mu.atom_intervals()))

    @property
    def empty(self) -> bool:
        return not self.intervals

    def endpoints(self) -> list[float]:
        return [p for iv in self.intervals for p in iv]

    def same_as(self, other: "AtomicLevelSet", tol: float = REPR_TOL) -> bool:
        if len(self.intervals) != len(other.intervals):
            return False
        return all(abs(a - c) <= tol and abs(b - d) <= tol
                   for (a, b), (c, d) in zip(self.intervals, other.intervals))


@dataclass(frozen=True)
class TimeInterval:
    """Interval of times with open or closed ends; ``lo == hi`` closed is a singleton."""

    lo: float
    hi: float
    lo_closed: bool = False
    hi_closed: bool = False

    @staticmethod
    def open(lo, hi):
        return TimeInterval(float(lo), float(hi), False, False)

    @staticmethod
    def closed(lo, hi):
        return TimeInterval(float(lo), float(hi), True, True)

    @staticmethod
    def point(t):
        return TimeInterval(float(t), float(t), True, True)

    @property
    def is_empty(self) -> bool:
        if self.lo < self.hi:
            return False
        return not (self.lo == self.hi and self.lo_closed and self.hi_closed)

    def contains(self, t: float) -> bool:
        if t < self.lo or t > self.hi:
            return False
        if t == self.lo and not self.lo_closed:
            return False
        if t == self.hi and not self.hi_closed:
            return False
        return True

    def meets_open(self, a: float, b: float) -> bool:
        """Whether the open interval ]a, b[ meets this one."""
        return max(a, self.lo) < min(b, self.hi)


class MarginalFamily:
    """Common interface of time-indexed families of marginals."""

    domain: tuple[float, float] = (-math.inf, math.inf)
    integer_valued: bool = False

    def marginal(self, t: float) -> RealMeasure:
        raise NotImplementedError

    def atomic_levels(self, t: float) -> AtomicLevelSet:
        return AtomicLevelSet.of(self.marginal(t))

    def level_derivative(self, t: float, k: int):
        """Exact derivative of ``t -> F_t(k)`` when known, else None."""
        return None

    def to_json(self) -> dict:
        raise NotImplementedError


class ExplicitFamily(MarginalFamily):
    """Finitely many listed times plus constant laws on the open gaps between them.

    ``points`` holds (time, measure) pairs in increasing time order.  ``gaps``
    has one entry per open gap (before the first time, between consecutive
    times, after the last one); an entry is a measure that holds on the whole
    gap, or None when the gap laws are diffuse and left unspecified.
    """

    def __init__(self, points: Sequence[tuple[float, RealMeasure]], gaps=None,
                 atomic_complete: bool = True):
        pts = [(float(t), m) for t, m in points]
        if not pts:
            raise FamilyError("explicit family needs at least one time")
        ts = [t for t, _ in pts]
        if any(b <= a for a, b in zip(ts[:-1], ts[1:])):
            raise FamilyError("times must be strictly increasing")
        if gaps is None:
            gaps = [None] * (len(pts) + 1)
        gaps = list(gaps)
        if len(gaps) != len(pts) + 1:
            raise FamilyError("need one gap entry per gap (number of times + 1)")
        self.points = pts
        self.times = np.array(ts)
        self.gaps = gaps
        self.atomic_complete = bool(atomic_complete)
        ms = [m for _, m in pts] + [g for g in gaps if g is not None]
        self.integer_valued = all(
            not any(mm.hi > mm.lo) and np.all(mm.lo == np.round(mm.lo)) for mm in ms)

    def marginal(self, t: float) -> RealMeasure:
        t = float(t)
        i = int(np.searchsorted(self.times, t))
        if i < self.times.size and self.times[i] == t:
            return self.points[i][1]
        g = self.gaps[i]
        if g is None:
            raise NoMarginal(f"no marginal recorded at time {t}")
        return g

    def atomic_levels(self, t: float) -> AtomicLevelSet:
        # unspecified gaps are declared diffuse
        try:
            return AtomicLevelSet.of(self.marginal(t))
        except NoMarginal:
            if not self.atomic_complete:
                raise IncompleteFamily("family does not declare atomic completeness") from None
            return AtomicLevelSet()

    def has_marginal(self, t: float) -> bool:
        try:
            self.marginal(t)
            return True
        except NoMarginal:
            return False

    def pieces(self):
        """Time pieces in order: ('gap', lo, hi, measure|None) and ('point', t, measure)."""
        out = []
        lo = -math.inf
        for i, (t, m) in enumerate(self.points):
            out.append(("gap", lo, t, self.gaps[i]))
            out.append(("point", t, t, m))
            lo = t
        out.append(("gap", lo, math.inf, self.gaps[-1]))
        return out

    def atomic_sets_in(self, I: TimeInterval) -> list[AtomicLevelSet]:
        """Atomic level sets of the pieces meeting ``I``, in time order."""
        if not self.atomic_complete:
            raise IncompleteFamily("family does not declare atomic completeness")
        out = []
        if I.is_empty:
            return out
        for kind, lo, hi, m in self.pieces():
            if kind == "point":
                hit = I.contains(lo)
            else:
                hit = I.meets_open(lo, hi)
            if hit and m is not None:
                A = AtomicLevelSet.of(m)
                if not A.empty:
                    out.append(A)
        return out

    def reversed(self) -> "ExplicitFamily":
        pts = [(-t, m) for t, m in reversed(self.points)]
        return ExplicitFamily(pts, list(reversed(self.gaps)), self.atomic_complete)

    def to_json(self) -> dict:
        return {"explicit": {
            "times": [[t, m.to_json()] for t, m in self.points],
            "gaps": [None if g is None else g.to_json() for g in self.gaps],
            "atomic_complete": self.atomic_complete}}

    def __repr__(self):
        return f"ExplicitFamily(times={self.times.tolist()})"


# parametric builtins


def _pwl(knots) -> Callable[[float], float]:
    k = np.asarray(knots, dtype=float)
    if k.ndim != 2 or k.shape[1] != 2 or k.shape[0] < 1:
        raise FamilyError("piecewise-linear knots must be [[t, value], ...]")
    if np.any(np.diff(k[:, 0]) <= 0):
        raise FamilyError("knot times must increase")
    ts, vs = k[:, 0].copy(), k[:, 1].copy()
    return lambda t: float(np.interp(t, ts, vs))


def _truncated_atoms(probs: np.ndarray) -> RealMeasure:
    keep = probs >= REPR_TOL
    xs = np.flatnonzero(keep)
    p = probs[keep]
    p = p / p.sum()
    return make_measure([(float(w), Atom(float(x))) for x, w in zip(xs, p)])


def _poisson_probs(mean: float, K: int) -> np.ndarray:
    if mean <= 0:
        out = np.zeros(K + 1)
        out[0] = 1.0
        return out
    k = np.arange(K + 1)
    logp = -mean + k * math.log(mean) - np.array([math.lgamma(i + 1) for i in k])
    return np.exp(logp)


def _binomial_probs(n: int, p: float) -> np.ndarray:
    k = np.arange(n + 1)
    c = np.array([math.comb(n, int(i)) for i in k], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.nan_to_num(c * p ** k * (1 - p) ** (n - k), nan=0.0)


EXP_CUT = -math.log(REPR_TOL)


def _exp_quantile_knots(m: int = 256):
    """Piecewise-linear quantile of the unit exponential law, cut where the tail is below REPR_TOL."""
    xs = np.linspace(0.0, EXP_CUT, m + 1)
    lv = 1.0 - np.exp(-xs)
    lv = lv / lv[-1]
    return lv, xs


class ParametricFamily(MarginalFamily):
    """Builtin family given by closed-form marginals."""

    def __init__(self, name: str, params: dict, marginal_fn: Callable[[float], RealMeasure],
                 domain: tuple[float, float], anchors: Sequence[float] = (),
                 derivative: Callable[[float, int], float] | None = None,
                 integer_valued: bool = False, diffuse: bool = False):
        self.name = name
        self.params = dict(params)
        self._marginal = marginal_fn
        self.domain = (float(domain[0]), float(domain[1]))
        self.anchors = tuple(sorted(float(a) for a in anchors))
        self._derivative = derivative
        self.integer_valued = integer_valued
        self.diffuse = diffuse
        self._cache: dict = {}

    def marginal(self, t: float) -> RealMeasure:
        t = float(t)
        lo, hi = self.domain
        if t < lo - REPR_TOL or t > hi + REPR_TOL:
            raise NoMarginal(f"time {t} outside the domain [{lo}, {hi}]")
        t = min(max(t, lo), hi)
        m = self._cache.get(("m", t))
        if m is None:
            m = self._marginal(t)
            if len(self._cache) < 200000:
                self._cache[("m", t)] = m
        return m

    def atomic_levels(self, t: float) -> AtomicLevelSet:
        if self.diffuse:
            return AtomicLevelSet()
        key = ("a", float(t))
        a = self._cache.get(key)
        if a is None:
            a = AtomicLevelSet.of(self.marginal(t))
            if len(self._cache) < 200000:
                self._cache[key] = a
        return a

    def level_derivative(self, t: float, k: int):
        return None if self._derivative is None else self._derivative(float(t), int(k))

    def to_json(self) -> dict:
        return {"parametric": {"name": self.name, "params": self.params}}

    def __repr__(self):
        return f"ParametricFamily({self.name!r}, {self.params!r})"


def poisson(rate: float = 1.0, K: int = 40, domain=(0.0, 1.0)) -> ParametricFamily:
    """Poisson laws of mean ``rate * t``, truncated at ``K`` and renormalized."""
    rate, K = float(rate), int(K)

    def marg(t):
        return _truncated_atoms(_poisson_probs(rate * t, K))

    def deriv(t, k):
        # d/dt P(N_t <= k) = -rate * P(N_t = k)
        if k < 0:
            return 0.0
        return -rate * float(_poisson_probs(rate * t, k)[k])

    return ParametricFamily("poisson", {"rate": rate, "K": K, "domain": list(domain)}, marg,
                            domain, derivative=deriv, integer_valued=True)


def binomial(n: int = 5) -> ParametricFamily:
    """Binomial laws B(n, t) for t in [0, 1]."""
    n = int(n)

    def marg(t):
        return _truncated_atoms(_binomial_probs(n, t))

    def deriv(t, k):
        if k < 0 or k >= n:
            return 0.0
        return -n * math.comb(n - 1, k) * t ** k * (1 - t) ** (n - 1 - k)

    return ParametricFamily("binomial", {"n": n}, marg, (0.0, 1.0), derivative=deriv, integer_valued=True)


def two_atom(a) -> ParametricFamily:
    """a(t) delta_0 + (1 - a(t)) delta_1 with a piecewise linear."""
    f = _pwl(a)
    k = np.asarray(a, dtype=float)

    def marg(t):
        w = min(max(f(t), 0.0), 1.0)
        return from_mixture([(0.0, w), (1.0, 1.0 - w)])

    return ParametricFamily("two_atom", {"a": k.tolist()}, marg, (k[0, 0], k[-1, 0]),
                            anchors=k[:, 0], integer_valued=True)


def dirac_path(g) -> ParametricFamily:
    """delta_{g(t)}; ``g`` is [[t, x], ...] knots or {"poly": [c0, c1, ...], "domain": [a, b]}."""
    if isinstance(g, dict):
        coef = [float(c) for c in g["poly"]]
        dom = tuple(g.get("domain", (0.0, 1.0)))
        poly = np.polynomial.Polynomial(coef)

        def marg(t):
            return dirac(float(poly(t)))

        return ParametricFamily("dirac_path", {"g": {"poly": coef, "domain": list(dom)}}, marg, dom)
    f = _pwl(g)
    k = np.asarray(g, dtype=float)
    return ParametricFamily("dirac_path", {"g": k.tolist()}, lambda t: dirac(f(t)),
                            (k[0, 0], k[-1, 0]), anchors=k[:, 0])


def crossing_uniforms() -> ParametricFamily:
    """Two uniform halves moving through each other: 1/2 U[t-2, t-1] + 1/2 U[1-t, 2-t]."""

    def marg(t):
        return from_mixture([], [(t - 2.0, t - 1.0, 0.5), (1.0 - t, 2.0 - t, 0.5)])

    return ParametricFamily("crossing_uniforms", {}, marg, (0.0, 3.0), anchors=(1.0, 1.5, 2.0),
                            diffuse=True)


def atom_over_diffuse() -> ParametricFamily:
    """An atom at 0 crossed by a moving uniform: 1/2 U[t-3/4, t-1/4] + 1/2 delta_0."""

    def marg(t):
        return from_mixture([(0.0, 0.5)], [(t - 0.75, t - 0.25, 0.5)])

    return ParametricFamily("atom_over_diffuse", {}, marg, (0.0, 1.0), anchors=(0.25, 0.75))


def atom_lower_levels(B) -> ParametricFamily:
    """B(t) delta_0 + (1 - B(t)) E, E a piecewise-linear stand-in for the unit exponential."""
    f = _pwl(B)
    k = np.asarray(B, dtype=float)
    lv, xs = _exp_quantile_knots()

    def marg(t):
        b = min(max(f(t), 0.0), 1.0)
        if b >= 1.0:
            return dirac(0.0)
        pieces = [(b, Atom(0.0))] if b > 0 else []
        for i in range(lv.size - 1):
            pieces.append(((1 - b) * (lv[i + 1] - lv[i]), Segment(xs[i], xs[i + 1])))
        return make_measure(pieces)

    return ParametricFamily("atom_lower_levels", {"B": k.tolist()}, marg, (k[0, 0], k[-1, 0]),
                            anchors=k[:, 0])


def translation(domain=(0.0, 1.0)) -> ParametricFamily:
    """Uniform laws U[t, t+1]."""
    return ParametricFamily("translation", {"domain": list(domain)}, lambda t: uniform(t, t + 1.0),
                            domain, diffuse=True)


def time_reversed(family: MarginalFamily) -> MarginalFamily:
    """The family ``t -> family.marginal(-t)``."""
    if isinstance(family, ExplicitFamily):
        return family.reversed()
    if not isinstance(family, ParametricFamily):
        raise FamilyError("cannot reverse this family")
    lo, hi = family.domain
    return ParametricFamily("reversed", {"of": family.to_json()}, lambda t: family.marginal(-t),
                            (-hi, -lo), anchors=[-a for a in family.anchors],
                            integer_valued=family.integer_valued, diffuse=family.diffuse)


def _reversed_builtin(of: dict) -> MarginalFamily:
    return time_reversed(family_from_json(of))


BUILTINS: dict[str, Callable[..., ParametricFamily]] = {
    "poisson": poisson,
    "binomial": binomial,
    "two_atom": two_atom,
    "dirac_path": dirac_path,
    "crossing_uniforms": crossing_uniforms,
    "atom_over_diffuse": atom_over_diffuse,
    "atom_lower_levels": atom_lower_levels,
    "translation": translation,
    "reversed": _reversed_builtin,
}


def family_from_json(obj: dict) -> MarginalFamily:
    if "explicit" in obj:
        e = obj["explicit"]
        pts = [(float(t), RealMeasure.from_json(m)) for t, m in e["times"]]
        gaps = e.get("gaps")
        if gaps is not None:
            gaps = [None if g is None else RealMeasure.from_json(g) for g in gaps]
        return ExplicitFamily(pts, gaps, bool(e.get("atomic_complete", True)))
    if "parametric" in obj:
        p = obj["parametric"]
        name = p.get("name")
        if name not in BUILTINS:
            raise FamilyError(f"unknown builtin family {name!r}")
        try:
            return BUILTINS[name](**(p.get("params") or {}))
        except TypeError as exc:
            raise FamilyError(f"bad parameters for {name}: {exc}") from None
    raise FamilyError("family spec needs an 'explicit' or 'parametric' key")
