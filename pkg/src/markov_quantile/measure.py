"""Probability measures on the real line, stored by their quantile function.

A measure is kept as a left-continuous, non-decreasing, piecewise-linear
quantile function ``G`` on ]0, 1].  Piece ``k`` covers the level interval
``]levels[k], levels[k+1]]`` and runs linearly from ``lo[k]`` to ``hi[k]``.
A piece with ``lo == hi`` is an atom.  The cdf is ``F(x) = |{u : G(u) <= x}|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

REPR_TOL = 1e-12
# level grids keep every distinct breakpoint; merging nearby ones moves the edges of
# very thin atomic level intervals and breaks the stochasticity of products
GRID_TOL = 0.0


class MeasureError(ValueError):
    """Base class for malformed measure input."""


class NonMonotone(MeasureError):
    pass


class BadMass(MeasureError):
    pass


class OutOfRange(MeasureError):
    pass


@dataclass(frozen=True)
class Atom:
    x: float


@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float


@dataclass(frozen=True)
class AtomInfo:
    x: float
    weight: float
    level_interval: tuple[float, float]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def merge_close(points: Iterable[float], tol: float = REPR_TOL) -> np.ndarray:
    """Sorted unique points, collapsing any run closer than ``tol``."""
    p = np.sort(np.asarray(list(points) if not isinstance(points, np.ndarray) else points, dtype=float))
    if p.size == 0:
        return p
    keep = np.ones(p.size, dtype=bool)
    last = p[0]
    for i in range(1, p.size):
        if p[i] - last <= tol:
            keep[i] = False
        else:
            last = p[i]
    return p[keep]


def level_grid(*grids, tol: float = GRID_TOL) -> np.ndarray:
    """Union of level grids on [0, 1], endpoints included."""
    pts = np.concatenate([np.asarray(g, dtype=float).ravel() for g in grids] + [np.array([0.0, 1.0])])
    pts = np.clip(pts, 0.0, 1.0)
    g = merge_close(pts, tol)
    g[0], g[-1] = 0.0, 1.0
    return g


class RealMeasure:
    """Immutable measure with a piecewise-linear quantile function."""

    __slots__ = ("levels", "lo", "hi")

    def __init__(self, levels, lo, hi, _checked: bool = False):
        levels, lo, hi = (np.asarray(a, dtype=float) for a in (levels, lo, hi))
        if not _checked:
            _validate(levels, lo, hi)
        object.__setattr__(self, "levels", _frozen(levels))
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    def __setattr__(self, name, value):
        raise AttributeError("RealMeasure is immutable")

    # basic queries

    @property
    def masses(self) -> np.ndarray:
        return np.diff(self.levels)

    @property
    def n_pieces(self) -> int:
        return self.lo.size

    def quantile(self, q):
        """Left-continuous quantile ``G(q)`` for ``q`` in ]0, 1]."""
        qa = np.asarray(q, dtype=float)
        if np.any(qa <= 0.0) or np.any(qa > 1.0):
            raise OutOfRange("quantile levels must lie in ]0, 1]")
        k = np.searchsorted(self.levels, qa, side="left") - 1
        k = np.clip(k, 0, self.n_pieces - 1)
        s = (qa - self.levels[k]) / (self.levels[k + 1] - self.levels[k])
        out = self.lo[k] + s * (self.hi[k] - self.lo[k])
        return float(out) if np.ndim(out) == 0 else out

    def cdf(self, x):
        """Right-continuous cdf ``F(x)``."""
        xa = np.asarray(x, dtype=float)
        flat = xa.reshape(-1, 1)
        span = self.hi - self.lo
        m = self.masses
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(span > 0, (flat - self.lo) / np.where(span > 0, span, 1.0), 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        frac = np.where(span > 0, frac, (flat >= self.lo).astype(float))
        out = np.minimum((frac * m).sum(axis=1), 1.0).reshape(xa.shape)
        return float(out) if np.ndim(out) == 0 else out

    def cdf_left(self, x):
        """Left limit ``F(x-)``."""
        xa = np.asarray(x, dtype=float)
        out = self.cdf(xa) - self._atom_mass_at(xa)
        return float(out) if np.ndim(out) == 0 else out

    def _atom_mass_at(self, x):
        flat = np.asarray(x, dtype=float).reshape(-1, 1)
        is_atom = self.hi == self.lo
        hit = is_atom & (flat == self.lo)
        return (hit * self.masses).sum(axis=1).reshape(np.shape(x))

    def atoms(self) -> list[AtomInfo]:
        out = []
        for k in range(self.n_pieces):
            if self.lo[k] == self.hi[k]:
                out.append(AtomInfo(float(self.lo[k]), float(self.masses[k]),
                                    (float(self.levels[k]), float(self.levels[k + 1]))))
        return out

    def atom_intervals(self) -> list[tuple[float, float]]:
        """Level intervals ]F(x-), F(x)] of the atoms."""
        return [a.level_interval for a in self.atoms()]

    def support(self) -> tuple[float, float]:
        return float(self.lo[0]), float(self.hi[-1])

    def mean(self) -> float:
        return float(np.sum(self.masses * (self.lo + self.hi) / 2))

    def is_dirac(self) -> bool:
        return self.n_pieces == 1 and self.lo[0] == self.hi[0]

    def values_on(self, grid):
        """Right limit at the left end and value at the right end of each grid cell.

        ``grid`` must refine ``self.levels``.
        """
        return _piece_values(self.levels, self.lo, self.hi, grid)

    # serialization

    def pieces(self) -> list[tuple[float, Atom | Segment]]:
        out = []
        for k in range(self.n_pieces):
            m = float(self.masses[k])
            if self.lo[k] == self.hi[k]:
                out.append((m, Atom(float(self.lo[k]))))
            else:
                out.append((m, Segment(float(self.lo[k]), float(self.hi[k]))))
        return out

    def to_json(self) -> dict:
        atoms, segs = [], []
        for m, p in self.pieces():
            if isinstance(p, Atom):
                atoms.append([p.x, m])
            else:
                segs.append([p.lo, p.hi, m])
        return {"atoms": atoms, "segments": segs}

    @staticmethod
    def from_json(obj: dict) -> "RealMeasure":
        atoms = [(float(x), float(w)) for x, w in obj.get("atoms", [])]
        segs = [(float(a), float(b), float(w)) for a, b, w in obj.get("segments", [])]
        return from_mixture(atoms, segs)

    def __eq__(self, other):
        if not isinstance(other, RealMeasure):
            return NotImplemented
        return (self.n_pieces == other.n_pieces
                and np.allclose(self.levels, other.levels, rtol=0, atol=REPR_TOL)
                and np.allclose(self.lo, other.lo, rtol=0, atol=REPR_TOL)
                and np.allclose(self.hi, other.hi, rtol=0, atol=REPR_TOL))

    def __hash__(self):
        return hash((self.n_pieces, round(float(self.lo[0]), 9), round(float(self.hi[-1]), 9)))

    def __repr__(self):
        parts = []
        for m, p in self.pieces():
            if isinstance(p, Atom):
                parts.append(f"{m:.6g}*d({p.x:.6g})")
            else:
                parts.append(f"{m:.6g}*U[{p.lo:.6g},{p.hi:.6g}]")
        return "RealMeasure(" + " + ".join(parts) + ")"


def _validate(levels, lo, hi):
    if levels.ndim != 1 or lo.shape != hi.shape or levels.size != lo.size + 1 or lo.size == 0:
        raise MeasureError("inconsistent piece arrays")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise MeasureError("piece endpoints must be finite")
    if abs(levels[0]) > REPR_TOL or abs(levels[-1] - 1) > REPR_TOL or np.any(np.diff(levels) <= 0):
        raise BadMass("levels must increase from 0 to 1")
    if np.any(hi < lo) or np.any(lo[1:] < hi[:-1]):
        raise NonMonotone("quantile pieces must be non-decreasing")


def _canonical(levels, lo, hi) -> RealMeasure:
    """Merge redundant breakpoints and absorb pieces thinner than ``REPR_TOL``."""
    levels = list(map(float, levels))
    lo = list(map(float, lo))
    hi = list(map(float, hi))
    # absorb negligible pieces into a neighbour
    k = 0
    while k < len(lo) and len(lo) > 1:
        if levels[k + 1] - levels[k] <= REPR_TOL:
            # the next piece (or the previous one at the end) takes over the level range
            if k + 1 < len(lo):
                del levels[k + 1], lo[k], hi[k]
            else:
                del levels[k], lo[k], hi[k]
            continue
        k += 1
    levels[0], levels[-1] = 0.0, 1.0
    # merge equal atoms and collinear continuous segments
    out_l, out_lo, out_hi = [levels[0]], [lo[0]], [hi[0]]
    out_l.append(levels[1])
    for k in range(1, len(lo)):
        a0, b0 = out_lo[-1], out_hi[-1]
        a1, b1 = lo[k], hi[k]
        m0 = out_l[-1] - out_l[-2]
        m1 = levels[k + 1] - levels[k]
        merge = False
        scale = max(1.0, abs(a0), abs(b1))
        if a0 == b0 and a1 == b1 and abs(a1 - a0) <= REPR_TOL * scale:
            merge = True
        elif a0 != b0 and a1 != b1 and abs(a1 - b0) <= REPR_TOL * scale:
            s0, s1 = (b0 - a0) / m0, (b1 - a1) / m1
            if abs(s0 - s1) <= 1e-9 * max(abs(s0), abs(s1)):
                merge = True
        if merge:
            out_hi[-1] = b1
            out_l[-1] = levels[k + 1]
        else:
            out_lo.append(a1)
            out_hi.append(b1)
            out_l.append(levels[k + 1])
    # merging near-equal points can leave rounding-size backward steps; snap those
    for k in range(len(out_lo)):
        if k and out_hi[k - 1] - REPR_TOL * max(1.0, abs(out_lo[k])) <= out_lo[k] < out_hi[k - 1]:
            out_lo[k] = out_hi[k - 1]
        if out_lo[k] - REPR_TOL * max(1.0, abs(out_lo[k])) <= out_hi[k] < out_lo[k]:
            out_hi[k] = out_lo[k]
    return RealMeasure(out_l, out_lo, out_hi)


def make_measure(pieces: Sequence[tuple[float, Atom | Segment]]) -> RealMeasure:
    """Build a measure from ordered (mass, Atom | Segment) pieces.

    Pieces must be in increasing order along the line.  Total mass may be off
    from 1 by at most ``REPR_TOL`` and is then renormalized.
    """
    if not pieces:
        raise BadMass("empty measure")
    masses = np.array([float(m) for m, _ in pieces])
    if np.any(masses < 0) or not np.all(np.isfinite(masses)):
        raise BadMass("negative or non-finite mass")
    total = masses.sum()
    if abs(total - 1.0) > REPR_TOL:
        raise BadMass(f"total mass {total!r} differs from 1")
    lo, hi = [], []
    for _, p in pieces:
        if isinstance(p, Atom):
            lo.append(float(p.x))
            hi.append(float(p.x))
        elif isinstance(p, Segment):
            if not p.hi >= p.lo:
                raise NonMonotone("segment with hi < lo")
            lo.append(float(p.lo))
            hi.append(float(p.hi))
        else:
            raise MeasureError(f"unknown piece {p!r}")
    keep = masses > 0
    masses, lo, hi = masses[keep], np.array(lo)[keep], np.array(hi)[keep]
    if np.any(lo[1:] < hi[:-1]):
        raise NonMonotone("pieces overlap or are out of order")
    levels = np.concatenate([[0.0], np.cumsum(masses / masses.sum())])
    levels[-1] = 1.0
    return _canonical(levels, lo, hi)


def from_mixture(atoms=(), segments=()) -> RealMeasure:
    """Measure of a mixture of point masses and uniform densities.

    ``atoms`` holds (x, w) pairs, ``segments`` holds (lo, hi, w) triples.  Segments
    may overlap; the resulting cdf is piecewise linear and is inverted exactly.
    """
    atoms = [(float(x), float(w)) for x, w in atoms if w > 0]
    segments = [(float(a), float(b), float(w)) for a, b, w in segments if w > 0]
    for a, b, _ in segments:
        if not b > a:
            raise NonMonotone("segment must have hi > lo")
    total = sum(w for _, w in atoms) + sum(w for *_, w in segments)
    if abs(total - 1.0) > REPR_TOL:
        raise BadMass(f"total mass {total!r} differs from 1")
    if not segments:
        xs = sorted(atoms)
        return make_measure([(w, Atom(x)) for x, w in xs])
    pts = sorted({x for x, _ in atoms} | {a for a, _, _ in segments} | {b for _, b, _ in segments})
    pieces: list[tuple[float, Atom | Segment]] = []
    atom_w = {}
    for x, w in atoms:
        atom_w[x] = atom_w.get(x, 0.0) + w
    for i, x in enumerate(pts):
        if x in atom_w:
            pieces.append((atom_w[x], Atom(x)))
        if i + 1 < len(pts):
            y = pts[i + 1]
            m = sum(w * (y - x) / (b - a) for a, b, w in segments if a <= x and y <= b)
            if m > 0:
                pieces.append((m, Segment(x, y)))
    masses = np.array([m for m, _ in pieces])
    s = masses.sum()
    pieces = [(m / s, p) for m, p in pieces]
    return make_measure(pieces)


def dirac(x: float) -> RealMeasure:
    return make_measure([(1.0, Atom(x))])


def uniform(lo: float, hi: float) -> RealMeasure:
    return make_measure([(1.0, Segment(lo, hi))])


def from_quantile_knots(levels, values) -> RealMeasure:
    """Measure whose quantile interpolates ``values`` linearly between ``levels``.

    Consecutive equal values give atoms.  Useful for discretized continuous laws.
    """
    levels = np.asarray(levels, dtype=float)
    values = np.asarray(values, dtype=float)
    pieces = []
    for k in range(levels.size - 1):
        m = levels[k + 1] - levels[k]
        a, b = values[k], values[k + 1]
        pieces.append((m, Atom(a) if a == b else Segment(a, b)))
    return make_measure(pieces)


# order, envelopes and distance


def _piece_values(levels, lo, hi, grid):
    g = np.asarray(grid, dtype=float)
    mid = 0.5 * (g[:-1] + g[1:])
    k = np.clip(np.searchsorted(levels, mid, side="right") - 1, 0, lo.size - 1)
    slope = (hi[k] - lo[k]) / (levels[k + 1] - levels[k])
    left = lo[k] + slope * (g[:-1] - levels[k])
    right = np.where(g[1:] == levels[k + 1], hi[k], lo[k] + slope * (g[1:] - levels[k]))
    return left, right


def _advanced(nu: RealMeasure, eps: float):
    """Pieces of the quantile ``u -> G_nu(min(u + eps, 1))``."""
    if eps <= 0.0:
        return nu.levels, nu.lo, nu.hi
    j = int(np.searchsorted(nu.levels, eps, side="right")) - 1
    j = min(max(j, 0), nu.n_pieces - 1)
    slope = (nu.hi[j] - nu.lo[j]) / (nu.levels[j + 1] - nu.levels[j])
    first = nu.lo[j] + slope * (eps - nu.levels[j])
    levels = np.concatenate([[0.0], nu.levels[j + 1:] - eps, [1.0]])
    lo = np.concatenate([[first], nu.lo[j + 1:], [nu.hi[-1]]])
    hi = np.concatenate([nu.hi[j:], [nu.hi[-1]]])
    return levels, lo, hi


def _merged(mus: Sequence[RealMeasure]):
    g = level_grid(*[m.levels for m in mus])
    vals = [m.values_on(g) for m in mus]
    return g, vals


def sto_leq(mu: RealMeasure, nu: RealMeasure, tol: float = 1e-9, level_tol: float = REPR_TOL) -> bool:
    """Stochastic order: ``G_mu <= G_nu`` everywhere.

    Levels are only resolved to ``level_tol`` (thinner pieces are absorbed on
    construction), so the test is ``G_mu(u) <= G_nu(u + level_tol) + tol``.
    """
    levels, lo, hi = _advanced(nu, level_tol)
    g = level_grid(mu.levels, levels)
    l0, r0 = mu.values_on(g)
    l1, r1 = _piece_values(levels, lo, hi, g)
    return bool(np.all(l0 <= l1 + tol) and np.all(r0 <= r1 + tol))


def _envelope(mus: Sequence[RealMeasure], upper: bool) -> RealMeasure:
    if not mus:
        raise MeasureError("empty family")
    if len(mus) == 1:
        return mus[0]
    g, vals = _merged(mus)
    L = np.array([v[0] for v in vals])
    R = np.array([v[1] for v in vals])
    levels, lo, hi = [0.0], [], []
    for c in range(g.size - 1):
        a, b = g[c], g[c + 1]
        # crossing points of the linear pieces inside the cell
        cuts = {0.0, 1.0}
        dl = L[:, c][:, None] - L[:, c][None, :]
        dr = R[:, c][:, None] - R[:, c][None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = dl / (dl - dr)
        s = s[np.isfinite(s) & (s > 0) & (s < 1)]
        cuts.update(s.tolist())
        cuts = sorted(cuts)
        for s0, s1 in zip(cuts[:-1], cuts[1:]):
            if s1 - s0 <= 1e-15:
                continue
            # each line is linear in s; the envelope on [s0, s1] is a single line
            sm = 0.5 * (s0 + s1)
            mid = L[:, c] + sm * (R[:, c] - L[:, c])
            j = int(np.argmax(mid) if upper else np.argmin(mid))
            v0 = L[j, c] + s0 * (R[j, c] - L[j, c])
            v1 = L[j, c] + s1 * (R[j, c] - L[j, c])
            lo.append(v0)
            hi.append(v1)
            levels.append(a + s1 * (b - a))
    lo_a, hi_a = np.array(lo), np.array(hi)
    # snap tiny negative jumps from rounding
    hi_a = np.maximum(hi_a, lo_a)
    lo_a[1:] = np.maximum(lo_a[1:], hi_a[:-1])
    hi_a = np.maximum(hi_a, lo_a)
    levels = np.array(levels)
    levels[-1] = 1.0
    return _canonical(levels, lo_a, hi_a)


def stosup(mus: Sequence[RealMeasure]) -> RealMeasure:
    """Least upper bound in the stochastic order (pointwise max of quantiles)."""
    return _envelope(list(mus), upper=True)


def stoinf(mus: Sequence[RealMeasure]) -> RealMeasure:
    """Greatest lower bound in the stochastic order (pointwise min of quantiles)."""
    return _envelope(list(mus), upper=False)


def w2(mu: RealMeasure, nu: RealMeasure) -> float:
    """Quadratic Wasserstein distance, exact for piecewise-linear quantiles."""
    g, ((l0, r0), (l1, r1)) = _merged([mu, nu])
    d0 = l0 - l1
    d1 = r0 - r1
    w = np.diff(g)
    val = float(np.sum(w * (d0 * d0 + d0 * d1 + d1 * d1)) / 3.0)
    return math.sqrt(max(val, 0.0))
