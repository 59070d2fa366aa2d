"""Energy of curves of measures in quadratic Wasserstein space and action of path ensembles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .families import MarginalFamily
from .levels import AveragingChain
from .measure import w2
from .mq import PathEnsemble, _Draws


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    points: tuple

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2 or any(b <= a for a, b in zip(pts[:-1], pts[1:])):
            raise PartitionError("a partition needs at least two strictly increasing points")
        object.__setattr__(self, "points", pts)

    @staticmethod
    def uniform(a: float, b: float, m: int) -> "Partition":
        return Partition(tuple(np.linspace(a, b, m + 1)))

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.points)))

    def refines(self, other: "Partition") -> bool:
        return set(other.points) <= set(self.points)


@dataclass
class EnergyReport:
    partition: tuple
    terms: list
    total: float
    refinement_history: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"partition": list(self.partition), "terms": list(self.terms),
                "total": self.total if math.isfinite(self.total) else "Infinite",
                "refinement_history": list(self.refinement_history)}


def energy_terms(family: MarginalFamily, R: Partition | Sequence[float]) -> list[float]:
    pts = R.points if isinstance(R, Partition) else Partition(tuple(R)).points
    ms = [family.marginal(t) for t in pts]
    return [w2(a, b) ** 2 / (t1 - t0) for a, b, t0, t1 in zip(ms[:-1], ms[1:], pts[:-1], pts[1:])]


def energy(family: MarginalFamily, R: Partition | Sequence[float]) -> float:
    """Sum of squared W2 steps over step lengths along the partition."""
    return float(sum(energy_terms(family, R)))


def energy_limit(family: MarginalFamily, tol: float = 1e-6, interval: tuple | None = None,
                 ceiling: float = 1e6, max_depth: int = 16, start_depth: int = 1) -> EnergyReport:
    """Energy of the curve, by dyadic refinement of uniform partitions.

    Partition energies only grow under refinement.  Stops when two successive
    values differ by less than ``tol``.  Reports an infinite total when the
    value passes ``ceiling``, or when it keeps doubling with the number of
    steps, the signature of a curve whose squared distances scale like the
    step rather than its square.
    """
    a, b = interval if interval is not None else family.domain
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise PartitionError("energy_limit needs a bounded interval")
    history: list[float] = []
    doubling = 0
    prev = None
    for n in range(start_depth, max_depth + 1):
        R = Partition.uniform(a, b, 2 ** n)
        terms = energy_terms(family, R)
        E = float(sum(terms))
        history.append(E)
        if E > ceiling:
            return EnergyReport(R.points, terms, math.inf, history)
        if prev is not None:
            if abs(E - prev) < tol:
                return EnergyReport(R.points, terms, E, history)
            doubling = doubling + 1 if prev > 0 and E / prev >= 1.9 else 0
            if doubling >= 5:
                return EnergyReport(R.points, terms, math.inf, history)
        prev = E
    return EnergyReport(R.points, terms, E, history)


# path ensembles


def path_energy(paths: np.ndarray, grid: Sequence[float]) -> np.ndarray:
    """Grid energy sum (dx)^2 / dt of each row of ``paths``."""
    g = np.asarray(grid, dtype=float)
    x = np.atleast_2d(np.asarray(paths, dtype=float))
    if g.size < 2 or x.shape[1] != g.size:
        raise PartitionError("paths need one value per grid point and at least two points")
    return np.sum(np.diff(x, axis=1) ** 2 / np.diff(g), axis=1)


@dataclass
class ActionEstimate:
    value: float
    sigma: float
    grid_bias: float

    def __float__(self):
        return self.value


def action(e: PathEnsemble) -> ActionEstimate:
    """Mean path energy, its Monte-Carlo standard error and a grid-doubling bias estimate."""
    E = path_energy(e.paths, e.grid)
    sigma = float(E.std(ddof=1) / math.sqrt(E.size)) if E.size > 1 else 0.0
    idx = np.arange(0, e.grid.size, 2)
    if idx[-1] != e.grid.size - 1:
        idx = np.append(idx, e.grid.size - 1)
    coarse = float(path_energy(e.paths[:, idx], e.grid[idx]).mean()) if idx.size >= 2 else float(E.mean())
    return ActionEstimate(float(E.mean()), sigma, abs(float(E.mean()) - coarse))


def disp_ensemble(family: MarginalFamily, R: Partition | Sequence[float], n: int, seed: int = 0,
                  grid: Sequence[float] | None = None) -> PathEnsemble:
    """Paths through quantile couplings glued at the points of ``R``, linear in between.

    The level is resampled by the atomic averaging at each interior point of
    ``R``; paths are then interpolated linearly onto ``grid`` (default ``R``).
    """
    pts = np.array(R.points if isinstance(R, Partition) else Partition(tuple(R)).points)
    draws = _Draws(int(seed), int(n))
    u = 1.0 - draws()
    X = np.empty((n, pts.size))
    X[:, 0] = family.marginal(pts[0]).quantile(u)
    for i in range(1, pts.size):
        X[:, i] = family.marginal(pts[i]).quantile(u)
        if i < pts.size - 1:
            A = family.atomic_levels(pts[i])
            if not A.empty:
                u = AveragingChain([A]).sample(u, draws)
                u = np.clip(u, np.nextafter(0.0, 1.0), 1.0)
    if grid is None:
        return PathEnsemble(pts, X, int(seed))
    g = np.asarray(grid, dtype=float)
    if g[0] < pts[0] or g[-1] > pts[-1]:
        raise PartitionError("output grid must lie inside the partition range")
    k = np.clip(np.searchsorted(pts, g, side="right") - 1, 0, pts.size - 2)
    s = (g - pts[k]) / (pts[k + 1] - pts[k])
    out = X[:, k] * (1 - s) + X[:, k + 1] * s
    return PathEnsemble(g, out, int(seed))
