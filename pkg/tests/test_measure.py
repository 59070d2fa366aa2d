import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markov_quantile.measure import (Atom, BadMass, NonMonotone, OutOfRange, Segment, dirac,
                                     from_mixture, from_quantile_knots, make_measure, sto_leq,
                                     stoinf, stosup, uniform, w2)

HALF = from_mixture([(0.0, 0.5), (1.0, 0.5)])


def test_make_measure_examples():
    d = make_measure([(1.0, Atom(0.0))])
    assert d.n_pieces == 1 and d.is_dirac
    two = make_measure([(0.5, Atom(0.0)), (0.5, Atom(1.0))])
    assert two.quantile(0.25) == 0.0 and two.quantile(0.5) == 0.0 and two.quantile(0.51) == 1.0
    u = make_measure([(1.0, Segment(0.0, 1.0))])
    assert np.allclose(u.quantile(np.array([0.1, 0.5, 0.9])), [0.1, 0.5, 0.9])


def test_make_measure_errors():
    with pytest.raises(BadMass):
        make_measure([(0.5, Atom(0.0))])
    with pytest.raises(BadMass):
        make_measure([(1.5, Atom(0.0)), (-0.5, Atom(1.0))])
    with pytest.raises(NonMonotone):
        make_measure([(0.5, Atom(1.0)), (0.5, Atom(0.0))])


def test_quantile_and_cdf_examples():
    assert HALF.quantile(0.5) == 0.0
    assert HALF.quantile(0.75) == 1.0
    assert uniform(0, 1).quantile(0.3) == pytest.approx(0.3, abs=1e-15)
    assert uniform(0, 1).cdf(0.3) == pytest.approx(0.3, abs=1e-15)
    assert HALF.cdf(0.0) == 0.5
    assert HALF.cdf(-1.0) == 0.0
    assert HALF.cdf_left(1.0) == 0.5
    assert HALF.quantile(1.0) == 1.0
    with pytest.raises(OutOfRange):
        HALF.quantile(0.0)


def test_atoms_examples():
    a = HALF.atoms()
    assert [(x.x, x.weight, x.level_interval) for x in a] == [(0.0, 0.5, (0.0, 0.5)), (1.0, 0.5, (0.5, 1.0))]
    assert uniform(0, 1).atoms() == []
    assert [(x.x, x.weight, x.level_interval) for x in dirac(0.0).atoms()] == [(0.0, 1.0, (0.0, 1.0))]


def test_mixture_with_overlapping_segments():
    mu = from_mixture([], [(0.0, 2.0, 0.5), (1.0, 3.0, 0.5)])
    assert mu.cdf(1.0) == pytest.approx(0.25)
    assert mu.cdf(2.0) == pytest.approx(0.75)
    assert mu.mean() == pytest.approx(1.5)


def test_sto_leq_examples():
    assert sto_leq(dirac(0), dirac(1))
    assert sto_leq(HALF, HALF)
    a = from_mixture([(0.0, 0.5), (2.0, 0.5)])
    assert not sto_leq(a, dirac(1)) and not sto_leq(dirac(1), a)


def test_stosup_examples():
    a = from_mixture([(0.0, 0.5), (2.0, 0.5)])
    assert stosup([a, dirac(1)]) == from_mixture([(1.0, 0.5), (2.0, 0.5)])
    assert stosup([HALF]) == HALF
    assert stosup([dirac(0), dirac(1)]) == dirac(1)
    assert stoinf([a, dirac(1)]) == from_mixture([(0.0, 0.5), (1.0, 0.5)])


def test_stosup_of_crossing_segments():
    # the upper envelope switches inside a cell
    mu, nu = uniform(0, 2), from_mixture([], [(0.5, 1.5, 1.0)])
    s = stosup([mu, nu])
    assert s.quantile(0.25) == pytest.approx(0.75)
    assert s.quantile(0.75) == pytest.approx(1.5)
    assert sto_leq(mu, s) and sto_leq(nu, s)


def test_w2_examples():
    assert w2(dirac(0), dirac(1)) == pytest.approx(1.0)
    assert w2(uniform(0, 1), uniform(0.3, 1.3)) == pytest.approx(0.3)
    assert w2(dirac(0), uniform(0, 1)) == pytest.approx(math.sqrt(1 / 3), abs=1e-14)


def test_w2_frozen_quadrature_values():
    # values from 30-digit adaptive quadrature of (G_mu - G_nu)^2
    a = from_mixture([(0.0, 0.5), (2.0, 0.5)])
    assert w2(a, uniform(0, 1)) == pytest.approx(0.912870929175276855761616304668, abs=1e-14)
    b = from_mixture([(-1.0, 0.3)], [(0.0, 2.0, 0.7)])
    assert w2(b, uniform(-1, 1)) == pytest.approx(0.632455532033675945393531751862, abs=1e-14)


def test_json_roundtrip():
    mu = from_mixture([(0.0, 0.25)], [(1.0, 2.0, 0.75)])
    assert type(mu).from_json(mu.to_json()) == mu


def test_from_quantile_knots():
    mu = from_quantile_knots([0, 0.5, 1], [0, 1, 3])
    assert mu.quantile(0.75) == pytest.approx(2.0)
    assert mu.atoms() == []


# properties


@st.composite
def measures(draw):
    n_at = draw(st.integers(0, 3))
    n_seg = draw(st.integers(0 if n_at else 1, 2))
    xs = st.floats(-5, 5, allow_nan=False)
    ws = st.floats(0.05, 1.0)
    atoms = [(draw(xs), draw(ws)) for _ in range(n_at)]
    segs = []
    for _ in range(n_seg):
        a = draw(xs)
        segs.append((a, a + draw(st.floats(0.01, 3.0)), draw(ws)))
    tot = sum(w for _, w in atoms) + sum(w for *_, w in segs)
    return from_mixture([(x, w / tot) for x, w in atoms], [(a, b, w / tot) for a, b, w in segs])


@settings(max_examples=150, deadline=None)
@given(measures(), st.floats(0.001, 1.0))
def test_section_identity(mu, u):
    x = float(mu.quantile(u))
    assert mu.cdf(x) >= u - 1e-12
    assert mu.quantile(mu.cdf(x)) == pytest.approx(x, abs=1e-12)
    for y in np.concatenate([mu.lo, mu.hi]):
        F = float(mu.cdf(y))
        if F > 0:
            assert mu.quantile(F) <= y + 1e-12


@settings(max_examples=30, deadline=None)
@given(measures(), st.integers(0, 2**32 - 1))
def test_pushforward_dkw(mu, seed):
    n = 10_000
    u = 1.0 - np.random.default_rng(seed).random(n)
    x = np.sort(mu.quantile(u))
    eps = math.sqrt(math.log(2 / 0.001) / (2 * n))
    emp_hi = np.searchsorted(x, x, side="right") / n
    emp_lo = np.searchsorted(x, x, side="left") / n
    assert np.max(np.abs(emp_hi - mu.cdf(x))) <= eps
    assert np.max(np.abs(emp_lo - mu.cdf_left(x))) <= eps


@settings(max_examples=150, deadline=None)
@given(measures(), measures(), measures())
def test_sto_leq_partial_order(a, b, c):
    assert sto_leq(a, a)
    if sto_leq(a, b) and sto_leq(b, a):
        assert a == b
    if sto_leq(a, b) and sto_leq(b, c):
        assert sto_leq(a, c)


@settings(max_examples=150, deadline=None)
@given(st.lists(measures(), min_size=1, max_size=4), measures())
def test_stosup_is_least_upper_bound(S, extra):
    s = stosup(S)
    assert all(sto_leq(m, s) for m in S)
    upper = stosup(S + [extra])  # a common upper bound of S
    assert sto_leq(s, upper)
    i = stoinf(S)
    assert all(sto_leq(i, m) for m in S)
    assert sto_leq(stoinf(S + [extra]), i)


@settings(max_examples=150, deadline=None)
@given(measures(), measures(), measures())
def test_w2_metric(a, b, c):
    assert w2(a, a) == 0.0
    assert w2(a, b) == pytest.approx(w2(b, a), abs=1e-12)
    assert w2(a, c) <= w2(a, b) + w2(b, c) + 1e-12


@settings(max_examples=150, deadline=None)
@given(measures())
def test_atoms_partition_atomic_levels(mu):
    atoms = mu.atoms()
    seg = float(np.sum(mu.masses[mu.hi > mu.lo]))
    assert sum(a.weight for a in atoms) + seg == pytest.approx(1.0, abs=1e-12)
    for a in atoms:
        lo, hi = a.level_interval
        assert hi - lo == pytest.approx(a.weight, abs=1e-12)
        assert mu.quantile(0.5 * (lo + hi)) == a.x
    assert [a.level_interval for a in atoms] == mu.atom_intervals()
