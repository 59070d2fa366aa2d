import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import load_fixture
from markov_quantile.checks import random_decreasing, random_intervals
from markov_quantile.families import AtomicLevelSet, ExplicitFamily, TimeInterval, two_atom
from markov_quantile.kernel import LevelCoupling, LevelDensity, LevelKernel, lo_leq, rho
from markov_quantile.levels import (Indeterminate, NoConvergence, L_finite, L_interval, ell_of,
                                    essential, level_coupling_of, product_of)
from markov_quantile.measure import dirac, from_mixture, uniform
from markov_quantile.oracle import oracle_compare, oracle_product

PRODUCT = LevelCoupling.product()
IDENTITY = LevelCoupling.identity()


def seeds():
    return st.integers(0, 2**32 - 1)


def random_sets(rng, k):
    return [AtomicLevelSet(tuple(random_intervals(rng))) for _ in range(k)]


def cdf_gap(a: LevelDensity, b: LevelDensity) -> float:
    """min over levels of F_a - F_b; non-negative when a is stochastically below b."""
    u = np.unique(np.concatenate([a.grid, b.grid]))
    return float(np.min(a.cdf(u) - b.cdf(u)))


# ell_of


def test_ell_examples():
    assert rho(LevelCoupling(ell_of(AtomicLevelSet())), IDENTITY) == 0.0
    assert rho(LevelCoupling(ell_of(AtomicLevelSet(((0.0, 1.0),)))), PRODUCT) <= 1e-15
    k = ell_of(AtomicLevelSet(((1 / 3, 5 / 6),)))
    a, row = k.row(0.5)
    assert a == 0.0 and row.allclose(LevelDensity.indicator(1 / 3, 5 / 6, 2.0), tol=1e-12)
    a, row = k.row(0.9)
    assert a == 1.0 and row.mass == 0.0


@settings(max_examples=80, deadline=None)
@given(seeds())
def test_ell_idempotent(seed):
    A = random_sets(np.random.default_rng(seed), 1)[0]
    k = ell_of(A)
    assert np.max(np.abs(k.compose(k).refine(k.grid).dens - k.dens)) == 0.0
    assert np.array_equal(k.compose(k).refine(k.grid).ident, k.ident)


# finite products


def test_flag_finite_product(flag):
    L = L_finite(flag, [-0.5, 0.0, 0.5])
    assert rho(L, PRODUCT) <= 1e-12
    assert oracle_compare(L, oracle_product(L.info["sets"], 64)) <= 1e-12


def test_diffuse_finite_product(diffuse):
    assert rho(L_finite(diffuse, [-1, -0.5, 0, 0.3, 1]), IDENTITY) == 0.0
    assert rho(L_finite(diffuse, []), IDENTITY) == 0.0


def test_two_atom_one_step():
    fam = two_atom([[0, 0.5], [1, 0.6]])
    L = L_finite(fam, [0, 1])
    theta = L.kernel.apply(LevelDensity.indicator(0.0, 0.5, 2.0))
    assert theta.allclose(LevelDensity.indicator(0.0, 0.6, 1 / 0.6), tol=1e-12)


def recursion(a):
    """d_n on (0, a_n) for the start 1/a_0 on (0, a_0), by the derived recursion."""
    d = 1.0 / a[0]
    for x, y in zip(a[:-1], a[1:]):
        if y > x:
            d = 1.0 + (d - 1.0) * (x / y) * ((1.0 - y) / (1.0 - x))
    return d


@pytest.mark.parametrize("seed", range(12))
def test_two_atom_recursion_against_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(1, 64, size=8) / 64
    fam = two_atom([[i, x] for i, x in enumerate(a)])
    L = L_finite(fam, range(len(a)))
    theta = L.kernel.apply(LevelDensity.indicator(0.0, a[0], 1.0 / a[0]))
    d = recursion(a)
    assert theta.cdf(a[-1]) / a[-1] == pytest.approx(d, rel=1e-12)
    M = oracle_product(L.info["sets"], 64).matrix
    v = np.where(np.arange(64) < round(a[0] * 64), 1.0, 0.0)
    v /= v.sum()
    mass = (v @ M)[: round(a[-1] * 64)].sum()
    assert mass / a[-1] == pytest.approx(d, rel=1e-12)


def test_two_atom_recursion_printed_form_differs():
    # the form without the (1 - a) ratio disagrees with the exact product
    a = np.array([0.25, 0.5])
    fam = two_atom([[0, 0.25], [1, 0.5]])
    theta = L_finite(fam, [0, 1]).kernel.apply(LevelDensity.indicator(0.0, 0.25, 4.0))
    exact = theta.cdf(0.5) / 0.5
    naive = 1.0 + (4.0 - 1.0) * a[1] / a[0]
    assert exact == pytest.approx(recursion(a)) and abs(exact - naive) > 1


def test_two_atom_bounded_variation_keeps_dependence():
    # monotone a: finite variation, so the limit is not the product
    fam = two_atom([[0, 0.25], [1, 0.75]])
    L = L_interval(fam, (0, 1), tol=1e-4)
    assert rho(L, PRODUCT) > 0.05


# interval limits


def test_flag_interval_limit(flag):
    assert rho(L_interval(flag, (-1, 1)), PRODUCT) <= 1e-12


def test_diffuse_interval_limit(diffuse):
    assert rho(L_interval(diffuse, (-1, 1)), IDENTITY) == 0.0


def expected_lower_levels(alpha):
    return LevelKernel.averaging([(0.0, alpha)])


@pytest.mark.parametrize("s,t,alpha", [(0.0, 1.0, 0.75), (0.25, 0.75, 0.75), (0.0, 0.25, 0.5)])
def test_lower_levels_closed_interval(s, t, alpha):
    fam = load_fixture("example_6_10")
    L = L_interval(fam, TimeInterval.closed(s, t), tol=1e-6)
    assert rho(L, LevelCoupling(expected_lower_levels(alpha))) <= 1e-9
    a, row = L.kernel.materialize().row(0.9)
    assert a == pytest.approx(1.0)


def test_lower_levels_open_interval_limit():
    fam = load_fixture("example_6_10")
    # B decreases from 0.7 on ]0.6, 0.9[, the sup is the limit at 0.6
    L = L_interval(fam, (0.6, 0.9), tol=1e-5)
    assert rho(L, LevelCoupling(expected_lower_levels(0.7))) <= 1e-4
    assert all(L.info["monotone"])


def test_refinement_reports_gaps():
    fam = load_fixture("example_6_9")
    with pytest.raises(NoConvergence) as exc:
        L_interval(fam, (0, 1), tol=1e-12, max_depth=6)
    assert len(exc.value.gaps) > 0


def test_fixed_depth():
    fam = load_fixture("example_6_10")
    L = L_interval(fam, TimeInterval.closed(0, 1), depth=3)
    assert L.info["depth"] == 3 and rho(L, LevelCoupling(expected_lower_levels(0.75))) <= 1e-12


# essential times and intervals


def test_essential_single_atom_time():
    fam = load_fixture("example_1_24")
    assert essential(fam, 0.0, (-1, 1)) is True
    assert essential(fam, 0.5, (-1, 1)) is False


def test_essential_interval_without_essential_times():
    fam = load_fixture("example_4_29")
    for t in (0.0, 0.25, 0.5, 1.0):
        assert essential(fam, t, (-1, 2)) is False
    assert essential(fam, (0.0, 1.0), (-1, 2)) is True


def test_essential_diffuse(diffuse):
    assert essential(diffuse, 0.0, (-1, 1)) is False
    assert essential(diffuse, (-0.5, 0.5), (-1, 1)) is False


def test_essential_needs_inner_interval(diffuse):
    with pytest.raises(ValueError):
        essential(diffuse, 1.0, (-1, 1))


def test_indeterminate_has_no_truth_value():
    assert repr(Indeterminate) == "Indeterminate"
    with pytest.raises(TypeError):
        bool(Indeterminate)


# properties


@settings(max_examples=60, deadline=None)
@given(seeds())
def test_lambda_invariance(seed):
    rng = np.random.default_rng(seed)
    k = level_coupling_of(random_sets(rng, 6)).kernel
    u = np.linspace(0, 1, 129)
    assert np.max(np.abs(k.apply(LevelDensity.uniform()).cdf(u) - u)) <= 1e-12


def test_monotone_in_R_1000_cases(rng):
    for _ in range(1000):
        sets = random_sets(rng, 5)
        keep = sorted(rng.choice(5, size=int(rng.integers(0, 5)), replace=False))
        theta = random_decreasing(rng)
        small = level_coupling_of([sets[i] for i in keep]).kernel.apply(theta)
        big = level_coupling_of(sets).kernel.apply(theta)
        assert cdf_gap(small, big) >= -1e-12


@settings(max_examples=60, deadline=None)
@given(seeds())
def test_order_bound(seed):
    rng = np.random.default_rng(seed)
    sets = random_sets(rng, 5)
    keep = sorted(rng.choice(5, size=3, replace=False))
    big, small = level_coupling_of(sets), level_coupling_of([sets[i] for i in keep])
    assert lo_leq(small, big) and lo_leq(big, PRODUCT) and lo_leq(IDENTITY, small)


@settings(max_examples=60, deadline=None)
@given(seeds())
def test_decreasing_stability(seed):
    rng = np.random.default_rng(seed)
    theta = random_decreasing(rng)
    out = level_coupling_of(random_sets(rng, 4)).kernel.apply(theta)
    assert out.is_decreasing(tol=1e-12)
    assert cdf_gap(theta, out) >= -1e-12


@settings(max_examples=40, deadline=None)
@given(seeds())
def test_split_composition_finite(seed):
    rng = np.random.default_rng(seed)
    sets = random_sets(rng, 6)
    c = int(rng.integers(1, 6))
    whole = level_coupling_of(sets)
    split = LevelCoupling(level_coupling_of(sets[:c]).kernel.materialize().compose(
        level_coupling_of(sets[c:]).kernel.materialize()))
    assert rho(whole, split) <= 1e-12


def test_split_composition_refined():
    fam = load_fixture("example_6_10")
    whole = L_interval(fam, TimeInterval.closed(0, 1), tol=1e-5)
    left = L_interval(fam, TimeInterval(0, 0.3, True, False), tol=1e-5)
    right = L_interval(fam, TimeInterval.closed(0.3, 1), tol=1e-5)
    assert rho(whole, product_of(left, right)) <= 1e-9


def test_explicit_family_queries():
    fam = ExplicitFamily([(0.0, dirac(0.0)), (1.0, uniform(0, 1))],
                         [uniform(-1, 0), from_mixture([(0, 0.5), (1, 0.5)]), None])
    assert fam.marginal(0.5) == from_mixture([(0, 0.5), (1, 0.5)])
    L = L_interval(fam, (-1, 2))
    assert rho(L, PRODUCT) <= 1e-12
