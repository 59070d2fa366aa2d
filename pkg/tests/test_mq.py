import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import load_fixture, random_explicit_family
from markov_quantile.checks import empirical_pair_cdf
from markov_quantile.families import ExplicitFamily, binomial, poisson, time_reversed, translation
from markov_quantile.kernel import (LengthMismatch, LevelCoupling, RealCoupling, increasing_kernel,
                                    lo_leq, quantile_coupling, rho)
from markov_quantile.levels import level_coupling_of, then_ell
from markov_quantile.measure import from_mixture, sto_leq
from markov_quantile.mq import (ProcessHandle, ZeroMass, catenated_fd_cdf, jump_rates, markov_check,
                                mq_coupling, mq_level, process_fd_cdf, simulate)

FLAG_XY = [0.0, 1.0]


def seeds():
    return st.integers(0, 2**32 - 1)


def table(P, xs=FLAG_XY, ys=FLAG_XY):
    return P.cdf_table(np.asarray(xs, float), np.asarray(ys, float))


# pair couplings


def test_flag_pair_is_product(flag):
    assert np.allclose(table(mq_coupling(flag, -1, 1)), [[0.25, 0.5], [0.5, 1.0]], atol=1e-12)


def test_flag_pair_without_atomicity_change_is_identity(flag):
    assert np.allclose(table(mq_coupling(flag, -1, -0.5)), [[0.5, 0.5], [0.5, 1.0]], atol=1e-12)


def test_translation_pair_is_quantile_coupling():
    fam = translation()
    P = mq_coupling(fam, 0.0, 1.0)
    Q = quantile_coupling(fam.marginal(0.0), fam.marginal(1.0))
    xs, ys = np.linspace(-0.5, 1.5, 41), np.linspace(0.5, 2.5, 41)
    assert np.max(np.abs(P.cdf_table(xs, ys) - Q.cdf_table(xs, ys))) <= 1e-12
    # mass sits on y = x + 1
    assert P.cdf(0.5, 1.5) == pytest.approx(0.5) and P.cdf(0.5, 1.25) == pytest.approx(0.25)


def test_pair_needs_ordered_times(flag):
    with pytest.raises(ValueError):
        mq_coupling(flag, 1, -1)


# finite-dimensional laws


def test_fd_cdf_examples(flag):
    assert process_fd_cdf(ProcessHandle.quantile(flag), [-1, 1], [0, 0]) == pytest.approx(0.5)
    assert process_fd_cdf(ProcessHandle.made_markov_at(flag, [0]), [-1, 1], [0, 0]) == pytest.approx(0.25)
    p = ProcessHandle.markov_quantile(flag)
    P = mq_coupling(flag, -1, 1)
    for x in (-0.5, 0.0, 0.5, 1.0):
        for y in (0.0, 1.0, 2.0):
            assert process_fd_cdf(p, [-1, 1], [x, y]) == pytest.approx(P.cdf(x, y), abs=1e-14)


def test_fd_cdf_length_mismatch(flag):
    with pytest.raises(LengthMismatch):
        process_fd_cdf(ProcessHandle.markov_quantile(flag), [-1, 0, 1], [0, 0])


def test_made_markov_needs_times_in_domain():
    with pytest.raises(ValueError):
        ProcessHandle.made_markov_at(poisson(), [2.0])


# Markov check


def test_markov_check_examples(flag, diffuse):
    assert markov_check(ProcessHandle.markov_quantile(flag), [-1, 0, 1]).passed
    r = markov_check(ProcessHandle.quantile(flag), [-1, 0, 1])
    assert not r.passed and r.deviation >= 0.2
    assert markov_check(ProcessHandle.quantile(diffuse), [-1, 0, 1]).passed


def test_made_markov_at_middle_is_markov_there(flag):
    assert markov_check(ProcessHandle.made_markov_at(flag, [0]), [-1, 0, 1]).passed


# simulation


def test_quantile_paths_share_their_level(diffuse):
    e = simulate(ProcessHandle.quantile(diffuse), [-1, 0, 1], 3, seed=7)
    levels = np.array([[diffuse.marginal(t).cdf(x) for t, x in zip(e.grid, row)] for row in e.paths])
    assert np.allclose(levels, levels[:, :1], atol=1e-12)


def test_poisson_paths():
    fam = poisson()
    grid = np.round(np.arange(0, 101) * 0.01, 12)
    e = simulate(ProcessHandle.markov_quantile(fam, tol=1e-4), grid, 10_000, seed=3)
    assert np.all(np.diff(e.paths, axis=1) >= 0)
    for i in (25, 50, 100):
        t = grid[i]
        sigma = np.sqrt(t / e.n)
        assert abs(e.paths[:, i].mean() - t) <= 3 * sigma
    assert np.all(e.paths == np.round(e.paths))


def test_simulation_is_reproducible_and_prefix_stable(flag):
    p = ProcessHandle.markov_quantile(flag)
    a = simulate(p, [-1, 0, 1], 500, seed=11)
    b = simulate(p, [-1, 0, 1], 500, seed=11)
    c = simulate(p, [-1, 0, 1], 100, seed=11)
    assert a.to_csv() == b.to_csv()
    assert np.array_equal(a.paths[:100], c.paths)
    assert not np.array_equal(a.paths, simulate(p, [-1, 0, 1], 500, seed=12).paths)


def test_csv_layout(flag):
    text = simulate(ProcessHandle.quantile(flag), [-1, 1], 2, seed=0).to_csv()
    lines = text.split("\n")
    assert lines[0] == "-1,1" and lines[-1] == "" and len(lines) == 4


def test_simulation_matches_pair_coupling(flag):
    e = simulate(ProcessHandle.markov_quantile(flag), [-1, 0, 1], 100_000, seed=5)
    emp = empirical_pair_cdf(e.paths[:, 0], e.paths[:, -1], FLAG_XY, FLAG_XY)
    assert np.max(np.abs(emp - table(mq_coupling(flag, -1, 1)))) <= 0.01


# jump rates


@pytest.mark.parametrize("k", [0, 1, 3, 5])
def test_poisson_rates(k):
    r = jump_rates(poisson(), 0.5, k)
    assert r.up == pytest.approx(1.0, abs=1e-12) and r.down == 0.0
    assert r.up_empirical == pytest.approx(1.0, abs=5e-3) and abs(r.down_empirical) <= 5e-3


@pytest.mark.parametrize("t,k", [(0.25, 0), (0.25, 2), (0.5, 1), (0.5, 4)])
def test_binomial_rates(t, k):
    r = jump_rates(binomial(5), t, k)
    assert r.up == pytest.approx((5 - k) / (1 - t), rel=1e-12)
    assert r.up_empirical == pytest.approx((5 - k) / (1 - t), abs=5e-3)


def test_constant_family_rates():
    mu = from_mixture([(0, 0.5), (1, 0.5)])
    fam = ExplicitFamily([(0.0, mu)], [mu, mu])
    r = jump_rates(fam, 0.5, 0)
    assert (r.up, r.down) == (0.0, 0.0)
    assert r.up_empirical == pytest.approx(0.0, abs=1e-12)


def test_zero_mass_state():
    with pytest.raises(ZeroMass):
        jump_rates(poisson(), 0.5, 60)


# properties over random explicit families


@settings(max_examples=40, deadline=None)
@given(seeds())
def test_chapman_kolmogorov(seed):
    rng = np.random.default_rng(seed)
    fam = random_explicit_family(rng, min_times=3)
    s, t, u = np.sort(rng.choice(fam.times, 3, replace=False))
    whole = mq_level(fam, s, u)
    A = fam.atomic_levels(t)
    left, right = mq_level(fam, s, t).kernel.materialize(), mq_level(fam, t, u).kernel.materialize()
    glued = then_ell(left, A).compose(right)
    assert rho(whole, LevelCoupling(glued)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds())
def test_increasing_supremum_minimality(seed):
    rng = np.random.default_rng(seed)
    fam = random_explicit_family(rng, min_times=2)
    s, t = sorted(rng.choice(fam.times, 2, replace=False))
    L = mq_level(fam, s, t)
    assert increasing_kernel(L.kernel.materialize())
    M = mq_coupling(fam, s, t)
    R = [r for r in fam.times if s < r < t and rng.random() < 0.5]
    Q = RealCoupling(M.left, M.right, _made_markov_level(fam, R))
    assert lo_leq(Q, M, tol=1e-9)
    assert lo_leq(M, RealCoupling(M.left, M.right, LevelCoupling.product()), tol=1e-9)


def _made_markov_level(fam, R):
    return level_coupling_of([fam.atomic_levels(r) for r in sorted(R)])


@settings(max_examples=40, deadline=None)
@given(seeds())
def test_time_reversal(seed):
    rng = np.random.default_rng(seed)
    fam = random_explicit_family(rng, min_times=2)
    s, t = sorted(rng.choice(fam.times, 2, replace=False))
    P = mq_coupling(fam, s, t)
    Pr = mq_coupling(time_reversed(fam), -t, -s)
    xs, ys = np.linspace(-5, 6, 23), np.linspace(-5, 6, 23)
    assert np.max(np.abs(P.cdf_table(xs, ys) - Pr.cdf_table(ys, xs).T)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seeds())
def test_mq_is_markov_on_random_families(seed):
    rng = np.random.default_rng(seed)
    fam = random_explicit_family(rng, min_times=3)
    times = sorted(rng.choice(fam.times, 3, replace=False))
    assert markov_check(ProcessHandle.markov_quantile(fam), times).passed
    xs = [0.0, 1.0, -1.0]
    p = ProcessHandle.markov_quantile(fam)
    assert process_fd_cdf(p, times, xs) == pytest.approx(catenated_fd_cdf(p, times, xs), abs=1e-12)


def test_monotone_marginals_give_monotone_couplings():
    fam = poisson()
    assert sto_leq(fam.marginal(0.2), fam.marginal(0.7))
    P = mq_coupling(fam, 0.2, 0.7, tol=1e-5)
    ys = np.arange(0, 8, dtype=float)
    # P(Y <= y) = P(X <= y, Y <= y) when X <= Y almost surely
    assert np.max(np.abs(P.right.cdf(ys) - np.diag(P.cdf_table(ys, ys)))) <= 1e-9
