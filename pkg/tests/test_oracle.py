import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markov_quantile.checks import random_intervals, random_kernel
from markov_quantile.families import AtomicLevelSet
from markov_quantile.kernel import LevelCoupling, LevelKernel, MarkovChainLaw, fd_cdf
from markov_quantile.levels import ell_of
from markov_quantile.oracle import (BinKernel, GridMisaligned, averaging_matrix, oracle_compare,
                                    oracle_fd_cdf, oracle_kernel, oracle_product)


def seeds():
    return st.integers(0, 2**32 - 1)


def test_averaging_matrix_examples():
    M = oracle_kernel(AtomicLevelSet(((0.0, 0.5),)), 4).matrix
    assert np.array_equal(M[:2], [[0.5, 0.5, 0, 0]] * 2)
    assert np.array_equal(M[2:], np.eye(4)[2:])
    assert np.array_equal(oracle_kernel(AtomicLevelSet(((0.0, 1.0),)), 2).matrix, np.full((2, 2), 0.5))
    for N in (1, 3, 16):
        assert np.array_equal(oracle_kernel(LevelKernel.identity(), N).matrix, np.eye(N))
        assert np.array_equal(oracle_kernel(AtomicLevelSet(), N).matrix, np.eye(N))


def test_compare_examples():
    k = ell_of(AtomicLevelSet(((0.25, 0.75),)))
    assert oracle_compare(k, oracle_kernel(k, 8)) <= 1e-12
    assert oracle_compare(LevelCoupling.product(), BinKernel(np.full((2, 2), 0.5))) == 0.0
    assert oracle_compare(LevelCoupling.identity(), BinKernel(np.full((2, 2), 0.5))) == pytest.approx(0.25)


def test_misaligned_breakpoints():
    with pytest.raises(GridMisaligned):
        averaging_matrix(AtomicLevelSet(((1 / 3, 1.0),)), 64)
    k = ell_of(AtomicLevelSet(((0.1, 0.5),)))
    with pytest.raises(GridMisaligned):
        oracle_kernel(k, 16)
    with pytest.raises(GridMisaligned):
        oracle_compare(k, BinKernel.identity(16))
    # multiples of 1/N within rounding are accepted
    averaging_matrix(AtomicLevelSet(((0.1 * 3, 0.5),)), 10)


def test_bin_kernel_validation():
    with pytest.raises(ValueError):
        BinKernel(np.ones((2, 3)))
    with pytest.raises(ValueError):
        BinKernel([[1.0, 0.5], [0.0, 1.0]])
    assert BinKernel([[0.5, 0.5], [0.5, 0.5]]).is_doubly_stochastic()
    assert not BinKernel([[1.0, 0.0], [1.0, 0.0]]).is_doubly_stochastic()


def test_csv_dump():
    text = BinKernel(np.full((2, 2), 0.5)).to_csv()
    assert text == "0.5,0.5\n0.5,0.5\n"


@settings(max_examples=40, deadline=None)
@given(seeds())
def test_functoriality(seed):
    rng = np.random.default_rng(seed)
    k1, k2 = random_kernel(rng), random_kernel(rng)
    N = 128
    lhs = oracle_kernel(k1.compose(k2), N).matrix
    rhs = oracle_kernel(k1, N).matrix @ oracle_kernel(k2, N).matrix
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds())
def test_transpose_commutes_with_bins(seed):
    k = random_kernel(np.random.default_rng(seed))
    assert np.max(np.abs(oracle_kernel(k.transpose(), 64).matrix - oracle_kernel(k, 64).matrix.T)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds())
def test_column_means_match_matrix_product(seed):
    rng = np.random.default_rng(seed)
    sets = [AtomicLevelSet(tuple(random_intervals(rng))) for _ in range(int(rng.integers(1, 7)))]
    fast, slow = oracle_product(sets, 64), oracle_product(sets, 64, fast=False)
    assert np.max(np.abs(fast.matrix - slow.matrix)) <= 1e-13
    assert fast.is_doubly_stochastic()


def test_five_kernel_composition_at_1024_bins(rng):
    ks = [random_kernel(rng) for _ in range(5)]
    exact = ks[0]
    for k in ks[1:]:
        exact = exact.compose(k)
    approx = oracle_kernel(ks[0], 1024)
    for k in ks[1:]:
        approx = approx.then(oracle_kernel(k, 1024))
    assert oracle_compare(exact, approx) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seeds())
def test_fd_cdf_matches_restricted_products(seed):
    rng = np.random.default_rng(seed)
    ks = [random_kernel(rng) for _ in range(2)]
    us = list(rng.integers(0, 65, 3) / 64)
    exact = fd_cdf(MarkovChainLaw(None, [LevelCoupling(k) for k in ks]), us)
    assert abs(exact - oracle_fd_cdf([oracle_kernel(k, 64) for k in ks], us)) <= 1e-9


def test_fd_cdf_needs_one_threshold_per_time():
    with pytest.raises(ValueError):
        oracle_fd_cdf([BinKernel.identity(4)], [0.5])
