import numpy as np

from conftest import load_fixture
from markov_quantile.checks import (COARSE_TOL, MANIFEST, Context, empirical_pair_cdf, run_checks,
                                    sample_times)
from markov_quantile.families import poisson


def test_diffuse_family_passes_everything(diffuse):
    results = run_checks(diffuse)
    assert [r.name for r in results] == list(MANIFEST)
    assert not [r for r in results if r.status == "fail"]
    assert sum(r.status == "pass" for r in results) >= len(MANIFEST) - 2


def test_only_selects_by_prefix(flag):
    results = run_checks(flag, only=["kernel.", "cli"])
    assert {r.name.split(".")[0] for r in results} == {"kernel", "cli"}
    assert all(r.status == "pass" for r in results)
    assert set(results[0].to_json()) == {"name", "status", "detail"}


def test_slow_refinement_falls_back_to_coarse_tolerance():
    (r,) = run_checks(load_fixture("example_6_4"), only=["levels.split_composition"])
    assert r.status == "pass"
    assert f"refinement tolerance {COARSE_TOL:g}" in r.detail


def test_context_tolerances(flag):
    assert Context(flag).coupling_tol == 1e-9
    assert Context(poisson(), tol=1e-5).coupling_tol == 10 * 1e-5 + 1e-9
    ts = sample_times(poisson())
    assert ts == sorted(ts) and len(ts) >= 3


def test_empirical_pair_cdf():
    x = np.array([0.0, 1.0, 1.0, 2.0])
    y = np.array([1.0, 0.0, 2.0, 2.0])
    F = empirical_pair_cdf(x, y, [0.5, 1.0, 2.0], [0.5, 2.0])
    assert np.allclose(F, [[0.0, 0.25], [0.25, 0.75], [0.25, 1.0]])
