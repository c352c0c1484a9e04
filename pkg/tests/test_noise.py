import numpy as np
import pytest

from stochheat.noise import (
    CompositeIncrements,
    RefinedIncrements,
    SegmentedIncrements,
    refine,
    sample_increments,
)
from stochheat.spectral import CovarianceProfile, make_mode

PROFILE = CovarianceProfile(gamma=4.0)
M1 = make_mode((1,), PROFILE)
M2 = make_mode((2,), PROFILE)
STEPS = {M1: 6, M2: 4}


def test_determinism_same_tuple():
    a = sample_increments(STEPS, seed=9, replication=5)
    b = sample_increments(STEPS, seed=9, replication=5)
    for mode in STEPS:
        np.testing.assert_array_equal(a.arrays[mode], b.arrays[mode])


def test_distinct_keys_differ():
    base = sample_increments(STEPS, seed=9, replication=5)
    other_rep = sample_increments(STEPS, seed=9, replication=6)
    other_seed = sample_increments(STEPS, seed=10, replication=5)
    assert not np.allclose(base.arrays[M1], other_rep.arrays[M1])
    assert not np.allclose(base.arrays[M1], other_seed.arrays[M1])


def test_increment_variance_and_independence():
    # beta_i(1) has unit variance; distinct modes are uncorrelated
    reps = 100_000
    stream = SegmentedIncrements([M1, M2], [4, 4], seed=1234, replications=range(reps))
    total = np.zeros((reps, 2))
    for l in range(4):
        total[:, 0] += stream.get(0, l)
        total[:, 1] += stream.get(1, l)
    var = total.var(axis=0)
    ci = 3.0 * np.sqrt(2.0 / reps)
    assert abs(var[0] - 1.0) < ci and abs(var[1] - 1.0) < ci
    cov = np.mean(total[:, 0] * total[:, 1])
    assert abs(cov) < 3.0 / np.sqrt(reps)


def test_segment_stream_matches_materialized():
    steps = {M1: 300, M2: 17}
    mat = sample_increments(steps, seed=77, replication=3)
    stream = SegmentedIncrements([M1, M2], [300, 17], seed=77, replications=[3])
    for k, mode in enumerate((M1, M2)):
        got = np.array([stream.get(k, l)[0] for l in range(steps[mode])])
        np.testing.assert_array_equal(got, mat.arrays[mode])


def test_refine_telescoping_and_determinism():
    parent = sample_increments(STEPS, seed=3, replication=0)
    fine = refine(parent, 4)
    again = refine(parent, 4)
    for mode, n in STEPS.items():
        sums = fine.arrays[mode].reshape(n, 4).sum(axis=1)
        np.testing.assert_allclose(sums, parent.arrays[mode], atol=1e-12)
        np.testing.assert_array_equal(fine.arrays[mode], again.arrays[mode])
        assert fine.steps[mode] == 4 * n


def test_refine_zero_parent_with_zero_bridge():
    parent = sample_increments({M1: 2}, seed=3, replication=0)
    parent.arrays[M1][:] = 0.0
    fine = refine(parent, 3)
    sub = fine.arrays[M1].reshape(2, 3)
    # conditional mean is zero; the bridge fluctuation centers to zero sums
    np.testing.assert_allclose(sub.sum(axis=1), 0.0, atol=1e-13)


def test_refined_stream_matches_materialized_refine():
    steps = {M1: 10, M2: 7}
    parent = sample_increments(steps, seed=21, replication=2)
    fine = refine(parent, 8)
    stream = RefinedIncrements([M1, M2], [10, 7], [8, 8], seed=21, replications=[2])
    for k, mode in enumerate((M1, M2)):
        got = np.array([stream.get(k, l)[0] for l in range(8 * steps[mode])])
        np.testing.assert_array_equal(got, fine.arrays[mode])


def test_bridge_marginal_variance():
    # each refined sub-increment has variance delta = (b-a)/factor
    reps = 100_000
    factor = 2
    stream = RefinedIncrements([M1], [1], [factor], seed=5, replications=range(reps))
    sub0 = stream.get(0, 0)
    sub1 = stream.get(0, 1)
    ci = 3.0 * 0.5 * np.sqrt(2.0 / reps)
    assert abs(sub0.var() - 0.5) < ci
    assert abs(sub1.var() - 0.5) < ci
    # and the pair sums to a unit-variance increment
    assert abs((sub0 + sub1).var() - 1.0) < 3.0 * np.sqrt(2.0 / reps)


def test_rep_batching_invariance():
    # values for a replication do not depend on which batch it sits in
    single = SegmentedIncrements([M1], [5], seed=8, replications=[130])
    batch = SegmentedIncrements([M1], [5], seed=8, replications=[0, 63, 64, 130, 500])
    for l in range(5):
        assert single.get(0, l)[0] == batch.get(0, l)[3]


def test_composite_routing():
    s1 = SegmentedIncrements([M1], [4], seed=8, replications=[0])
    s2 = SegmentedIncrements([M2], [4], seed=8, replications=[0])
    comp = CompositeIncrements([s1, s2], [(0, 0), (1, 0)])
    np.testing.assert_array_equal(comp.get(0, 2), s1.get(0, 2))
    np.testing.assert_array_equal(comp.get(1, 3), s2.get(0, 3))


def test_refine_rejects_bad_factor():
    parent = sample_increments({M1: 2}, seed=3, replication=0)
    with pytest.raises(ValueError):
        refine(parent, 0)
