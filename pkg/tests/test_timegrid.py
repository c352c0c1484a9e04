import math
from fractions import Fraction

import numpy as np
import pytest

from stochheat.spectral import CovarianceProfile, make_mode
from stochheat.timegrid import (
    GammaLedger,
    MergedTimeGrid,
    build_grid,
    exact_semigroup_gap,
    gamma_at,
    gamma_ratio,
    uses_increment,
)

PROFILE = CovarianceProfile(gamma=4.0)
M1 = make_mode((1,), PROFILE)
M2 = make_mode((2,), PROFILE)


@pytest.fixture
def example_grid():
    # the two-mode illustration grid with n = (6, 4)
    return MergedTimeGrid({M1: 6, M2: 4})


def test_merged_nodes_exact(example_grid):
    expect = [Fraction(p, q) for p, q in
              [(0, 1), (1, 6), (1, 4), (1, 3), (1, 2), (2, 3), (3, 4), (5, 6), (1, 1)]]
    assert example_grid.fractions == expect
    assert example_grid.size == 8
    assert example_grid.tau[0] == 0.0 and example_grid.tau[-1] == 1.0
    assert np.all(np.diff(example_grid.tau) > 0)


def test_active_sets(example_grid):
    assert example_grid.active_set(2) == {M2}
    assert example_grid.active_set(3) == {M1}
    assert example_grid.active_set(4) == {M1, M2}
    assert example_grid.active_set(0) == {M1, M2}


def test_membership_rule_matches_rationals(example_grid):
    for m, frac in enumerate(example_grid.fractions):
        for mode in (M1, M2):
            n = example_grid.steps[mode]
            expected = (frac * n).denominator == 1
            assert (mode in example_grid.active_set(m)) == expected


def test_prev_nodes(example_grid):
    # s_{m,i} is the last own node strictly before tau_m
    assert example_grid.prev_node(1, M1) == Fraction(0)
    assert example_grid.prev_node(2, M1) == Fraction(1, 6)
    assert example_grid.prev_node(3, M1) == Fraction(1, 6)
    assert example_grid.prev_node(4, M2) == Fraction(1, 4)
    for m in range(1, example_grid.size + 1):
        for mode in (M1, M2):
            s = example_grid.prev_node(m, mode)
            assert s < example_grid.fractions[m]
            if mode in example_grid.active_set(m):
                assert example_grid.fractions[m] - s == Fraction(1, example_grid.steps[mode])


def test_single_mode_grid():
    grid = MergedTimeGrid({M1: 1})
    assert grid.fractions == [Fraction(0), Fraction(1)]
    assert grid.active_set(1) == {M1}


def test_identical_grids_merge():
    grid = MergedTimeGrid({M1: 2, M2: 2})
    assert grid.fractions == [Fraction(0), Fraction(1, 2), Fraction(1)]
    assert grid.active_set(1) == {M1, M2}
    assert grid.active_set(2) == {M1, M2}


def test_rebuild_from_own_nodes_is_idempotent(example_grid):
    # feeding the union back in as single-mode grids reproduces the node set
    rebuilt = MergedTimeGrid({M1: 12, M2: 12})
    assert set(example_grid.fractions) <= set(rebuilt.fractions)
    again = MergedTimeGrid(dict(example_grid.steps))
    assert again.fractions == example_grid.fractions


def test_uses_increment_paper_example(example_grid):
    # t = 0.3 lies in ]1/4, 1/3]
    assert not uses_increment(example_grid, M2, 2, 0.3)
    assert uses_increment(example_grid, M1, 2, 0.3)
    assert uses_increment(example_grid, M1, 1, 0.3)
    assert not uses_increment(example_grid, M1, 3, 0.3)
    for mode in (M1, M2):
        assert uses_increment(example_grid, mode, 1, 1.0)


def test_gamma_values():
    led1 = GammaLedger(MergedTimeGrid({M1: 1}), np.array([1.0]))
    assert np.exp(gamma_at(led1, 0, 1.0)) == pytest.approx(0.5)
    led2 = GammaLedger(MergedTimeGrid({M1: 2}), np.array([2.0]))
    assert np.exp(gamma_at(led2, 0, 1.0)) == pytest.approx(0.25)
    assert gamma_ratio(led2, 0, 0.3, 0.3) == 1.0
    with pytest.raises(ValueError):
        gamma_ratio(led2, 0, 0.5, 0.2)


def test_gamma_interior_clamping():
    grid = MergedTimeGrid({M1: 2})
    led = GammaLedger(grid, np.array([3.0]))
    # inside the first interval only the partial factor applies
    t = 0.2
    assert gamma_at(led, 0, t) == pytest.approx(-math.log1p(3.0 * t))
    t = 0.7
    expect = -math.log1p(1.5) - math.log1p(3.0 * (t - 0.5))
    assert gamma_at(led, 0, t) == pytest.approx(expect)


def test_gamma_ratio_bounds_randomized():
    # |1 - ratio| <= min(1, mu (t - s)) over random grids and arguments
    rng = np.random.default_rng(42)
    for _ in range(40):
        steps = {
            M1: int(rng.integers(1, 40)),
            M2: int(rng.integers(1, 40)),
        }
        grid = MergedTimeGrid(steps)
        mus = 10.0 ** rng.uniform(-3, 6, size=5)
        led = GammaLedger(grid, mus)
        for _ in range(25):
            s, t = np.sort(rng.uniform(0.0, 1.0, size=2))
            ratio = led.ratio(s, t)
            assert np.all(ratio > 0.0) and np.all(ratio <= 1.0)
            assert np.all(np.abs(1.0 - ratio) <= np.minimum(1.0, mus * (t - s)) + 1e-12)


def test_gamma_integral_bound():
    # int_{t_l}^1 (G(t)/G(t_l))^2 dt <= 2/mu, by refined composite midpoint
    grid = MergedTimeGrid({M1: 6, M2: 4})
    for mu in (0.5, 7.0, 300.0, 2e5):
        led = GammaLedger(grid, np.array([mu]))
        for t_l in (0.0, 1 / 6, 1 / 2, 3 / 4):
            total = 0.0
            base = led.log_gamma_at(t_l)[0]
            for m in range(1, grid.size + 1):
                a, b = grid.tau[m - 1], grid.tau[m]
                if b <= t_l:
                    continue
                a = max(a, t_l)
                pts = a + (np.arange(16) + 0.5) * (b - a) / 16
                vals = np.array([math.exp(2 * (gamma_at(led, 0, t) - base)) for t in pts])
                total += (b - a) / 16 * vals.sum()
            assert total <= 2.0 / mu + 1e-9


def test_semigroup_consistency_halving():
    # uniform refinement halves the gap to exp(-mu t)
    for mu in (1.0, 5.0, 10.0):
        gap_n = exact_semigroup_gap(MergedTimeGrid({M1: 64}), mu)
        gap_2n = exact_semigroup_gap(MergedTimeGrid({M1: 128}), mu)
        assert 0.3 <= gap_2n / gap_n <= 0.7


def test_build_grid_cache_returns_equal_grid():
    a = build_grid({M1: 6, M2: 4})
    b = build_grid({M1: 6, M2: 4})
    assert a is b
    assert a.fractions == MergedTimeGrid({M1: 6, M2: 4}).fractions


def test_step_validation():
    with pytest.raises(ValueError):
        MergedTimeGrid({M1: 0})
    with pytest.raises(ValueError):
        MergedTimeGrid({})
