import math

import numpy as np
import pytest

from stochheat.allocation import (
    BudgetTooSmallError,
    custom_plan,
    error_objective,
    minimize_objective_exhaustive,
    plan_nonuniform,
    plan_uniform,
    predicted_error,
    rate_exponents,
)
from stochheat.spectral import CapacityError, CovarianceProfile, enumerate_modes


def steps_by_coords(plan):
    return {m.coords: n for m, n in plan.steps.items()}


def test_plan_nonuniform_high_regime_example():
    plan = plan_nonuniform(CovarianceProfile(gamma=4.0), 1, 100)
    assert steps_by_coords(plan) == {(1,): 100, (2,): 25, (3,): 12, (4,): 7}
    assert plan.total_evals == 144
    assert plan.outer_radius == pytest.approx(10.0)
    assert plan.regime == "nonuniform_high"


def test_plan_nonuniform_minimal_budget():
    plan = plan_nonuniform(CovarianceProfile(gamma=4.0), 1, 1)
    assert steps_by_coords(plan) == {(1,): 1}
    assert plan.inner_radius == pytest.approx(1.0)


def test_plan_nonuniform_log_regime():
    plan = plan_nonuniform(CovarianceProfile(gamma=2.0), 1, 7)
    assert plan.regime == "nonuniform_log"
    assert steps_by_coords(plan)[(1,)] == math.ceil(7 / math.log(7))
    assert plan.outer_radius == pytest.approx(math.sqrt(7) / math.log(7))
    with pytest.raises(ValueError):
        plan_nonuniform(CovarianceProfile(gamma=2.0), 1, 1)


def test_plan_nonuniform_low_regime_uses_slowly_varying():
    prof = CovarianceProfile(gamma=1.5)
    plan = plan_nonuniform(prof, 1, 64)
    factor = 64 ** (1.0 - (1.0 - 0.75) / 3.0)
    expect = {
        m.coords: math.ceil(math.sqrt(m.lam) * factor) for m in plan.modes
    }
    assert steps_by_coords(plan) == expect


def test_budget_too_small_d2():
    with pytest.raises(BudgetTooSmallError):
        plan_nonuniform(CovarianceProfile(gamma=5.0), 2, 1)


def test_plan_uniform_example():
    plan = plan_uniform(CovarianceProfile(gamma=2.0), 1, 64)
    assert [m.coords for m in plan.modes] == [(1,), (2,)]
    assert set(steps_by_coords(plan).values()) == {23}
    assert plan.outer_radius == pytest.approx(64 ** (3 / 8))
    assert plan.regime == "uniform_baseline"


def test_plan_uniform_trivial_and_d2():
    plan = plan_uniform(CovarianceProfile(gamma=3.0), 1, 1)
    assert steps_by_coords(plan) == {(1,): 1}
    plan2 = plan_uniform(CovarianceProfile(gamma=3.0), 2, 10**5)
    assert plan2.inner_radius == pytest.approx(10.0)


def test_plan_uniform_rejects_gamma_at_d():
    with pytest.raises(ValueError):
        plan_uniform(CovarianceProfile(gamma=1.0, log_power=-1.5), 1, 16)


def test_rate_exponents_examples():
    e1 = rate_exponents(CovarianceProfile(gamma=3.0), 1)
    assert e1.alpha_star == pytest.approx(0.5)
    assert e1.alpha_uniform == pytest.approx(0.4)
    e2 = rate_exponents(CovarianceProfile(gamma=1.5), 1)
    assert e2.alpha_star == pytest.approx(5 / 12)
    assert e2.alpha_uniform == pytest.approx(5 / 14)


def test_rate_exponent_limits_and_ordering():
    for gamma in (1.0 + 1e-9, 1.2, 1.5, 1.9, 2.1, 3.0, 6.0):
        prof = CovarianceProfile(gamma=gamma, log_power=-1.5 if gamma == 1.0 + 1e-9 else 0.0)
        e = rate_exponents(prof, 1)
        if gamma != 2.0:
            assert e.alpha_star > e.alpha_uniform
    near = rate_exponents(CovarianceProfile(gamma=1.0 + 1e-10, log_power=-1.5), 1)
    assert near.alpha_star == pytest.approx(1 / 3, abs=1e-9)
    assert near.alpha_uniform == pytest.approx(1 / 3, abs=1e-9)


def test_predicted_error_per_regime():
    assert predicted_error(CovarianceProfile(gamma=3.0), 1, 256) == pytest.approx(1 / 16)
    assert predicted_error(CovarianceProfile(gamma=2.0), 1, 100) == pytest.approx(
        math.log(100) / 10
    )
    low = predicted_error(CovarianceProfile(gamma=1.5), 1, 100)
    assert low == pytest.approx(100 ** (-0.5 + 0.25 / 3))


def test_objective_partial_zeta_example():
    prof = CovarianceProfile(gamma=4.0)
    mode1 = enumerate_modes(1, 1.0, prof)[0]
    plan = custom_plan(prof, 1, {mode1: 4}, outer_radius=1.0)
    obj = error_objective(plan, tail_cutoff=1e4)
    zeta6_minus_1 = math.pi**6 / 945 - 1.0
    assert obj.head == pytest.approx(0.25)
    assert obj.total == pytest.approx(0.25 + zeta6_minus_1 / math.pi**2, rel=1e-9)


def test_objective_halves_with_doubled_steps():
    prof = CovarianceProfile(gamma=4.0)
    plan = plan_nonuniform(prof, 1, 20)
    doubled = custom_plan(
        prof, 1, {m: 2 * n for m, n in plan.steps.items()}, outer_radius=plan.outer_radius
    )
    a = error_objective(plan, tail_cutoff=100.0)
    b = error_objective(doubled, tail_cutoff=100.0)
    assert b.head == pytest.approx(a.head / 2)
    assert b.tail_partial == a.tail_partial


def test_objective_auto_cutoff_controls_remainder():
    prof = CovarianceProfile(gamma=1.5)
    plan = plan_nonuniform(prof, 1, 16)
    obj = error_objective(plan)
    assert obj.tail_remainder < 0.01 * obj.tail_partial


def test_brute_force_example_n4():
    prof = CovarianceProfile(gamma=4.0)
    plan, value = minimize_objective_exhaustive(prof, 1, 4, [1, 2], tail_cutoff=1e4)
    assert steps_by_coords(plan) == {(1,): 4}
    assert value == pytest.approx(0.25 + (math.pi**6 / 945 - 1) / math.pi**2, rel=1e-9)


def test_brute_force_single_budget():
    prof = CovarianceProfile(gamma=4.0)
    plan, _ = minimize_objective_exhaustive(prof, 1, 1, [1], tail_cutoff=50.0)
    assert steps_by_coords(plan) == {(1,): 1}


def test_brute_force_guard():
    prof = CovarianceProfile(gamma=4.0)
    with pytest.raises(CapacityError):
        minimize_objective_exhaustive(prof, 1, 64, list(range(1, 33)))


def test_closed_form_within_constant_of_oracle():
    for gamma in (1.5, 4.0):
        prof = CovarianceProfile(gamma=gamma)
        for budget in (2, 4, 8, 16, 32):
            plan = plan_nonuniform(prof, 1, budget)
            ours = error_objective(plan, tail_cutoff=200.0).total
            _, best = minimize_objective_exhaustive(
                prof, 1, budget, [1, 2, 3, 4, 5, 6], tail_cutoff=200.0
            )
            assert ours <= 4.0 * best


def test_budget_consistency_ratio_stable():
    # total evaluations stay a stable multiple of N across the ladder
    prof = CovarianceProfile(gamma=3.0)
    ratios = [
        plan_nonuniform(prof, 1, 2**k).total_evals / 2**k for k in range(6, 15)
    ]
    assert max(ratios) / min(ratios) < 1.5


def test_uniform_plan_equal_steps_invariant():
    plan = plan_uniform(CovarianceProfile(gamma=2.5), 2, 4096)
    assert len(set(plan.steps.values())) == 1
