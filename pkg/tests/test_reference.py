import math

import numpy as np
import pytest
from scipy.integrate import quad

from stochheat.allocation import custom_plan, plan_nonuniform
from stochheat.experiment import estimate_error, reference_mode_moments
from stochheat.nemytskij import Nonlinearity
from stochheat.noise import RefinedIncrements, SegmentedIncrements
from stochheat.reference import (
    ReferenceConfig,
    exact_additive_stats,
    ou_integrated_second_moment,
    reference_plan,
)
from stochheat.scheme import assemble
from stochheat.spectral import CovarianceProfile, InitialValue, make_mode

PROFILE = CovarianceProfile(gamma=3.0)


def test_exact_additive_stats_examples():
    g = Nonlinearity.constant(1.0)
    mode = make_mode((1,), CovarianceProfile(gamma=3.0))
    mode = type(mode)(coords=mode.coords, norm2=mode.norm2, mu=math.pi**2, lam=1.0)
    mean, var = exact_additive_stats(mode, 1.0, g, xi_coeff=0.0)
    assert mean == 0.0
    assert var == pytest.approx((1 - math.exp(-2 * math.pi**2)) / (2 * math.pi**2))
    assert var == pytest.approx(0.05066059, abs=1e-7)
    mean0, var0 = exact_additive_stats(mode, 0.0, g, xi_coeff=0.7)
    assert (mean0, var0) == (0.7, 0.0)
    stiff = type(mode)(coords=(1,), norm2=1.0, mu=1e9, lam=1.0)
    assert exact_additive_stats(stiff, 1.0, g)[1] == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        exact_additive_stats(mode, 0.5, Nonlinearity.tanh())


def test_integrated_second_moment_matches_quadrature():
    # independent oracle: integrate the closed-form variance numerically
    for coords in ((1,), (3,), (5,)):
        mode = make_mode(coords, PROFILE)
        target, _ = quad(
            lambda t: mode.lam * -math.expm1(-2 * mode.mu * t) / (2 * mode.mu), 0.0, 1.0
        )
        assert ou_integrated_second_moment(mode) == pytest.approx(target, rel=1e-10)


def test_reference_plan_structure():
    plan = plan_nonuniform(PROFILE, 1, 64)
    cfg = ReferenceConfig(rho=4)
    ref = reference_plan(plan, cfg)
    for mode in plan.modes:
        assert ref.steps[mode] == 4 * plan.steps[mode]
    tail = [m for m in ref.modes if m not in plan.steps]
    assert tail, "enlarged radius must add tail modes"
    assert ref.inner_radius >= max(plan.inner_radius, plan.outer_radius)
    assert ref.outer_radius == ref.inner_radius
    with pytest.raises(ValueError):
        reference_plan(plan, ReferenceConfig(rho=4, inner_radius=1.0))
    with pytest.raises(ValueError):
        reference_plan(plan, ReferenceConfig(rho=0))


def test_coupling_partial_sums_exact():
    # fine increments consumed by the reference sum to the coarse draws
    plan = plan_nonuniform(PROFILE, 1, 32)
    rho = 8
    reps = [0, 1, 2]
    coarse = SegmentedIncrements(
        list(plan.modes), [plan.steps[m] for m in plan.modes], 7, reps
    )
    fine = RefinedIncrements(
        list(plan.modes), [plan.steps[m] for m in plan.modes], [rho] * len(plan.modes), 7, reps
    )
    for k, mode in enumerate(plan.modes):
        for l in range(plan.steps[mode]):
            parts = sum(fine.get(k, l * rho + j) for j in range(rho))
            np.testing.assert_allclose(parts, coarse.get(k, l), atol=1e-12)


def test_zero_noise_reference_error_halves_with_rho():
    # deterministic: implicit Euler gap to exp(-mu) shrinks ~ linearly in rho
    mode = make_mode((1,), PROFILE)
    xi = InitialValue.spectral({1: 1.0})
    g = Nonlinearity.constant(0.0)
    gaps = []
    for rho in (8, 16):
        plan = custom_plan(PROFILE, 1, {mode: 4}, outer_radius=1.5)
        ref = reference_plan(plan, ReferenceConfig(rho=rho, inner_radius=1.5))
        stream = SegmentedIncrements(list(ref.modes), [ref.steps[m] for m in ref.modes], 1, [0])
        run = assemble(ref, xi, g, stream, [0])
        val = run.final_state().coefficients[0, 0]
        gaps.append(abs(val - math.exp(-mode.mu)))
    assert 0.4 <= gaps[1] / gaps[0] <= 0.6


def test_reference_moments_match_ou_small_scale():
    # statistical absolute calibration at reduced replication count
    modes = [make_mode((j,), PROFILE) for j in (1, 2, 3)]
    plan = custom_plan(PROFILE, 1, {m: 2048 for m in modes}, outer_radius=3.2)
    cfg = ReferenceConfig(rho=16, inner_radius=3.2)
    ref_modes, mean, se = reference_mode_moments(
        plan, InitialValue.zero(), Nonlinearity.constant(1.0), cfg,
        replications=1500, seed=42,
    )
    for j, mode in enumerate(ref_modes):
        target = ou_integrated_second_moment(mode)
        assert abs(mean[j] - target) <= 4.0 * se[j]


def test_reference_dominance_under_rho_and_radius():
    # the error estimate moves < 10% when the reference is refined further
    plan = plan_nonuniform(PROFILE, 1, 128)
    xi = InitialValue.zero()
    g = Nonlinearity.constant(1.0)
    base = estimate_error(plan, xi, g, ReferenceConfig(rho=8), 96, seed=3).rmse
    finer = estimate_error(plan, xi, g, ReferenceConfig(rho=16), 96, seed=3).rmse
    wider = estimate_error(
        plan, xi, g, ReferenceConfig(rho=8, radius_scale=2.25), 96, seed=3
    ).rmse
    assert abs(finer - base) / base < 0.10
    assert abs(wider - base) / base < 0.10
