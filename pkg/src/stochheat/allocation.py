"""Evaluation-budget allocation across eigenmodes.

Given a budget N of scalar Brownian-motion evaluations, the planner picks
the noise ball radius I, the state ball radius J, and per-mode step counts
n_i.  The closed forms depend on the decay regime of the covariance
profile:

    gamma in [d, 2d):  I = N^(1/(d+2)),
                       n_i = ceil(lam_i^(1/2) * N^(1-(d-gamma/2)/(d+2))
                                  * L(N^(1/(d+2)))^(-1/2))
    gamma == 2d:       n_i = ceil(lam_i^(1/2) * N / ln N)
    gamma > 2d:        n_i = ceil(lam_i^(1/2) * N)

J is the reciprocal of the predicted error scale e*(N).  A uniform
baseline (common step count for every mode) is provided for comparison,
and an exhaustive small-budget minimizer of the mean-square objective
serves as an optimality oracle in tests.
"""

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .spectral import (
    CapacityError,
    CovarianceProfile,
    MultiIndex,
    enumerate_modes,
    regime_of,
    validate_profile,
)

MAX_SEARCH_SPACE = 10_000_000


class BudgetTooSmallError(ValueError):
    """The budget admits no mode at all."""


@dataclass(frozen=True)
class RateExponents:
    """Convergence-rate exponents of the two discretization families."""

    alpha_star: float
    alpha_uniform: float


@dataclass(frozen=True)
class AllocationPlan:
    regime: str
    d: int
    profile: CovarianceProfile
    inner_radius: float
    outer_radius: float
    modes: tuple           # noise modes, norm-sorted
    steps: dict            # MultiIndex -> n_i
    state_modes: tuple     # state modes, norm-sorted
    total_evals: int
    predicted_error: float
    budget: Optional[int] = None

    def step_array(self) -> np.ndarray:
        return np.array([self.steps[m] for m in self.modes], dtype=np.int64)


def rate_exponents(profile: CovarianceProfile, d: int) -> RateExponents:
    validate_profile(profile, d)
    g = profile.gamma
    alpha_star = 0.5 - max(2 * d - g, 0.0) / (2.0 * (d + 2))
    alpha_uniform = 0.5 - d / (2.0 * (g + 2))
    return RateExponents(alpha_star=alpha_star, alpha_uniform=alpha_uniform)


def predicted_error(profile: CovarianceProfile, d: int, budget: int) -> float:
    """The error scale e*(N) of the non-uniform allocation, per regime."""
    regime = regime_of(profile, d)
    n = float(budget)
    if regime == "nonuniform_high":
        return n ** -0.5
    if regime == "nonuniform_log":
        if budget < 2:
            raise ValueError("log regime needs N >= 2")
        return n ** -0.5 * math.log(n)
    slow = float(profile.slowly_varying(n ** (1.0 / (d + 2))))
    return n ** (-0.5 + (d - profile.gamma / 2.0) / (d + 2)) * math.sqrt(slow)


def _nonuniform_step_factor(profile: CovarianceProfile, d: int, budget: int) -> float:
    regime = regime_of(profile, d)
    n = float(budget)
    if regime == "nonuniform_high":
        return n
    if regime == "nonuniform_log":
        return n / math.log(n)
    slow = float(profile.slowly_varying(n ** (1.0 / (d + 2))))
    return n ** (1.0 - (d - profile.gamma / 2.0) / (d + 2)) / math.sqrt(slow)


def nonuniform_steps_for(profile: CovarianceProfile, d: int, budget: int, mode: MultiIndex) -> int:
    """The closed-form step count for one mode (also used for reference tails)."""
    return int(math.ceil(math.sqrt(mode.lam) * _nonuniform_step_factor(profile, d, budget)))


def plan_nonuniform(profile: CovarianceProfile, d: int, budget: int) -> AllocationPlan:
    """Per-mode step counts balancing variance against step cost."""
    if budget < 1:
        raise ValueError("budget must be a positive integer")
    regime = regime_of(profile, d)
    if regime == "nonuniform_log" and budget < 2:
        raise ValueError("log regime needs N >= 2")
    inner = budget ** (1.0 / (d + 2))
    modes = enumerate_modes(d, inner, profile)
    if not modes:
        raise BudgetTooSmallError(
            f"budget N={budget} admits no mode in d={d} (I={inner:.3g})"
        )
    factor = _nonuniform_step_factor(profile, d, budget)
    steps = {m: int(math.ceil(math.sqrt(m.lam) * factor)) for m in modes}
    err = predicted_error(profile, d, budget)
    outer = 1.0 / err
    state_modes = enumerate_modes(d, outer, profile)
    if not state_modes:
        raise BudgetTooSmallError(f"budget N={budget} gives an empty state ball")
    return AllocationPlan(
        regime=regime,
        d=d,
        profile=profile,
        inner_radius=inner,
        outer_radius=outer,
        modes=tuple(modes),
        steps=steps,
        state_modes=tuple(state_modes),
        total_evals=int(sum(steps.values())),
        predicted_error=err,
        budget=budget,
    )


def plan_uniform(profile: CovarianceProfile, d: int, budget: int) -> AllocationPlan:
    """Common-step baseline; defined for gamma > d with L = 1."""
    validate_profile(profile, d)
    if profile.gamma <= d:
        raise ValueError("uniform baseline requires gamma > d")
    if profile.log_power != 0.0:
        raise ValueError("uniform baseline is defined for L = 1 only")
    if budget < 1:
        raise ValueError("budget must be a positive integer")
    g = profile.gamma
    inner = budget ** (1.0 / (g + 2))
    modes = enumerate_modes(d, inner, profile)
    if not modes:
        raise BudgetTooSmallError(
            f"budget N={budget} admits no mode in d={d} (I={inner:.3g})"
        )
    n_common = int(math.ceil(budget ** ((g + 2 - d) / (g + 2))))
    outer = budget ** (0.5 - d / (2.0 * (g + 2)))
    state_modes = enumerate_modes(d, outer, profile)
    if not state_modes:
        raise BudgetTooSmallError(f"budget N={budget} gives an empty state ball")
    steps = {m: n_common for m in modes}
    return AllocationPlan(
        regime="uniform_baseline",
        d=d,
        profile=profile,
        inner_radius=inner,
        outer_radius=outer,
        modes=tuple(modes),
        steps=steps,
        state_modes=tuple(state_modes),
        total_evals=n_common * len(modes),
        predicted_error=float(budget) ** -(0.5 - d / (2.0 * (g + 2))),
        budget=budget,
    )


def custom_plan(
    profile: CovarianceProfile,
    d: int,
    steps: dict,
    outer_radius: float,
    regime: str = "custom",
) -> AllocationPlan:
    """Wrap an explicit step map into a plan (test and calibration use)."""
    validate_profile(profile, d)
    modes = sorted(steps, key=lambda m: (sum(c * c for c in m.coords), m.coords))
    if not modes:
        raise BudgetTooSmallError("custom plan has no modes")
    if any(int(steps[m]) < 1 for m in modes):
        raise ValueError("every step count must be >= 1")
    inner = max(m.norm2 for m in modes)
    state_modes = enumerate_modes(d, outer_radius, profile)
    return AllocationPlan(
        regime=regime,
        d=d,
        profile=profile,
        inner_radius=inner,
        outer_radius=outer_radius,
        modes=tuple(modes),
        steps={m: int(steps[m]) for m in modes},
        state_modes=tuple(state_modes),
        total_evals=int(sum(int(v) for v in steps.values())),
        predicted_error=float("nan"),
        budget=None,
    )


@dataclass(frozen=True)
class ObjectiveValue:
    """Mean-square objective split into head, summed tail and analytic remainder."""

    head: float
    tail_partial: float
    tail_remainder: float
    cutoff: float

    @property
    def total(self) -> float:
        return self.head + self.tail_partial + self.tail_remainder


def _tail_remainder(profile: CovarianceProfile, d: int, cutoff: float) -> float:
    # integral comparison for sum_{|i|>R} lam_i / mu_i over the positive orthant
    shell = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0) / 2.0 ** d

    def integrand(r):
        return shell * r ** (d - 1) * float(profile.value(r)) / (math.pi ** 2 * r * r)

    val, _ = quad(integrand, cutoff, np.inf, limit=200)
    return val


def error_objective(
    plan: AllocationPlan,
    profile: Optional[CovarianceProfile] = None,
    d: Optional[int] = None,
    tail_cutoff: Optional[float] = None,
) -> ObjectiveValue:
    """sum_{|i|<=I} lam_i/n_i plus the variance mass left in the tail.

    The tail is summed exactly out to `tail_cutoff` and completed by an
    integral-comparison remainder.  Without an explicit cutoff, it starts
    at max(4 I, 50) and doubles until the remainder drops below 1% of the
    summed tail.
    """
    profile = profile or plan.profile
    d = d or plan.d
    lam = np.array([m.lam for m in plan.modes])
    n = plan.step_array().astype(float)
    head = float(np.sum(lam / n)) if len(lam) else 0.0

    inner = plan.inner_radius

    def tail_sum(cut):
        tail_modes = enumerate_modes(d, cut, profile)
        vals = [m.lam / m.mu for m in tail_modes if m.norm2 > inner]
        return float(sum(vals))

    if tail_cutoff is not None:
        if tail_cutoff <= inner:
            raise ValueError("tail_cutoff must exceed the inner radius")
        cutoff = float(tail_cutoff)
        partial = tail_sum(cutoff)
        remainder = _tail_remainder(profile, d, cutoff)
    else:
        cutoff = max(4.0 * inner, 50.0)
        while True:
            partial = tail_sum(cutoff)
            remainder = _tail_remainder(profile, d, cutoff)
            if partial <= 0.0 or remainder < 0.01 * partial:
                break
            cutoff *= 2.0
    return ObjectiveValue(head=head, tail_partial=partial, tail_remainder=remainder, cutoff=cutoff)


def _compositions(total: int, parts: int) -> np.ndarray:
    """All positive integer vectors of length `parts` summing to `total`."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    cuts = np.array(list(combinations(range(1, total), parts - 1)), dtype=np.int64)
    full = np.empty((len(cuts), parts + 1), dtype=np.int64)
    full[:, 0] = 0
    full[:, 1:-1] = cuts
    full[:, -1] = total
    return np.diff(full, axis=1)


def minimize_objective_exhaustive(
    profile: CovarianceProfile,
    d: int,
    budget: int,
    inner_candidates,
    tail_cutoff: Optional[float] = None,
):
    """Exact argmin of the objective over small budgets, by enumeration.

    Searches every candidate inner radius and every composition of the
    budget into positive per-mode step counts.  The objective decreases in
    each n_i, so only full-budget compositions need to be visited.
    Returns (plan, objective_total).
    """
    if budget < 1:
        raise ValueError("budget must be a positive integer")
    total_space = 0
    per_candidate = []
    for radius in inner_candidates:
        modes = enumerate_modes(d, radius, profile)
        k = len(modes)
        if k == 0 or k > budget:
            per_candidate.append((radius, modes, 0))
            continue
        count = math.comb(budget - 1, k - 1)
        total_space += count
        per_candidate.append((radius, modes, count))
    if total_space > MAX_SEARCH_SPACE:
        raise CapacityError(
            f"composition search space {total_space} exceeds {MAX_SEARCH_SPACE}"
        )

    best = None
    for radius, modes, count in per_candidate:
        if count == 0:
            continue
        lam = np.array([m.lam for m in modes])
        probe = custom_plan(profile, d, {m: budget for m in modes}, outer_radius=radius)
        tail_obj = error_objective(probe, profile, d, tail_cutoff)
        tail = tail_obj.tail_partial + tail_obj.tail_remainder
        comps = _compositions(budget, len(modes))
        heads = (lam / comps).sum(axis=1)
        idx = int(np.argmin(heads))
        value = float(heads[idx]) + tail
        if best is None or value < best[0]:
            best = (value, radius, modes, comps[idx], tail_obj.cutoff)
    if best is None:
        raise BudgetTooSmallError("no candidate radius admits any mode")
    value, radius, modes, counts, cutoff = best
    plan = custom_plan(
        profile,
        d,
        {m: int(c) for m, c in zip(modes, counts)},
        outer_radius=radius,
        regime="oracle",
    )
    return plan, value
