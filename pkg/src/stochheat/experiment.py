"""Monte Carlo strong-error estimation and convergence-rate studies.

The estimand is the mean-square distance

    e^2 = E int_0^1 || X_ref(t) - X(t) ||^2 dt

between the scheme and its coupled fine reference, with the norm taken as
the coefficient l2 norm over the reference's state modes.  Scheme and
reference share one Brownian path per replication (the coarse increments
are exact partial sums of the fine ones), so replication averages estimate
the strong error directly.  The time integral uses the composite midpoint
rule on the reference's merged grid, with both solutions evaluated inside
each interval through the scheme's own interior formula.

Replications are processed in memory-bounded chunks whose boundaries
depend only on the problem size, never on the worker count, so worker
parallelism cannot change any reported number.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .allocation import AllocationPlan, plan_nonuniform, plan_uniform, rate_exponents
from .nemytskij import Nonlinearity
from .noise import REP_BLOCK, SEGMENT, CompositeIncrements, RefinedIncrements, SegmentedIncrements
from .reference import ReferenceConfig, reference_plan
from .scheme import ConstantCoefficients, NemytskijCoefficients, PathEngine
from .spectral import InitialValue
from .timegrid import build_grid

CHUNK_MEMORY_BYTES = 1_000_000_000


@dataclass
class ErrorEstimate:
    mean_square: float
    stderr: float                      # standard error of the mean-square estimate
    replications: int
    excluded: int
    time_quad: int
    samples: Optional[np.ndarray] = None
    mode_moment_mean: Optional[np.ndarray] = None
    mode_moment_stderr: Optional[np.ndarray] = None
    profile_times: Optional[np.ndarray] = None
    profile_mean_sq: Optional[np.ndarray] = None

    @property
    def rmse(self) -> float:
        return math.sqrt(max(self.mean_square, 0.0))

    @property
    def rmse_stderr(self) -> float:
        if self.mean_square <= 0.0:
            return float("nan")
        return self.stderr / (2.0 * self.rmse)


def _chunk_bounds(total: int, cap: int) -> List[range]:
    cap = max(REP_BLOCK, (cap // REP_BLOCK) * REP_BLOCK)
    out = []
    start = 0
    while start < total:
        stop = min(total, start + cap)
        out.append(range(start, stop))
        start = stop
    return out


def _auto_chunk(n_modes: int, rho: int) -> int:
    live = n_modes * SEGMENT * max(1, rho) * 8 * 2
    return max(REP_BLOCK, int(CHUNK_MEMORY_BYTES / max(live, 1)))


def _coarse_window_map(fine_grid, coarse_grid) -> np.ndarray:
    """Coarse interval index containing each fine interval.  Coarse nodes
    are a subset of the fine nodes and both float images are exact, so a
    binary search on the interval end gives the exact containing index."""
    return np.searchsorted(coarse_grid.tau, fine_grid.tau, side="left")


def _run_chunk(args):
    (
        plan,
        xi,
        g,
        ref,
        seed,
        reps,
        time_quad,
        resolution,
        want_mode_moments,
        want_profile,
        reference_only,
    ) = args
    reps = np.asarray(reps, dtype=np.int64)
    n_rep = reps.size

    ref_plan = reference_plan(plan, ref)
    coarse_grid = build_grid(plan.steps)
    fine_grid = build_grid(ref_plan.steps)

    coarse_modes = list(coarse_grid.modes)
    coarse_counts = [plan.steps[m] for m in coarse_modes]

    coupled_pos = {m.coords: k for k, m in enumerate(coarse_modes)}
    fine_modes = list(fine_grid.modes)
    coupled_idx = [k for k, m in enumerate(fine_modes) if m.coords in coupled_pos]
    tail_idx = [k for k, m in enumerate(fine_modes) if m.coords not in coupled_pos]
    refined = RefinedIncrements(
        [fine_modes[k] for k in coupled_idx],
        [coarse_counts[coupled_pos[fine_modes[k].coords]] for k in coupled_idx],
        [ref.rho] * len(coupled_idx),
        seed,
        reps,
        stream=ref.stream,
    )
    sources = [refined]
    routing = [None] * len(fine_modes)
    for local, k in enumerate(coupled_idx):
        routing[k] = (0, local)
    if tail_idx:
        tail_stream = SegmentedIncrements(
            [fine_modes[k] for k in tail_idx],
            [ref_plan.steps[fine_modes[k]] for k in tail_idx],
            seed,
            reps,
        )
        sources.append(tail_stream)
        for local, k in enumerate(tail_idx):
            routing[k] = (1, local)
    fine_stream = CompositeIncrements(sources, routing)

    def make_coeffs(grid, state_modes):
        if g.is_constant:
            return ConstantCoefficients(g.const)
        return NemytskijCoefficients(
            g, list(grid.modes), list(state_modes), resolution=resolution
        )

    xi_fine = np.tile(xi.coefficient_vector(list(ref_plan.state_modes)), (n_rep, 1))
    fine_engine = PathEngine(
        fine_grid, ref_plan.state_modes, make_coeffs(fine_grid, ref_plan.state_modes),
        fine_stream, xi_fine,
    )
    mu_fine = fine_engine.mu
    n_fine_cols = len(ref_plan.state_modes)

    if reference_only:
        coarse_engine = None
    else:
        coarse_stream = SegmentedIncrements(coarse_modes, coarse_counts, seed, reps)
        xi_coarse = np.tile(xi.coefficient_vector(list(plan.state_modes)), (n_rep, 1))
        coarse_engine = PathEngine(
            coarse_grid, plan.state_modes, make_coeffs(coarse_grid, plan.state_modes),
            coarse_stream, xi_coarse,
        )

    n_coarse_cols = len(plan.state_modes)
    window_map = None if reference_only else _coarse_window_map(fine_grid, coarse_grid)

    err_acc = np.zeros(n_rep)
    mode_acc = np.zeros((n_rep, n_fine_cols)) if want_mode_moments else None
    profile = np.zeros((coarse_grid.size + 1, n_rep)) if want_profile else None
    if want_profile:
        profile[0] = np.einsum("rj,rj->r", coarse_engine.y, coarse_engine.y)

    a_buf = np.empty((n_rep, n_fine_cols))
    b_buf = np.empty((n_rep, n_coarse_cols))
    sq_buf = np.empty((n_rep, n_fine_cols)) if want_mode_moments else None

    coarse_iter = coarse_engine.windows() if coarse_engine is not None else None
    coarse_win = None
    mu_coarse = coarse_engine.mu if coarse_engine is not None else None
    for fine_win in fine_engine.windows():
        if coarse_iter is not None:
            target = window_map[fine_win.index]
            while coarse_win is None or coarse_win.index < target:
                if coarse_win is not None and want_profile:
                    yv = coarse_win.end_value()
                    profile[coarse_win.index] = np.einsum("rj,rj->r", yv, yv)
                coarse_win = next(coarse_iter)
        width = fine_win.t1 - fine_win.t0
        weight = width / time_quad
        for k in range(time_quad):
            offset = (2 * k + 1) * width / (2 * time_quad)
            np.multiply(
                fine_win.inner, 1.0 / (1.0 + mu_fine * offset), out=a_buf
            )
            if want_mode_moments:
                np.multiply(a_buf, a_buf, out=sq_buf)
                mode_acc += weight * sq_buf
            if coarse_win is not None:
                np.multiply(
                    coarse_win.inner,
                    1.0 / (1.0 + mu_coarse * (fine_win.t0 + offset - coarse_win.t0)),
                    out=b_buf,
                )
                a_buf[:, :n_coarse_cols] -= b_buf
                err_acc += weight * np.einsum("rj,rj->r", a_buf, a_buf)
    if want_profile:
        yv = coarse_win.end_value()
        profile[coarse_win.index] = np.einsum("rj,rj->r", yv, yv)

    excluded = fine_engine.excluded.copy()
    if coarse_engine is not None:
        excluded |= coarse_engine.excluded
    return err_acc, mode_acc, profile, excluded, coarse_grid.tau


def estimate_error(
    plan: AllocationPlan,
    xi: InitialValue,
    g: Nonlinearity,
    ref: ReferenceConfig,
    replications: int,
    seed: int,
    time_quad: int = 1,
    workers: int = 1,
    resolution: Optional[int] = None,
    collect_mode_moments: bool = False,
    collect_profile: bool = False,
    keep_samples: bool = False,
) -> ErrorEstimate:
    """Coupled Monte Carlo estimate of the squared strong error."""
    if replications < 2:
        raise ValueError("need at least two replications")
    if time_quad < 1:
        raise ValueError("time_quad must be >= 1")
    chunks = _chunk_bounds(replications, _auto_chunk(len(plan.modes), ref.rho))
    tasks = [
        (plan, xi, g, ref, seed, list(chunk), time_quad, resolution,
         collect_mode_moments, collect_profile, False)
        for chunk in chunks
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]

    samples = np.concatenate([r[0] for r in results])
    excluded = np.concatenate([r[3] for r in results])
    valid = ~excluded
    n_valid = int(valid.sum())
    if n_valid < 2:
        raise RuntimeError("all replications were excluded")
    mean_sq = float(np.mean(samples[valid]))
    stderr = float(np.std(samples[valid], ddof=1) / math.sqrt(n_valid))

    est = ErrorEstimate(
        mean_square=mean_sq,
        stderr=stderr,
        replications=replications,
        excluded=int(excluded.sum()),
        time_quad=time_quad,
        samples=samples if keep_samples else None,
    )
    if collect_mode_moments:
        stacked = np.concatenate([r[1] for r in results], axis=0)[valid]
        est.mode_moment_mean = stacked.mean(axis=0)
        est.mode_moment_stderr = stacked.std(axis=0, ddof=1) / math.sqrt(n_valid)
    if collect_profile:
        prof = np.concatenate([r[2] for r in results], axis=1)[:, valid]
        est.profile_times = results[0][4]
        est.profile_mean_sq = prof.mean(axis=1)
    return est


def reference_mode_moments(
    plan: AllocationPlan,
    xi: InitialValue,
    g: Nonlinearity,
    ref: ReferenceConfig,
    replications: int,
    seed: int,
    workers: int = 1,
):
    """Per-mode integrals int_0^1 Y_j^2 dt of the fine reference alone.

    Used to calibrate the reference solver against closed-form statistics;
    the coupled coarse run is skipped entirely.  Returns (modes, mean,
    stderr) over the replications.
    """
    chunks = _chunk_bounds(replications, _auto_chunk(len(plan.modes), ref.rho))
    tasks = [
        (plan, xi, g, ref, seed, list(chunk), 1, None, True, False, True)
        for chunk in chunks
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]
    stacked = np.concatenate([r[1] for r in results], axis=0)
    excluded = np.concatenate([r[3] for r in results])
    valid = ~excluded
    n_valid = int(valid.sum())
    mean = stacked[valid].mean(axis=0)
    stderr = stacked[valid].std(axis=0, ddof=1) / math.sqrt(n_valid)
    ref_modes = list(reference_plan(plan, ref).state_modes)
    return ref_modes, mean, stderr


def moment_profile(plan, xi, g, replications: int, seed: int, times) -> np.ndarray:
    """Replication mean of ||X(t)||^2 on a time grid (no reference)."""
    from .scheme import run_scheme

    times = np.asarray(times, dtype=float)
    acc = np.zeros(times.size)
    n_done = 0
    for chunk in _chunk_bounds(replications, _auto_chunk(len(plan.modes), 1)):
        run = run_scheme(plan, xi, g, seed, np.asarray(chunk))
        states = run.sample(times)
        for k, st in enumerate(states):
            acc[k] += np.sum(st.coefficients * st.coefficients, axis=1).sum()
        n_done += len(chunk)
    return acc / n_done


@dataclass
class FitResult:
    slope: float
    intercept: float
    ci95: float
    n_used: int
    dropped: List[int] = field(default_factory=list)


def fit_slope(budgets, errors) -> FitResult:
    """Least squares slope of log error against log budget.

    The smallest budget is dropped (and reported) when its studentized
    residual exceeds 3, which flags a pre-asymptotic transient; at least
    four points must survive.
    """
    budgets = np.asarray(budgets, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if budgets.size < 4:
        raise ValueError("slope fit needs at least 4 points")
    if np.any(errors <= 0.0):
        raise ValueError("slope fit needs positive error values")
    order = np.argsort(budgets)
    budgets, errors = budgets[order], errors[order]

    def ols(x, y):
        n = x.size
        xbar, ybar = x.mean(), y.mean()
        sxx = np.sum((x - xbar) ** 2)
        slope = float(np.sum((x - xbar) * (y - ybar)) / sxx)
        intercept = float(ybar - slope * xbar)
        resid = y - (intercept + slope * x)
        s2 = float(np.sum(resid**2) / max(n - 2, 1))
        se = math.sqrt(s2 / sxx)
        return slope, intercept, se, resid, s2, sxx, xbar

    x, y = np.log(budgets), np.log(errors)
    slope, intercept, se, resid, s2, sxx, xbar = ols(x, y)
    dropped = []
    if budgets.size >= 5 and s2 > 0.0:
        # externally studentized residual of the smallest budget
        n = x.size
        lev = 1.0 / n + (x[0] - xbar) ** 2 / sxx
        ssr = s2 * (n - 2)
        s2_ext = max(ssr - resid[0] ** 2 / max(1.0 - lev, 1e-12), 0.0) / max(n - 3, 1)
        denom = math.sqrt(max(s2_ext, 1e-300) * max(1.0 - lev, 1e-12))
        if abs(resid[0]) / denom > 3.0:
            dropped.append(int(budgets[0]))
            x, y = x[1:], y[1:]
            slope, intercept, se, *_ = ols(x, y)
    return FitResult(
        slope=slope,
        intercept=intercept,
        ci95=1.96 * se,
        n_used=int(x.size),
        dropped=dropped,
    )


@dataclass
class StudyRow:
    budget: int
    regime: str
    gamma: float
    d: int
    error: float
    stderr: float
    total_evals: int
    wall_ms: float
    excluded: int = 0


@dataclass
class ConvergenceRecord:
    rows: List[StudyRow]
    fit: FitResult
    theory_exponent: float

    @property
    def slope_gap(self) -> float:
        return abs(self.fit.slope + self.theory_exponent)


def convergence_study(
    profile,
    d: int,
    regime: str,
    g: Nonlinearity,
    xi: InitialValue,
    budgets,
    replications: int,
    seed: int,
    ref: Optional[ReferenceConfig] = None,
    time_quad: int = 1,
    workers: int = 1,
) -> ConvergenceRecord:
    """Estimate e(N) over a budget ladder and fit the log-log slope."""
    budgets = [int(n) for n in budgets]
    if len(budgets) < 4:
        raise ValueError("a convergence study needs at least 4 budgets")
    if sorted(budgets) != budgets:
        raise ValueError("budgets must be increasing")
    ref = ref or ReferenceConfig()
    exps = rate_exponents(profile, d)
    theory = exps.alpha_star if regime == "nonuniform" else exps.alpha_uniform

    rows = []
    for n in budgets:
        plan = (
            plan_nonuniform(profile, d, n)
            if regime == "nonuniform"
            else plan_uniform(profile, d, n)
        )
        t0 = time.perf_counter()
        est = estimate_error(
            plan, xi, g, ref, replications, seed, time_quad=time_quad, workers=workers
        )
        wall_ms = (time.perf_counter() - t0) * 1e3
        rows.append(
            StudyRow(
                budget=n,
                regime=plan.regime,
                gamma=profile.gamma,
                d=d,
                error=est.rmse,
                stderr=est.rmse_stderr,
                total_evals=plan.total_evals,
                wall_ms=wall_ms,
                excluded=est.excluded,
            )
        )
    fit = fit_slope([r.budget for r in rows], [r.error for r in rows])
    return ConvergenceRecord(rows=rows, fit=fit, theory_exponent=theory)
