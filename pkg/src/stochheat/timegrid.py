"""Merged time grid over per-mode uniform grids, and the resolvent ledger.

Mode i is evaluated on {l/n_i : l = 0..n_i}; the scheme advances on the
sorted union tau_0 < ... < tau_M of all these grids.  Points are merged
exactly: each l/n_i is reduced to lowest terms with integer arithmetic and
deduplicated on the (numerator, denominator) pair, so equal times coincide
bit for bit.  Distinct reduced rationals with denominators below 2^25
differ by more than one double-precision ulp, which makes the float image
of the merge collision-free; step counts above that bound are rejected.

The ledger tracks, per state mode j, the running product of implicit-Euler
resolvent factors

    G_j(t) = prod_nu 1 / (1 + mu_j * (t ^ tau_nu - t ^ tau_{nu-1})),

stored in log space; only ratios G_j(t)/G_j(s) <= 1 are ever exponentiated.
"""

from fractions import Fraction
from typing import Dict, List

import numpy as np

from .spectral import CapacityError, MultiIndex

LEDGER_CELL_CAP = 50_000_000
MAX_STEPS = 1 << 25
_GRID_CACHE = {}
_GRID_CACHE_SIZE = 4


def _sorted_modes(steps: Dict[MultiIndex, int]) -> List[MultiIndex]:
    return sorted(steps, key=lambda m: (sum(c * c for c in m.coords), m.coords))


class MergedTimeGrid:
    """Union grid with per-point active sets and per-mode predecessors."""

    def __init__(self, steps: Dict[MultiIndex, int]):
        if not steps:
            raise ValueError("need at least one mode")
        modes = _sorted_modes(steps)
        counts = np.array([int(steps[m]) for m in modes], dtype=np.int64)
        if np.any(counts < 1):
            raise ValueError("every step count must be >= 1")
        if np.any(counts > MAX_STEPS):
            raise CapacityError(f"step counts are capped at {MAX_STEPS}")

        encode_base = int(counts.max()) + 1
        keys = []
        for n in sorted(set(counts.tolist())):
            l = np.arange(n + 1, dtype=np.int64)
            g = np.gcd(l, n)
            keys.append((l // g) * encode_base + (n // g))
        keys = np.unique(np.concatenate(keys))
        num = keys // encode_base
        den = keys % encode_base
        tau = num.astype(float) / den.astype(float)
        order = np.argsort(tau, kind="stable")
        num, den, tau = num[order], den[order], tau[order]

        self.modes = modes
        self.steps = {m: int(steps[m]) for m in modes}
        self.counts = counts
        self.numerators = num
        self.denominators = den
        self.tau = tau
        self.size = len(tau) - 1  # M: number of intervals

        n_modes = len(modes)
        if (self.size + 1) * n_modes > LEDGER_CELL_CAP:
            raise CapacityError("grid tables would exceed the memory cap")

        # active[m][k] True iff tau_m lies on mode k's own grid;
        # prev_index[m][k] = own-grid index of the last node strictly before tau_m
        active = np.empty((self.size + 1, n_modes), dtype=bool)
        prev_index = np.empty((self.size + 1, n_modes), dtype=np.int64)
        for k in range(n_modes):
            prod = num * counts[k]
            div, rem = np.divmod(prod, den)
            on_grid = rem == 0
            active[:, k] = on_grid
            prev_index[:, k] = div - on_grid
        prev_index[0, :] = -1
        self.active = active
        self.prev_index = prev_index

        # flat firing table sorted by (interval, mode): mode k's own node l
        # coincides with merged node fire_m
        pos_list, mode_list, own_list = [], [], []
        for k in range(n_modes):
            n = int(counts[k])
            own = np.arange(1, n + 1, dtype=np.int64)
            pos_list.append(np.searchsorted(tau, own / n))
            mode_list.append(np.full(n, k, dtype=np.int64))
            own_list.append(own)
        fire_m = np.concatenate(pos_list)
        fire_k = np.concatenate(mode_list)
        fire_l = np.concatenate(own_list)
        order = np.lexsort((fire_k, fire_m))
        self.fire_m = fire_m[order]
        self.fire_k = fire_k[order]
        self.fire_l = fire_l[order]
        self._firing = None

    @property
    def fractions(self) -> List[Fraction]:
        """The merged nodes as exact rationals (materialized on demand)."""
        return [Fraction(int(p), int(q)) for p, q in zip(self.numerators, self.denominators)]

    @property
    def firing(self) -> List[List[tuple]]:
        """Per interval m, the (mode index, own node index) pairs at tau_m."""
        if self._firing is None:
            table = [[] for _ in range(self.size + 1)]
            for m, k, l in zip(self.fire_m, self.fire_k, self.fire_l):
                table[m].append((int(k), int(l)))
            self._firing = table
        return self._firing

    def mode_index(self, mode: MultiIndex) -> int:
        return self.modes.index(mode)

    def active_set(self, m: int) -> set:
        """K_m as a set of modes."""
        return {self.modes[k] for k in np.nonzero(self.active[m])[0]}

    def prev_node(self, m: int, mode: MultiIndex) -> Fraction:
        """s_{m,i}: the last own-grid node of `mode` strictly before tau_m."""
        if m < 1:
            raise ValueError("s_{m,i} is defined for m >= 1")
        k = self.mode_index(mode)
        return Fraction(int(self.prev_index[m][k]), self.steps[mode])

    def interval_of(self, t: float) -> int:
        """m with tau_{m-1} < t <= tau_m (t in ]0,1])."""
        if not 0.0 < t <= 1.0:
            raise ValueError("t must lie in ]0,1]")
        return int(np.searchsorted(self.tau, t, side="left"))


def build_grid(steps: Dict[MultiIndex, int]) -> MergedTimeGrid:
    """Construct (or fetch a cached copy of) the merged grid for a step map."""
    key = tuple((m.coords, m.lam, int(n)) for m, n in sorted(
        steps.items(), key=lambda kv: (sum(c * c for c in kv[0].coords), kv[0].coords)
    ))
    grid = _GRID_CACHE.get(key)
    if grid is None:
        grid = MergedTimeGrid(steps)
        if len(_GRID_CACHE) >= _GRID_CACHE_SIZE:
            _GRID_CACHE.pop(next(iter(_GRID_CACHE)))
        _GRID_CACHE[key] = grid
    return grid


def uses_increment(grid: MergedTimeGrid, mode: MultiIndex, l: int, t: float) -> bool:
    """Whether the scheme value at time t depends on the l-th own-grid
    increment of `mode` (the increment over [t_{l-1,i}, t_{l,i}])."""
    n = grid.steps[mode]
    if not 1 <= l <= n:
        raise ValueError(f"increment index must lie in 1..{n}")
    m = grid.interval_of(t)
    return l / n <= grid.tau[m]


class GammaLedger:
    """Cumulative log resolvent products for a vector of state modes."""

    def __init__(self, grid: MergedTimeGrid, mu: np.ndarray):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if np.any(mu < 0):
            raise ValueError("mu must be nonnegative")
        n_j = mu.size
        if (grid.size + 1) * n_j > LEDGER_CELL_CAP:
            raise CapacityError("ledger table would exceed the memory cap")
        dt = np.diff(grid.tau)
        log_gamma = np.zeros((grid.size + 1, n_j))
        np.cumsum(-np.log1p(np.outer(dt, mu)), axis=0, out=log_gamma[1:])
        self.grid = grid
        self.mu = mu
        self.log_gamma = log_gamma

    def log_gamma_at(self, t: float) -> np.ndarray:
        """log G_j(t) for every tracked mode; exact at grid nodes."""
        if not 0.0 <= t <= 1.0:
            raise ValueError("t must lie in [0,1]")
        if t == 0.0:
            return self.log_gamma[0].copy()
        m = self.grid.interval_of(t)
        t0 = self.grid.tau[m - 1]
        return self.log_gamma[m - 1] - np.log1p(self.mu * (t - t0))

    def ratio(self, s: float, t: float) -> np.ndarray:
        """G_j(t) / G_j(s) for s <= t; always in (0, 1]."""
        if t < s:
            raise ValueError("ratio requires s <= t")
        return np.exp(self.log_gamma_at(t) - self.log_gamma_at(s))


def gamma_at(ledger: GammaLedger, j: int, t: float) -> float:
    """log G_j(t) for one tracked mode index."""
    return float(ledger.log_gamma_at(t)[j])


def gamma_ratio(ledger: GammaLedger, j: int, s: float, t: float) -> float:
    return float(ledger.ratio(s, t)[j])


def exact_semigroup_gap(grid: MergedTimeGrid, mu: float) -> float:
    """max_m |G(tau_m) - exp(-mu tau_m)|, a consistency diagnostic."""
    ledger = GammaLedger(grid, np.array([mu]))
    approx = np.exp(ledger.log_gamma[:, 0])
    return float(np.max(np.abs(approx - np.exp(-mu * grid.tau))))
