"""Drift-implicit Euler stepping on the merged per-mode grid.

For state mode j and merged interval ]tau_{m-1}, tau_m], the update is

    Y_j(t) = [G_j(t)/G_j(tau_{m-1})] * ( Y_j(tau_{m-1})
             + sum_{i in K_m} lam_i^(1/2) * c_{i,j}(X(s_{m,i}))
               * [G_j(tau_{m-1})/G_j(s_{m,i})]
               * (beta_i(tau_m) - beta_i(s_{m,i})) ),

where K_m holds the modes whose own grid contains tau_m and s_{m,i} is
mode i's previous own node.  The bracketed inner sum does not depend on t,
so one step exposes the whole interval: interior times only rescale the
inner value by a single resolvent factor.  That is exactly how the engine
yields its work - one `Window` per interval, with `value_at` for interior
evaluation and the commit happening when the next window is requested.

State is batched over replications: coefficients have shape (R, nJ).
Resolvent products are tracked in log space; only ratios <= 1 are
exponentiated, so extreme mu never underflows intermediate values.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .nemytskij import (
    ModePairing,
    Nonlinearity,
    SpectralSynthesizer,
    cosine_spectrum,
    spatial_resolution,
)
from .timegrid import MergedTimeGrid


@dataclass
class GalerkinState:
    """Coefficient snapshot of the approximate solution at one time."""

    t: float
    interval: int
    coefficients: np.ndarray  # (R, nJ)


@dataclass
class ExclusionRecord:
    replication: int
    interval: int
    mode_index: int


class ConstantCoefficients:
    """c_{i,j} = c * delta_{ij}: pointwise multiplication by a constant."""

    def __init__(self, const: float):
        self.const = float(const)
        self.diagonal = True

    def begin(self, y0, refs):
        pass

    def row(self, i_index: int, anchor: int):
        return self.const

    def release(self, anchor: int):
        pass

    def note_state(self, node: int, y, refs: int):
        pass

    @property
    def stats(self):
        return {"entries_stored": 0, "entries_evicted": 0, "max_live": 0}


class NemytskijCoefficients:
    """Pairing rows c_{i,j}(X(anchor)) served from per-anchor spectra.

    With `cache=True` the cosine spectrum of g(X) is stored per anchor node
    and evicted when its reference count (modes still anchored there) drops
    to zero.  With `cache=False` only the state vector is kept and the
    spectrum is recomputed per request; both paths produce bit-identical
    trajectories.
    """

    def __init__(self, g: Nonlinearity, modes_in, modes_out, resolution=None, cache=True):
        self.g = g
        self.pairing = ModePairing(modes_in, modes_out)
        max_axis_freq = max(
            max(max(m.coords) for m in modes_in),
            max(max(m.coords) for m in modes_out),
        )
        self.resolution = int(resolution) if resolution else spatial_resolution(max_axis_freq)
        if self.resolution < 2 * self.pairing.max_freq:
            raise ValueError(
                f"resolution {self.resolution} aliases pairing frequencies up to "
                f"{self.pairing.max_freq}"
            )
        self.synth = SpectralSynthesizer(modes_out, self.resolution)
        self.cache = bool(cache)
        self._entries = {}
        self._refs = {}
        self._stored = 0
        self._evicted = 0
        self._max_live = 0

    def _spectrum(self, y):
        f = self.g.apply(self.synth.synthesize(y).values)
        return cosine_spectrum(f, self.pairing.max_freq)

    def begin(self, y0, refs: int):
        self.note_state(0, y0, refs)

    def note_state(self, node: int, y, refs: int):
        if refs <= 0:
            return
        payload = self._spectrum(y) if self.cache else np.array(y, copy=True)
        self._entries[node] = payload
        self._refs[node] = refs
        self._stored += 1
        self._max_live = max(self._max_live, len(self._entries))

    def row(self, i_index: int, anchor: int):
        entry = self._entries[anchor]
        spectrum = entry if self.cache else self._spectrum(entry)
        return self.pairing.row(spectrum, i_index)

    def release(self, anchor: int):
        self._refs[anchor] -= 1
        if self._refs[anchor] == 0:
            del self._entries[anchor]
            del self._refs[anchor]
            self._evicted += 1

    @property
    def diagonal(self):
        return False

    @property
    def stats(self):
        return {
            "entries_stored": self._stored,
            "entries_evicted": self._evicted,
            "entries_live": len(self._entries),
            "max_live": self._max_live,
        }


class Window:
    """One merged interval ]t0, t1]; evaluate anywhere inside it."""

    __slots__ = ("index", "t0", "t1", "inner", "mu")

    def __init__(self, index, t0, t1, inner, mu):
        self.index = index
        self.t0 = t0
        self.t1 = t1
        self.inner = inner
        self.mu = mu

    def value_at(self, t: float) -> np.ndarray:
        if not self.t0 < t <= self.t1:
            raise ValueError(f"t={t} outside window ]{self.t0}, {self.t1}]")
        return self.inner * (1.0 / (1.0 + self.mu * (t - self.t0)))

    def end_value(self) -> np.ndarray:
        return self.value_at(self.t1)


class PathEngine:
    """Batched streaming integrator over one merged grid."""

    def __init__(
        self,
        grid: MergedTimeGrid,
        state_modes,
        coeffs,
        increments,
        y0: np.ndarray,
        trace: Optional[list] = None,
    ):
        self.grid = grid
        self.state_modes = list(state_modes)
        self.mu = np.array([m.mu for m in self.state_modes])
        self.lam_sqrt = np.array([math.sqrt(m.lam) for m in grid.modes])
        self.coeffs = coeffs
        self.increments = increments
        self.y = np.array(np.atleast_2d(y0), dtype=float, copy=True)
        if self.y.shape[1] != len(self.state_modes):
            raise ValueError("initial coefficients do not match the state modes")
        self.replications = self.y.shape[0]
        self.trace = trace

        state_pos = {m.coords: k for k, m in enumerate(self.state_modes)}
        self.noise_to_state = np.array(
            [state_pos.get(m.coords, -1) for m in grid.modes], dtype=np.int64
        )

        self.log_gamma = np.zeros(len(self.state_modes))
        self.anchor_node = np.zeros(len(grid.modes), dtype=np.int64)
        self.anchor_log_gamma = np.zeros((len(grid.modes), len(self.state_modes)))
        self.anchor_diag = np.zeros(len(grid.modes))
        self.excluded = np.zeros(self.replications, dtype=bool)
        self.exclusions: List[ExclusionRecord] = []
        self.coeffs.begin(self.y, refs=len(grid.modes))
        self._done = False

    def _guard(self, m: int):
        finite = np.isfinite(self.y).all(axis=1)
        fresh = ~finite & ~self.excluded
        if np.any(fresh):
            for r in np.nonzero(fresh)[0]:
                bad_j = int(np.nonzero(~np.isfinite(self.y[r]))[0][0])
                self.exclusions.append(
                    ExclusionRecord(replication=int(r), interval=m, mode_index=bad_j)
                )
            self.excluded |= fresh
            self.y[fresh] = 0.0

    def windows(self):
        """Yield each interval's window; the step commits on resumption."""
        tau = self.grid.tau
        fire_m = self.grid.fire_m
        fire_k = self.grid.fire_k
        fire_l = self.grid.fire_l
        n_fire = fire_m.size
        mu = self.mu
        lam_sqrt = self.lam_sqrt
        inc = self.increments
        coeffs = self.coeffs
        diagonal = coeffs.diagonal
        noise_to_state = self.noise_to_state
        log_gamma = self.log_gamma
        anchor_diag = self.anchor_diag
        trace = self.trace
        last_dt = -1.0
        damp = None
        dlg = None
        ptr = 0
        for m in range(1, self.grid.size + 1):
            t0 = tau[m - 1]
            t1 = tau[m]
            dt = t1 - t0
            if dt != last_dt:
                damp = 1.0 / (1.0 + mu * dt)
                dlg = np.log1p(mu * dt)
                last_dt = dt
            inner = self.y.copy()
            lo = ptr
            if diagonal:
                cval = coeffs.const
                while ptr < n_fire and fire_m[ptr] == m:
                    k = fire_k[ptr]
                    l = fire_l[ptr]
                    ptr += 1
                    col = noise_to_state[k]
                    if col < 0:
                        continue
                    db = inc.get(k, l - 1)
                    q = math.exp(log_gamma[col] - anchor_diag[k])
                    inner[:, col] += (lam_sqrt[k] * cval * q) * db
                    if trace is not None:
                        trace.append(
                            {"interval": m, "mode": int(k), "own_l": int(l), "q": q,
                             "row": cval, "db": np.array(db, copy=True)}
                        )
            else:
                while ptr < n_fire and fire_m[ptr] == m:
                    k = fire_k[ptr]
                    l = fire_l[ptr]
                    ptr += 1
                    db = inc.get(k, l - 1)
                    q = np.exp(log_gamma - self.anchor_log_gamma[k])
                    c = coeffs.row(k, int(self.anchor_node[k]))
                    inner += (lam_sqrt[k] * db)[:, None] * (c * q[None, :])
                    if trace is not None:
                        trace.append(
                            {"interval": m, "mode": int(k), "own_l": int(l), "q": q.copy(),
                             "row": c.copy(), "db": np.array(db, copy=True)}
                        )
            yield Window(m, t0, t1, inner, mu)
            np.multiply(inner, damp, out=self.y)
            log_gamma -= dlg
            if not math.isfinite(float(self.y.sum())):
                self._guard(m)
            if diagonal:
                for idx in range(lo, ptr):
                    col = noise_to_state[fire_k[idx]]
                    if col >= 0:
                        anchor_diag[fire_k[idx]] = log_gamma[col]
            else:
                for idx in range(lo, ptr):
                    k = int(fire_k[idx])
                    coeffs.release(int(self.anchor_node[k]))
                    self.anchor_node[k] = m
                    self.anchor_log_gamma[k] = log_gamma
                if ptr > lo:
                    coeffs.note_state(m, self.y, refs=ptr - lo)
        self._done = True


class SchemeRun:
    """Forward-only trajectory access for one assembled engine."""

    def __init__(self, engine: PathEngine, y0: np.ndarray):
        self.engine = engine
        self._y0 = np.array(np.atleast_2d(y0), dtype=float)

    def sample(self, times) -> list:
        """States at nondecreasing times in [0, 1] (single forward pass)."""
        times = list(times)
        if any(t1 < t0 for t0, t1 in zip(times, times[1:])):
            raise ValueError("sample times must be nondecreasing")
        if times and (times[0] < 0.0 or times[-1] > 1.0):
            raise ValueError("sample times must lie in [0, 1]")
        out = []
        idx = 0
        while idx < len(times) and times[idx] == 0.0:
            out.append(GalerkinState(t=0.0, interval=0, coefficients=self._y0.copy()))
            idx += 1
        for window in self.engine.windows():
            while idx < len(times) and times[idx] <= window.t1:
                out.append(
                    GalerkinState(
                        t=times[idx],
                        interval=window.index,
                        coefficients=window.value_at(times[idx]),
                    )
                )
                idx += 1
            if idx >= len(times):
                break
        if idx < len(times):
            raise ValueError("sample times exceed the grid horizon")
        return out

    def final_state(self) -> GalerkinState:
        return self.sample([1.0])[0]


def assemble(plan, xi, g: Nonlinearity, increments, replications, resolution=None,
             cache=True, trace=None) -> SchemeRun:
    """Build the engine for one allocation plan and initial value."""
    from .timegrid import build_grid

    grid = build_grid(plan.steps)
    xi_vec = xi.coefficient_vector(list(plan.state_modes))
    n_rep = len(replications) if hasattr(replications, "__len__") else int(replications)
    y0 = np.tile(xi_vec, (n_rep, 1))
    if g.is_constant:
        coeffs = ConstantCoefficients(g.const)
    else:
        coeffs = NemytskijCoefficients(
            g, list(grid.modes), list(plan.state_modes), resolution=resolution, cache=cache
        )
    engine = PathEngine(grid, plan.state_modes, coeffs, increments, y0, trace=trace)
    return SchemeRun(engine, y0)


def run_scheme(plan, xi, g: Nonlinearity, seed: int, replications, resolution=None,
               cache=True, trace=None) -> SchemeRun:
    """Scheme run on freshly sampled increments for a batch of replications."""
    from .noise import SegmentedIncrements

    reps = np.atleast_1d(np.asarray(replications, dtype=np.int64))
    grid_steps = [plan.steps[m] for m in plan.modes]
    stream = SegmentedIncrements(list(plan.modes), grid_steps, seed, reps)
    return assemble(plan, xi, g, stream, reps, resolution=resolution, cache=cache, trace=trace)
