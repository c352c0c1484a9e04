"""Keyed generation of the scalar Brownian motions driving each mode.

Every increment is addressable: the draw for (master seed, replication,
mode, interval) never depends on evaluation order, thread count, or how
replications are batched.  Draws come from counter-based Philox streams
keyed by

    SeedSequence(seed, spawn_key=(stream, block, segment, *coords))

where `block` groups replications in fixed slabs of 64 (so batched runs
need one generator per slab rather than per replication) and `segment`
slices each mode's interval axis in slabs of 128 (so long grids never
have to be materialized whole).

Stream 0 carries the base increments; refinements draw their bridge noise
from stream 1 (2, 3, ... for nested refinements).
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

REP_BLOCK = 64
SEGMENT = 128
BASE_STREAM = 0


def _block_normals(seed, stream, coords, segment, block, count) -> np.ndarray:
    """The (REP_BLOCK, count) normal slab for one key; fully deterministic."""
    key = SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(block), int(segment)) + tuple(coords))
    gen = Generator(Philox(seed=key))
    return gen.standard_normal((REP_BLOCK, count))


def _gather_rows(seed, stream, coords, segment, count, replications) -> np.ndarray:
    """Stack the requested replication rows out of their 64-rep slabs."""
    reps = np.asarray(replications, dtype=np.int64)
    out = np.empty((reps.size, count))
    start = 0
    while start < reps.size:
        block = reps[start] // REP_BLOCK
        stop = start
        while stop < reps.size and reps[stop] // REP_BLOCK == block:
            stop += 1
        slab = _block_normals(seed, stream, coords, segment, block, count)
        out[start:stop] = slab[reps[start:stop] - block * REP_BLOCK]
        start = stop
    return out


def _segment_bounds(n: int, segment: int):
    lo = segment * SEGMENT
    hi = min(lo + SEGMENT, n)
    return lo, hi


def base_segment(seed, coords, n, segment, replications) -> np.ndarray:
    """Increments over own intervals [lo, hi) for the given replications."""
    lo, hi = _segment_bounds(n, segment)
    raw = _gather_rows(seed, BASE_STREAM, coords, segment, hi - lo, replications)
    return raw * np.sqrt(1.0 / n)


def bridge_segment(seed, coords, n, factor, segment, replications, parents, stream=1) -> np.ndarray:
    """Refine the parents of base segment `segment` into factor sub-increments.

    `parents` holds the coarse increments of that segment, shape (R, hi-lo).
    Conditioned on each parent, the sub-increments are exchangeable Gaussian
    with the Brownian-bridge law; their sum telescopes back to the parent.
    """
    lo, hi = _segment_bounds(n, segment)
    count = hi - lo
    if parents.shape[-1] != count:
        raise ValueError("parent slab does not match the segment bounds")
    delta = 1.0 / (n * factor)
    raw = _gather_rows(seed, stream, coords, segment, count * factor, replications)
    raw = raw.reshape(parents.shape[0], count, factor) * np.sqrt(delta)
    raw += (parents / factor - raw.mean(axis=2))[:, :, np.newaxis]
    return raw.reshape(parents.shape[0], count * factor)


@dataclass
class BrownianIncrements:
    """Materialized per-mode increment arrays for one replication."""

    seed: int
    replication: int
    steps: Dict
    arrays: Dict

    def path_value(self, mode, l: int) -> float:
        """beta_i(l / n_i), by summation of the stored increments."""
        return float(np.sum(self.arrays[mode][:l]))


def sample_increments(steps: Dict, seed: int, replication: int) -> BrownianIncrements:
    """Independent N(0, 1/n_i) increments per mode over its own grid."""
    steps = {m: int(n) for m, n in steps.items()}
    arrays = {}
    for mode, n in steps.items():
        segs = []
        for s in range((n + SEGMENT - 1) // SEGMENT):
            segs.append(base_segment(seed, mode.coords, n, s, [replication])[0])
        arrays[mode] = np.concatenate(segs)
    return BrownianIncrements(seed=int(seed), replication=int(replication), steps=steps, arrays=arrays)


def refine(parent: BrownianIncrements, factor, stream: int = 1) -> BrownianIncrements:
    """Split every increment into `factor` conditionally exact sub-increments.

    `factor` may be a single integer or a per-mode mapping.  Sub-increment
    sums reproduce the parent increments to rounding, so a coarse scheme on
    the parent and a fine scheme on the result see the same Brownian path.
    """
    factors = {m: int(factor[m] if isinstance(factor, dict) else factor) for m in parent.steps}
    if any(f < 1 for f in factors.values()):
        raise ValueError("refinement factor must be >= 1")
    arrays = {}
    steps = {}
    for mode, n in parent.steps.items():
        rho = factors[mode]
        steps[mode] = n * rho
        if rho == 1:
            arrays[mode] = parent.arrays[mode].copy()
            continue
        fine = []
        for s in range((n + SEGMENT - 1) // SEGMENT):
            lo, hi = _segment_bounds(n, s)
            parents = parent.arrays[mode][np.newaxis, lo:hi]
            fine.append(
                bridge_segment(
                    parent.seed, mode.coords, n, rho, s, [parent.replication], parents, stream
                )[0]
            )
        arrays[mode] = np.concatenate(fine)
    return BrownianIncrements(seed=parent.seed, replication=parent.replication, steps=steps, arrays=arrays)


class SegmentedIncrements:
    """Streaming view of base increments for a replication batch.

    get(k, l) returns the (R,) increment over own interval l of mode k,
    loading one 128-interval segment per mode at a time.
    """

    def __init__(self, modes: Sequence, counts, seed: int, replications):
        self.modes = list(modes)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.seed = int(seed)
        self.replications = np.sort(np.asarray(replications, dtype=np.int64))
        self._segment = [-1] * len(self.modes)
        self._data = [None] * len(self.modes)

    def _load(self, k: int, segment: int):
        mode = self.modes[k]
        self._data[k] = base_segment(
            self.seed, mode.coords, int(self.counts[k]), segment, self.replications
        )
        self._segment[k] = segment

    def get(self, k: int, l: int) -> np.ndarray:
        seg = l // SEGMENT
        if self._segment[k] != seg:
            self._load(k, seg)
        return self._data[k][:, l - seg * SEGMENT]


class RefinedIncrements:
    """Streaming bridge refinement of a base stream, factor rho per mode.

    Mode k's fine grid has counts[k] * rho[k] intervals; coarse parents are
    drawn from the same keys a coarse-scheme run would use, so the two are
    exactly coupled.
    """

    def __init__(self, modes: Sequence, counts, rho, seed: int, replications, stream: int = 1):
        self.modes = list(modes)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.rho = np.broadcast_to(np.asarray(rho, dtype=np.int64), (len(self.modes),)).copy()
        if np.any(self.rho < 1):
            raise ValueError("refinement factor must be >= 1")
        self.seed = int(seed)
        self.replications = np.sort(np.asarray(replications, dtype=np.int64))
        self.stream = int(stream)
        self._segment = [-1] * len(self.modes)
        self._data = [None] * len(self.modes)

    def _load(self, k: int, segment: int):
        mode = self.modes[k]
        n = int(self.counts[k])
        rho = int(self.rho[k])
        parents = base_segment(self.seed, mode.coords, n, segment, self.replications)
        if rho == 1:
            self._data[k] = parents
        else:
            self._data[k] = bridge_segment(
                self.seed, mode.coords, n, rho, segment, self.replications, parents, self.stream
            )
        self._segment[k] = segment

    def get(self, k: int, l_fine: int) -> np.ndarray:
        rho = int(self.rho[k])
        seg = (l_fine // rho) // SEGMENT
        if self._segment[k] != seg:
            self._load(k, seg)
        return self._data[k][:, l_fine - seg * SEGMENT * rho]


class CompositeIncrements:
    """Route per-mode access across several underlying streams."""

    def __init__(self, sources, routing):
        self.sources = list(sources)
        self.routing = list(routing)  # mode k -> (source index, local mode index)

    def get(self, k: int, l: int) -> np.ndarray:
        src, local = self.routing[k]
        return self.sources[src].get(local, l)
