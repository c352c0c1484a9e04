"""Multiplicative-noise pairing coefficients through trigonometric transforms.

The scheme needs c_{i,j}(x) = <g(x) h_i, h_j> for a spectral state x.  With
f = g(x) evaluated on the midpoint grid, the product of two sine basis
functions reduces per axis to a difference of cosines,

    2 sin(a) sin(b) = cos(a - b) - cos(a + b),

so every c_{i,j} is a signed combination of midpoint cosine coefficients of
f at frequencies |i_l - j_l| and i_l + j_l.  On that grid the cosine sums
are exact for frequencies below 2 M_s, which makes the transform route and
plain midpoint quadrature agree to rounding; the quadrature version is kept
as an independent oracle for tests.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.fft import dct, dst

MIN_RESOLUTION = 64


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise coefficient g with a finite derivative bound."""

    tag: str
    const: float = 1.0
    table_x: Optional[np.ndarray] = None
    table_y: Optional[np.ndarray] = None
    lipschitz: float = 0.0

    @staticmethod
    def constant(c: float) -> "Nonlinearity":
        return Nonlinearity(tag="constant", const=float(c), lipschitz=0.0)

    @staticmethod
    def identity() -> "Nonlinearity":
        return Nonlinearity(tag="identity", lipschitz=1.0)

    @staticmethod
    def sine() -> "Nonlinearity":
        return Nonlinearity(tag="sin", lipschitz=1.0)

    @staticmethod
    def tanh() -> "Nonlinearity":
        return Nonlinearity(tag="tanh", lipschitz=1.0)

    @staticmethod
    def from_table(x, y) -> "Nonlinearity":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("table needs matching 1-d x and y with >= 2 rows")
        if np.any(np.diff(x) <= 0):
            raise ValueError("table x values must be strictly increasing")
        slope = float(np.max(np.abs(np.diff(y) / np.diff(x))))
        return Nonlinearity(tag="table", table_x=x, table_y=y, lipschitz=slope)

    @property
    def is_constant(self) -> bool:
        return self.tag == "constant"

    def apply(self, values: np.ndarray) -> np.ndarray:
        if self.tag == "constant":
            return np.full_like(values, self.const)
        if self.tag == "identity":
            return values.copy()
        if self.tag == "sin":
            return np.sin(values)
        if self.tag == "tanh":
            return np.tanh(values)
        if self.tag == "table":
            return np.interp(values, self.table_x, self.table_y)
        raise ValueError(f"unknown nonlinearity tag {self.tag!r}")


def spatial_resolution(max_frequency: int) -> int:
    """Power-of-two midpoint grid size with x2 aliasing margin per axis."""
    m = MIN_RESOLUTION
    target = 4 * max(1, int(max_frequency))
    while m < target:
        m *= 2
    return m


def midpoint_axis(resolution: int) -> np.ndarray:
    return (2.0 * np.arange(resolution) + 1.0) / (2.0 * resolution)


@dataclass
class SpatialField:
    """Batched values of a spectral state on the tensor midpoint grid."""

    values: np.ndarray  # (R, M) for d=1, (R, M, M) for d=2
    resolution: int
    dim: int


class SpectralSynthesizer:
    """Fast sine synthesis of ball-truncated coefficient vectors."""

    def __init__(self, modes, resolution: int):
        if not modes:
            raise ValueError("need at least one mode")
        self.dim = modes[0].dim
        if self.dim > 2:
            raise ValueError("spatial transforms support d <= 2 only")
        self.resolution = int(resolution)
        if self.resolution & (self.resolution - 1):
            raise ValueError("resolution must be a power of two")
        self.max_freq = max(max(m.coords) for m in modes)
        if self.resolution < 2 * self.max_freq:
            raise ValueError(
                f"resolution {self.resolution} is below the aliasing guard "
                f"2*{self.max_freq}"
            )
        coords = np.array([m.coords for m in modes], dtype=np.int64)
        self._scatter = tuple(coords[:, ax] - 1 for ax in range(self.dim))
        self._scale = 2.0 ** (self.dim / 2.0) * 0.5 ** self.dim

    def synthesize(self, coeffs: np.ndarray) -> SpatialField:
        """Pointwise field values sum_j Y_j h_j on the midpoint grid."""
        coeffs = np.atleast_2d(coeffs)
        r = coeffs.shape[0]
        m = self.resolution
        if self.dim == 1:
            dense = np.zeros((r, m))
            dense[:, self._scatter[0]] = coeffs * self._scale
            values = dst(dense, type=3, axis=-1)
        else:
            dense = np.zeros((r, m, m))
            dense[:, self._scatter[0], self._scatter[1]] = coeffs * self._scale
            values = dst(dst(dense, type=3, axis=-1), type=3, axis=-2)
        return SpatialField(values=values, resolution=m, dim=self.dim)


def naive_synthesis(coeffs: np.ndarray, modes, points) -> np.ndarray:
    """Direct summation oracle for the fast synthesis (tests only)."""
    from .spectral import eval_eigenfunction

    coeffs = np.atleast_2d(coeffs)
    basis = np.stack([eval_eigenfunction(m, points) for m in modes])
    return coeffs @ basis


def cosine_spectrum(values: np.ndarray, kmax: int) -> np.ndarray:
    """Midpoint cosine coefficients of f up to frequency kmax per axis.

    Frequencies at or above 2*M alias; callers enforce kmax < 2*M through
    the resolution rule.
    """
    if values.ndim == 2:
        m = values.shape[-1]
        if kmax >= m:
            raise ValueError("requested frequency exceeds the grid resolution")
        return dct(values, type=2, axis=-1)[:, : kmax + 1] / (2.0 * m)
    m = values.shape[-1]
    if kmax >= m:
        raise ValueError("requested frequency exceeds the grid resolution")
    spec = dct(dct(values, type=2, axis=-1), type=2, axis=-2)
    return spec[:, : kmax + 1, : kmax + 1] / (2.0 * m) ** 2


class ModePairing:
    """Index bookkeeping for reading c_{i,j} rows off a cosine spectrum."""

    def __init__(self, modes_in, modes_out):
        self.dim = modes_in[0].dim
        self.n_in = len(modes_in)
        self.n_out = len(modes_out)
        ci = np.array([m.coords for m in modes_in], dtype=np.int64)
        cj = np.array([m.coords for m in modes_out], dtype=np.int64)
        self.max_freq = int(ci.max() + cj.max())
        if self.dim == 1:
            self._minus = np.abs(ci[:, None, 0] - cj[None, :, 0])
            self._plus = ci[:, None, 0] + cj[None, :, 0]
        else:
            k = self.max_freq + 1
            d1m = np.abs(ci[:, None, 0] - cj[None, :, 0])
            d1p = ci[:, None, 0] + cj[None, :, 0]
            d2m = np.abs(ci[:, None, 1] - cj[None, :, 1])
            d2p = ci[:, None, 1] + cj[None, :, 1]
            self._flat = (
                d1m * k + d2m,
                d1p * k + d2m,
                d1m * k + d2p,
                d1p * k + d2p,
            )

    def row(self, spectrum: np.ndarray, i_index: int) -> np.ndarray:
        """c_{i,j} for every output mode j; shape (R, n_out)."""
        if self.dim == 1:
            return spectrum[:, self._minus[i_index]] - spectrum[:, self._plus[i_index]]
        flat = spectrum.reshape(spectrum.shape[0], -1)
        a, b, c, d = (f[i_index] for f in self._flat)
        return flat[:, a] - flat[:, b] - flat[:, c] + flat[:, d]


def pairing_by_quadrature(gvalues: np.ndarray, mode_i, mode_j, resolution: int) -> np.ndarray:
    """Direct midpoint-rule value of <g(x) h_i, h_j>; the test oracle."""
    from .spectral import eval_eigenfunction

    axis = midpoint_axis(resolution)
    d = len(mode_i.coords)
    if d == 1:
        weights = eval_eigenfunction(mode_i, axis) * eval_eigenfunction(mode_j, axis)
        return np.atleast_2d(gvalues) @ weights / resolution
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([uu, vv], axis=-1)
    weights = eval_eigenfunction(mode_i, pts) * eval_eigenfunction(mode_j, pts)
    flat = np.atleast_2d(gvalues.reshape(gvalues.shape[0], -1) if gvalues.ndim > 2 else gvalues)
    return flat @ weights.reshape(-1) / resolution ** d


def field_l2_norm(field: SpatialField) -> np.ndarray:
    """Grid L2 norm of a spatial field, batched."""
    flat = field.values.reshape(field.values.shape[0], -1)
    return np.sqrt(np.mean(flat * flat, axis=-1))
