"""Eigenmodes of the Dirichlet Laplacian on the open unit cube.

The basis functions are products of sines,

    h_i(u) = 2^(d/2) * prod_l sin(i_l * pi * u_l),        i in N^d, i_l >= 1,

with eigenvalues -mu_i, mu_i = pi^2 * |i|_2^2.  The driving noise is
diagonal in this basis with variance weights lambda_i = lambda(|i|_2)
given by a non-increasing, regularly varying profile
lambda(r) = r^(-gamma) * L(r).
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

DEFAULT_MODE_CAP = 200_000


class CapacityError(RuntimeError):
    """An enumeration or table would exceed a configured resource cap."""


@dataclass(frozen=True)
class MultiIndex:
    """A lattice point labelling one eigenmode, with its derived weights."""

    coords: tuple
    norm2: float
    mu: float
    lam: float

    @property
    def dim(self) -> int:
        return len(self.coords)

    def __repr__(self):
        label = "-".join(str(c) for c in self.coords)
        return f"MultiIndex({label})"


@dataclass(frozen=True)
class CovarianceProfile:
    """Variance profile lambda(r) = r^(-gamma) * (1 + ln r)^log_power.

    log_power = 0 gives the constant slowly varying factor L = 1; any other
    value selects the power-of-log family.  gamma must satisfy gamma >= d,
    and for gamma == d the profile is summable only when log_power < -1.
    """

    gamma: float
    log_power: float = 0.0

    def value(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if np.any(r < 1.0):
            raise ValueError("profile is defined for r >= 1 only")
        out = r ** (-self.gamma)
        if self.log_power != 0.0:
            out = out * (1.0 + np.log(r)) ** self.log_power
        return out

    def slowly_varying(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.log_power == 0.0:
            return np.ones_like(r)
        return (1.0 + np.log(r)) ** self.log_power


def validate_profile(profile: CovarianceProfile, d: int) -> None:
    """Reject profiles outside the admissible (gamma, L) range for dimension d."""
    if d < 1:
        raise ValueError("spatial dimension must be >= 1")
    if profile.gamma < d:
        raise ValueError(
            f"gamma={profile.gamma} < d={d}: covariance is not trace class"
        )
    if profile.gamma == d and profile.log_power >= -1.0:
        raise ValueError(
            "gamma == d requires log_power < -1 for a summable profile"
        )
    if profile.log_power > profile.gamma:
        raise ValueError(
            "log_power > gamma makes lambda increasing near r = 1"
        )


def regime_of(profile: CovarianceProfile, d: int) -> str:
    """Classify the decay index into the three allocation regimes."""
    validate_profile(profile, d)
    if profile.gamma == 2 * d:
        return "nonuniform_log"
    if profile.gamma > 2 * d:
        return "nonuniform_high"
    return "nonuniform_low"


def make_mode(coords, profile: Optional[CovarianceProfile] = None) -> MultiIndex:
    coords = tuple(int(c) for c in coords)
    if any(c < 1 for c in coords):
        raise ValueError("mode coordinates must be positive integers")
    sq = sum(c * c for c in coords)
    norm2 = math.sqrt(sq)
    mu = math.pi ** 2 * sq
    lam = 1.0 if profile is None else float(profile.value(norm2))
    return MultiIndex(coords=coords, norm2=norm2, mu=mu, lam=lam)


def enumerate_modes(
    d: int,
    radius: float,
    profile: Optional[CovarianceProfile] = None,
    cap: int = DEFAULT_MODE_CAP,
) -> list:
    """All lattice points i in N^d with |i|_2 <= radius.

    Returned sorted by (|i|_2, lexicographic coords) so that any mode ball
    is a prefix of every larger ball, which keeps downstream iteration
    deterministic.  Raises CapacityError instead of silently truncating
    when the count would exceed `cap`.
    """
    if d < 1:
        raise ValueError("spatial dimension must be >= 1")
    if radius <= 0:
        return []
    sq_budget = radius * radius
    coords_list = []

    def walk(prefix, remaining_sq):
        if len(coords_list) > cap:
            return
        depth = len(prefix)
        if depth == d:
            coords_list.append(tuple(prefix))
            return
        top = int(math.floor(math.sqrt(remaining_sq)))
        for c in range(1, top + 1):
            rem = remaining_sq - c * c
            if rem < (d - depth - 1):  # remaining axes each need >= 1
                break
            walk(prefix + [c], rem)

    walk([], sq_budget)
    if len(coords_list) > cap:
        raise CapacityError(
            f"mode ball of radius {radius} in d={d} exceeds cap {cap}"
        )
    coords_list.sort(key=lambda c: (sum(x * x for x in c), c))
    return [make_mode(c, profile) for c in coords_list]


def eval_eigenfunction(mode, points) -> np.ndarray:
    """Evaluate h_i at points strictly inside ]0,1[^d.

    `points` has shape (..., d); a bare float is accepted for d = 1.
    """
    coords = np.asarray(mode.coords if hasattr(mode, "coords") else mode)
    d = coords.size
    u = np.asarray(points, dtype=float)
    if d == 1 and (u.ndim == 0 or u.shape[-1] != 1):
        u = u[..., np.newaxis]
    if u.shape[-1] != d:
        raise ValueError(f"points must have last axis of size {d}")
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("points must lie strictly inside the unit cube")
    return 2.0 ** (d / 2.0) * np.prod(np.sin(coords * np.pi * u), axis=-1)


def eval_lambda(profile: CovarianceProfile, r) -> np.ndarray:
    """The covariance weight lambda(r) = r^(-gamma) * L(r) for r >= 1."""
    return profile.value(r)


@dataclass(frozen=True)
class InitialValue:
    """Initial condition xi, accessed through its sine coefficients <xi, h_j>."""

    kind: str
    coefficients: Optional[dict] = None
    func: Optional[Callable] = None

    @staticmethod
    def zero() -> "InitialValue":
        return InitialValue(kind="zero")

    @staticmethod
    def spectral(coeffs: dict) -> "InitialValue":
        table = {}
        for key, val in coeffs.items():
            coords = tuple(int(c) for c in (key if isinstance(key, tuple) else (key,)))
            table[coords] = float(val)
        return InitialValue(kind="spectral", coefficients=table)

    @staticmethod
    def sampled(func: Callable) -> "InitialValue":
        return InitialValue(kind="sampled", func=func)

    def coefficient_vector(self, modes, quad_resolution: int = 1024) -> np.ndarray:
        """<xi, h_j> for each mode, in the order given.

        Sampled initial values are integrated by the midpoint rule on a
        tensor grid; the resolution must stay well above the largest mode
        frequency to keep aliasing negligible.
        """
        n = len(modes)
        if self.kind == "zero":
            return np.zeros(n)
        if self.kind == "spectral":
            return np.array(
                [self.coefficients.get(m.coords, 0.0) for m in modes], dtype=float
            )
        if self.kind == "sampled":
            if n == 0:
                return np.zeros(0)
            d = modes[0].dim
            if d > 2:
                raise ValueError("sampled initial values support d <= 2 only")
            max_freq = max(max(m.coords) for m in modes)
            m_s = max(int(quad_resolution), 4 * max_freq)
            axis = (2.0 * np.arange(m_s) + 1.0) / (2.0 * m_s)
            if d == 1:
                vals = np.asarray(self.func(axis), dtype=float)
                out = np.empty(n)
                for k, mode in enumerate(modes):
                    out[k] = np.mean(vals * np.sqrt(2.0) * np.sin(mode.coords[0] * np.pi * axis))
                return out
            uu, vv = np.meshgrid(axis, axis, indexing="ij")
            vals = np.asarray(self.func(uu, vv), dtype=float)
            out = np.empty(n)
            for k, mode in enumerate(modes):
                basis = 2.0 * np.sin(mode.coords[0] * np.pi * uu) * np.sin(mode.coords[1] * np.pi * vv)
                out[k] = np.mean(vals * basis)
            return out
        raise ValueError(f"unknown initial value kind {self.kind!r}")
