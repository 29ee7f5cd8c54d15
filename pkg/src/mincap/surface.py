"""Surfaces (Riemann sphere, genus-1 torus), points, charts and distances.

Points on the torus C/(Z + tau Z) are stored as complex representatives in C;
an optional integer lift (m, n) marks the covering translate m + n*tau used by
homotopy bookkeeping.  The sphere uses extended-plane coordinates, with the
point at infinity represented by ``coord=None``.

The background metric is fixed: flat on the torus, chordal on the sphere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

__all__ = [
    "Surface",
    "SurfacePoint",
    "distance",
    "hausdorff_distance",
    "local_coordinate",
    "reduce_to_cell",
    "lattice_reduce",
]


@dataclass(frozen=True)
class SurfacePoint:
    """A point on a surface; ``coord=None`` is the sphere's point at infinity."""

    coord: Optional[complex]
    lift: Optional[Tuple[int, int]] = None

    @property
    def at_infinity(self) -> bool:
        return self.coord is None


@dataclass(frozen=True)
class Surface:
    """Riemann sphere or torus C/(Z + tau Z) with a marked reference point.

    ``infinity`` is the reference point relative to which capacity is measured
    and ``chart_coeff`` the (nonzero) first-order coefficient of the affine
    local coordinate vanishing there.
    """

    kind: str  # "sphere" | "torus"
    modulus: Optional[complex] = None  # tau, torus only
    infinity: SurfacePoint = SurfacePoint(None)
    chart_coeff: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.kind not in ("sphere", "torus"):
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if self.kind == "torus":
            if self.modulus is None or complex(self.modulus).imag <= 0:
                raise ValueError("invalid period matrix")
            if self.infinity.coord is None:
                raise ValueError("torus reference point must be finite")
        if self.chart_coeff == 0:
            raise ValueError("chart coefficient must be nonzero")

    @property
    def tau(self) -> complex:
        if self.kind != "torus":
            raise ValueError("tau is defined for the torus only")
        return complex(self.modulus)

    def point(self, coord, lift=None) -> SurfacePoint:
        return SurfacePoint(None if coord is None else complex(coord), lift)

    # -- lattice helpers (torus) ------------------------------------------

    def lattice_coords(self, z: complex) -> Tuple[float, float]:
        """Real coordinates (x, y) with z = x + y*tau."""
        tau = self.tau
        y = z.imag / tau.imag
        x = z.real - y * tau.real
        return x, y

    def min_lattice_norm(self) -> float:
        tau = self.tau
        cands = [1.0, abs(tau), abs(1 + tau), abs(1 - tau)]
        return min(cands)


def lattice_reduce(tau: complex, dz):
    """Reduce dz modulo Z + tau*Z to the representative of smallest modulus.

    Works on scalars or numpy arrays; exact for the nearest representative
    because the four rounding corners are compared.
    """
    dz = np.asarray(dz, dtype=complex)
    y = dz.imag / tau.imag
    x = dz.real - y * tau.real
    best = None
    for dx in (np.floor(x), np.floor(x) + 1):
        for dy in (np.floor(y), np.floor(y) + 1):
            cand = dz - (dx + dy * tau)
            if best is None:
                best = cand
            else:
                best = np.where(np.abs(cand) < np.abs(best), cand, best)
    return best if best.shape else complex(best)


def reduce_to_cell(surface: Surface, z: complex) -> complex:
    """Representative of z in the fundamental cell nearest to 0 (torus)."""
    return lattice_reduce(surface.tau, z) if surface.kind == "torus" else z


def _chordal(a: Optional[complex], b: Optional[complex]) -> float:
    if a is None and b is None:
        return 0.0
    if a is None:
        a, b = b, a
    if b is None:
        return 2.0 / np.sqrt(1.0 + abs(a) ** 2)
    return 2.0 * abs(a - b) / np.sqrt((1.0 + abs(a) ** 2) * (1.0 + abs(b) ** 2))


def distance(surface: Surface, p: SurfacePoint, q: SurfacePoint) -> float:
    """Metric distance: chordal on the sphere, flat (mod lattice) on the torus."""
    if surface.kind == "sphere":
        return _chordal(p.coord, q.coord)
    return abs(lattice_reduce(surface.tau, complex(p.coord) - complex(q.coord)))


def hausdorff_distance(surface: Surface, A: Iterable[SurfacePoint],
                       B: Iterable[SurfacePoint]) -> float:
    """Hausdorff distance between two nonempty finite point sets."""
    A = list(A)
    B = list(B)
    if not A or not B:
        raise ValueError("empty set")
    d = np.array([[distance(surface, a, b) for b in B] for a in A])
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def local_coordinate(surface: Surface, p: SurfacePoint) -> complex:
    """Value of the affine chart z_inf at p; z_inf(infinity) = 0.

    Raises ValueError when p lies outside the chart domain (antipode of the
    sphere chart, or beyond half the injectivity radius on the torus).
    """
    c = complex(surface.chart_coeff)
    inf = surface.infinity
    if surface.kind == "sphere":
        if inf.at_infinity:
            if p.at_infinity:
                return 0.0 + 0.0j
            if p.coord == 0:
                raise ValueError("point outside chart domain")
            return c / complex(p.coord)
        if p.at_infinity:
            raise ValueError("point outside chart domain")
        return c * (complex(p.coord) - complex(inf.coord))
    rep = lattice_reduce(surface.tau, complex(p.coord) - complex(inf.coord))
    if abs(rep) > 0.45 * surface.min_lattice_norm() and abs(rep) > 0:
        # outside the ball where the nearest-representative chart is unambiguous
        raise ValueError("point outside chart domain")
    return c * rep


def points_hausdorff(surface: Surface, A, B) -> float:
    """Hausdorff distance between complex coordinate arrays (convenience)."""
    pa = [SurfacePoint(complex(z)) for z in np.atleast_1d(A)]
    pb = [SurfacePoint(complex(z)) for z in np.atleast_1d(B)]
    return hausdorff_distance(surface, pa, pb)
