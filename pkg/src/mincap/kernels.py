"""Bipolar Green's functions, third-kind differentials and Cauchy-type kernels.

All evaluators take complex chart coordinates (scalars or numpy arrays) and
return densities in the global chart: the plane for the sphere, the universal
cover coordinate for the torus.  Torus formulas are built from Jacobi theta_1
and are lattice invariant; the additive normalization is subordinated to the
surface chart so that G(p, q) = ln 1/|z_inf(p)| + O(z_inf(p)) as p -> infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .surface import Surface, lattice_reduce
from .theta import (
    jacobi_theta1,
    jacobi_theta1_dlog,
    jacobi_theta1_prime0,
)

__all__ = [
    "BipolarKernel",
    "CauchyKernelContext",
    "make_cauchy_context",
    "bipolar_green",
    "third_kind_differential",
    "cauchy_kernel",
    "quad_kernel_F",
]

_POLE_TOL = 1e-13


def _theta00(tau: complex, z):
    """Genus-1 theta with zero characteristic, vectorized with reduction."""
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    zz = np.atleast_1d(z).ravel()
    k = np.round(zz.imag / tau.imag)
    m = np.round(zz.real - k * tau.real)
    z0 = zz - m - k * tau
    pref = np.exp(2j * np.pi * (-k * z0 - 0.5 * tau * k * k))
    R = int(np.ceil(3 + np.sqrt(abs(np.log(1e-14)) / (np.pi * tau.imag))))
    n = np.arange(-R, R + 1)
    terms = np.exp(1j * np.pi * tau * n[:, None] ** 2
                   + 2j * np.pi * n[:, None] * z0[None, :])
    val = pref * terms.sum(axis=0)
    return complex(val[0]) if scalar else val.reshape(z.shape)


class BipolarKernel:
    """Bipolar Green's function G(p, q) with poles at q and at infinity.

    On the sphere with the reference point at the plane's point at infinity
    and chart coefficient 1 this is exactly ln|p - q|.
    """

    def __init__(self, surface: Surface):
        self.surface = surface
        c = abs(complex(surface.chart_coeff))
        if surface.kind == "torus":
            self._tau = surface.tau
            self._t = complex(surface.infinity.coord)
            self._th1p0 = jacobi_theta1_prime0(self._tau)
            self.normalization_constant = float(np.log(abs(self._th1p0))
                                                - np.log(c))
        else:
            self._inf = surface.infinity.coord  # None => point at infinity
            self.normalization_constant = float(-np.log(c))

    # -- pointwise values --------------------------------------------------

    def green(self, p, q):
        """G(p, q), vectorized over broadcastable complex arrays."""
        p = np.asarray(p, dtype=complex)
        q = np.asarray(q, dtype=complex)
        with np.errstate(divide="ignore"):
            if self.surface.kind == "sphere":
                val = np.log(np.abs(p - q)) + self.normalization_constant
                if self._inf is not None:
                    a = complex(self._inf)
                    val = val - np.log(np.abs(p - a)) - np.log(np.abs(q - a))
                return val
            tau, t = self._tau, self._t
            val = (np.log(np.abs(jacobi_theta1(tau, p - q)))
                   - np.log(np.abs(jacobi_theta1(tau, p - t)))
                   - np.log(np.abs(jacobi_theta1(tau, q - t)))
                   + 2 * np.pi * (p - t).imag * (q - t).imag / tau.imag)
        return val + self.normalization_constant

    def green_point(self, p: complex, q: complex) -> float:
        """Scalar G(p, q) with pole checks."""
        if self._dist_to_infinity(p) < _POLE_TOL or self._sep(p, q) < _POLE_TOL:
            raise ValueError("pole")
        return float(self.green(p, q))

    def _sep(self, p, q) -> float:
        if self.surface.kind == "torus":
            return abs(lattice_reduce(self._tau, complex(p) - complex(q)))
        return abs(complex(p) - complex(q))

    def _dist_to_infinity(self, p) -> float:
        if self.surface.kind == "torus":
            return abs(lattice_reduce(self._tau, complex(p) - self._t))
        if self._inf is None:
            return float("inf")
        return abs(complex(p) - complex(self._inf))

    def smooth_remainder(self, p, q, d):
        """G(p, q) - ln|d| for a caller-chosen representative d of p - q."""
        return self.green(p, q) - np.log(np.abs(d))

    def diag_smooth(self, p):
        """lim_{q->p} [G(p, q) - ln|p - q|], vectorized."""
        p = np.asarray(p, dtype=complex)
        if self.surface.kind == "sphere":
            val = np.full(p.shape, self.normalization_constant, dtype=float)
            if self._inf is not None:
                a = complex(self._inf)
                val = val - 2 * np.log(np.abs(p - a))
            return val if val.shape else float(val)
        tau, t = self._tau, self._t
        val = (np.log(np.abs(self._th1p0))
               - 2 * np.log(np.abs(jacobi_theta1(tau, p - t)))
               + 2 * np.pi * ((p - t).imag) ** 2 / tau.imag)
        return val + self.normalization_constant

    # -- third-kind differential Omega_{inf,q} ------------------------------

    def omega(self, x, q):
        """Density of the third-kind differential: 2 d_p G(p, q) at p = x.

        Simple poles with residues +1 at q and -1 at infinity; all periods on
        the torus are purely imaginary.
        """
        x = np.asarray(x, dtype=complex)
        q = np.asarray(q, dtype=complex)
        if self.surface.kind == "sphere":
            val = 1.0 / (x - q)
            if self._inf is not None:
                val = val - 1.0 / (x - complex(self._inf))
            return val
        tau, t = self._tau, self._t
        return (jacobi_theta1_dlog(tau, x - q)
                - jacobi_theta1_dlog(tau, x - t)
                - 2j * np.pi * (q - t).imag / tau.imag)

    def omega_smooth(self, x, q, d):
        """omega(x, q) - 1/d for a caller-chosen representative d of x - q."""
        return self.omega(x, q) - 1.0 / np.asarray(d, dtype=complex)

    def omega_reg_diag(self, p):
        """lim_{q->p} [omega(p, q) - 1/(p - q)], vectorized."""
        p = np.asarray(p, dtype=complex)
        if self.surface.kind == "sphere":
            if self._inf is None:
                return np.zeros(p.shape, dtype=complex) if p.shape else 0.0j
            return -1.0 / (p - complex(self._inf))
        tau, t = self._tau, self._t
        return (-jacobi_theta1_dlog(tau, p - t)
                - 2j * np.pi * (p - t).imag / tau.imag)


def bipolar_green(kernel: BipolarKernel, p: complex, q: complex) -> float:
    return kernel.green_point(p, q)


def third_kind_differential(kernel: BipolarKernel, q: complex, x: complex):
    """Value of the third-kind differential density at x, pole parameter q."""
    if kernel._sep(x, q) < _POLE_TOL or kernel._dist_to_infinity(x) < _POLE_TOL:
        raise ValueError("pole")
    return complex(np.asarray(kernel.omega(x, q)))


# -- Cauchy-type kernel C^(2,-1) --------------------------------------------

@dataclass
class CauchyKernelContext:
    """Evaluation context for the Cauchy-type kernel.

    On the torus the kernel is a theta quotient built from three spectator
    points (degree-1 divisors) and the shift vector s; on the sphere it
    degenerates to an explicit rational function and the spectators are unused.
    """

    surface: Surface
    anchors: tuple
    spectators: tuple = ()
    s: complex = 0.0j
    genericity_threshold: float = 1e-8
    _theta_s: complex = field(default=0.0j, repr=False)

    def __post_init__(self):
        self.anchors = tuple(complex(e) for e in self.anchors)
        if self.surface.kind == "torus":
            tau = self.surface.tau
            t = complex(self.surface.infinity.coord)
            N = len(self.anchors)
            z_half = 0.5 * (1 + tau)
            f = [complex(b) - z_half for b in self.spectators]
            if len(f) != 3:
                raise ValueError("exactly three spectator points are required")
            self.s = sum(self.anchors) - sum(f) - (N - 3) * t
            self._f = f
            self._theta_s = _theta00(tau, self.s)
            if abs(self._theta_s) < self.genericity_threshold:
                raise ValueError("non-generic divisors: resample")

    def evaluate(self, x, q):
        """Kernel density at (x, q); broadcasts over both arguments."""
        x = np.asarray(x, dtype=complex)
        q = np.asarray(q, dtype=complex)
        E = self.anchors
        if self.surface.kind == "sphere":
            if self.surface.infinity.coord is not None:
                raise ValueError(
                    "sphere Cauchy kernel requires the standard reference point")
            num = np.prod([q - e for e in E], axis=0)
            den = (x - q) * np.prod([x - e for e in E], axis=0)
            return num / den
        tau = self.surface.tau
        t = complex(self.surface.infinity.coord)
        N = len(E)
        th1p0 = jacobi_theta1_prime0(tau)
        val = (jacobi_theta1(tau, x - t) / jacobi_theta1(tau, q - t)) ** (N - 3)
        for e in E:
            val = val * jacobi_theta1(tau, q - e) / jacobi_theta1(tau, x - e)
        for f in self._f:
            val = val * _theta00(tau, x - f) / _theta00(tau, q - f)
        val = val * _theta00(tau, x - q - self.s) * th1p0 \
            / (jacobi_theta1(tau, x - q) * self._theta_s)
        return val


def make_cauchy_context(surface: Surface, anchors: Sequence[complex],
                        avoid: Sequence[complex] = (),
                        rng: Optional[np.random.Generator] = None,
                        max_tries: int = 100) -> CauchyKernelContext:
    """Build a kernel context, sampling generic spectator points on the torus.

    Spectators are drawn uniformly in the fundamental cell and rejected when
    within 0.05 of the avoid set (the current continuum) or when the
    genericity threshold fails; at most ``max_tries`` resamples.
    """
    anchors = [complex(e) for e in anchors]
    if surface.kind == "sphere":
        return CauchyKernelContext(surface, tuple(anchors))
    rng = rng or np.random.default_rng(0)
    tau = surface.tau
    avoid_pts = np.asarray([complex(a) for a in avoid] + anchors
                           + [complex(surface.infinity.coord)], dtype=complex)
    for _ in range(max_tries):
        u = rng.uniform(size=3)
        v = rng.uniform(size=3)
        pts = u + v * tau
        dmin = min(abs(lattice_reduce(tau, p - a))
                   for p in pts for a in avoid_pts)
        if dmin < 0.05:
            continue
        try:
            return CauchyKernelContext(surface, tuple(anchors), tuple(pts))
        except ValueError:
            continue
    raise ValueError("non-generic divisors: resample")


def cauchy_kernel(cctx: CauchyKernelContext, x, q):
    return cctx.evaluate(x, q)


def quad_kernel_F(kernel: BipolarKernel, cctx: CauchyKernelContext,
                  x, p: complex, q: complex):
    """Quadratic-differential kernel density at x for pole parameters (p, q).

    Regular at x = p and x = q; simple poles at the anchors and a double pole
    with unit bi-residue at infinity, coming from the last term.
    """
    x = np.asarray(x, dtype=complex)
    return (-cctx.evaluate(x, p) * kernel.omega(p, q)
            - cctx.evaluate(x, q) * kernel.omega(q, p)
            + kernel.omega(x, p) * kernel.omega(x, q))
